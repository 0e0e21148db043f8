#include "ehmex/runtime.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "ehmex/errors.hpp"

namespace ehmex {

int GridDim::bins() const {
    if (step <= 0.0 || max <= min) throw ConfigError("grid dim '" + variable + "' is degenerate");
    return std::max(1, static_cast<int>(std::ceil((max - min) / step - 1e-12)));
}

int GridDim::bin(double value) const {
    if (!std::isfinite(value)) throw InputError("grid dim '" + variable + "': non-finite value");
    const int b = static_cast<int>(std::floor((value - min) / step));
    return std::min(std::max(b, 0), bins() - 1);
}

QTable::QTable(std::vector<GridDim> dims, int num_actions)
    : dims_(std::move(dims)), num_actions_(num_actions) {
    if (num_actions_ < 1) throw ConfigError("QTable needs at least one action");
    q_.assign(static_cast<size_t>(num_states()) * num_actions_, 0.0);
}

int QTable::num_states() const {
    int n = 1;
    for (const auto& d : dims_) n *= d.bins();
    return n;
}

int QTable::state_index(const std::vector<double>& values) const {
    if (values.size() != dims_.size()) throw InputError("QTable: state dimension mismatch");
    int idx = 0;
    for (size_t i = 0; i < dims_.size(); ++i) idx = idx * dims_[i].bins() + dims_[i].bin(values[i]);
    return idx;
}

double QTable::get(int state, int action) const {
    return q_.at(static_cast<size_t>(state) * num_actions_ + action);
}

void QTable::set(int state, int action, double v) {
    q_.at(static_cast<size_t>(state) * num_actions_ + action) = v;
}

int QTable::argmax(int state, const std::vector<char>& allowed) const {
    int best = -1;
    double best_q = 0.0;
    for (int a = 0; a < num_actions_; ++a) {
        if (!allowed[static_cast<size_t>(a)]) continue;
        const double q = get(state, a);
        if (best < 0 || q > best_q) {
            best = a;
            best_q = q;
        }
    }
    if (best < 0) throw StateError("QTable::argmax: empty action mask");
    return best;
}

void QTable::update(int s, int a, double r, int s_next, double alpha, double gamma) {
    double boot = 0.0;
    if (s_next >= 0) {
        boot = get(s_next, 0);
        for (int an = 1; an < num_actions_; ++an) boot = std::max(boot, get(s_next, an));
    }
    const double q = get(s, a);
    set(s, a, q + alpha * (r + gamma * boot - q));
}

std::string QTable::to_json() const {
    nlohmann::ordered_json j;
    j["actions"] = num_actions_;
    j["dims"] = nlohmann::ordered_json::array();
    for (const auto& d : dims_) {
        nlohmann::ordered_json jd;
        jd["variable"] = d.variable;
        jd["min"] = d.min;
        jd["max"] = d.max;
        jd["step"] = d.step;
        jd["bins"] = d.bins();
        j["dims"].push_back(jd);
    }
    j["values"] = q_;  // row-major over states, then actions
    return j.dump(2);
}

QTable QTable::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    std::vector<GridDim> dims;
    for (const auto& jd : j.at("dims")) {
        GridDim d;
        d.variable = jd.at("variable").get<std::string>();
        d.min = jd.at("min").get<double>();
        d.max = jd.at("max").get<double>();
        d.step = jd.at("step").get<double>();
        dims.push_back(d);
    }
    QTable t(std::move(dims), j.at("actions").get<int>());
    const auto vals = j.at("values").get<std::vector<double>>();
    if (vals.size() != t.q_.size()) throw InputError("QTable::from_json: value count mismatch");
    t.q_ = vals;
    return t;
}

int select_exit(const QTable& table, int state, const std::vector<char>& affordable, double eps,
                Rng& rng) {
    int n_afford = 0;
    for (char c : affordable) n_afford += (c != 0);
    if (n_afford == 0) throw StateError("select_exit: no affordable exit in mask");
    if (eps > 0.0 && rng.uniform01() < eps) {
        int pick = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n_afford)));
        for (size_t a = 0; a < affordable.size(); ++a) {
            if (!affordable[a]) continue;
            if (pick-- == 0) return static_cast<int>(a);
        }
    }
    return table.argmax(state, affordable);
}

RuntimePolicyMode runtime_mode_from_name(const std::string& s) {
    if (s == "static_lut") return RuntimePolicyMode::static_lut;
    if (s == "q_learning") return RuntimePolicyMode::q_learning;
    if (s == "q_learning_incremental" || s == "q_learning+incremental")
        return RuntimePolicyMode::q_learning_incremental;
    throw ConfigError("unknown runtime policy mode: " + s);
}

const char* runtime_mode_name(RuntimePolicyMode m) {
    switch (m) {
        case RuntimePolicyMode::static_lut: return "static_lut";
        case RuntimePolicyMode::q_learning: return "q_learning";
        case RuntimePolicyMode::q_learning_incremental: return "q_learning_incremental";
    }
    return "?";
}

QLearningSelector::QLearningSelector(const Scenario& scenario, const RuntimeParams& params,
                                     bool incremental, uint64_t seed)
    : params_(params),
      incremental_(incremental),
      capacity_mj_(scenario.store.capacity_mj),
      eps_(params.eps0),
      rng_(Rng(seed).stream("runtime/selector")) {
    const double cap = scenario.store.capacity_mj;
    const double p_max = std::max(scenario.trace.max_power_mw(), 1e-9);
    GridDim e{"energy_mj", 0.0, cap, cap / params.energy_bins};
    GridDim p{"charge_power_mw", 0.0, p_max, p_max / params.power_bins};
    exit_table_ = QTable({e, p}, static_cast<int>(scenario.profiles.size()));
    const double h_max = std::log(static_cast<double>(std::max(2, scenario.num_classes)));
    GridDim h{"entropy_nats", 0.0, h_max, h_max / params.entropy_bins};
    cont_table_ = QTable({h, e}, 2);  // actions: 0 = stop, 1 = continue
}

int QLearningSelector::choose(const DecisionContext& ctx) {
    const int s = exit_table_.state_index({ctx.level_mj, ctx.charge_power_mw});
    // Close the previous transition now that its successor state is known.
    if (have_pending_) {
        exit_table_.update(pending_state_, pending_action_, pending_reward_, s, params_.alpha_q,
                           params_.gamma);
        have_pending_ = false;
    }
    const int a = select_exit(exit_table_, s, ctx.affordable, eps_, rng_);
    current_state_ = s;
    current_action_ = a;
    pending_cont_.clear();
    return a;
}

bool QLearningSelector::extend(const ExtendContext& ctx) {
    if (!incremental_) return false;
    const int s = cont_table_.state_index({ctx.entropy_nats, ctx.level_mj});
    int a;
    if (eps_ > 0.0 && rng_.uniform01() < eps_) {
        a = static_cast<int>(rng_.uniform_int(2));
    } else {
        a = cont_table_.argmax(s, {1, 1});
    }
    pending_cont_.emplace_back(s, a);
    return a == 1;
}

void QLearningSelector::observe(const EventOutcome& outcome) {
    if (outcome.exit_index >= 0 && current_state_ >= 0) {
        // Reward is the accuracy of the realized exit; the transition closes
        // at the next decision, when its state is observed.
        pending_state_ = current_state_;
        pending_action_ = current_action_;
        pending_reward_ = outcome.acc;
        have_pending_ = true;
        // Each continue/stop decision is credited with the realized accuracy
        // minus the configured energy penalty (terminal, no bootstrap).
        const double cont_r =
            outcome.acc - params_.beta_energy_penalty * outcome.extra_energy_mj / capacity_mj_;
        for (const auto& [cs, ca] : pending_cont_)
            cont_table_.update(cs, ca, cont_r, -1, params_.alpha_q, params_.gamma);
    }
    current_state_ = -1;
    current_action_ = -1;
    pending_cont_.clear();
    eps_ = std::max(params_.eps_floor, eps_ * params_.eps_decay);
}

int EntropyThresholdSelector::choose(const DecisionContext& ctx) { return greedy_.choose(ctx); }

bool EntropyThresholdSelector::extend(const ExtendContext& ctx) {
    // Continue only while the result stays unconfident and the next exit is
    // affordable (affordability is enforced by the simulator before asking).
    return ctx.entropy_nats > threshold_;
}

RunOnlineResult run_online(const Scenario& scenario, RuntimePolicyMode mode,
                           const RuntimeParams& params, AccuracyMode acc_mode, uint64_t seed) {
    RunOnlineResult out;
    out.mode = runtime_mode_name(mode);
    if (mode == RuntimePolicyMode::static_lut) {
        GreedyStaticSelector greedy;
        out.report = simulate(scenario, greedy, acc_mode, seed);
        out.epoch_reports.push_back(out.report);
        return out;
    }
    QLearningSelector selector(scenario, params,
                               mode == RuntimePolicyMode::q_learning_incremental, seed);
    const int epochs = std::max(1, params.epochs);
    for (int ep = 0; ep < epochs; ++ep) {
        out.report = simulate(scenario, selector, acc_mode, seed);
        out.epoch_reports.push_back(out.report);
    }
    out.exit_table = selector.exit_table();
    out.continue_table = selector.continue_table();
    return out;
}

}  // namespace ehmex
