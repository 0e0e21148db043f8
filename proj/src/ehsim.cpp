#include "ehmex/ehsim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ehmex/errors.hpp"
#include "ehmex/rng.hpp"

namespace ehmex {

namespace {

constexpr double kConservationTol = 1e-9;  // mJ
constexpr double kAffordTol = 1e-9;        // mJ slack when testing affordability

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

double PowerTrace::max_power_mw() const {
    double m = 0.0;
    for (double p : power_mw) m = std::max(m, p);
    return m;
}

void PowerTrace::validate() const {
    if (time_s.size() != power_mw.size() || time_s.size() < 2)
        throw InputError("power trace needs at least two (time, power) samples");
    for (size_t i = 0; i < time_s.size(); ++i) {
        if (i > 0 && time_s[i] <= time_s[i - 1])
            throw InputError("power trace times must be strictly increasing (sample " +
                             std::to_string(i) + ")");
        if (power_mw[i] < 0.0)
            throw InputError("power trace has negative power (sample " + std::to_string(i) + ")");
    }
}

double PowerTrace::power_at(double t) const {
    if (t < time_s.front() - 1e-12 || t > time_s.back() + 1e-12)
        throw InputError("power_at: time outside trace");
    t = std::min(std::max(t, time_s.front()), time_s.back());
    const auto it = std::upper_bound(time_s.begin(), time_s.end(), t);
    if (it == time_s.begin()) return power_mw.front();
    if (it == time_s.end()) return power_mw.back();
    const size_t i = static_cast<size_t>(it - time_s.begin());
    const double t0 = time_s[i - 1], t1 = time_s[i];
    const double w = (t - t0) / (t1 - t0);
    return power_mw[i - 1] * (1.0 - w) + power_mw[i] * w;
}

double PowerTrace::integral_mj(double t0, double t1) const {
    if (t0 > t1) throw InputError("integral_mj: t0 > t1");
    if (t0 < time_s.front() - 1e-12 || t1 > time_s.back() + 1e-12)
        throw InputError("integral_mj: interval outside trace");
    t0 = std::max(t0, time_s.front());
    t1 = std::min(t1, time_s.back());
    if (t0 >= t1) return 0.0;
    // mW * s = mJ; trapezoid over each overlapped segment.
    double total = 0.0;
    size_t i = static_cast<size_t>(std::upper_bound(time_s.begin(), time_s.end(), t0) -
                                   time_s.begin());
    if (i == 0) i = 1;
    double seg_t = t0;
    double seg_p = power_at(t0);
    for (; i < time_s.size() && time_s[i - 1] < t1; ++i) {
        const double end_t = std::min(time_s[i], t1);
        const double end_p = (end_t == time_s[i]) ? power_mw[i] : power_at(end_t);
        total += 0.5 * (seg_p + end_p) * (end_t - seg_t);
        seg_t = end_t;
        seg_p = end_p;
        if (end_t >= t1) break;
    }
    return total;
}

double harvest(const PowerTrace& trace, double t0, double t1, double efficiency) {
    return trace.integral_mj(t0, t1) * efficiency;
}

PowerTrace PowerTrace::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    PowerTrace tr;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "time_s,power_mw")
                throw InputError(path + ": line 1: expected header 'time_s,power_mw'");
            continue;
        }
        const size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw InputError(path + ": line " + std::to_string(line_no) + ": expected 'time,power'");
        try {
            size_t used = 0;
            const double t = std::stod(line.substr(0, comma), &used);
            const double p = std::stod(line.substr(comma + 1), &used);
            tr.time_s.push_back(t);
            tr.power_mw.push_back(p);
        } catch (const std::exception&) {
            throw InputError(path + ": line " + std::to_string(line_no) + ": malformed number");
        }
    }
    tr.validate();
    return tr;
}

void PowerTrace::save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "time_s,power_mw\n";
    for (size_t i = 0; i < time_s.size(); ++i)
        os << fmt_double(time_s[i]) << "," << fmt_double(power_mw[i]) << "\n";
}

void EventStream::validate(double trace_duration_s) const {
    for (size_t i = 0; i < time_s.size(); ++i) {
        if (i > 0 && time_s[i] <= time_s[i - 1])
            throw InputError("event times must be strictly increasing (event " +
                             std::to_string(i) + ")");
        if (time_s[i] < 0.0 || time_s[i] > trace_duration_s)
            throw InputError("event " + std::to_string(i) + " outside trace duration");
    }
}

EventStream EventStream::load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    EventStream ev;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line_no == 1) {
            if (line != "time_s")
                throw InputError(path + ": line 1: expected header 'time_s'");
            continue;
        }
        try {
            ev.time_s.push_back(std::stod(line));
        } catch (const std::exception&) {
            throw InputError(path + ": line " + std::to_string(line_no) + ": malformed number");
        }
    }
    return ev;
}

void EventStream::save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "time_s\n";
    for (double t : time_s) os << fmt_double(t) << "\n";
}

EventStream EventStream::generate(int n, double duration_s, uint64_t seed) {
    if (n < 0 || duration_s <= 0.0) throw ConfigError("event generation needs n >= 0, duration > 0");
    EventStream ev;
    Rng rng = Rng(seed).stream("ehsim/event_times");
    ev.time_s.resize(static_cast<size_t>(n));
    for (auto& t : ev.time_s) t = rng.uniform(0.0, duration_s);
    std::sort(ev.time_s.begin(), ev.time_s.end());
    for (size_t i = 1; i < ev.time_s.size(); ++i)  // enforce strictness on (rare) collisions
        if (ev.time_s[i] <= ev.time_s[i - 1]) ev.time_s[i] = ev.time_s[i - 1] + 1e-9;
    return ev;
}

void Scenario::validate() const {
    trace.validate();
    events.validate(trace.duration_s());
    if (profiles.empty()) throw ConfigError("scenario has no exit profiles");
    for (size_t i = 0; i < profiles.size(); ++i) {
        if (profiles[i].accuracy < 0.0 || profiles[i].accuracy > 1.0)
            throw ConfigError("profile accuracy outside [0,1]");
        if (i > 0 && profiles[i].energy_cost_mj <= profiles[i - 1].energy_cost_mj)
            throw ConfigError("profiles must be sorted by strictly increasing energy cost");
    }
    if (store.capacity_mj <= 0.0 || store.level_mj < 0.0 || store.level_mj > store.capacity_mj)
        throw ConfigError("energy store must satisfy 0 <= level <= capacity");
    if (store.harvest_efficiency <= 0.0 || store.harvest_efficiency > 1.0)
        throw ConfigError("harvest efficiency must be in (0, 1]");
    if (compute_rate_flops <= 0.0) throw ConfigError("compute rate must be positive");
}

double Scenario::exit_latency_s(int exit_index) const {
    return profiles.at(static_cast<size_t>(exit_index)).flops / compute_rate_flops;
}

int GreedyStaticSelector::choose(const DecisionContext& ctx) {
    int best = -1;
    double best_acc = -1.0;
    for (size_t i = 0; i < ctx.affordable.size(); ++i)
        if (ctx.affordable[i] && (*ctx.profiles)[i].accuracy > best_acc) {
            best = static_cast<int>(i);
            best_acc = (*ctx.profiles)[i].accuracy;
        }
    return best;
}

int FinalExitOnlySelector::choose(const DecisionContext& ctx) {
    const int last = static_cast<int>(ctx.profiles->size()) - 1;
    if (!stall_ && !ctx.affordable[static_cast<size_t>(last)]) return -1;
    return last;
}

namespace {

// Trailing-window average harvested power (the Q-learning "charging
// efficiency" state), in mW. Window clips at the trace start.
double trailing_power(const PowerTrace& trace, double t, double window_s, double efficiency) {
    const double t0 = std::max(trace.time_s.front(), t - window_s);
    if (t - t0 <= 1e-12) return trace.power_at(t) * efficiency;
    return trace.integral_mj(t0, t) * efficiency / (t - t0);
}

// Earliest time in [t_start, t_end] at which a store charging from `level`
// reaches `target` (no consumption in between), or nullopt. Bisection per
// trace segment; the cumulative energy is monotone since power >= 0.
std::optional<double> time_to_reach(const PowerTrace& trace, double efficiency, double t_start,
                                    double level, double target, double t_end) {
    double need = target - level;
    if (need <= 0.0) return t_start;
    double seg_a = t_start;
    size_t i = static_cast<size_t>(
        std::upper_bound(trace.time_s.begin(), trace.time_s.end(), t_start) -
        trace.time_s.begin());
    if (i == 0) i = 1;
    for (; i < trace.time_s.size() && seg_a < t_end; ++i) {
        const double seg_b = std::min(trace.time_s[i], t_end);
        if (seg_b <= seg_a) continue;
        const double gained = harvest(trace, seg_a, seg_b, efficiency);
        if (gained >= need) {
            double lo = seg_a, hi = seg_b;
            for (int it = 0; it < 64 && hi - lo > 1e-12 * std::max(1.0, hi); ++it) {
                const double mid = 0.5 * (lo + hi);
                if (harvest(trace, seg_a, mid, efficiency) >= need)
                    hi = mid;
                else
                    lo = mid;
            }
            return hi;
        }
        need -= gained;
        seg_a = seg_b;
    }
    return std::nullopt;
}

}  // namespace

SimReport simulate(const Scenario& scenario, ExitSelector& selector, AccuracyMode mode,
                   uint64_t seed) {
    scenario.validate();
    const auto& profiles = scenario.profiles;
    const int m = static_cast<int>(profiles.size());
    const double cap = scenario.store.capacity_mj;
    const double eff = scenario.store.harvest_efficiency;
    const double trace_start = scenario.trace.time_s.front();
    const double trace_end = scenario.trace.time_s.back();
    const double log_classes = std::log(static_cast<double>(std::max(2, scenario.num_classes)));

    Rng ev_rng = Rng(seed).stream("ehsim/event_draws");

    double level = std::min(scenario.store.level_mj, cap);
    const double initial = level;
    double t_cur = trace_start;
    double busy_until = trace_start;
    double cum_harvest = 0.0;
    double cum_spent = 0.0;

    SimReport report;
    report.records.reserve(scenario.events.time_s.size());

    auto charge_to = [&](double t) {
        if (t <= t_cur) return;
        const double e = harvest(scenario.trace, t_cur, t, eff);
        cum_harvest += e;
        level = std::min(cap, level + e);
        t_cur = t;
    };
    auto spend = [&](double e) {
        if (e > level + kAffordTol)
            throw SimulationFault("selector spent " + fmt_double(e) + " mJ with only " +
                                  fmt_double(level) + " mJ stored");
        level = std::max(0.0, level - e);
        cum_spent += e;
    };

    for (int j = 0; j < scenario.events.count(); ++j) {
        const double t_j = scenario.events.time_s[j];
        charge_to(t_j);
        const double p_now = trailing_power(scenario.trace, t_j, scenario.p_window_s, eff);
        const double u_conf = ev_rng.uniform01();  // synthetic per-event difficulty

        EventRecord rec;
        rec.index = j;
        rec.time_s = t_j;
        rec.level_before_mj = level;
        rec.charge_power_mw = p_now;

        if (t_j < busy_until) {
            rec.miss = MissReason::device_busy;
        } else {
            std::vector<char> affordable(static_cast<size_t>(m), 0);
            bool any = false;
            for (int i = 0; i < m; ++i)
                if (profiles[i].energy_cost_mj <= level + kAffordTol) {
                    affordable[static_cast<size_t>(i)] = 1;
                    any = true;
                }

            int chosen = -1;
            double decision_t = t_j;
            if (selector.stall_until_affordable()) {
                // Stall policies commit to their fixed exit and wait for it.
                DecisionContext ctx{j, t_j, level, p_now, &profiles, affordable};
                const int want = selector.choose(ctx);
                const double cost = profiles[static_cast<size_t>(want)].energy_cost_mj;
                if (cost <= level + kAffordTol) {
                    chosen = want;
                } else if (cost <= cap + kAffordTol) {
                    const auto t_ready = time_to_reach(scenario.trace, eff, t_cur, level, cost,
                                                       trace_end);
                    if (t_ready) {
                        charge_to(*t_ready);
                        decision_t = *t_ready;
                        chosen = want;
                    }
                }
                if (chosen < 0) rec.miss = MissReason::insufficient_energy;
            } else if (!any) {
                rec.miss = MissReason::insufficient_energy;
            } else {
                DecisionContext ctx{j, t_j, level, p_now, &profiles, affordable};
                chosen = selector.choose(ctx);
                if (chosen < 0) {
                    // the selector declined the affordable options
                    rec.miss = MissReason::insufficient_energy;
                } else if (chosen >= m || !affordable[static_cast<size_t>(chosen)]) {
                    throw SimulationFault("selector '" + std::string(selector.name()) +
                                          "' returned unaffordable exit " + std::to_string(chosen) +
                                          " at event " + std::to_string(j));
                }
            }

            if (chosen >= 0) {
                spend(profiles[static_cast<size_t>(chosen)].energy_cost_mj);
                busy_until = decision_t + scenario.exit_latency_s(chosen);
                int cur = chosen;
                double extra = 0.0;
                // Incremental inference: at each completed exit the selector
                // may extend to the next one for the incremental cost.
                while (cur + 1 < m) {
                    charge_to(std::min(busy_until, trace_end));
                    const double inc = profiles[static_cast<size_t>(cur + 1)].energy_cost_mj -
                                       profiles[static_cast<size_t>(cur)].energy_cost_mj;
                    if (inc > level + kAffordTol) break;  // stop forced
                    ExtendContext ectx;
                    ectx.event_index = j;
                    ectx.time_s = busy_until;
                    ectx.current_exit = cur;
                    ectx.level_mj = level;
                    ectx.charge_power_mw = p_now;
                    ectx.entropy_nats =
                        u_conf * log_classes * (1.0 - profiles[static_cast<size_t>(cur)].accuracy);
                    ectx.incremental_cost_mj = inc;
                    ectx.profiles = &profiles;
                    if (!selector.extend(ectx)) break;
                    spend(inc);
                    extra += inc;
                    busy_until += scenario.exit_latency_s(cur + 1) - scenario.exit_latency_s(cur);
                    ++cur;
                }
                rec.exit_index = cur;
                rec.energy_mj = profiles[static_cast<size_t>(cur)].energy_cost_mj;
                rec.latency_s = busy_until - t_j;
                rec.inference_latency_s = busy_until - decision_t;
                const double exp_acc = profiles[static_cast<size_t>(cur)].accuracy;
                rec.acc = (mode == AccuracyMode::expected)
                              ? exp_acc
                              : ((ev_rng.uniform01() < exp_acc) ? 1.0 : 0.0);
                (void)extra;
            }
        }
        rec.level_after_mj = level;

        // Eq.(5)-style conservation, asserted at every event.
        if (cum_spent > cum_harvest + initial + kConservationTol)
            throw SimulationFault("energy conservation violated at event " + std::to_string(j));
        if (level < -kConservationTol || level > cap + kConservationTol)
            throw SimulationFault("store bounds violated at event " + std::to_string(j));

        EventOutcome out;
        out.event_index = j;
        out.exit_index = rec.exit_index;
        out.miss = rec.miss;
        out.acc = rec.acc;
        out.level_before_mj = rec.level_before_mj;
        out.level_after_mj = rec.level_after_mj;
        out.charge_power_mw = rec.charge_power_mw;
        out.extra_energy_mj =
            (rec.exit_index >= 0)
                ? rec.energy_mj - profiles[static_cast<size_t>(rec.exit_index)].energy_cost_mj
                : 0.0;
        selector.observe(out);

        report.records.push_back(rec);
    }

    report.harvested_mj = cum_harvest;
    report.spent_mj = cum_spent;
    report.finalize(m, harvest(scenario.trace, trace_start, trace_end, eff));
    return report;
}

void SimReport::finalize(int num_exits, double e_total) {
    e_total_mj = e_total;
    processed = missed = 0;
    n_correct = 0.0;
    double lat_event = 0.0, lat_inference = 0.0;
    std::vector<int> exit_counts(static_cast<size_t>(num_exits), 0);
    spent_mj = 0.0;
    for (const auto& r : records) {
        if (r.exit_index >= 0) {
            ++processed;
            n_correct += r.acc;
            lat_event += r.latency_s;
            lat_inference += r.inference_latency_s;
            ++exit_counts[static_cast<size_t>(r.exit_index)];
            spent_mj += r.energy_mj;
        } else {
            ++missed;
        }
    }
    const int n = static_cast<int>(records.size());
    avg_acc_all = n > 0 ? n_correct / n : 0.0;
    avg_acc_processed = processed > 0 ? n_correct / processed : 0.0;
    mean_event_latency_s = processed > 0 ? lat_event / processed : 0.0;
    mean_inference_latency_s = processed > 0 ? lat_inference / processed : 0.0;
    exit_fraction_v.assign(static_cast<size_t>(num_exits), 0.0);
    if (n > 0)
        for (int i = 0; i < num_exits; ++i)
            exit_fraction_v[static_cast<size_t>(i)] =
                static_cast<double>(exit_counts[static_cast<size_t>(i)]) / n;
    missed_fraction = n > 0 ? static_cast<double>(missed) / n : 0.0;
    iepmj = (e_total_mj > 0.0) ? n_correct / e_total_mj : 0.0;
}

double iepmj(const SimReport& report) {
    if (report.e_total_mj <= 0.0)
        throw InputError("iepmj undefined: total harvested energy is zero");
    return report.n_correct / report.e_total_mj;
}

double iepmj_identity_form(const SimReport& report) {
    if (report.e_total_mj <= 0.0)
        throw InputError("iepmj undefined: total harvested energy is zero");
    const int n = static_cast<int>(report.records.size());
    if (n == 0) return 0.0;
    double mean_acc = 0.0;
    for (const auto& r : report.records) mean_acc += r.acc;
    mean_acc /= n;
    return (static_cast<double>(n) / report.e_total_mj) * mean_acc;
}

std::vector<double> exit_fraction(const SimReport& report) {
    return report.exit_fraction_v;
}

std::string SimReport::to_json() const {
    nlohmann::ordered_json j;
    j["n_events"] = static_cast<int>(records.size());
    j["processed"] = processed;
    j["missed"] = missed;
    j["n_correct"] = n_correct;
    j["e_total_mj"] = e_total_mj;
    j["harvested_mj"] = harvested_mj;
    j["spent_mj"] = spent_mj;
    j["iepmj"] = iepmj;
    j["avg_acc_all"] = avg_acc_all;
    j["avg_acc_processed"] = avg_acc_processed;
    j["mean_event_latency_s"] = mean_event_latency_s;
    j["mean_inference_latency_s"] = mean_inference_latency_s;
    j["exit_fraction"] = exit_fraction_v;
    j["missed_fraction"] = missed_fraction;
    return j.dump(2);
}

void save_events_csv(const SimReport& report, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "index,time_s,exit,miss_reason,acc,latency_s,inference_latency_s,energy_mj,"
          "level_before_mj,level_after_mj,charge_power_mw\n";
    for (const auto& r : report.records) {
        const char* reason = r.miss == MissReason::not_missed
                                 ? ""
                                 : (r.miss == MissReason::device_busy ? "busy" : "energy");
        os << r.index << "," << fmt_double(r.time_s) << "," << r.exit_index << "," << reason << ","
           << fmt_double(r.acc) << "," << fmt_double(r.latency_s) << ","
           << fmt_double(r.inference_latency_s) << "," << fmt_double(r.energy_mj) << ","
           << fmt_double(r.level_before_mj) << "," << fmt_double(r.level_after_mj) << ","
           << fmt_double(r.charge_power_mw) << "\n";
    }
}

}  // namespace ehmex
