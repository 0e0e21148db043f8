#include "ehmex/search.hpp"

#include <algorithm>
#include <cmath>

#include "ehmex/errors.hpp"

namespace ehmex {

// --------------------------------------------------------------------------
// Mlp

Mlp Mlp::make(std::vector<int> sizes, Output output, Rng& rng, double output_init_scale) {
    if (sizes.size() < 2) throw ConfigError("Mlp needs at least input and output sizes");
    Mlp net;
    net.sizes_ = std::move(sizes);
    net.output_ = output;
    net.w_.resize(net.sizes_.size() - 1);
    net.b_.resize(net.sizes_.size() - 1);
    for (size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
        const int fan_in = net.sizes_[l], fan_out = net.sizes_[l + 1];
        const bool last = (l + 2 == net.sizes_.size());
        const double sigma =
            (last ? output_init_scale : 1.0) / std::sqrt(static_cast<double>(fan_in));
        net.w_[l].resize(static_cast<size_t>(fan_out) * fan_in);
        for (auto& x : net.w_[l]) x = sigma * rng.gaussian();
        net.b_[l].assign(static_cast<size_t>(fan_out), 0.0);
    }
    return net;
}

std::vector<double> Mlp::forward(const std::vector<double>& x, Cache* cache) const {
    if (static_cast<int>(x.size()) != sizes_.front())
        throw InputError("Mlp::forward: input size mismatch");
    std::vector<double> cur = x;
    if (cache) {
        cache->post.clear();
        cache->post.push_back(cur);
    }
    for (size_t l = 0; l < w_.size(); ++l) {
        const int rows = sizes_[l + 1], cols = sizes_[l];
        std::vector<double> nxt(static_cast<size_t>(rows));
        for (int r = 0; r < rows; ++r) {
            double acc = b_[l][static_cast<size_t>(r)];
            const double* wr = &w_[l][static_cast<size_t>(r) * cols];
            for (int c = 0; c < cols; ++c) acc += wr[c] * cur[static_cast<size_t>(c)];
            nxt[static_cast<size_t>(r)] = acc;
        }
        const bool last = (l + 1 == w_.size());
        if (!last) {
            for (auto& v : nxt) v = std::tanh(v);
        } else if (output_ == Output::sigmoid) {
            for (auto& v : nxt) v = 1.0 / (1.0 + std::exp(-v));
        }
        cur = std::move(nxt);
        if (cache) cache->post.push_back(cur);
    }
    return cur;
}

MlpGrads Mlp::make_grads() const {
    MlpGrads g;
    g.w.resize(w_.size());
    g.b.resize(b_.size());
    for (size_t l = 0; l < w_.size(); ++l) {
        g.w[l].assign(w_[l].size(), 0.0);
        g.b[l].assign(b_[l].size(), 0.0);
    }
    return g;
}

std::vector<double> Mlp::backward(const Cache& cache, std::vector<double> dy,
                                  MlpGrads* grads) const {
    if (cache.post.size() != sizes_.size())
        throw StateError("Mlp::backward: cache does not match a forward pass");
    std::vector<double> dpre = std::move(dy);
    for (size_t li = w_.size(); li-- > 0;) {
        const int rows = sizes_[li + 1], cols = sizes_[li];
        const auto& out = cache.post[li + 1];
        const bool last = (li + 1 == w_.size());
        if (!last) {
            for (int r = 0; r < rows; ++r)
                dpre[static_cast<size_t>(r)] *= 1.0 - out[static_cast<size_t>(r)] * out[static_cast<size_t>(r)];
        } else if (output_ == Output::sigmoid) {
            for (int r = 0; r < rows; ++r)
                dpre[static_cast<size_t>(r)] *=
                    out[static_cast<size_t>(r)] * (1.0 - out[static_cast<size_t>(r)]);
        }
        const auto& in = cache.post[li];
        if (grads) {
            for (int r = 0; r < rows; ++r) {
                const double d = dpre[static_cast<size_t>(r)];
                double* gw = &grads->w[li][static_cast<size_t>(r) * cols];
                for (int c = 0; c < cols; ++c) gw[c] += d * in[static_cast<size_t>(c)];
                grads->b[li][static_cast<size_t>(r)] += d;
            }
        }
        std::vector<double> dx(static_cast<size_t>(cols), 0.0);
        for (int r = 0; r < rows; ++r) {
            const double d = dpre[static_cast<size_t>(r)];
            const double* wr = &w_[li][static_cast<size_t>(r) * cols];
            for (int c = 0; c < cols; ++c) dx[static_cast<size_t>(c)] += d * wr[c];
        }
        dpre = std::move(dx);
    }
    return dpre;
}

size_t Mlp::param_count() const {
    size_t n = 0;
    for (size_t l = 0; l < w_.size(); ++l) n += w_[l].size() + b_[l].size();
    return n;
}

double Mlp::get_param(size_t i) const {
    for (size_t l = 0; l < w_.size(); ++l) {
        if (i < w_[l].size()) return w_[l][i];
        i -= w_[l].size();
        if (i < b_[l].size()) return b_[l][i];
        i -= b_[l].size();
    }
    throw InputError("Mlp::get_param: index out of range");
}

void Mlp::set_param(size_t i, double v) {
    for (size_t l = 0; l < w_.size(); ++l) {
        if (i < w_[l].size()) {
            w_[l][i] = v;
            return;
        }
        i -= w_[l].size();
        if (i < b_[l].size()) {
            b_[l][i] = v;
            return;
        }
        i -= b_[l].size();
    }
    throw InputError("Mlp::set_param: index out of range");
}

double Mlp::grad_at(const MlpGrads& g, size_t i) const {
    for (size_t l = 0; l < g.w.size(); ++l) {
        if (i < g.w[l].size()) return g.w[l][i];
        i -= g.w[l].size();
        if (i < g.b[l].size()) return g.b[l][i];
        i -= g.b[l].size();
    }
    throw InputError("Mlp::grad_at: index out of range");
}

void Adam::step(Mlp& net, const MlpGrads& grads) {
    const size_t n = net.param_count();
    if (m.size() != n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (size_t i = 0; i < n; ++i) {
        const double g = net.grad_at(grads, i);
        if (!std::isfinite(g)) throw NumericalError("training fault: non-finite gradient");
        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
        const double update = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
        net.set_param(i, net.get_param(i) - update);
    }
}

// --------------------------------------------------------------------------
// Replay + agents

void ReplayBuffer::push(Transition t) {
    if (data_.size() < capacity_) {
        data_.push_back(std::move(t));
    } else {
        data_[next_] = std::move(t);
        next_ = (next_ + 1) % capacity_;
    }
}

const Transition& ReplayBuffer::sample(Rng& rng) const {
    if (data_.empty()) throw StateError("ReplayBuffer::sample: empty buffer");
    return data_[static_cast<size_t>(rng.uniform_int(data_.size()))];
}

AgentPair AgentPair::make(int obs_dim, const AgentConfig& cfg, uint64_t seed) {
    AgentPair pair;
    pair.cfg = cfg;
    pair.rng = Rng(seed).stream("search/agents");
    Rng init = Rng(seed).stream("search/init");

    auto build = [&](int act_dim) {
        DdpgAgent agent;
        agent.obs_dim = obs_dim;
        agent.act_dim = act_dim;
        agent.actor = Mlp::make({obs_dim, cfg.hidden, cfg.hidden, act_dim}, Mlp::Output::sigmoid,
                                init, /*output_init_scale=*/0.01);
        agent.critic =
            Mlp::make({obs_dim + act_dim, cfg.hidden, cfg.hidden, 1}, Mlp::Output::linear, init);
        agent.actor_opt.lr = cfg.actor_lr;
        agent.critic_opt.lr = cfg.critic_lr;
        agent.buffer = ReplayBuffer(cfg.buffer_capacity);
        return agent;
    };
    pair.prune = build(1);
    pair.quant = build(2);
    return pair;
}

double critic_loss(const Mlp& critic, const std::vector<std::vector<double>>& inputs,
                   const std::vector<double>& targets, MlpGrads* grads) {
    if (inputs.size() != targets.size() || inputs.empty())
        throw InputError("critic_loss: inputs/targets size mismatch");
    const double n = static_cast<double>(inputs.size());
    double loss = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Mlp::Cache cache;
        const double q = critic.forward(inputs[i], &cache)[0];
        const double diff = q - targets[i];
        loss += diff * diff / n;
        if (grads) critic.backward(cache, {2.0 * diff / n}, grads);
    }
    if (!std::isfinite(loss)) throw NumericalError("training fault: non-finite critic loss");
    return loss;
}

double actor_objective(const Mlp& actor, const Mlp& critic,
                       const std::vector<std::vector<double>>& obs, MlpGrads* grads) {
    if (obs.empty()) throw InputError("actor_objective: empty batch");
    const double n = static_cast<double>(obs.size());
    double objective = 0.0;
    for (const auto& o : obs) {
        Mlp::Cache actor_cache;
        const std::vector<double> a = actor.forward(o, &actor_cache);
        std::vector<double> critic_in = o;
        critic_in.insert(critic_in.end(), a.begin(), a.end());
        Mlp::Cache critic_cache;
        const double q = critic.forward(critic_in, &critic_cache)[0];
        objective += q / n;
        if (grads) {
            // dQ/da through the critic, then through the actor.
            const std::vector<double> dq_din = critic.backward(critic_cache, {1.0 / n}, nullptr);
            std::vector<double> dq_da(dq_din.end() - static_cast<long>(a.size()), dq_din.end());
            actor.backward(actor_cache, std::move(dq_da), grads);
        }
    }
    if (!std::isfinite(objective))
        throw NumericalError("training fault: non-finite actor objective");
    return objective;
}

DdpgUpdateStats ddpg_update(DdpgAgent& agent, int batch_size, Rng& rng) {
    if (agent.buffer.size() < static_cast<size_t>(batch_size))
        throw StateError("ddpg_update: buffer holds fewer transitions than the minibatch");
    std::vector<std::vector<double>> critic_in;
    std::vector<double> targets;
    std::vector<std::vector<double>> obs;
    critic_in.reserve(static_cast<size_t>(batch_size));
    targets.reserve(static_cast<size_t>(batch_size));
    obs.reserve(static_cast<size_t>(batch_size));
    for (int i = 0; i < batch_size; ++i) {
        const Transition& tr = agent.buffer.sample(rng);
        std::vector<double> in = tr.obs;
        in.insert(in.end(), tr.action.begin(), tr.action.end());
        critic_in.push_back(std::move(in));
        double target = tr.reward;
        if (!tr.done) {
            // Q' = r + Q(O_{l+1}, mu(O_{l+1})), undiscounted within the episode.
            const std::vector<double> a_next = agent.actor.forward(tr.next_obs);
            std::vector<double> in_next = tr.next_obs;
            in_next.insert(in_next.end(), a_next.begin(), a_next.end());
            target += agent.critic.forward(in_next)[0];
        }
        targets.push_back(target);
        obs.push_back(tr.obs);
    }

    DdpgUpdateStats stats;
    MlpGrads cg = agent.critic.make_grads();
    stats.critic_loss = critic_loss(agent.critic, critic_in, targets, &cg);
    agent.critic_opt.step(agent.critic, cg);

    MlpGrads ag = agent.actor.make_grads();
    stats.actor_objective = actor_objective(agent.actor, agent.critic, obs, &ag);
    // Ascend the objective: flip the gradient sign for the descent-style step.
    for (auto& layer : ag.w)
        for (auto& g : layer) g = -g;
    for (auto& layer : ag.b)
        for (auto& g : layer) g = -g;
    agent.actor_opt.step(agent.actor, ag);
    return stats;
}

// --------------------------------------------------------------------------
// Action mapping and observation

namespace {
double round_even(double x) { return std::nearbyint(x); }
int preserve_count(double alpha, int c) {
    return std::max(1, static_cast<int>(std::llround(alpha * c)));
}
double clamp01(double x) { return std::min(1.0, std::max(0.0, x)); }
}  // namespace

int map_action_to_bitwidth(double a, int b_min, int b_max) {
    const double mapped = b_min + a * (b_max - b_min);
    const int b = static_cast<int>(round_even(mapped));
    return std::min(std::max(b, b_min), b_max);
}

double map_action_to_alpha(double a) {
    const int idx = static_cast<int>(round_even(1.0 + clamp01(a) * 19.0));
    return 0.05 * std::min(std::max(idx, 1), 20);
}

std::vector<SearchStep> search_steps(const NetworkDescriptor& net) {
    std::vector<SearchStep> steps;
    for (int li : net.weighted_layers()) steps.push_back({false, li});
    for (int e = 0; e < net.num_exits(); ++e) steps.push_back({true, e});
    return steps;
}

namespace {

struct StepStats {
    double flops0 = 0.0;   // uncompressed MACs of this step's layer
    double bits0 = 0.0;    // uncompressed storage bits (32-bit)
    double params0 = 0.0;
    int c_in0 = 0, c_out0 = 0;
    bool is_conv = false;
};

std::vector<StepStats> step_stats(const NetworkDescriptor& net,
                                  const std::vector<SearchStep>& steps) {
    std::vector<StepStats> out;
    out.reserve(steps.size());
    for (const auto& s : steps) {
        StepStats st;
        if (!s.is_head) {
            const LayerSpec& l = net.layers[static_cast<size_t>(s.layer_index)];
            st.flops0 = static_cast<double>(flops_of_layer(l));
            st.params0 = static_cast<double>(l.param_count());
            st.c_in0 = l.c_in_orig;
            st.c_out0 = l.c_out_orig;
            st.is_conv = (l.kind == LayerKind::conv);
        } else {
            const ExitHead& ex = net.exits[static_cast<size_t>(s.layer_index)];
            st.params0 = static_cast<double>(ex.num_features_orig) * net.num_classes;
            st.flops0 = st.params0;
            st.c_in0 = ex.num_features_orig;
            st.c_out0 = net.num_classes;
            st.is_conv = false;
        }
        st.bits0 = st.params0 * 32.0;
        out.push_back(st);
    }
    return out;
}

// Committed (so far) FLOPs and storage bits of step u, given the decisions
// already taken. Undecided sides keep their uncompressed counts.
void committed_cost(const NetworkDescriptor& net, const std::vector<SearchStep>& steps,
                    const std::vector<StepStats>& stats, const ObservationState& state,
                    bool prune_heads, int u, double* flops, double* bits) {
    const int backbone_steps = static_cast<int>(net.weighted_layers().size());
    const auto wl = net.weighted_layers();
    auto kept_at_interface = [&](int i) {
        // interface i = input of backbone step i; step 0 reads the raw input
        const int p = net.producing_layer(wl[static_cast<size_t>(i)]);
        const int c_orig = (p >= 0) ? net.layers[static_cast<size_t>(p)].c_out_orig : net.in_c;
        if (i == 0 || i >= state.steps_done) return c_orig;
        return preserve_count(state.alphas[static_cast<size_t>(i)], c_orig);
    };
    const StepStats& st = stats[static_cast<size_t>(u)];
    if (!steps[static_cast<size_t>(u)].is_head) {
        const LayerSpec& l = net.layers[static_cast<size_t>(steps[static_cast<size_t>(u)].layer_index)];
        const int p = net.producing_layer(steps[static_cast<size_t>(u)].layer_index);
        const int c_in_orig_ch = (p >= 0) ? net.layers[static_cast<size_t>(p)].c_out_orig : net.in_c;
        const double in_ratio = static_cast<double>(kept_at_interface(u)) / c_in_orig_ch;
        double out_ratio = 1.0;
        if (u + 1 < backbone_steps)
            out_ratio = static_cast<double>(kept_at_interface(u + 1)) / l.c_out_orig;
        const double params = st.params0 * in_ratio * out_ratio;
        *flops = st.flops0 * in_ratio * out_ratio;
        *bits = params * (u < state.steps_done ? state.weight_bits[static_cast<size_t>(u)] : 32);
    } else {
        const int e = steps[static_cast<size_t>(u)].layer_index;
        const ExitHead& ex = net.exits[static_cast<size_t>(e)];
        // interface the head reads: input of the first backbone step after the
        // attachment, or the (unpruned) final layer output
        int iface = backbone_steps;
        for (int i = 0; i < backbone_steps; ++i)
            if (wl[static_cast<size_t>(i)] > ex.after_layer) {
                iface = i;
                break;
            }
        const LayerSpec& at = net.layers[static_cast<size_t>(ex.after_layer)];
        const int hw = at.out_h * at.out_w;
        double avail;
        if (iface >= backbone_steps) {
            avail = static_cast<double>(net.layers[static_cast<size_t>(wl.back())].c_out_orig) * hw;
        } else {
            avail = static_cast<double>(kept_at_interface(iface)) * hw;
        }
        double f = avail;
        if (prune_heads && u < state.steps_done)
            f = std::min(avail, static_cast<double>(preserve_count(
                                    state.alphas[static_cast<size_t>(u)], ex.num_features_orig)));
        const double params = f * net.num_classes;
        *flops = params;
        *bits = params * (u < state.steps_done ? state.weight_bits[static_cast<size_t>(u)] : 32);
    }
}

}  // namespace

std::vector<double> build_observation(const NetworkDescriptor& net, int step_index,
                                      const ObservationState& state, int bw_max, int ba_max,
                                      bool prune_heads) {
    const auto steps = search_steps(net);
    const auto stats = step_stats(net, steps);
    const int T = static_cast<int>(steps.size());
    if (step_index < 0 || step_index >= T) throw InputError("build_observation: bad step index");

    double total_flops = 0.0, total_bits = 0.0;
    int max_cin = 1, max_cout = 1;
    double max_params = 1.0;
    for (const auto& st : stats) {
        total_flops += st.flops0;
        total_bits += st.bits0;
        max_cin = std::max(max_cin, st.c_in0);
        max_cout = std::max(max_cout, st.c_out0);
        max_params = std::max(max_params, st.params0);
    }

    double flop_reduced = 0.0, bits_reduced = 0.0;
    for (int u = 0; u < step_index; ++u) {
        double f = 0.0, b = 0.0;
        committed_cost(net, steps, stats, state, prune_heads, u, &f, &b);
        flop_reduced += stats[static_cast<size_t>(u)].flops0 - f;
        bits_reduced += stats[static_cast<size_t>(u)].bits0 - b;
    }
    double flop_remain = 0.0, bits_remain = 0.0;
    for (int u = step_index; u < T; ++u) {
        flop_remain += stats[static_cast<size_t>(u)].flops0;
        bits_remain += stats[static_cast<size_t>(u)].bits0;
    }

    const StepStats& cur = stats[static_cast<size_t>(step_index)];
    std::vector<double> o(12);
    o[0] = (T > 1) ? static_cast<double>(step_index) / (T - 1) : 0.0;
    o[1] = (step_index > 0) ? state.alphas[static_cast<size_t>(step_index - 1)] : 1.0;
    o[2] = (step_index > 0)
               ? static_cast<double>(state.weight_bits[static_cast<size_t>(step_index - 1)]) / bw_max
               : 1.0;
    o[3] = (step_index > 0)
               ? static_cast<double>(state.act_bits[static_cast<size_t>(step_index - 1)]) / ba_max
               : 1.0;
    o[4] = flop_reduced / total_flops;
    o[5] = flop_remain / total_flops;
    o[6] = bits_reduced / total_bits;
    o[7] = bits_remain / total_bits;
    o[8] = cur.is_conv ? 1.0 : 0.0;
    o[9] = static_cast<double>(cur.c_in0) / max_cin;
    o[10] = static_cast<double>(cur.c_out0) / max_cout;
    o[11] = cur.params0 / max_params;
    return o;
}

// --------------------------------------------------------------------------
// Surrogate accuracy model

namespace {

// Policy features for one exit: constants over the layers feeding it.
std::vector<double> surrogate_features(const NetworkDescriptor& net,
                                       const CompressionPolicy& policy, int exit_index,
                                       bool prune_heads) {
    const auto wl = net.weighted_layers();
    const int attach = net.exits[static_cast<size_t>(exit_index)].after_layer;
    double sum_a = 0.0, min_a = 1.0;
    double sum_wb = 0.0, max_wb = 0.0;
    double sum_ab = 0.0, max_ab = 0.0;
    int n = 0;
    for (size_t i = 0; i < wl.size(); ++i) {
        if (wl[i] > attach) break;
        const LayerPolicy& lp = policy.backbone[i];
        const double a = (i == 0) ? 1.0 : lp.alpha;
        sum_a += a;
        min_a = std::min(min_a, a);
        const double wb = std::pow(2.0, -(lp.weight_bits - 1));
        const double ab = std::pow(2.0, -(lp.act_bits - 1));
        sum_wb += wb;
        max_wb = std::max(max_wb, wb);
        sum_ab += ab;
        max_ab = std::max(max_ab, ab);
        ++n;
    }
    const LayerPolicy& hp = policy.heads[static_cast<size_t>(exit_index)];
    const double hb = std::pow(2.0, -(hp.weight_bits - 1));
    sum_wb += hb;
    max_wb = std::max(max_wb, hb);
    if (prune_heads) {
        sum_a += hp.alpha;
        min_a = std::min(min_a, hp.alpha);
    } else {
        sum_a += 1.0;
    }
    const int n_a = n + 1;
    const int n_w = n + 1;
    return {1.0,           sum_a / n_a, min_a, sum_wb / n_w,
            max_wb,        sum_ab / std::max(1, n), max_ab};
}

}  // namespace

std::vector<double> SurrogateModel::predict(const NetworkDescriptor& net,
                                            const CompressionPolicy& policy,
                                            bool prune_heads) const {
    std::vector<double> acc(coeff.size(), 0.0);
    const double chance = 1.0 / net.num_classes;
    for (size_t e = 0; e < coeff.size(); ++e) {
        const auto phi = surrogate_features(net, policy, static_cast<int>(e), prune_heads);
        double y = 0.0;
        for (size_t k = 0; k < phi.size(); ++k) y += coeff[e][k] * phi[k];
        acc[e] = std::min(1.0, std::max(chance, y));
    }
    return acc;
}

// --------------------------------------------------------------------------
// SearchEnv

SearchEnv::SearchEnv(NetworkDescriptor net, ToyDataset data, Scenario scenario,
                     SearchEnvConfig cfg, uint64_t seed)
    : net_(std::move(net)),
      data_(std::move(data)),
      scenario_(std::move(scenario)),
      cfg_(cfg),
      seed_(seed) {
    steps_ = search_steps(net_);
    f0_ = model_flops(net_);
    s0_ = model_weight_bytes(net_);
    if (cfg_.flops_target <= 0.0 || cfg_.size_target_bytes <= 0.0)
        throw ConfigError("search targets must be positive");
    if (cfg_.accuracy_mode == AccuracyEvalMode::surrogate) fit_surrogate();
}

CompressionPolicy SearchEnv::make_policy(const std::vector<double>& alphas,
                                         const std::vector<int>& weight_bits,
                                         const std::vector<int>& act_bits) const {
    const size_t T = steps_.size();
    if (alphas.size() != T || weight_bits.size() != T || act_bits.size() != T)
        throw ConfigError("make_policy: per-step arrays must cover every step");
    CompressionPolicy p;
    for (size_t t = 0; t < T; ++t) {
        LayerPolicy lp;
        lp.alpha = snap_alpha(alphas[t]);
        if (t == 0) lp.alpha = 1.0;  // raw-input layer is not prunable
        if (steps_[t].is_head && !cfg_.prune_heads) lp.alpha = 1.0;
        lp.weight_bits = std::min(std::max(weight_bits[t], cfg_.bw_min), cfg_.bw_max);
        lp.act_bits = std::min(std::max(act_bits[t], cfg_.ba_min), cfg_.ba_max);
        if (steps_[t].is_head)
            p.heads.push_back(lp);
        else
            p.backbone.push_back(lp);
    }
    return p;
}

namespace {

// Shared tail: build profiles, run the greedy-static simulation, compute
// R_acc = sum_i p_i * Acc_i.
void finish_eval(const Scenario& base, const std::vector<double>& exit_flops,
                 const std::vector<double>& exit_acc, uint64_t seed, PolicyEval* ev) {
    Scenario sc = base;
    sc.profiles.clear();
    for (size_t i = 0; i < exit_flops.size(); ++i) {
        ExitProfile p;
        p.flops = exit_flops[i];
        p.accuracy = exit_acc[i];
        p.energy_cost_mj = exit_flops[i] * sc.energy_per_mflop_mj / 1e6;
        sc.profiles.push_back(p);
    }
    GreedyStaticSelector greedy;
    const SimReport rep = simulate(sc, greedy, AccuracyMode::expected, seed);
    ev->exit_fractions = exit_fraction(rep);
    ev->exit_accuracy = exit_acc;
    ev->r_acc = 0.0;
    for (size_t i = 0; i < ev->exit_fractions.size(); ++i)
        ev->r_acc += ev->exit_fractions[i] * exit_acc[i];
}

bool strictly_increasing(const std::vector<double>& v) {
    for (size_t i = 1; i < v.size(); ++i)
        if (v[i] <= v[i - 1]) return false;
    return true;
}

}  // namespace

PolicyEval SearchEnv::evaluate_descriptor(const CompressionPolicy& policy) const {
    PolicyEval ev;
    ev.policy = policy;
    try {
        ApplyResult applied = apply_policy(net_, policy, scenario_.energy_per_mflop_mj,
                                           cfg_.prune_heads);
        NetworkDescriptor& cnet = applied.net;
        if (cfg_.refit_heads) {
            // Re-calibrate activation grids on the pruned net, refit heads on
            // quantized features, then re-quantize the refit head weights.
            calibrate_activations(cnet, data_.train_x);
            const auto wl = cnet.weighted_layers();
            for (size_t i = 0; i < wl.size(); ++i) {
                QuantInfo& q = cnet.quant[static_cast<size_t>(wl[i])];
                if (q.act_bits < 32 && cnet.act_max[static_cast<size_t>(wl[i])] > 0.0)
                    q.act_scale = cnet.act_max[static_cast<size_t>(wl[i])] /
                                  (std::pow(2.0, q.act_bits) - 1.0);
            }
            fit_exit_heads(cnet, data_, cfg_.ridge_lambda, /*quantized_features=*/true);
            for (auto& ex : cnet.exits) {
                if (ex.quant.weight_bits < 32) {
                    QuantResult qr = quantize_weights(ex.weight, ex.quant.weight_bits);
                    ex.weight = std::move(qr.values);
                    ex.quant.weight_scale = qr.scale;
                }
            }
        }
        std::vector<double> acc(cnet.exits.size(), 0.0);
        for (int e = 0; e < cnet.num_exits(); ++e)
            acc[static_cast<size_t>(e)] = eval_accuracy(cnet, data_, e, /*quantized=*/true);
        std::vector<double> flops;
        for (const auto& p : exit_profiles(cnet, scenario_.energy_per_mflop_mj))
            flops.push_back(p.flops);
        ev.f_model = applied.f_model;
        ev.s_model_bytes = applied.s_model_bytes;
        finish_eval(scenario_, flops, acc, seed_, &ev);
    } catch (const std::exception& e) {
        ev.valid = false;
        ev.error = e.what();
        return ev;
    }
    ev.flops_ok = ev.f_model <= cfg_.flops_target;
    ev.size_ok = ev.s_model_bytes <= cfg_.size_target_bytes;
    return ev;
}

PolicyEval SearchEnv::evaluate(const CompressionPolicy& policy) const {
    if (cfg_.accuracy_mode == AccuracyEvalMode::descriptor) return evaluate_descriptor(policy);
    PolicyEval ev;
    ev.policy = policy;
    try {
        const PolicyCost pc = policy_cost(net_, policy, cfg_.prune_heads);
        if (!strictly_increasing(pc.exit_flops))
            throw ConfigError("policy yields non-increasing exit FLOPs");
        ev.f_model = pc.f_model;
        ev.s_model_bytes = pc.s_model_bytes;
        const std::vector<double> acc = surrogate_.predict(net_, policy, cfg_.prune_heads);
        finish_eval(scenario_, pc.exit_flops, acc, seed_, &ev);
    } catch (const std::exception& e) {
        ev.valid = false;
        ev.error = e.what();
        return ev;
    }
    ev.flops_ok = ev.f_model <= cfg_.flops_target;
    ev.size_ok = ev.s_model_bytes <= cfg_.size_target_bytes;
    return ev;
}

void SearchEnv::fit_surrogate() {
    // Real descriptor evaluations on a seeded policy grid, then a per-exit
    // least-squares fit of accuracy on policy features.
    Rng rng = Rng(seed_).stream("search/surrogate");
    const size_t T = steps_.size();
    std::vector<CompressionPolicy> grid;
    grid.push_back(CompressionPolicy::identity(net_));
    // structured corners: uniform alpha x uniform bitwidths
    const double alphas_u[] = {1.0, 0.75, 0.5, 0.25};
    const int bits_u[] = {8, 4, 2};
    for (double a : alphas_u)
        for (int b : bits_u) {
            std::vector<double> av(T, a);
            std::vector<int> bv(T, b);
            grid.push_back(make_policy(av, bv, bv));
        }
    while (static_cast<int>(grid.size()) < cfg_.surrogate_grid) {
        std::vector<double> av(T);
        std::vector<int> bv(T), cv(T);
        for (size_t t = 0; t < T; ++t) {
            av[t] = 0.05 * static_cast<double>(1 + rng.uniform_int(20));
            bv[t] = cfg_.bw_min + static_cast<int>(rng.uniform_int(
                                      static_cast<uint64_t>(cfg_.bw_max - cfg_.bw_min + 1)));
            cv[t] = cfg_.ba_min + static_cast<int>(rng.uniform_int(
                                      static_cast<uint64_t>(cfg_.ba_max - cfg_.ba_min + 1)));
        }
        grid.push_back(make_policy(av, bv, cv));
    }

    const int m = net_.num_exits();
    std::vector<std::vector<std::vector<double>>> features;  // [policy][exit][k]
    std::vector<std::vector<double>> accs;                   // [policy][exit]
    for (const auto& pol : grid) {
        PolicyEval ev = evaluate_descriptor(pol);
        if (!ev.valid) continue;
        std::vector<std::vector<double>> per_exit;
        per_exit.reserve(static_cast<size_t>(m));
        for (int e = 0; e < m; ++e)
            per_exit.push_back(surrogate_features(net_, pol, e, cfg_.prune_heads));
        features.push_back(std::move(per_exit));
        accs.push_back(ev.exit_accuracy);
    }
    const int kept = static_cast<int>(features.size());
    if (kept < 8) throw NumericalError("surrogate fit: too few valid grid evaluations");
    surrogate_.coeff.assign(static_cast<size_t>(m), {});
    const int K = static_cast<int>(features[0][0].size());
    for (int e = 0; e < m; ++e) {
        std::vector<double> xtx(static_cast<size_t>(K) * K, 0.0);
        std::vector<double> xty(static_cast<size_t>(K), 0.0);
        for (int p = 0; p < kept; ++p) {
            const auto& phi = features[static_cast<size_t>(p)][static_cast<size_t>(e)];
            const double y = accs[static_cast<size_t>(p)][static_cast<size_t>(e)];
            for (int i = 0; i < K; ++i) {
                for (int j = 0; j < K; ++j)
                    xtx[static_cast<size_t>(i) * K + j] += phi[static_cast<size_t>(i)] * phi[static_cast<size_t>(j)];
                xty[static_cast<size_t>(i)] += phi[static_cast<size_t>(i)] * y;
            }
        }
        for (int i = 0; i < K; ++i) xtx[static_cast<size_t>(i) * K + i] += 1e-6;
        surrogate_.coeff[static_cast<size_t>(e)] = spd_solve(xtx, K, xty, 1);
    }
    surrogate_.grid_evals = kept;
}

// --------------------------------------------------------------------------
// Episodes and search

EpisodeResult run_episode(const SearchEnv& env, AgentPair& agents, double sigma,
                          bool push_transitions) {
    const auto& steps = env.steps();
    const int T = static_cast<int>(steps.size());
    const auto& cfg = env.config();

    ObservationState state;
    state.alphas.resize(static_cast<size_t>(T));
    state.weight_bits.resize(static_cast<size_t>(T));
    state.act_bits.resize(static_cast<size_t>(T));

    std::vector<std::vector<double>> obs(static_cast<size_t>(T));
    std::vector<std::vector<double>> act_p(static_cast<size_t>(T)), act_q(static_cast<size_t>(T));
    std::vector<double> raw_alpha(static_cast<size_t>(T));
    std::vector<int> raw_bw(static_cast<size_t>(T)), raw_ba(static_cast<size_t>(T));

    for (int t = 0; t < T; ++t) {
        const std::vector<double> o =
            build_observation(env.net(), t, state, cfg.bw_max, cfg.ba_max, cfg.prune_heads);
        obs[static_cast<size_t>(t)] = o;

        std::vector<double> ap = agents.prune.actor.forward(o);
        std::vector<double> aq = agents.quant.actor.forward(o);
        if (sigma > 0.0) {
            for (auto& a : ap) a = std::min(1.0, std::max(0.0, a + sigma * agents.rng.gaussian()));
            for (auto& a : aq) a = std::min(1.0, std::max(0.0, a + sigma * agents.rng.gaussian()));
        }
        act_p[static_cast<size_t>(t)] = ap;
        act_q[static_cast<size_t>(t)] = aq;

        raw_alpha[static_cast<size_t>(t)] = map_action_to_alpha(ap[0]);
        raw_bw[static_cast<size_t>(t)] = map_action_to_bitwidth(aq[0], cfg.bw_min, cfg.bw_max);
        raw_ba[static_cast<size_t>(t)] = map_action_to_bitwidth(aq[1], cfg.ba_min, cfg.ba_max);

        // Record the effective (forced) values so the next observation sees
        // what was actually applied.
        double eff_alpha = raw_alpha[static_cast<size_t>(t)];
        if (t == 0) eff_alpha = 1.0;
        if (steps[static_cast<size_t>(t)].is_head && !cfg.prune_heads) eff_alpha = 1.0;
        state.alphas[static_cast<size_t>(t)] = eff_alpha;
        state.weight_bits[static_cast<size_t>(t)] = raw_bw[static_cast<size_t>(t)];
        state.act_bits[static_cast<size_t>(t)] = raw_ba[static_cast<size_t>(t)];
        state.steps_done = t + 1;
    }

    EpisodeResult result;
    result.policy = env.make_policy(raw_alpha, raw_bw, raw_ba);
    result.eval = env.evaluate(result.policy);

    if (!result.eval.valid) {
        result.r_prune = -cfg.lambda1;
        result.r_quant = -cfg.lambda2;
    } else {
        result.r_prune = result.eval.flops_ok ? cfg.lambda1 * result.eval.r_acc : -cfg.lambda1;
        result.r_quant = result.eval.size_ok ? cfg.lambda2 * result.eval.r_acc : -cfg.lambda2;
    }

    if (push_transitions) {
        for (int t = 0; t < T; ++t) {
            const bool done = (t + 1 == T);
            const std::vector<double> next =
                done ? std::vector<double>(12, 0.0) : obs[static_cast<size_t>(t + 1)];
            agents.prune.buffer.push(
                {obs[static_cast<size_t>(t)], act_p[static_cast<size_t>(t)], result.r_prune, next, done});
            agents.quant.buffer.push(
                {obs[static_cast<size_t>(t)], act_q[static_cast<size_t>(t)], result.r_quant, next, done});
        }
    }
    return result;
}

namespace {

void track_best(const EpisodeResult& ep, SearchResult* out) {
    if (!ep.eval.valid) return;
    if (ep.eval.feasible()) {
        if (!out->best_policy || ep.eval.r_acc > out->best_eval.r_acc) {
            out->best_policy = ep.policy;
            out->best_eval = ep.eval;
        }
    } else if (!out->best_infeasible_policy ||
               ep.eval.r_acc > out->best_infeasible_eval.r_acc) {
        out->best_infeasible_policy = ep.policy;
        out->best_infeasible_eval = ep.eval;
    }
}

EpisodeLog log_of(int episode, bool greedy, const EpisodeResult& ep) {
    EpisodeLog log;
    log.episode = episode;
    log.greedy = greedy;
    log.r_acc = ep.eval.valid ? ep.eval.r_acc : 0.0;
    log.r_prune = ep.r_prune;
    log.r_quant = ep.r_quant;
    log.f_model = ep.eval.f_model;
    log.s_model_bytes = ep.eval.s_model_bytes;
    log.feasible = ep.eval.feasible();
    return log;
}

}  // namespace

SearchResult search(const SearchEnv& env, AgentPair& agents, int num_episodes, int greedy_every) {
    if (num_episodes < 1) throw ConfigError("search needs at least one episode");
    SearchResult out;
    const auto& cfg = agents.cfg;
    const double decay =
        std::pow(cfg.sigma_floor / cfg.sigma0, 1.0 / std::max(1, num_episodes - 1));
    double sigma = cfg.sigma0;
    for (int ep = 0; ep < num_episodes; ++ep) {
        EpisodeResult res = run_episode(env, agents, sigma, /*push_transitions=*/true);
        track_best(res, &out);
        out.history.push_back(log_of(ep, false, res));

        if (agents.prune.buffer.size() >= static_cast<size_t>(cfg.batch_size)) {
            for (int u = 0; u < cfg.updates_per_episode; ++u) {
                ddpg_update(agents.prune, cfg.batch_size, agents.rng);
                ddpg_update(agents.quant, cfg.batch_size, agents.rng);
            }
        }
        if (greedy_every > 0 && (ep + 1) % greedy_every == 0) {
            EpisodeResult greedy = run_episode(env, agents, 0.0, /*push_transitions=*/false);
            track_best(greedy, &out);
            out.history.push_back(log_of(ep, true, greedy));
        }
        sigma = std::max(cfg.sigma_floor, sigma * decay);
    }
    EpisodeResult final_greedy = run_episode(env, agents, 0.0, /*push_transitions=*/false);
    track_best(final_greedy, &out);
    out.history.push_back(log_of(num_episodes, true, final_greedy));
    return out;
}

SearchResult random_search_baseline(const SearchEnv& env, int num_samples, uint64_t seed) {
    SearchResult out;
    Rng rng = Rng(seed).stream("search/random_baseline");
    const size_t T = env.steps().size();
    const auto& cfg = env.config();
    for (int i = 0; i < num_samples; ++i) {
        std::vector<double> av(T);
        std::vector<int> bv(T), cv(T);
        for (size_t t = 0; t < T; ++t) {
            av[t] = 0.05 * static_cast<double>(1 + rng.uniform_int(20));
            bv[t] = cfg.bw_min + static_cast<int>(rng.uniform_int(
                                     static_cast<uint64_t>(cfg.bw_max - cfg.bw_min + 1)));
            cv[t] = cfg.ba_min + static_cast<int>(rng.uniform_int(
                                     static_cast<uint64_t>(cfg.ba_max - cfg.ba_min + 1)));
        }
        EpisodeResult ep;
        ep.policy = env.make_policy(av, bv, cv);
        ep.eval = env.evaluate(ep.policy);
        track_best(ep, &out);
        out.history.push_back(log_of(i, false, ep));
    }
    return out;
}

// --------------------------------------------------------------------------
// Search-space accounting

namespace {
std::string decimal_mul(const std::string& dec, long long mul) {
    std::string out;
    long long carry = 0;
    for (auto it = dec.rbegin(); it != dec.rend(); ++it) {
        const long long v = (*it - '0') * mul + carry;
        out.push_back(static_cast<char>('0' + v % 10));
        carry = v / 10;
    }
    while (carry > 0) {
        out.push_back(static_cast<char>('0' + carry % 10));
        carry /= 10;
    }
    std::reverse(out.begin(), out.end());
    return out;
}
}  // namespace

std::string search_space_cardinality(int num_layers, int bw_levels, int ba_levels,
                                     int alpha_levels) {
    if (num_layers < 0) throw InputError("search_space_cardinality: negative layer count");
    const long long per_layer =
        static_cast<long long>(bw_levels) * ba_levels * alpha_levels;
    std::string out = "1";
    for (int l = 0; l < num_layers; ++l) out = decimal_mul(out, per_layer);
    return out;
}

double search_space_log10(int num_layers, int bw_levels, int ba_levels, int alpha_levels) {
    return num_layers *
           std::log10(static_cast<double>(bw_levels) * ba_levels * alpha_levels);
}

}  // namespace ehmex
