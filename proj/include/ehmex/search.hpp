#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ehmex/compress.hpp"
#include "ehmex/ehsim.hpp"
#include "ehmex/netcore.hpp"
#include "ehmex/rng.hpp"
#include "ehmex/toytrain.hpp"

namespace ehmex {

// Two-agent deterministic-policy-gradient search over layer-wise preserve
// rates and bitwidths: one agent prunes, the other quantizes, both stepping
// the network layer-by-layer and sharing the observation.

// --------------------------------------------------------------------------
// Small MLP with analytic gradients (tanh hidden units).

struct MlpGrads {
    std::vector<std::vector<double>> w, b;
};

class Mlp {
public:
    enum class Output { linear, sigmoid };

    // output_init_scale shrinks the final layer's initial weights; squashed
    // actors start near 0.5 and keep usable gradients early in training.
    static Mlp make(std::vector<int> sizes, Output output, Rng& rng,
                    double output_init_scale = 1.0);

    struct Cache {
        std::vector<std::vector<double>> post;  // post[0] = input, post[k] = layer k output
    };

    std::vector<double> forward(const std::vector<double>& x, Cache* cache = nullptr) const;

    // Backpropagates dL/dy; accumulates parameter gradients into `grads`
    // (must be zero-initialized via make_grads) and returns dL/dx.
    std::vector<double> backward(const Cache& cache, std::vector<double> dy,
                                 MlpGrads* grads) const;

    MlpGrads make_grads() const;

    size_t param_count() const;
    double get_param(size_t i) const;
    void set_param(size_t i, double v);
    double grad_at(const MlpGrads& g, size_t i) const;

    const std::vector<int>& sizes() const { return sizes_; }
    int in_dim() const { return sizes_.front(); }
    int out_dim() const { return sizes_.back(); }

private:
    std::vector<int> sizes_;
    Output output_ = Output::linear;
    std::vector<std::vector<double>> w_, b_;
};

struct Adam {
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long t = 0;
    std::vector<double> m, v;

    void step(Mlp& net, const MlpGrads& grads);
};

// --------------------------------------------------------------------------
// Replay and agents

struct Transition {
    std::vector<double> obs;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_obs;
    bool done = false;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(size_t capacity = 10000) : capacity_(capacity) {}
    void push(Transition t);
    size_t size() const { return data_.size(); }
    const Transition& sample(Rng& rng) const;

private:
    size_t capacity_;
    size_t next_ = 0;
    std::vector<Transition> data_;
};

struct DdpgAgent {
    Mlp actor;
    Mlp critic;  // input = obs ++ action, scalar output
    Adam actor_opt, critic_opt;
    ReplayBuffer buffer;
    int obs_dim = 0, act_dim = 0;
};

struct AgentConfig {
    int hidden = 64;
    double actor_lr = 1e-3;
    double critic_lr = 1e-3;
    size_t buffer_capacity = 10000;
    int batch_size = 64;
    double sigma0 = 0.5;
    double sigma_floor = 0.15;
    int updates_per_episode = 20;
};

struct AgentPair {
    DdpgAgent prune;  // action: preserve rate, 1-dim
    DdpgAgent quant;  // action: (weight bits, activation bits), 2-dim
    AgentConfig cfg;
    Rng rng;

    static AgentPair make(int obs_dim, const AgentConfig& cfg, uint64_t seed);
};

// Mean squared TD loss over a batch of (critic input, target) pairs; fills
// parameter gradients when `grads` is non-null.
double critic_loss(const Mlp& critic, const std::vector<std::vector<double>>& inputs,
                   const std::vector<double>& targets, MlpGrads* grads);

// Mean of Q(o, mu(o)) over the batch; fills the actor's parameter gradients
// of this objective when `grads` is non-null (gradient ascent direction).
double actor_objective(const Mlp& actor, const Mlp& critic,
                       const std::vector<std::vector<double>>& obs, MlpGrads* grads);

struct DdpgUpdateStats {
    double critic_loss = 0.0;
    double actor_objective = 0.0;
};

// One critic + one actor gradient step from a sampled minibatch.
// Terminal transitions bootstrap with Q' = r; otherwise Q' = r + Q(o', mu(o')).
DdpgUpdateStats ddpg_update(DdpgAgent& agent, int batch_size, Rng& rng);

// --------------------------------------------------------------------------
// Action mapping and observation

// round(b_min + a * (b_max - b_min)) with round-half-to-even, clamped.
int map_action_to_bitwidth(double a, int b_min, int b_max);

// Maps a [0,1] action onto the alpha grid {0.05, ..., 1.0}.
double map_action_to_alpha(double a);

// The walk processes weighted backbone layers in order, then exit heads.
struct SearchStep {
    bool is_head = false;
    int layer_index = 0;  // into net.layers, or exit index when is_head
};

std::vector<SearchStep> search_steps(const NetworkDescriptor& net);

// 12-dim observation of Eq.-(9) shape, every component normalized to [0,1].
// Running totals are derived from the actions taken so far in the episode.
struct ObservationState {
    std::vector<double> alphas;   // per step already decided
    std::vector<int> weight_bits;
    std::vector<int> act_bits;
    int steps_done = 0;
};

std::vector<double> build_observation(const NetworkDescriptor& net, int step_index,
                                      const ObservationState& state, int bw_max, int ba_max,
                                      bool prune_heads);

// --------------------------------------------------------------------------
// Search environment

enum class AccuracyEvalMode { descriptor, surrogate };

struct SurrogateModel {
    // Per-exit linear model on policy features, fitted to real evaluations
    // on a seeded grid of policies.
    std::vector<std::vector<double>> coeff;
    int grid_evals = 0;

    std::vector<double> predict(const NetworkDescriptor& net, const CompressionPolicy& policy,
                                bool prune_heads) const;
};

struct PolicyEval {
    CompressionPolicy policy;
    std::vector<double> exit_accuracy;
    std::vector<double> exit_fractions;
    double r_acc = 0.0;
    double f_model = 0.0;
    double s_model_bytes = 0.0;
    bool flops_ok = false;
    bool size_ok = false;
    bool valid = true;  // false when compression failed (punished episode)
    std::string error;

    bool feasible() const { return valid && flops_ok && size_ok; }
};

struct SearchEnvConfig {
    double flops_target = 0.0;       // absolute
    double size_target_bytes = 0.0;  // absolute
    int bw_min = 1, bw_max = 8;
    int ba_min = 1, ba_max = 8;
    bool prune_heads = false;
    AccuracyEvalMode accuracy_mode = AccuracyEvalMode::surrogate;
    double lambda1 = 1.0, lambda2 = 1.0;
    double ridge_lambda = 1.0;
    bool refit_heads = true;  // compress-then-refit; false = no-refit ablation
    int surrogate_grid = 64;  // real evaluations behind the surrogate fit
};

class SearchEnv {
public:
    SearchEnv(NetworkDescriptor net, ToyDataset data, Scenario scenario, SearchEnvConfig cfg,
              uint64_t seed);

    PolicyEval evaluate(const CompressionPolicy& policy) const;

    // Assembles a policy from raw per-step values, applying the forced
    // rules: the raw-input layer keeps alpha = 1, heads keep alpha = 1
    // unless head pruning is enabled.
    CompressionPolicy make_policy(const std::vector<double>& alphas,
                                  const std::vector<int>& weight_bits,
                                  const std::vector<int>& act_bits) const;

    const NetworkDescriptor& net() const { return net_; }
    const Scenario& scenario() const { return scenario_; }
    const SearchEnvConfig& config() const { return cfg_; }
    const std::vector<SearchStep>& steps() const { return steps_; }
    double uncompressed_flops() const { return f0_; }
    double uncompressed_bytes() const { return s0_; }
    const SurrogateModel& surrogate() const { return surrogate_; }

private:
    PolicyEval evaluate_descriptor(const CompressionPolicy& policy) const;
    void fit_surrogate();

    NetworkDescriptor net_;
    ToyDataset data_;
    Scenario scenario_;
    SearchEnvConfig cfg_;
    std::vector<SearchStep> steps_;
    double f0_ = 0.0, s0_ = 0.0;
    SurrogateModel surrogate_;
    uint64_t seed_ = 0;
};

struct EpisodeResult {
    CompressionPolicy policy;
    PolicyEval eval;
    double r_prune = 0.0;
    double r_quant = 0.0;
};

// Plays one episode: both agents act at every step, the assembled policy is
// evaluated once, and the terminal rewards are broadcast to every transition.
EpisodeResult run_episode(const SearchEnv& env, AgentPair& agents, double sigma,
                          bool push_transitions);

struct EpisodeLog {
    int episode = 0;
    bool greedy = false;
    double r_acc = 0.0;
    double r_prune = 0.0;
    double r_quant = 0.0;
    double f_model = 0.0;
    double s_model_bytes = 0.0;
    bool feasible = false;
};

struct SearchResult {
    std::optional<CompressionPolicy> best_policy;
    PolicyEval best_eval;
    std::optional<CompressionPolicy> best_infeasible_policy;
    PolicyEval best_infeasible_eval;
    std::vector<EpisodeLog> history;

    bool found_feasible() const { return best_policy.has_value(); }
};

// Runs num_episodes exploration episodes with decaying action noise,
// interleaving greedy (noise-free) rollouts every `greedy_every` episodes,
// and returns the best feasible policy by R_acc.
SearchResult search(const SearchEnv& env, AgentPair& agents, int num_episodes,
                    int greedy_every = 10);

// Uniform random policies on the alpha grid and bitwidth ranges, same
// evaluation pipeline and forced rules; the search's baseline oracle.
SearchResult random_search_baseline(const SearchEnv& env, int num_samples, uint64_t seed);

// --------------------------------------------------------------------------
// Search-space accounting

// Exact |options|^L as a decimal string: options = bw_levels * ba_levels *
// alpha_levels per layer.
std::string search_space_cardinality(int num_layers, int bw_levels = 8, int ba_levels = 8,
                                     int alpha_levels = 20);
double search_space_log10(int num_layers, int bw_levels = 8, int ba_levels = 8,
                          int alpha_levels = 20);

}  // namespace ehmex
