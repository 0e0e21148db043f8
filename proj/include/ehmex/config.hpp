#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ehmex {

// Experiment configuration: strict structured-text (INI-style) format with
// [section] headers and key = value lines. Unknown sections or keys are
// rejected. Every run embeds the resolved config (render()) and its hash in
// its outputs.

struct ExperimentConfig {
    // [run]
    uint64_t seed = 1;
    std::string mode = "expected";  // expected | bernoulli
    std::string out_dir = "out";
    std::string selector = "greedy";  // greedy | final_exit_only (cmd_simulate)

    // [scenario]
    std::string trace_path;  // empty = synthetic trace below
    std::string trace_kind = "solar_like";
    double trace_duration_s = 86400.0;
    double trace_step_s = 10.0;
    double trace_peak_mw = 0.012;
    double trace_low_mw = 0.0;
    double trace_period_s = 600.0;
    double trace_day_fraction = 0.5;
    double trace_cloud_sigma = 0.25;
    std::string events_path;  // empty = generated from event_count
    int event_count = 500;
    double store_capacity_mj = 10.0;
    double store_initial_mj = 0.0;
    double store_efficiency = 1.0;
    double energy_per_mflop_mj = 1.5;
    double compute_rate_flops = 2.0e5;
    double p_window_s = 30.0;

    // [network]
    std::string descriptor_path;  // empty = profile table below
    std::vector<double> profile_flops;
    std::vector<double> profile_accuracy;
    int num_classes = 10;

    // [toytrain]
    int data_classes = 10;
    int n_per_class = 40;
    double noise_sigma = 0.5;
    double ridge_lambda = 1.0;
    uint64_t data_seed = 1;

    // [search]
    double flops_target_ratio = 0.70;
    double size_target_ratio = 0.03;
    double flops_target = 0.0;       // absolute override when > 0
    double size_target_bytes = 0.0;  // absolute override when > 0
    int episodes = 300;
    int greedy_every = 10;
    int baseline_samples = 0;
    std::string accuracy_mode = "surrogate";  // surrogate | descriptor
    bool prune_heads = false;
    bool refit_heads = true;
    int surrogate_grid = 64;
    int bw_min = 1, bw_max = 8;
    int ba_min = 1, ba_max = 8;
    double lambda1 = 1.0, lambda2 = 1.0;
    int hidden = 64;
    double actor_lr = 1e-3;
    double critic_lr = 1e-3;
    int buffer_capacity = 10000;
    int batch_size = 64;
    double sigma0 = 0.5;
    double sigma_floor = 0.15;
    int updates_per_episode = 20;

    // [runtime]
    std::string runtime_policy = "q_learning";
    int energy_bins = 20;
    int power_bins = 10;
    int entropy_bins = 8;
    double eps0 = 0.2;
    double eps_decay = 0.995;
    double eps_floor = 0.01;
    double alpha_q = 0.3;
    double q_gamma = 0.9;
    double beta_energy_penalty = 0.0;
    double entropy_threshold = -1.0;  // <0 = ln(num_classes)/2
    int epochs = 1;

    static ExperimentConfig load(const std::string& path);
    static ExperimentConfig parse(const std::string& text, const std::string& origin);

    // Deterministic full rendering of the resolved config (all fields).
    std::string render() const;
    // FNV-1a 64 hash of render(), as 16 hex digits.
    std::string hash() const;
};

}  // namespace ehmex
