#pragma once

#include <string>
#include <vector>

#include "ehmex/netcore.hpp"

namespace ehmex {

// Layer-wise channel pruning and linear quantization under a
// CompressionPolicy. All transformations are pure: they copy the
// descriptor, never mutate the input.

struct LayerPolicy {
    double alpha = 1.0;   // preserve rate for this layer's input channels
    int weight_bits = 32;
    int act_bits = 32;
};

// One entry per weighted backbone layer (in layer order) plus one per exit
// head. alpha must lie on the 0.05 grid in [0.05, 1.0]; bitwidths are
// integers within the configured range.
struct CompressionPolicy {
    std::vector<LayerPolicy> backbone;
    std::vector<LayerPolicy> heads;

    void validate_for(const NetworkDescriptor& net) const;
    void save(const std::string& path) const;
    static CompressionPolicy load(const std::string& path);
    static CompressionPolicy identity(const NetworkDescriptor& net);
};

// Snaps a raw preserve rate onto the 0.05 grid in [0.05, 1.0].
double snap_alpha(double alpha);

// Importance of each input channel: s_j = sum_i sum_kk |W[i, j, :, :]|.
std::vector<double> channel_importance(const std::vector<double>& weights, int n, int c, int k);

// Channels to drop for preserve count c_keep: the (c - c_keep) smallest
// importances, ties broken by dropping the lower channel index first.
std::vector<int> channels_to_drop(const std::vector<double>& importance, int c_keep);

// Prunes the input channels of weighted backbone layer `layer_index` to
// preserve rate alpha (c' = max(1, round(alpha * c))), removing the
// producing layer's corresponding output filters and fixing up any exit
// heads fed by the producer. Pruning the raw-input layer is rejected.
NetworkDescriptor prune_layer(NetworkDescriptor net, int layer_index, double alpha);

// Prunes an exit head's input features to preserve rate alpha. Only the
// head's weight columns and feature_index change; the shared producer
// activation is left intact.
NetworkDescriptor prune_head(NetworkDescriptor net, int exit_index, double alpha);

struct QuantResult {
    std::vector<double> values;
    double scale = 1.0;
    double l2_error = 0.0;
};

// Symmetric linear quantization of a weight tensor to k bits:
// w' = clamp(round(w/s), -2^(k-1), 2^(k-1)-1) * s, with s minimizing
// ||w' - w||_2 via a log-spaced scan over (0, 2*max|w|] refined by
// golden-section search. The default tolerance is well inside the 1e-4
// relative contract. k >= 32 is a full-precision passthrough. An all-zero
// tensor yields s = 1, w' = 0.
QuantResult quantize_weights(const std::vector<double>& w, int bits, double tol = 1e-6);

// L2 quantization error of tensor w at bitwidth k and scale s.
double weight_quant_error(const std::vector<double>& w, int bits, double s);

// a' = clamp(round(a/s), 0, 2^k - 1) * s. Entries must be >= 0 (post-ReLU).
std::vector<double> quantize_activations(const std::vector<double>& a, int bits, double s);

struct ApplyResult {
    NetworkDescriptor net;
    std::vector<ExitProfile> profiles;
    double f_model = 0.0;        // sum over exits of cumulative FLOPs
    double s_model_bytes = 0.0;  // whole-model weight bytes
};

// Applies a full policy: prune every backbone layer (raw-input layer keeps
// alpha = 1), optionally prune heads, quantize all weights, and set
// activation bitwidths and scales from the descriptor's calibration maxima
// (scale = act_max / (2^k - 1)). Profiles are recomputed on the result.
ApplyResult apply_policy(const NetworkDescriptor& net, const CompressionPolicy& policy,
                         double energy_per_mflop_mj, bool prune_heads_enabled = false);

struct PolicyCost {
    double f_model = 0.0;
    double s_model_bytes = 0.0;
    std::vector<double> exit_flops;      // cumulative per exit
    std::vector<double> head_features;   // kept features per head
};

// F_model, S_model and per-exit FLOPs a policy would produce, by shape
// arithmetic alone (no weight tensors touched). Call with the uncompressed
// descriptor; matches apply_policy exactly.
PolicyCost policy_cost(const NetworkDescriptor& net, const CompressionPolicy& policy,
                       bool prune_heads_enabled);

}  // namespace ehmex
