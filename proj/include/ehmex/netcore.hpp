#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ehmex {

// Minimal multi-exit network representation with exact MAC and weight-size
// accounting. The backbone is strictly sequential; classifiers ("exits")
// branch off after fixed layer indices. All types are immutable value
// objects once constructed; forward passes are pure functions.

enum class LayerKind { conv, fc, relu, maxpool };

const char* layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& s);

struct LayerSpec {
    LayerKind kind = LayerKind::conv;
    int c_in = 0;
    int c_out = 0;
    int kernel = 1;  // 1 for fc
    int stride = 1;
    // Uncompressed channel counts. Preserve rates are absolute (relative to
    // these), which makes policy application idempotent. Filled from
    // c_in/c_out by propagate_shapes when zero.
    int c_in_orig = 0;
    int c_out_orig = 0;
    // Input/output spatial dims, filled by NetworkDescriptor::propagate_shapes.
    int in_h = 0, in_w = 0;
    int out_h = 0, out_w = 0;

    bool weighted() const { return kind == LayerKind::conv || kind == LayerKind::fc; }
    long long param_count() const;
};

// FLOPs convention: 1 MAC = 1 FLOP. Activation and pool layers cost zero.
long long flops_of_layer(const LayerSpec& layer);

// Per-layer quantization state. 32 bits means full-precision passthrough.
struct QuantInfo {
    int weight_bits = 32;
    double weight_scale = 1.0;
    int act_bits = 32;
    double act_scale = 1.0;
};

// Exit head: a single fc layer reading a subset of the flattened activation
// produced by backbone layer `after_layer`. `feature_index` maps head input
// slots to positions in that flattened activation (identity when unpruned).
struct ExitHead {
    int after_layer = 0;
    std::vector<int> feature_index;
    std::vector<double> weight;  // [num_classes x feature_index.size()], row-major
    QuantInfo quant;
    bool trained = false;
    int num_features_orig = 0;  // uncompressed feature count (0 = current)

    int num_features() const { return static_cast<int>(feature_index.size()); }
    long long param_count(int num_classes) const {
        return static_cast<long long>(num_classes) * num_features();
    }
};

struct Activation {
    int c = 0, h = 0, w = 0;
    std::vector<double> v;  // channel-major [c][h][w]

    int size() const { return c * h * w; }
};

struct NetworkDescriptor {
    int num_classes = 0;
    int in_c = 0, in_h = 0, in_w = 0;
    std::vector<LayerSpec> layers;
    std::vector<std::vector<double>> weights;  // per layer; empty for relu/pool
    std::vector<QuantInfo> quant;              // per layer
    std::vector<double> act_max;               // per layer post-activation calibration maxima
    std::vector<ExitHead> exits;

    int num_exits() const { return static_cast<int>(exits.size()); }

    // Recomputes spatial dims along the chain; throws ConfigError on
    // inconsistent channel chaining or non-positive spatial sizes.
    void propagate_shapes();
    void validate() const;

    // Flattened activation size after layer `layer_index`.
    int activation_size_after(int layer_index) const;

    // Index of the previous weighted layer before `layer_index`, or -1.
    int producing_layer(int layer_index) const;

    std::vector<int> weighted_layers() const;
};

struct ExitProfile {
    double flops = 0.0;          // cumulative MACs from input through the exit head
    double weight_bytes = 0.0;   // whole-model storage at current bitwidths
    double accuracy = 0.0;       // in [0, 1]; filled by evaluation or profile table
    double energy_cost_mj = 0.0; // flops * energy-per-MFLOP / 1e6
};

// Cumulative per-exit cost profiles of `net` at its current shapes and
// bitwidths. weight_bytes is the whole-model size (the full model is stored
// on the device regardless of which exit fires). Accuracy is left 0.
std::vector<ExitProfile> exit_profiles(const NetworkDescriptor& net, double energy_per_mflop_mj);

// Profiles from a measured table instead of a descriptor (paper-profile mode).
std::vector<ExitProfile> profiles_from_table(const std::vector<double>& flops,
                                             const std::vector<double>& accuracy,
                                             double energy_per_mflop_mj);

// Sum over exits of their cumulative FLOPs (the model-level FLOPs figure
// the pruning constraint is checked against).
double model_flops(const NetworkDescriptor& net);
// Whole-model weight storage in bytes at current bitwidths.
double model_weight_bytes(const NetworkDescriptor& net);

std::vector<double> softmax(const std::vector<double>& logits);

// Shannon entropy in nats with 0*ln(0) == 0. Throws InputError on a
// negative entry.
double entropy(const std::vector<double>& probs);

// Cached state for incremental inference: the activation at the attachment
// layer of `upto_exit`, enabling a bit-identical resume to a deeper exit.
struct ForwardCache {
    int upto_exit = -1;
    int layer_index = -1;
    Activation act;
};

struct ForwardResult {
    std::vector<double> probs;
    ForwardCache cache;
};

ForwardResult forward(const NetworkDescriptor& net, const Activation& input, int upto_exit,
                      bool quantized);
ForwardResult resume(const NetworkDescriptor& net, const ForwardCache& cache, int upto_exit,
                     bool quantized);

// Runs the whole backbone, invoking sink(layer_index, activation) after each
// layer. Shares the arithmetic of forward/resume, so feature extraction and
// inference see bit-identical activations.
void sweep_backbone(const NetworkDescriptor& net, const Activation& input, bool quantized,
                    const std::function<void(int, const Activation&)>& sink);

// Descriptor file round-trip. Plain-text format, schema "ehmex-net v1";
// weights as decimal arrays printed with %.17g so reload is bit-exact.
void save_descriptor(const NetworkDescriptor& net, const std::string& path);
NetworkDescriptor load_descriptor(const std::string& path);

}  // namespace ehmex
