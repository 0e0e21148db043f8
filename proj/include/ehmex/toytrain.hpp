#pragma once

#include <cstdint>
#include <vector>

#include "ehmex/netcore.hpp"

namespace ehmex {

// Deterministic synthetic dataset plus closed-form (ridge regression)
// training of exit heads on frozen random backbone features. This gives
// compression a real, measurable accuracy signal without backprop.

struct ToyDataset {
    int num_classes = 0;
    int img_h = 16, img_w = 16;
    double noise_sigma = 0.0;
    uint64_t seed = 0;
    std::vector<Activation> train_x;
    std::vector<int> train_y;
    std::vector<Activation> test_x;
    std::vector<int> test_y;
};

// Fixed per-class 16x16 template pattern, independent of the dataset seed.
std::vector<double> class_template(int cls, int h, int w);

// Balanced dataset: image = template(class) + N(0, sigma^2) noise. Train and
// test splits use disjoint noise draws. Same seed, same bytes.
ToyDataset gen_dataset(int num_classes, int n_per_class, double noise_sigma, uint64_t seed);

// FNV-1a over the little-endian bit patterns of all images and labels.
uint64_t dataset_checksum(const ToyDataset& data);

// The bundled toy multi-exit backbone: three conv blocks on 16x16x1 input
// with exits after each block. Backbone weights are seeded He-init Gaussians
// and are never trained; heads start zeroed and untrained.
NetworkDescriptor make_toy_network(int num_classes, uint64_t seed);

// Per-image features at every exit attachment point (gathered through each
// head's feature_index), one backbone pass per image.
std::vector<std::vector<double>> extract_exit_features(const NetworkDescriptor& net,
                                                       const Activation& image, bool quantized);

// Records per-layer post-activation maxima over `images` into net.act_max
// (used to calibrate activation quantization scales).
void calibrate_activations(NetworkDescriptor& net, const std::vector<Activation>& images);

struct FitReport {
    int exit_index = 0;
    int rows = 0, cols = 0;
    double lambda = 0.0;
    double residual = 0.0;  // Frobenius residual of the normal equations
    double scale = 0.0;     // problem scale the residual is checked against
};

// Solves (X'X + lambda I) B = X'Y per exit on training-set features with
// one-hot targets and installs B as the head weights. Features are extracted
// with `quantized_features` so heads fit what the deployed forward pass
// produces. Throws NumericalError if the solve fails even with jitter.
std::vector<FitReport> fit_exit_heads(NetworkDescriptor& net, const ToyDataset& data,
                                      double lambda, bool quantized_features);

// Fraction of argmax-correct test samples at `exit_index`.
double eval_accuracy(const NetworkDescriptor& net, const ToyDataset& data, int exit_index,
                     bool quantized);

// Dense SPD solve with multiple right-hand sides via Cholesky; adds 1e-8
// jitter (relative to the mean diagonal) once on failure.
// A is n x n row-major, B is n x m row-major; returns X with AX = B.
std::vector<double> spd_solve(std::vector<double> a, int n, const std::vector<double>& b, int m);

}  // namespace ehmex
