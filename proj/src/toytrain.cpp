#include "ehmex/toytrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "ehmex/errors.hpp"
#include "ehmex/rng.hpp"

namespace ehmex {

std::vector<double> class_template(int cls, int h, int w) {
    // Smooth oriented sinusoid patterns; distinct frequency/phase per class.
    std::vector<double> t(static_cast<size_t>(h) * w);
    const double fx = 1.0 + 0.5 * (cls % 4);
    const double fy = 1.0 + 0.5 * ((cls / 4) % 4);
    const double phase = 0.7 * cls;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / (w - 1);
            const double v = static_cast<double>(y) / (h - 1);
            t[static_cast<size_t>(y) * w + x] =
                0.5 + 0.5 * std::sin(2.0 * M_PI * (fx * u + fy * v) + phase);
        }
    return t;
}

ToyDataset gen_dataset(int num_classes, int n_per_class, double noise_sigma, uint64_t seed) {
    if (num_classes < 2) throw ConfigError("gen_dataset: need at least 2 classes");
    if (n_per_class < 1) throw ConfigError("gen_dataset: n_per_class must be >= 1");
    ToyDataset d;
    d.num_classes = num_classes;
    d.noise_sigma = noise_sigma;
    d.seed = seed;
    Rng train_rng = Rng(seed).stream("toytrain/train");
    Rng test_rng = Rng(seed).stream("toytrain/test");
    auto fill = [&](Rng& rng, std::vector<Activation>& xs, std::vector<int>& ys) {
        for (int cls = 0; cls < num_classes; ++cls) {
            const std::vector<double> tmpl = class_template(cls, d.img_h, d.img_w);
            for (int i = 0; i < n_per_class; ++i) {
                Activation img;
                img.c = 1;
                img.h = d.img_h;
                img.w = d.img_w;
                img.v.resize(tmpl.size());
                for (size_t p = 0; p < tmpl.size(); ++p)
                    img.v[p] = tmpl[p] + noise_sigma * rng.gaussian();
                xs.push_back(std::move(img));
                ys.push_back(cls);
            }
        }
    };
    fill(train_rng, d.train_x, d.train_y);
    fill(test_rng, d.test_x, d.test_y);
    return d;
}

uint64_t dataset_checksum(const ToyDataset& data) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix_bytes = [&h](const void* p, size_t n) {
        const unsigned char* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    auto mix_split = [&](const std::vector<Activation>& xs, const std::vector<int>& ys) {
        for (const auto& img : xs) mix_bytes(img.v.data(), img.v.size() * sizeof(double));
        for (int y : ys) mix_bytes(&y, sizeof(y));
    };
    mix_split(data.train_x, data.train_y);
    mix_split(data.test_x, data.test_y);
    return h;
}

NetworkDescriptor make_toy_network(int num_classes, uint64_t seed) {
    NetworkDescriptor net;
    net.num_classes = num_classes;
    net.in_c = 1;
    net.in_h = 16;
    net.in_w = 16;

    auto conv = [](int ci, int co, int k) {
        LayerSpec l;
        l.kind = LayerKind::conv;
        l.c_in = ci;
        l.c_out = co;
        l.kernel = k;
        l.stride = 1;
        return l;
    };
    auto relu = [] {
        LayerSpec l;
        l.kind = LayerKind::relu;
        return l;
    };
    auto pool = [](int k, int s) {
        LayerSpec l;
        l.kind = LayerKind::maxpool;
        l.kernel = k;
        l.stride = s;
        return l;
    };

    // Channel counts grow with depth so deeper exits read more random
    // features (and cost more), giving the exit accuracy/energy tradeoff.
    net.layers = {
        conv(1, 4, 5),    // 0: 16 -> 12
        relu(),           // 1
        pool(2, 2),       // 2: 12 -> 6     exit 0 reads 4x6x6 = 144
        conv(4, 12, 3),   // 3: 6 -> 4
        relu(),           // 4:              exit 1 reads 12x4x4 = 192
        conv(12, 48, 2),  // 5: 4 -> 3
        relu(),           // 6:              exit 2 reads 48x3x3 = 432
    };
    net.weights.resize(net.layers.size());
    net.quant.resize(net.layers.size());
    net.act_max.assign(net.layers.size(), 0.0);

    Rng rng = Rng(seed).stream("toytrain/backbone");
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const LayerSpec& l = net.layers[i];
        if (!l.weighted()) continue;
        const double sigma = std::sqrt(2.0 / (l.c_in * l.kernel * l.kernel));
        net.weights[i].resize(static_cast<size_t>(l.param_count()));
        for (auto& w : net.weights[i]) w = sigma * rng.gaussian();
    }

    net.propagate_shapes();
    auto attach = [&](int after) {
        ExitHead ex;
        ex.after_layer = after;
        const int f = net.activation_size_after(after);
        ex.feature_index.resize(f);
        for (int j = 0; j < f; ++j) ex.feature_index[j] = j;
        ex.weight.assign(static_cast<size_t>(num_classes) * f, 0.0);
        net.exits.push_back(std::move(ex));
    };
    attach(2);
    attach(4);
    attach(6);
    net.propagate_shapes();
    net.validate();
    return net;
}

std::vector<std::vector<double>> extract_exit_features(const NetworkDescriptor& net,
                                                       const Activation& image, bool quantized) {
    std::vector<std::vector<double>> feats(net.exits.size());
    sweep_backbone(net, image, quantized, [&](int li, const Activation& act) {
        for (size_t e = 0; e < net.exits.size(); ++e) {
            const ExitHead& ex = net.exits[e];
            if (ex.after_layer != li) continue;
            std::vector<double> f(ex.num_features());
            for (int j = 0; j < ex.num_features(); ++j) f[j] = act.v[ex.feature_index[j]];
            feats[e] = std::move(f);
        }
    });
    return feats;
}

void calibrate_activations(NetworkDescriptor& net, const std::vector<Activation>& images) {
    std::vector<double> mx(net.layers.size(), 0.0);
    for (const auto& img : images)
        sweep_backbone(net, img, /*quantized=*/false, [&](int li, const Activation& act) {
            if (net.layers[li].kind != LayerKind::relu) return;
            const int lw = net.producing_layer(li);
            if (lw < 0) return;
            for (double x : act.v) mx[lw] = std::max(mx[lw], x);
        });
    for (size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].weighted() && mx[i] > 0.0) net.act_max[i] = mx[i];
}

std::vector<double> spd_solve(std::vector<double> a, int n, const std::vector<double>& b, int m) {
    auto cholesky = [](std::vector<double>& mat, int dim) {
        for (int i = 0; i < dim; ++i) {
            for (int j = 0; j <= i; ++j) {
                double sum = mat[static_cast<size_t>(i) * dim + j];
                for (int k = 0; k < j; ++k)
                    sum -= mat[static_cast<size_t>(i) * dim + k] * mat[static_cast<size_t>(j) * dim + k];
                if (i == j) {
                    if (sum <= 0.0) return false;
                    mat[static_cast<size_t>(i) * dim + j] = std::sqrt(sum);
                } else {
                    mat[static_cast<size_t>(i) * dim + j] = sum / mat[static_cast<size_t>(j) * dim + j];
                }
            }
        }
        return true;
    };

    std::vector<double> l = a;
    if (!cholesky(l, n)) {
        double diag = 0.0;
        for (int i = 0; i < n; ++i) diag += a[static_cast<size_t>(i) * n + i];
        const double jitter = 1e-8 * std::max(diag / n, 1.0);
        l = a;
        for (int i = 0; i < n; ++i) l[static_cast<size_t>(i) * n + i] += jitter;
        if (!cholesky(l, n))
            throw NumericalError("spd_solve: Cholesky failed even with jitter (singular system)");
    }

    // Solve L (L' X) = B column-block-wise on the row-major RHS.
    std::vector<double> x = b;
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < i; ++k) {
            const double lik = l[static_cast<size_t>(i) * n + k];
            for (int c = 0; c < m; ++c)
                x[static_cast<size_t>(i) * m + c] -= lik * x[static_cast<size_t>(k) * m + c];
        }
        const double lii = l[static_cast<size_t>(i) * n + i];
        for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] /= lii;
    }
    for (int i = n - 1; i >= 0; --i) {
        for (int k = i + 1; k < n; ++k) {
            const double lki = l[static_cast<size_t>(k) * n + i];
            for (int c = 0; c < m; ++c)
                x[static_cast<size_t>(i) * m + c] -= lki * x[static_cast<size_t>(k) * m + c];
        }
        const double lii = l[static_cast<size_t>(i) * n + i];
        for (int c = 0; c < m; ++c) x[static_cast<size_t>(i) * m + c] /= lii;
    }
    return x;
}

std::vector<FitReport> fit_exit_heads(NetworkDescriptor& net, const ToyDataset& data,
                                      double lambda, bool quantized_features) {
    if (lambda <= 0.0) throw ConfigError("fit_exit_heads: lambda must be > 0");
    if (data.train_x.empty()) throw ConfigError("fit_exit_heads: empty training set");
    const int n_samples = static_cast<int>(data.train_x.size());
    const int classes = net.num_classes;

    // One backbone sweep per image, features for every exit.
    std::vector<std::vector<std::vector<double>>> feats(net.exits.size());
    for (auto& f : feats) f.reserve(n_samples);
    for (const auto& img : data.train_x) {
        auto per_exit = extract_exit_features(net, img, quantized_features);
        for (size_t e = 0; e < per_exit.size(); ++e) feats[e].push_back(std::move(per_exit[e]));
    }

    std::vector<FitReport> reports;
    for (size_t e = 0; e < net.exits.size(); ++e) {
        ExitHead& ex = net.exits[e];
        const int d = ex.num_features();
        std::vector<double> xtx(static_cast<size_t>(d) * d, 0.0);
        std::vector<double> xty(static_cast<size_t>(d) * classes, 0.0);
        for (int s = 0; s < n_samples; ++s) {
            const auto& f = feats[e][s];
            const int y = data.train_y[s];
            for (int i = 0; i < d; ++i) {
                const double fi = f[i];
                if (fi == 0.0) continue;
                double* row = &xtx[static_cast<size_t>(i) * d];
                for (int j = 0; j < d; ++j) row[j] += fi * f[j];
                xty[static_cast<size_t>(i) * classes + y] += fi;
            }
        }
        for (int i = 0; i < d; ++i) xtx[static_cast<size_t>(i) * d + i] += lambda;

        const std::vector<double> beta = spd_solve(xtx, d, xty, classes);

        // Normal-equation residual check: || (X'X + lambda I) B - X'Y ||_F
        double res2 = 0.0, a_norm2 = 0.0, b_norm2 = 0.0, beta_norm2 = 0.0;
        for (int i = 0; i < d; ++i)
            for (int c = 0; c < classes; ++c) {
                double acc = 0.0;
                for (int j = 0; j < d; ++j)
                    acc += xtx[static_cast<size_t>(i) * d + j] * beta[static_cast<size_t>(j) * classes + c];
                const double diff = acc - xty[static_cast<size_t>(i) * classes + c];
                res2 += diff * diff;
            }
        for (double v : xtx) a_norm2 += v * v;
        for (double v : xty) b_norm2 += v * v;
        for (double v : beta) beta_norm2 += v * v;
        FitReport rep;
        rep.exit_index = static_cast<int>(e);
        rep.rows = n_samples;
        rep.cols = d;
        rep.lambda = lambda;
        rep.residual = std::sqrt(res2);
        rep.scale = std::sqrt(a_norm2) * std::sqrt(beta_norm2) + std::sqrt(b_norm2);
        if (rep.residual > 1e-6 * std::max(rep.scale, 1.0))
            throw NumericalError("fit_exit_heads: normal-equation residual " +
                                 std::to_string(rep.residual) + " exceeds tolerance");
        reports.push_back(rep);

        // Install beta as the head weight matrix [classes x d].
        for (int c = 0; c < classes; ++c)
            for (int j = 0; j < d; ++j)
                ex.weight[static_cast<size_t>(c) * d + j] = beta[static_cast<size_t>(j) * classes + c];
        ex.trained = true;
    }
    return reports;
}

double eval_accuracy(const NetworkDescriptor& net, const ToyDataset& data, int exit_index,
                     bool quantized) {
    if (exit_index < 0 || exit_index >= net.num_exits())
        throw InputError("eval_accuracy: exit index out of range");
    if (!net.exits[exit_index].trained)
        throw StateError("eval_accuracy: exit head " + std::to_string(exit_index) +
                         " is untrained");
    if (data.test_x.empty()) throw ConfigError("eval_accuracy: empty test set");
    int correct = 0;
    for (size_t s = 0; s < data.test_x.size(); ++s) {
        const auto probs = forward(net, data.test_x[s], exit_index, quantized).probs;
        const int pred = static_cast<int>(
            std::max_element(probs.begin(), probs.end()) - probs.begin());
        if (pred == data.test_y[s]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(data.test_x.size());
}

}  // namespace ehmex
