#include "ehmex/compress.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "ehmex/errors.hpp"

namespace ehmex {

namespace {

// Round-half-to-even, relying on the default FE_TONEAREST mode.
double round_even(double x) { return std::nearbyint(x); }

// Channel preserve count: c' = max(1, round(alpha * c)), halves away from zero.
int preserve_count(double alpha, int c) {
    return std::max(1, static_cast<int>(std::llround(alpha * c)));
}

}  // namespace

double snap_alpha(double alpha) {
    double steps = round_even(alpha * 20.0);
    steps = std::min(std::max(steps, 1.0), 20.0);
    return steps * 0.05;
}

void CompressionPolicy::validate_for(const NetworkDescriptor& net) const {
    const auto wl = net.weighted_layers();
    if (backbone.size() != wl.size())
        throw ConfigError("policy covers " + std::to_string(backbone.size()) +
                          " backbone layers, network has " + std::to_string(wl.size()));
    if (heads.size() != net.exits.size())
        throw ConfigError("policy covers " + std::to_string(heads.size()) + " heads, network has " +
                          std::to_string(net.exits.size()));
    auto check = [](const LayerPolicy& p, const std::string& where) {
        if (p.alpha < 0.05 - 1e-9 || p.alpha > 1.0 + 1e-9 ||
            std::abs(p.alpha - snap_alpha(p.alpha)) > 1e-9)
            throw ConfigError(where + ": alpha " + std::to_string(p.alpha) +
                              " not on the 0.05 grid in [0.05, 1.0]");
        if (p.weight_bits < 1 || p.weight_bits > 32)
            throw ConfigError(where + ": weight bitwidth out of range");
        if (p.act_bits < 1 || p.act_bits > 32)
            throw ConfigError(where + ": activation bitwidth out of range");
    };
    for (size_t i = 0; i < backbone.size(); ++i) check(backbone[i], "layer " + std::to_string(i));
    for (size_t e = 0; e < heads.size(); ++e) check(heads[e], "head " + std::to_string(e));
}

CompressionPolicy CompressionPolicy::identity(const NetworkDescriptor& net) {
    CompressionPolicy p;
    p.backbone.assign(net.weighted_layers().size(), LayerPolicy{});
    p.heads.assign(net.exits.size(), LayerPolicy{});
    return p;
}

void CompressionPolicy::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "ehmex-policy v1\n";
    char buf[16];
    auto alpha2 = [&buf](double a) {
        std::snprintf(buf, sizeof(buf), "%.2f", a);
        return std::string(buf);
    };
    os << "backbone " << backbone.size() << "\n";
    for (size_t i = 0; i < backbone.size(); ++i)
        os << "layer " << i << " alpha " << alpha2(backbone[i].alpha) << " bw "
           << backbone[i].weight_bits << " ba " << backbone[i].act_bits << "\n";
    os << "heads " << heads.size() << "\n";
    for (size_t e = 0; e < heads.size(); ++e)
        os << "head " << e << " alpha " << alpha2(heads[e].alpha) << " bw " << heads[e].weight_bits
           << " ba " << heads[e].act_bits << "\n";
}

CompressionPolicy CompressionPolicy::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    std::string tok;
    auto next = [&]() {
        if (!(in >> tok)) throw InputError(path + ": unexpected end of policy file");
        return tok;
    };
    auto expect = [&](const std::string& kw) {
        if (next() != kw) throw InputError(path + ": expected '" + kw + "', got '" + tok + "'");
    };
    expect("ehmex-policy");
    expect("v1");
    CompressionPolicy p;
    expect("backbone");
    const int nb = std::stoi(next());
    for (int i = 0; i < nb; ++i) {
        expect("layer");
        next();
        LayerPolicy lp;
        expect("alpha");
        lp.alpha = std::stod(next());
        expect("bw");
        lp.weight_bits = std::stoi(next());
        expect("ba");
        lp.act_bits = std::stoi(next());
        p.backbone.push_back(lp);
    }
    expect("heads");
    const int nh = std::stoi(next());
    for (int e = 0; e < nh; ++e) {
        expect("head");
        next();
        LayerPolicy lp;
        expect("alpha");
        lp.alpha = std::stod(next());
        expect("bw");
        lp.weight_bits = std::stoi(next());
        expect("ba");
        lp.act_bits = std::stoi(next());
        p.heads.push_back(lp);
    }
    return p;
}

std::vector<double> channel_importance(const std::vector<double>& weights, int n, int c, int k) {
    if (weights.empty() || n < 1 || c < 1 || k < 1 ||
        weights.size() != static_cast<size_t>(n) * c * k * k)
        throw InputError("channel_importance: bad tensor shape");
    std::vector<double> s(c, 0.0);
    const int kk = k * k;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j) {
            const double* w = &weights[(static_cast<size_t>(i) * c + j) * kk];
            double acc = 0.0;
            for (int q = 0; q < kk; ++q) acc += std::abs(w[q]);
            s[j] += acc;
        }
    return s;
}

std::vector<int> channels_to_drop(const std::vector<double>& importance, int c_keep) {
    const int c = static_cast<int>(importance.size());
    if (c_keep >= c) return {};
    std::vector<int> order(c);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return importance[a] < importance[b]; });
    std::vector<int> drop(order.begin(), order.begin() + (c - c_keep));
    std::sort(drop.begin(), drop.end());
    return drop;
}

namespace {

// Removes input channels `drop` (channel-granular) from weighted layer `li`
// and the matching output filters of its producer, then fixes up exit heads
// fed by the producer. `drop` indexes channels at the producer interface.
void drop_interface_channels(NetworkDescriptor& net, int li, const std::vector<int>& drop) {
    if (drop.empty()) return;
    LayerSpec& l = net.layers[li];
    const int p = net.producing_layer(li);
    const int c_ch = (p >= 0) ? net.layers[p].c_out : net.in_c;
    std::vector<char> dropped(c_ch, 0);
    for (int d : drop) dropped[d] = 1;
    const int c_keep = c_ch - static_cast<int>(drop.size());

    // Consumer side: conv consumes channels directly; fc consumes the
    // flattened activation, hw positions per channel.
    {
        const int hw = (l.kind == LayerKind::fc) ? l.c_in / c_ch : 1;
        const int kk = l.kernel * l.kernel;
        const int block = (l.kind == LayerKind::fc) ? hw : kk;
        std::vector<double> nw;
        nw.reserve(static_cast<size_t>(l.c_out) * c_keep * block);
        const int c_in_old = (l.kind == LayerKind::fc) ? c_ch : l.c_in;
        for (int o = 0; o < l.c_out; ++o)
            for (int ch = 0; ch < c_in_old; ++ch) {
                if (dropped[ch]) continue;
                const double* src = &net.weights[li][(static_cast<size_t>(o) * c_in_old + ch) * block];
                nw.insert(nw.end(), src, src + block);
            }
        net.weights[li] = std::move(nw);
        l.c_in = (l.kind == LayerKind::fc) ? c_keep * hw : c_keep;
    }

    if (p < 0) return;

    // Producer side: remove output filters of the dropped channels.
    {
        LayerSpec& pl = net.layers[p];
        const int row = static_cast<int>(net.weights[p].size()) / pl.c_out;
        std::vector<double> nw;
        nw.reserve(static_cast<size_t>(c_keep) * row);
        for (int o = 0; o < pl.c_out; ++o) {
            if (dropped[o]) continue;
            const double* src = &net.weights[p][static_cast<size_t>(o) * row];
            nw.insert(nw.end(), src, src + row);
        }
        net.weights[p] = std::move(nw);
        pl.c_out = c_keep;
    }

    // Heads attached between the producer and this layer read the producer's
    // activation; drop their columns for removed channels and remap indices.
    for (auto& ex : net.exits) {
        if (ex.after_layer < p || ex.after_layer >= li) continue;
        const LayerSpec& at = net.layers[ex.after_layer];
        const int hw = at.out_h * at.out_w;
        // old flat index -> new flat index, or -1 when the channel is gone
        std::vector<int> remap(static_cast<size_t>(c_ch) * hw, -1);
        int nc = 0;
        for (int ch = 0; ch < c_ch; ++ch) {
            if (dropped[ch]) continue;
            for (int q = 0; q < hw; ++q) remap[static_cast<size_t>(ch) * hw + q] = nc * hw + q;
            ++nc;
        }
        std::vector<int> kept_slots;
        for (int slot = 0; slot < ex.num_features(); ++slot)
            if (remap[ex.feature_index[slot]] >= 0) kept_slots.push_back(slot);
        const int f_old = ex.num_features();
        std::vector<int> nfi;
        std::vector<double> nwgt;
        nfi.reserve(kept_slots.size());
        nwgt.reserve(kept_slots.size() * net.num_classes);
        for (int cls = 0; cls < net.num_classes; ++cls)
            for (int slot : kept_slots)
                nwgt.push_back(ex.weight[static_cast<size_t>(cls) * f_old + slot]);
        for (int slot : kept_slots) nfi.push_back(remap[ex.feature_index[slot]]);
        ex.feature_index = std::move(nfi);
        ex.weight = std::move(nwgt);
    }
    net.propagate_shapes();
}

}  // namespace

NetworkDescriptor prune_layer(NetworkDescriptor net, int layer_index, double alpha) {
    if (layer_index < 0 || layer_index >= static_cast<int>(net.layers.size()) ||
        !net.layers[layer_index].weighted())
        throw ConfigError("prune_layer: layer " + std::to_string(layer_index) + " is not weighted");
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("prune_layer: alpha outside (0, 1]");
    const LayerSpec& l = net.layers[layer_index];
    const int p = net.producing_layer(layer_index);
    const int c_ch_orig = (p >= 0) ? net.layers[p].c_out_orig : net.in_c;
    const int c_ch_now = (p >= 0) ? net.layers[p].c_out : net.in_c;
    const int target = preserve_count(alpha, c_ch_orig);
    if (target >= c_ch_now) return net;  // already at or below the target
    if (p < 0)
        throw ConfigError("prune_layer: cannot prune raw input channels of layer " +
                          std::to_string(layer_index));
    // Importance over interface channels; fc importances aggregate the hw
    // positions belonging to each producer channel.
    std::vector<double> s;
    if (l.kind == LayerKind::conv) {
        s = channel_importance(net.weights[layer_index], l.c_out, l.c_in, l.kernel);
    } else {
        const std::vector<double> flat =
            channel_importance(net.weights[layer_index], l.c_out, l.c_in, 1);
        const int hw = l.c_in / c_ch_now;
        s.assign(c_ch_now, 0.0);
        for (int ch = 0; ch < c_ch_now; ++ch)
            for (int q = 0; q < hw; ++q) s[ch] += flat[static_cast<size_t>(ch) * hw + q];
    }
    drop_interface_channels(net, layer_index, channels_to_drop(s, target));
    return net;
}

NetworkDescriptor prune_head(NetworkDescriptor net, int exit_index, double alpha) {
    if (exit_index < 0 || exit_index >= net.num_exits())
        throw ConfigError("prune_head: exit index out of range");
    if (alpha <= 0.0 || alpha > 1.0) throw ConfigError("prune_head: alpha outside (0, 1]");
    ExitHead& ex = net.exits[exit_index];
    const int f_now = ex.num_features();
    const int target = preserve_count(alpha, ex.num_features_orig);
    if (target >= f_now) return net;
    // Importance of each input feature (fc with k = 1), kept features are the
    // top `target`; only the head changes, the producer activation is shared.
    const std::vector<double> s = channel_importance(ex.weight, net.num_classes, f_now, 1);
    const std::vector<int> drop = channels_to_drop(s, target);
    std::vector<char> gone(f_now, 0);
    for (int d : drop) gone[d] = 1;
    std::vector<int> nfi;
    std::vector<double> nwgt;
    nfi.reserve(target);
    nwgt.reserve(static_cast<size_t>(target) * net.num_classes);
    for (int cls = 0; cls < net.num_classes; ++cls)
        for (int j = 0; j < f_now; ++j)
            if (!gone[j]) nwgt.push_back(ex.weight[static_cast<size_t>(cls) * f_now + j]);
    for (int j = 0; j < f_now; ++j)
        if (!gone[j]) nfi.push_back(ex.feature_index[j]);
    ex.feature_index = std::move(nfi);
    ex.weight = std::move(nwgt);
    return net;
}

double weight_quant_error(const std::vector<double>& w, int bits, double s) {
    const double lo = -std::pow(2.0, bits - 1);
    const double hi = std::pow(2.0, bits - 1) - 1.0;
    double err2 = 0.0;
    for (double x : w) {
        double q = std::nearbyint(x / s);
        q = std::min(std::max(q, lo), hi);
        const double d = q * s - x;
        err2 += d * d;
    }
    return std::sqrt(err2);
}

QuantResult quantize_weights(const std::vector<double>& w, int bits, double tol) {
    if (bits < 1 || bits > 32) throw ConfigError("quantize_weights: bitwidth outside [1, 32]");
    QuantResult r;
    double mx = 0.0;
    for (double x : w) mx = std::max(mx, std::abs(x));
    if (mx == 0.0) {
        r.values.assign(w.size(), 0.0);
        r.scale = 1.0;
        r.l2_error = 0.0;
        return r;
    }
    if (bits >= 32) {
        r.values = w;
        r.scale = 1.0;
        r.l2_error = 0.0;
        return r;
    }

    // Log-spaced scan over (0, 2*max|w|] maps the error landscape; local
    // minima sit roughly 2^-k apart in log-scale, so the scan density grows
    // with the bitwidth. The best few local minima are each refined by
    // golden-section; equal-error ties prefer the smallest scale (the finest
    // representation).
    const double s_hi = 2.0 * mx;
    const double s_lo = s_hi * 1e-4;
    const int grid = std::min(32768, 2048 << std::max(0, bits - 5));
    const double ratio = std::pow(s_hi / s_lo, 1.0 / (grid - 1));
    std::vector<double> err(static_cast<size_t>(grid));
    {
        double s = s_lo;
        for (int i = 0; i < grid; ++i, s *= ratio) err[static_cast<size_t>(i)] = weight_quant_error(w, bits, s);
    }
    double norm_w = 0.0;
    for (double x : w) norm_w += x * x;
    norm_w = std::sqrt(norm_w);
    double grid_best = err[0];
    for (double e : err) grid_best = std::min(grid_best, e);
    const double shortlist_band = grid_best + 1e-3 * norm_w + 1e-12;
    std::vector<int> minima;
    for (int i = 0; i < grid; ++i) {
        if (err[static_cast<size_t>(i)] > shortlist_band) continue;
        const bool left_ok = (i == 0) || err[static_cast<size_t>(i)] <= err[static_cast<size_t>(i - 1)];
        const bool right_ok = (i == grid - 1) || err[static_cast<size_t>(i)] <= err[static_cast<size_t>(i + 1)];
        if (left_ok && right_ok) minima.push_back(i);
    }
    std::sort(minima.begin(), minima.end(),
              [&](int a, int b) { return err[static_cast<size_t>(a)] < err[static_cast<size_t>(b)]; });
    if (minima.size() > 256) minima.resize(256);

    auto refine = [&](int cell, double* s_out, double* e_out) {
        double a = s_lo * std::pow(ratio, std::max(0, cell - 1));
        double b = s_lo * std::pow(ratio, std::min(grid - 1, cell + 1));
        const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
        double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
        double f1 = weight_quant_error(w, bits, x1), f2 = weight_quant_error(w, bits, x2);
        while ((b - a) > tol * a) {
            if (f1 < f2) {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - gr * (b - a);
                f1 = weight_quant_error(w, bits, x1);
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + gr * (b - a);
                f2 = weight_quant_error(w, bits, x2);
            }
        }
        *s_out = (f1 < f2) ? x1 : x2;
        *e_out = std::min(f1, f2);
        const double e_cell = err[static_cast<size_t>(cell)];
        if (e_cell < *e_out) {
            *s_out = s_lo * std::pow(ratio, cell);
            *e_out = e_cell;
        }
    };

    double best_s = 0.0, best_e = 1e300;
    std::vector<std::pair<double, double>> refined;
    for (int cell : minima) {
        double s_r, e_r;
        refine(cell, &s_r, &e_r);
        refined.emplace_back(s_r, e_r);
        if (e_r < best_e) {
            best_e = e_r;
            best_s = s_r;
        }
    }
    const double tie_band = best_e + 1e-5 * norm_w + 1e-12;
    for (const auto& [s_r, e_r] : refined)
        if (e_r <= tie_band && s_r < best_s) best_s = s_r;
    best_e = weight_quant_error(w, bits, best_s);

    r.scale = best_s;
    r.l2_error = best_e;
    const double lo = -std::pow(2.0, bits - 1);
    const double hi = std::pow(2.0, bits - 1) - 1.0;
    r.values.resize(w.size());
    for (size_t i = 0; i < w.size(); ++i) {
        double q = std::nearbyint(w[i] / best_s);
        q = std::min(std::max(q, lo), hi);
        r.values[i] = q * best_s;
    }
    return r;
}

std::vector<double> quantize_activations(const std::vector<double>& a, int bits, double s) {
    if (bits < 1) throw ConfigError("quantize_activations: bitwidth must be >= 1");
    if (s <= 0.0) throw ConfigError("quantize_activations: scale must be positive");
    const double top = std::pow(2.0, bits) - 1.0;
    std::vector<double> out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] < 0.0) throw InputError("quantize_activations: negative activation");
        double q = std::nearbyint(a[i] / s);
        q = std::min(std::max(q, 0.0), top);
        out[i] = q * s;
    }
    return out;
}

ApplyResult apply_policy(const NetworkDescriptor& net, const CompressionPolicy& policy,
                         double energy_per_mflop_mj, bool prune_heads_enabled) {
    policy.validate_for(net);
    ApplyResult res;
    res.net = net;
    const auto wl = net.weighted_layers();

    // Prune ascending so each interface is handled once. The first weighted
    // layer reads the raw input and keeps alpha = 1 semantics via the
    // target >= current no-op in prune_layer.
    for (size_t i = 0; i < wl.size(); ++i) {
        const double alpha = (i == 0) ? 1.0 : policy.backbone[i].alpha;
        res.net = prune_layer(std::move(res.net), wl[i], alpha);
    }
    if (prune_heads_enabled)
        for (int e = 0; e < res.net.num_exits(); ++e)
            res.net = prune_head(std::move(res.net), e, policy.heads[e].alpha);

    // Quantize weights after shapes are final; skip layers already at the
    // target bitwidth so reapplying a policy is the identity.
    for (size_t i = 0; i < wl.size(); ++i) {
        const int li = wl[i];
        const LayerPolicy& lp = policy.backbone[i];
        QuantInfo& q = res.net.quant[li];
        if (q.weight_bits != lp.weight_bits) {
            QuantResult qr = quantize_weights(res.net.weights[li], lp.weight_bits);
            res.net.weights[li] = std::move(qr.values);
            q.weight_bits = lp.weight_bits;
            q.weight_scale = qr.scale;
        }
        q.act_bits = lp.act_bits;
        if (lp.act_bits < 32 && res.net.act_max[li] > 0.0)
            q.act_scale = res.net.act_max[li] / (std::pow(2.0, lp.act_bits) - 1.0);
        else
            q.act_scale = 1.0;
    }
    for (int e = 0; e < res.net.num_exits(); ++e) {
        ExitHead& ex = res.net.exits[e];
        const LayerPolicy& lp = policy.heads[e];
        if (ex.quant.weight_bits != lp.weight_bits) {
            QuantResult qr = quantize_weights(ex.weight, lp.weight_bits);
            ex.weight = std::move(qr.values);
            ex.quant.weight_bits = lp.weight_bits;
            ex.quant.weight_scale = qr.scale;
        }
        // Head activation bits are carried for completeness; the head output
        // feeds softmax directly, so no activation grid applies to it.
        ex.quant.act_bits = lp.act_bits;
    }

    res.profiles = exit_profiles(res.net, energy_per_mflop_mj);
    res.s_model_bytes = res.profiles.front().weight_bytes;
    res.f_model = 0.0;
    for (const auto& p : res.profiles) res.f_model += p.flops;
    return res;
}

PolicyCost policy_cost(const NetworkDescriptor& net, const CompressionPolicy& policy,
                       bool prune_heads_enabled) {
    policy.validate_for(net);
    const auto wl = net.weighted_layers();
    const int nw = static_cast<int>(wl.size());

    // Kept channels at each producer interface. Interface i is the input of
    // weighted layer i; interface nw is the final layer's (unpruned) output.
    std::vector<int> ch_in(nw + 1, 0);
    for (int i = 0; i < nw; ++i) {
        const int p = net.producing_layer(wl[i]);
        const int c_orig = (p >= 0) ? net.layers[p].c_out_orig : net.in_c;
        ch_in[i] = (i == 0) ? c_orig : preserve_count(policy.backbone[i].alpha, c_orig);
    }
    ch_in[nw] = net.layers[wl[nw - 1]].c_out_orig;

    double flops_cum = 0.0, bits = 0.0, f_sum = 0.0;
    size_t next_w = 0;
    std::vector<double> exit_flops(net.exits.size(), 0.0);
    std::vector<double> head_feats(net.exits.size(), 0.0);
    for (size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        if (l.weighted()) {
            const int i = static_cast<int>(next_w++);
            const int c_in_ch = ch_in[i];
            const int c_out_ch = ch_in[i + 1];
            double params, flops;
            if (l.kind == LayerKind::conv) {
                params = static_cast<double>(c_out_ch) * c_in_ch * l.kernel * l.kernel;
                flops = static_cast<double>(l.out_h) * l.out_w * params;
            } else {
                const int p = net.producing_layer(static_cast<int>(li));
                const int hw = (p >= 0) ? l.c_in_orig / net.layers[p].c_out_orig : 1;
                params = static_cast<double>(c_out_ch) * c_in_ch * hw;
                flops = params;
            }
            flops_cum += flops;
            bits += params * policy.backbone[i].weight_bits;
        }
        for (size_t e = 0; e < net.exits.size(); ++e) {
            if (net.exits[e].after_layer != static_cast<int>(li)) continue;
            // interface index of the activation the head reads
            int iface = nw;
            for (int i = 0; i < nw; ++i)
                if (wl[i] > static_cast<int>(li)) {
                    iface = i;
                    break;
                }
            const LayerSpec& at = net.layers[li];
            const int hw = at.out_h * at.out_w;
            double avail = static_cast<double>(ch_in[iface]) * hw;
            double f = avail;
            if (prune_heads_enabled)
                f = std::min(avail, static_cast<double>(preserve_count(
                                        policy.heads[e].alpha, net.exits[e].num_features_orig)));
            head_feats[e] = f;
            exit_flops[e] = flops_cum + f * net.num_classes;
        }
    }
    for (size_t e = 0; e < net.exits.size(); ++e) {
        f_sum += exit_flops[e];
        bits += head_feats[e] * net.num_classes * policy.heads[e].weight_bits;
    }
    PolicyCost out;
    out.f_model = f_sum;
    out.s_model_bytes = bits / 8.0;
    out.exit_flops = std::move(exit_flops);
    out.head_features = std::move(head_feats);
    return out;
}

}  // namespace ehmex
