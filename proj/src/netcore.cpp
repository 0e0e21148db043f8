#include "ehmex/netcore.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ehmex/errors.hpp"

namespace ehmex {

const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::conv: return "conv";
        case LayerKind::fc: return "fc";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
    }
    return "?";
}

LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv") return LayerKind::conv;
    if (s == "fc") return LayerKind::fc;
    if (s == "relu") return LayerKind::relu;
    if (s == "maxpool") return LayerKind::maxpool;
    throw InputError("unknown layer kind: " + s);
}

long long LayerSpec::param_count() const {
    if (!weighted()) return 0;
    if (kind == LayerKind::fc) return static_cast<long long>(c_out) * c_in;
    return static_cast<long long>(c_out) * c_in * kernel * kernel;
}

long long flops_of_layer(const LayerSpec& layer) {
    switch (layer.kind) {
        case LayerKind::conv:
            return static_cast<long long>(layer.out_h) * layer.out_w * layer.c_out * layer.c_in *
                   layer.kernel * layer.kernel;
        case LayerKind::fc:
            return static_cast<long long>(layer.c_in) * layer.c_out;
        case LayerKind::relu:
        case LayerKind::maxpool:
            return 0;
    }
    return 0;
}

void NetworkDescriptor::propagate_shapes() {
    int c = in_c, h = in_h, w = in_w;
    for (auto& layer : layers) {
        if (layer.weighted()) {
            if (layer.c_in_orig == 0) layer.c_in_orig = layer.c_in;
            if (layer.c_out_orig == 0) layer.c_out_orig = layer.c_out;
        }
        layer.in_h = h;
        layer.in_w = w;
        switch (layer.kind) {
            case LayerKind::conv: {
                if (layer.c_in != c)
                    throw ConfigError("conv layer input channels do not chain: expected " +
                                      std::to_string(c) + ", got " + std::to_string(layer.c_in));
                h = (h - layer.kernel) / layer.stride + 1;
                w = (w - layer.kernel) / layer.stride + 1;
                if (h <= 0 || w <= 0) throw ConfigError("conv output spatial size <= 0");
                c = layer.c_out;
                break;
            }
            case LayerKind::fc: {
                // fc consumes the flattened activation.
                if (layer.c_in != c * h * w)
                    throw ConfigError("fc layer input size does not chain: expected " +
                                      std::to_string(c * h * w) + ", got " +
                                      std::to_string(layer.c_in));
                c = layer.c_out;
                h = 1;
                w = 1;
                break;
            }
            case LayerKind::relu: {
                layer.c_in = layer.c_out = c;
                break;
            }
            case LayerKind::maxpool: {
                layer.c_in = layer.c_out = c;
                h = (h - layer.kernel) / layer.stride + 1;
                w = (w - layer.kernel) / layer.stride + 1;
                if (h <= 0 || w <= 0) throw ConfigError("pool output spatial size <= 0");
                break;
            }
        }
        layer.out_h = h;
        layer.out_w = w;
    }
    for (auto& ex : exits)
        if (ex.num_features_orig == 0) ex.num_features_orig = ex.num_features();
}

void NetworkDescriptor::validate() const {
    if (num_classes < 2) throw ConfigError("descriptor needs at least 2 classes");
    if (layers.empty()) throw ConfigError("descriptor has no layers");
    if (weights.size() != layers.size() || quant.size() != layers.size() ||
        act_max.size() != layers.size())
        throw ConfigError("per-layer arrays out of sync with layer list");
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        if (l.weighted()) {
            if (l.c_in < 1 || l.c_out < 1 || l.kernel < 1)
                throw ConfigError("layer " + std::to_string(i) + " has non-positive dims");
            if (static_cast<long long>(weights[i].size()) != l.param_count())
                throw ConfigError("layer " + std::to_string(i) + " weight blob size " +
                                  std::to_string(weights[i].size()) + " != spec shape " +
                                  std::to_string(l.param_count()));
        } else if (!weights[i].empty()) {
            throw ConfigError("non-weighted layer " + std::to_string(i) + " carries weights");
        }
    }
    if (exits.empty()) throw ConfigError("descriptor has no exits");
    int prev = -1;
    for (size_t e = 0; e < exits.size(); ++e) {
        const auto& ex = exits[e];
        if (ex.after_layer <= prev)
            throw ConfigError("exit attachment indices must be strictly increasing");
        prev = ex.after_layer;
        if (ex.after_layer < 0 || ex.after_layer >= static_cast<int>(layers.size()))
            throw ConfigError("exit " + std::to_string(e) + " attaches past the backbone");
        const int feat = activation_size_after(ex.after_layer);
        for (int idx : ex.feature_index)
            if (idx < 0 || idx >= feat)
                throw ConfigError("exit " + std::to_string(e) + " feature index out of range");
        if (static_cast<long long>(ex.weight.size()) !=
            static_cast<long long>(num_classes) * ex.num_features())
            throw ConfigError("exit " + std::to_string(e) + " head weight size mismatch");
    }
    if (exits.back().after_layer != static_cast<int>(layers.size()) - 1)
        throw ConfigError("last exit must sit after the final backbone layer");
}

int NetworkDescriptor::activation_size_after(int layer_index) const {
    const auto& l = layers.at(layer_index);
    return l.c_out * l.out_h * l.out_w;
}

int NetworkDescriptor::producing_layer(int layer_index) const {
    for (int i = layer_index - 1; i >= 0; --i)
        if (layers[i].weighted()) return i;
    return -1;
}

std::vector<int> NetworkDescriptor::weighted_layers() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(layers.size()); ++i)
        if (layers[i].weighted()) out.push_back(i);
    return out;
}

std::vector<ExitProfile> exit_profiles(const NetworkDescriptor& net, double energy_per_mflop_mj) {
    const double bytes = model_weight_bytes(net);
    std::vector<ExitProfile> out;
    out.reserve(net.exits.size());
    for (const auto& ex : net.exits) {
        long long macs = 0;
        for (int i = 0; i <= ex.after_layer; ++i) macs += flops_of_layer(net.layers[i]);
        macs += static_cast<long long>(net.num_classes) * ex.num_features();
        ExitProfile p;
        p.flops = static_cast<double>(macs);
        p.weight_bytes = bytes;
        p.energy_cost_mj = p.flops * energy_per_mflop_mj / 1e6;
        out.push_back(p);
    }
    for (size_t i = 1; i < out.size(); ++i)
        if (out[i].flops <= out[i - 1].flops)
            throw ConfigError("exit FLOPs must be strictly increasing with exit index");
    return out;
}

std::vector<ExitProfile> profiles_from_table(const std::vector<double>& flops,
                                             const std::vector<double>& accuracy,
                                             double energy_per_mflop_mj) {
    if (flops.size() != accuracy.size() || flops.empty())
        throw ConfigError("profile table needs matching non-empty flops/accuracy lists");
    std::vector<ExitProfile> out;
    for (size_t i = 0; i < flops.size(); ++i) {
        if (i > 0 && flops[i] <= flops[i - 1])
            throw ConfigError("profile table FLOPs must be strictly increasing");
        if (accuracy[i] < 0.0 || accuracy[i] > 1.0)
            throw ConfigError("profile table accuracy outside [0,1]");
        ExitProfile p;
        p.flops = flops[i];
        p.accuracy = accuracy[i];
        p.energy_cost_mj = flops[i] * energy_per_mflop_mj / 1e6;
        out.push_back(p);
    }
    return out;
}

double model_flops(const NetworkDescriptor& net) {
    double total = 0.0;
    for (const auto& p : exit_profiles(net, 0.0)) total += p.flops;
    return total;
}

double model_weight_bytes(const NetworkDescriptor& net) {
    double bits = 0.0;
    for (size_t i = 0; i < net.layers.size(); ++i)
        if (net.layers[i].weighted())
            bits += static_cast<double>(net.layers[i].param_count()) * net.quant[i].weight_bits;
    for (const auto& ex : net.exits)
        bits += static_cast<double>(ex.param_count(net.num_classes)) * ex.quant.weight_bits;
    return bits / 8.0;
}

std::vector<double> softmax(const std::vector<double>& logits) {
    double mx = logits.empty() ? 0.0 : *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        sum += out[i];
    }
    for (auto& p : out) p /= sum;
    return out;
}

double entropy(const std::vector<double>& probs) {
    double h = 0.0;
    for (double p : probs) {
        if (p < 0.0) throw InputError("entropy: negative probability entry");
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

namespace {

double quantize_act_value(double x, int bits, double scale) {
    if (bits >= 32 || scale <= 0.0) return x;
    const double top = std::pow(2.0, bits) - 1.0;
    double q = std::nearbyint(x / scale);
    q = std::min(std::max(q, 0.0), top);
    return q * scale;
}

// Runs layers (from_layer, to_layer] on `act` in place. When `quantized`,
// post-ReLU activations snap to the producing layer's activation grid.
void run_layers(const NetworkDescriptor& net, Activation& act, int from_layer, int to_layer,
                bool quantized,
                const std::function<void(int, const Activation&)>* sink = nullptr) {
    int last_weighted = net.producing_layer(from_layer + 1);
    for (int li = from_layer + 1; li <= to_layer; ++li) {
        const LayerSpec& l = net.layers[li];
        switch (l.kind) {
            case LayerKind::conv: {
                Activation out;
                out.c = l.c_out;
                out.h = l.out_h;
                out.w = l.out_w;
                out.v.assign(static_cast<size_t>(out.c) * out.h * out.w, 0.0);
                const auto& W = net.weights[li];
                const int k = l.kernel, s = l.stride;
                for (int oc = 0; oc < l.c_out; ++oc)
                    for (int oy = 0; oy < out.h; ++oy)
                        for (int ox = 0; ox < out.w; ++ox) {
                            double acc = 0.0;
                            for (int ic = 0; ic < l.c_in; ++ic)
                                for (int ky = 0; ky < k; ++ky)
                                    for (int kx = 0; kx < k; ++kx) {
                                        const int iy = oy * s + ky, ix = ox * s + kx;
                                        acc += W[((static_cast<size_t>(oc) * l.c_in + ic) * k + ky) * k + kx] *
                                               act.v[(static_cast<size_t>(ic) * act.h + iy) * act.w + ix];
                                    }
                            out.v[(static_cast<size_t>(oc) * out.h + oy) * out.w + ox] = acc;
                        }
                act = std::move(out);
                last_weighted = li;
                break;
            }
            case LayerKind::fc: {
                Activation out;
                out.c = l.c_out;
                out.h = 1;
                out.w = 1;
                out.v.assign(l.c_out, 0.0);
                const auto& W = net.weights[li];
                for (int o = 0; o < l.c_out; ++o) {
                    double acc = 0.0;
                    for (int i = 0; i < l.c_in; ++i)
                        acc += W[static_cast<size_t>(o) * l.c_in + i] * act.v[i];
                    out.v[o] = acc;
                }
                act = std::move(out);
                last_weighted = li;
                break;
            }
            case LayerKind::relu: {
                for (auto& x : act.v) x = std::max(x, 0.0);
                if (quantized && last_weighted >= 0) {
                    const QuantInfo& q = net.quant[last_weighted];
                    if (q.act_bits < 32)
                        for (auto& x : act.v) x = quantize_act_value(x, q.act_bits, q.act_scale);
                }
                break;
            }
            case LayerKind::maxpool: {
                Activation out;
                out.c = act.c;
                out.h = l.out_h;
                out.w = l.out_w;
                out.v.assign(static_cast<size_t>(out.c) * out.h * out.w, 0.0);
                const int k = l.kernel, s = l.stride;
                for (int c = 0; c < act.c; ++c)
                    for (int oy = 0; oy < out.h; ++oy)
                        for (int ox = 0; ox < out.w; ++ox) {
                            double m = -1e300;
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx) {
                                    const int iy = oy * s + ky, ix = ox * s + kx;
                                    m = std::max(m, act.v[(static_cast<size_t>(c) * act.h + iy) * act.w + ix]);
                                }
                            out.v[(static_cast<size_t>(c) * out.h + oy) * out.w + ox] = m;
                        }
                act = std::move(out);
                break;
            }
        }
        if (sink) (*sink)(li, act);
    }
}

std::vector<double> run_head(const NetworkDescriptor& net, const ExitHead& head,
                             const Activation& act) {
    std::vector<double> logits(net.num_classes, 0.0);
    const int f = head.num_features();
    for (int c = 0; c < net.num_classes; ++c) {
        double acc = 0.0;
        for (int j = 0; j < f; ++j)
            acc += head.weight[static_cast<size_t>(c) * f + j] * act.v[head.feature_index[j]];
        logits[c] = acc;
    }
    return logits;
}

}  // namespace

ForwardResult forward(const NetworkDescriptor& net, const Activation& input, int upto_exit,
                      bool quantized) {
    if (upto_exit < 0 || upto_exit >= net.num_exits())
        throw InputError("forward: exit index out of range");
    if (input.c != net.in_c || input.h != net.in_h || input.w != net.in_w)
        throw InputError("forward: input shape mismatch");
    Activation act = input;
    const int attach = net.exits[upto_exit].after_layer;
    run_layers(net, act, -1, attach, quantized);
    ForwardResult r;
    r.cache.upto_exit = upto_exit;
    r.cache.layer_index = attach;
    r.cache.act = act;
    r.probs = softmax(run_head(net, net.exits[upto_exit], act));
    return r;
}

void sweep_backbone(const NetworkDescriptor& net, const Activation& input, bool quantized,
                    const std::function<void(int, const Activation&)>& sink) {
    if (input.c != net.in_c || input.h != net.in_h || input.w != net.in_w)
        throw InputError("sweep_backbone: input shape mismatch");
    Activation act = input;
    run_layers(net, act, -1, static_cast<int>(net.layers.size()) - 1, quantized, &sink);
}

ForwardResult resume(const NetworkDescriptor& net, const ForwardCache& cache, int upto_exit,
                     bool quantized) {
    if (cache.upto_exit < 0) throw StateError("resume: empty cache");
    if (upto_exit <= cache.upto_exit || upto_exit >= net.num_exits())
        throw InputError("resume: target exit must be deeper than the cached exit");
    Activation act = cache.act;
    const int attach = net.exits[upto_exit].after_layer;
    run_layers(net, act, cache.layer_index, attach, quantized);
    ForwardResult r;
    r.cache.upto_exit = upto_exit;
    r.cache.layer_index = attach;
    r.cache.act = act;
    r.probs = softmax(run_head(net, net.exits[upto_exit], act));
    return r;
}

// ---------------------------------------------------------------------------
// Descriptor file I/O

namespace {

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_doubles(std::ostream& os, const std::vector<double>& v) {
    for (size_t i = 0; i < v.size(); ++i) {
        os << fmt_double(v[i]);
        os << ((i + 1) % 8 == 0 || i + 1 == v.size() ? '\n' : ' ');
    }
}

struct TokenReader {
    std::ifstream in;
    std::string path;
    int line_no = 0;
    std::istringstream line;

    explicit TokenReader(const std::string& p) : in(p), path(p) {
        if (!in) throw InputError("cannot open " + p);
    }

    bool next_line() {
        std::string s;
        while (std::getline(in, s)) {
            ++line_no;
            if (s.empty() || s[0] == '#') continue;
            line = std::istringstream(s);
            return true;
        }
        return false;
    }

    [[noreturn]] void fail(const std::string& what) {
        throw InputError(path + ":" + std::to_string(line_no) + ": " + what);
    }

    std::string word() {
        std::string w;
        while (!(line >> w)) {
            if (!next_line()) fail("unexpected end of file");
        }
        return w;
    }

    long long integer() {
        const std::string w = word();
        try {
            return std::stoll(w);
        } catch (...) {
            fail("expected integer, got '" + w + "'");
        }
    }

    double real() {
        const std::string w = word();
        try {
            return std::stod(w);
        } catch (...) {
            fail("expected number, got '" + w + "'");
        }
    }

    void expect(const std::string& kw) {
        const std::string w = word();
        if (w != kw) fail("expected '" + kw + "', got '" + w + "'");
    }

    std::vector<double> reals(long long n) {
        std::vector<double> v;
        v.reserve(static_cast<size_t>(n));
        for (long long i = 0; i < n; ++i) v.push_back(real());
        return v;
    }
};

}  // namespace

void save_descriptor(const NetworkDescriptor& net, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw InputError("cannot write " + path);
    os << "ehmex-net v1\n";
    os << "num_classes " << net.num_classes << "\n";
    os << "input " << net.in_c << " " << net.in_h << " " << net.in_w << "\n";
    os << "layers " << net.layers.size() << "\n";
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        os << "layer " << i << " " << layer_kind_name(l.kind);
        if (l.weighted())
            os << " in " << l.c_in << " out " << l.c_out << " orig_in " << l.c_in_orig
               << " orig_out " << l.c_out_orig;
        if (l.kind != LayerKind::relu) os << " k " << l.kernel << " stride " << l.stride;
        os << "\n";
        if (l.weighted()) {
            const auto& q = net.quant[i];
            os << "quant " << i << " bw " << q.weight_bits << " sw " << fmt_double(q.weight_scale)
               << " ba " << q.act_bits << " sa " << fmt_double(q.act_scale) << "\n";
            os << "act_max " << i << " " << fmt_double(net.act_max[i]) << "\n";
            os << "weights " << i << " " << net.weights[i].size() << "\n";
            write_doubles(os, net.weights[i]);
        }
    }
    os << "exits " << net.exits.size() << "\n";
    for (size_t e = 0; e < net.exits.size(); ++e) {
        const auto& ex = net.exits[e];
        os << "exit " << e << " after " << ex.after_layer << " features " << ex.num_features()
           << " orig_features " << ex.num_features_orig << " trained " << (ex.trained ? 1 : 0)
           << "\n";
        os << "head_quant " << e << " bw " << ex.quant.weight_bits << " sw "
           << fmt_double(ex.quant.weight_scale) << " ba " << ex.quant.act_bits << " sa "
           << fmt_double(ex.quant.act_scale) << "\n";
        os << "feature_index " << e << "\n";
        for (size_t i = 0; i < ex.feature_index.size(); ++i)
            os << ex.feature_index[i]
               << ((i + 1) % 16 == 0 || i + 1 == ex.feature_index.size() ? '\n' : ' ');
        os << "head_weights " << e << " " << ex.weight.size() << "\n";
        write_doubles(os, ex.weight);
    }
}

NetworkDescriptor load_descriptor(const std::string& path) {
    TokenReader r(path);
    if (!r.next_line()) r.fail("empty file");
    r.expect("ehmex-net");
    r.expect("v1");
    NetworkDescriptor net;
    r.expect("num_classes");
    net.num_classes = static_cast<int>(r.integer());
    r.expect("input");
    net.in_c = static_cast<int>(r.integer());
    net.in_h = static_cast<int>(r.integer());
    net.in_w = static_cast<int>(r.integer());
    r.expect("layers");
    const long long n_layers = r.integer();
    net.layers.resize(static_cast<size_t>(n_layers));
    net.weights.resize(net.layers.size());
    net.quant.resize(net.layers.size());
    net.act_max.assign(net.layers.size(), 0.0);
    for (long long i = 0; i < n_layers; ++i) {
        r.expect("layer");
        const long long idx = r.integer();
        if (idx != i) r.fail("layer indices must be sequential");
        LayerSpec l;
        l.kind = layer_kind_from_name(r.word());
        if (l.weighted()) {
            r.expect("in");
            l.c_in = static_cast<int>(r.integer());
            r.expect("out");
            l.c_out = static_cast<int>(r.integer());
            r.expect("orig_in");
            l.c_in_orig = static_cast<int>(r.integer());
            r.expect("orig_out");
            l.c_out_orig = static_cast<int>(r.integer());
        }
        if (l.kind != LayerKind::relu) {
            r.expect("k");
            l.kernel = static_cast<int>(r.integer());
            r.expect("stride");
            l.stride = static_cast<int>(r.integer());
        }
        net.layers[static_cast<size_t>(i)] = l;
        if (l.weighted()) {
            r.expect("quant");
            r.integer();
            r.expect("bw");
            net.quant[static_cast<size_t>(i)].weight_bits = static_cast<int>(r.integer());
            r.expect("sw");
            net.quant[static_cast<size_t>(i)].weight_scale = r.real();
            r.expect("ba");
            net.quant[static_cast<size_t>(i)].act_bits = static_cast<int>(r.integer());
            r.expect("sa");
            net.quant[static_cast<size_t>(i)].act_scale = r.real();
            r.expect("act_max");
            r.integer();
            net.act_max[static_cast<size_t>(i)] = r.real();
            r.expect("weights");
            r.integer();
            const long long count = r.integer();
            net.weights[static_cast<size_t>(i)] = r.reals(count);
        }
    }
    r.expect("exits");
    const long long n_exits = r.integer();
    for (long long e = 0; e < n_exits; ++e) {
        r.expect("exit");
        if (r.integer() != e) r.fail("exit indices must be sequential");
        ExitHead ex;
        r.expect("after");
        ex.after_layer = static_cast<int>(r.integer());
        r.expect("features");
        const long long nf = r.integer();
        r.expect("orig_features");
        ex.num_features_orig = static_cast<int>(r.integer());
        r.expect("trained");
        ex.trained = r.integer() != 0;
        r.expect("head_quant");
        r.integer();
        r.expect("bw");
        ex.quant.weight_bits = static_cast<int>(r.integer());
        r.expect("sw");
        ex.quant.weight_scale = r.real();
        r.expect("ba");
        ex.quant.act_bits = static_cast<int>(r.integer());
        r.expect("sa");
        ex.quant.act_scale = r.real();
        r.expect("feature_index");
        r.integer();
        ex.feature_index.reserve(static_cast<size_t>(nf));
        for (long long i = 0; i < nf; ++i)
            ex.feature_index.push_back(static_cast<int>(r.integer()));
        r.expect("head_weights");
        r.integer();
        const long long count = r.integer();
        ex.weight = r.reals(count);
        net.exits.push_back(std::move(ex));
    }
    net.propagate_shapes();
    net.validate();
    return net;
}

}  // namespace ehmex
