// Regenerates the bundled data files and the golden manifest:
//   data/nets/toy16.net            bundled toy multi-exit descriptor
//   data/traces/solar_day.csv      one-day solar-like trace, seed 1
//   data/golden/golden.json        frozen reference values
//
// The FLOPs/bytes manifest entries come from an independent recount of the
// saved descriptor file (own parser, own arithmetic), not from the library.
//
// Run from the repository root: ./regen_goldens [repo_root]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ehmex/ehsim.hpp"
#include "ehmex/netcore.hpp"
#include "ehmex/rng.hpp"
#include "ehmex/toytrain.hpp"
#include "ehmex/tracegen.hpp"

using namespace ehmex;
namespace fs = std::filesystem;

namespace {

struct Recount {
    std::vector<double> exit_flops;
    double f_model = 0.0;
    double weight_bytes = 0.0;
};

// Standalone recount: parse the descriptor text and multiply shapes out.
Recount recount_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    struct L {
        std::string kind;
        long long cin = 0, cout = 0, k = 1, stride = 1, bw = 32;
    };
    std::vector<L> layers;
    struct E {
        long long after = 0, features = 0, bw = 32;
    };
    std::vector<E> exits;
    long long classes = 0, in_c = 0, in_h = 0, in_w = 0;
    std::string tok;
    while (in >> tok) {
        if (tok == "num_classes") in >> classes;
        else if (tok == "input") in >> in_c >> in_h >> in_w;
        else if (tok == "layer") {
            long long idx;
            L l;
            in >> idx >> l.kind;
            if (l.kind == "conv" || l.kind == "fc") {
                std::string kw;
                long long oi, oo;
                in >> kw >> l.cin >> kw >> l.cout >> kw >> oi >> kw >> oo;
            }
            if (l.kind != "relu") {
                std::string kw;
                in >> kw >> l.k >> kw >> l.stride;
            }
            layers.push_back(l);
        } else if (tok == "quant") {
            long long idx, ba;
            double s;
            std::string kw;
            in >> idx >> kw >> layers.back().bw >> kw >> s >> kw >> ba >> kw >> s;
        } else if (tok == "exit") {
            E e;
            long long idx, orig, trained;
            std::string kw;
            in >> idx >> kw >> e.after >> kw >> e.features >> kw >> orig >> kw >> trained;
            exits.push_back(e);
        } else if (tok == "head_quant") {
            long long idx, ba;
            double s;
            std::string kw;
            in >> idx >> kw >> exits.back().bw >> kw >> s >> kw >> ba >> kw >> s;
        }
    }
    long long h = in_h, w = in_w;
    std::vector<double> flops, bits;
    for (const auto& l : layers) {
        if (l.kind == "conv") {
            h = (h - l.k) / l.stride + 1;
            w = (w - l.k) / l.stride + 1;
            flops.push_back(static_cast<double>(h) * w * l.cout * l.cin * l.k * l.k);
            bits.push_back(static_cast<double>(l.cout) * l.cin * l.k * l.k * l.bw);
        } else if (l.kind == "fc") {
            flops.push_back(static_cast<double>(l.cin) * l.cout);
            bits.push_back(static_cast<double>(l.cin) * l.cout * l.bw);
            h = w = 1;
        } else if (l.kind == "maxpool") {
            h = (h - l.k) / l.stride + 1;
            w = (w - l.k) / l.stride + 1;
            flops.push_back(0.0);
            bits.push_back(0.0);
        } else {
            flops.push_back(0.0);
            bits.push_back(0.0);
        }
    }
    Recount rc;
    double total_bits = 0.0;
    for (double b : bits) total_bits += b;
    for (const auto& e : exits) {
        double cum = 0.0;
        for (long long i = 0; i <= e.after; ++i) cum += flops[static_cast<size_t>(i)];
        cum += static_cast<double>(e.features) * classes;
        rc.exit_flops.push_back(cum);
        rc.f_model += cum;
        total_bits += static_cast<double>(e.features) * classes * e.bw;
    }
    rc.weight_bytes = total_bits / 8.0;
    return rc;
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (in.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string root = argc > 1 ? argv[1] : ".";
    fs::create_directories(root + "/data/nets");
    fs::create_directories(root + "/data/traces");
    fs::create_directories(root + "/data/golden");

    // bundled solar-like trace, default parameters, seed 1
    TraceGenParams tp;
    const PowerTrace solar = gen_trace(TraceKind::solar_like, tp, 1);
    const std::string trace_path = root + "/data/traces/solar_day.csv";
    solar.save_csv(trace_path);
    std::printf("wrote %s (%zu samples)\n", trace_path.c_str(), solar.time_s.size());

    // bundled toy descriptor: seeded backbone, calibrated, ridge-fit heads
    NetworkDescriptor net = make_toy_network(10, 42);
    const ToyDataset data = gen_dataset(10, 100, 0.5, 1);
    calibrate_activations(net, data.train_x);
    fit_exit_heads(net, data, 1.0, false);
    const std::string net_path = root + "/data/nets/toy16.net";
    save_descriptor(net, net_path);
    std::printf("wrote %s\n", net_path.c_str());

    nlohmann::ordered_json g;
    g["dataset_checksum"] = dataset_checksum(data);

    const Recount rc = recount_file(net_path);
    g["toy_manifest"]["exit_flops"] = rc.exit_flops;
    g["toy_manifest"]["f_model"] = rc.f_model;
    g["toy_manifest"]["weight_bytes"] = rc.weight_bytes;

    std::vector<double> accs;
    for (int e = 0; e < net.num_exits(); ++e) accs.push_back(eval_accuracy(net, data, e, false));
    g["per_exit_accuracy"] = accs;

    const Activation& sample = data.test_x.front();
    g["sample_input"] = sample.v;
    g["forward_probs"] = forward(net, sample, net.num_exits() - 1, false).probs;

    // reference greedy run on the bundled scenario
    Scenario sc;
    sc.trace = solar;
    sc.events = EventStream::generate(500, solar.duration_s(), 424242);
    sc.profiles = profiles_from_table({0.4452e6, 1.2602e6, 1.6202e6}, {0.649, 0.720, 0.730}, 1.5);
    sc.store.capacity_mj = 10.0;
    GreedyStaticSelector greedy;
    const SimReport rep = simulate(sc, greedy, AccuracyMode::expected, 424242);
    g["reference_exit_fractions"] = rep.exit_fraction_v;
    g["reference_iepmj"] = rep.iepmj;
    g["solar_trace_checksum"] = file_checksum(trace_path);

    const std::string golden_path = root + "/data/golden/golden.json";
    std::ofstream os(golden_path);
    os << g.dump(2) << "\n";
    std::printf("wrote %s\n", golden_path.c_str());
    std::printf("per-exit accuracy:");
    for (double a : accs) std::printf(" %.4f", a);
    std::printf("\nexit fractions:");
    for (double f : rep.exit_fraction_v) std::printf(" %.4f", f);
    std::printf("  iepmj %.4f\n", rep.iepmj);
    return 0;
}
