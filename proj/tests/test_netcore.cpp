#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ehmex/compress.hpp"
#include "ehmex/errors.hpp"
#include "ehmex/netcore.hpp"
#include "ehmex/rng.hpp"
#include "ehmex/toytrain.hpp"

using namespace ehmex;

namespace {
const std::string kRoot = EHMEX_SOURCE_DIR;

nlohmann::json load_golden() {
    std::ifstream in(kRoot + "/data/golden/golden.json");
    REQUIRE(in.good());
    nlohmann::json j;
    in >> j;
    return j;
}

// Independent FLOPs recount: parses the descriptor file with its own tiny
// reader and multiplies shapes out from scratch.
struct Recount {
    std::vector<double> exit_flops;
    double f_model = 0.0;
    double weight_bytes = 0.0;
};

Recount recount_descriptor(const std::string& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    struct L {
        std::string kind;
        long long cin = 0, cout = 0, k = 1, stride = 1;
        long long bw = 32;
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
    // walk shapes and count MACs per layer
    long long h = in_h, w = in_w;
    std::vector<double> layer_flops;
    std::vector<double> layer_bits;
    for (const auto& l : layers) {
        if (l.kind == "conv") {
            h = (h - l.k) / l.stride + 1;
            w = (w - l.k) / l.stride + 1;
            layer_flops.push_back(static_cast<double>(h) * w * l.cout * l.cin * l.k * l.k);
            layer_bits.push_back(static_cast<double>(l.cout) * l.cin * l.k * l.k * l.bw);
        } else if (l.kind == "fc") {
            layer_flops.push_back(static_cast<double>(l.cin) * l.cout);
            layer_bits.push_back(static_cast<double>(l.cin) * l.cout * l.bw);
            h = w = 1;
        } else if (l.kind == "maxpool") {
            h = (h - l.k) / l.stride + 1;
            w = (w - l.k) / l.stride + 1;
            layer_flops.push_back(0.0);
            layer_bits.push_back(0.0);
        } else {
            layer_flops.push_back(0.0);
            layer_bits.push_back(0.0);
        }
    }
    Recount rc;
    double bits = 0.0;
    for (double b : layer_bits) bits += b;
    for (const auto& e : exits) {
        double cum = 0.0;
        for (long long i = 0; i <= e.after; ++i) cum += layer_flops[static_cast<size_t>(i)];
        cum += static_cast<double>(e.features) * classes;
        rc.exit_flops.push_back(cum);
        rc.f_model += cum;
        bits += static_cast<double>(e.features) * classes * e.bw;
    }
    rc.weight_bytes = bits / 8.0;
    return rc;
}

}  // namespace

TEST_CASE("flops_of_layer matches the stated conventions") {
    LayerSpec fc;
    fc.kind = LayerKind::fc;
    fc.c_in = 120;
    fc.c_out = 10;
    CHECK(flops_of_layer(fc) == 1200);

    LayerSpec conv;
    conv.kind = LayerKind::conv;
    conv.c_in = 3;
    conv.c_out = 16;
    conv.kernel = 5;
    conv.out_h = 28;
    conv.out_w = 28;
    CHECK(flops_of_layer(conv) == 940800);  // 28*28*16*3*5*5, multiplied by hand

    LayerSpec relu;
    relu.kind = LayerKind::relu;
    CHECK(flops_of_layer(relu) == 0);
}

TEST_CASE("entropy") {
    CHECK(entropy({0.0, 1.0, 0.0}) == 0.0);
    CHECK(entropy(std::vector<double>(10, 0.1)) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
    CHECK(entropy({0.5, 0.5, 0.0, 0.0}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK_THROWS_AS(entropy({0.5, -0.1, 0.6}), InputError);
}

TEST_CASE("softmax normalizes random logits to 1e-9") {
    Rng rng(123);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<double> logits(10);
        for (auto& x : logits) x = rng.gaussian(0.0, 5.0);
        const auto p = softmax(logits);
        double sum = 0.0;
        for (double v : p) {
            CHECK(v >= 0.0);
            sum += v;
        }
        CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
}

TEST_CASE("all-zero head weights give uniform probabilities") {
    NetworkDescriptor net = make_toy_network(10, 7);  // heads start zeroed
    Activation img;
    img.c = 1;
    img.h = 16;
    img.w = 16;
    img.v.assign(256, 0.5);
    for (int e = 0; e < net.num_exits(); ++e) {
        const auto r = forward(net, img, e, false);
        for (double p : r.probs) CHECK(p == doctest::Approx(0.1).epsilon(1e-12));
    }
}

TEST_CASE("forward resumption is bit-identical for all exits") {
    NetworkDescriptor net = make_toy_network(10, 3);
    const ToyDataset data = gen_dataset(10, 4, 0.3, 11);
    fit_exit_heads(net, data, 1.0, false);
    for (int rep = 0; rep < 4; ++rep) {
        const Activation& img = data.test_x[static_cast<size_t>(rep)];
        for (int from = 0; from < net.num_exits() - 1; ++from) {
            const auto part = forward(net, img, from, false);
            for (int to = from + 1; to < net.num_exits(); ++to) {
                const auto fresh = forward(net, img, to, false);
                const auto resumed = resume(net, part.cache, to, false);
                REQUIRE(fresh.probs.size() == resumed.probs.size());
                for (size_t i = 0; i < fresh.probs.size(); ++i)
                    CHECK(fresh.probs[i] == resumed.probs[i]);  // exact
            }
        }
    }
}

TEST_CASE("forward rejects shape mismatch and bad exit index") {
    NetworkDescriptor net = make_toy_network(10, 3);
    Activation bad;
    bad.c = 1;
    bad.h = 8;
    bad.w = 8;
    bad.v.assign(64, 0.0);
    CHECK_THROWS_AS(forward(net, bad, 0, false), InputError);
    Activation ok;
    ok.c = 1;
    ok.h = 16;
    ok.w = 16;
    ok.v.assign(256, 0.0);
    CHECK_THROWS_AS(forward(net, ok, 3, false), InputError);
}

TEST_CASE("FLOPs additivity against an in-test recount on random descriptors") {
    Rng rng(99);
    for (int rep = 0; rep < 20; ++rep) {
        NetworkDescriptor net = make_toy_network(10, rng.next_u64());
        const auto profiles = exit_profiles(net, 1.5);
        for (int e = 0; e < net.num_exits(); ++e) {
            double macs = 0.0;
            for (int li = 0; li <= net.exits[static_cast<size_t>(e)].after_layer; ++li)
                macs += static_cast<double>(flops_of_layer(net.layers[static_cast<size_t>(li)]));
            macs += static_cast<double>(net.exits[static_cast<size_t>(e)].num_features()) *
                    net.num_classes;
            CHECK(profiles[static_cast<size_t>(e)].flops == macs);
        }
        for (size_t e = 1; e < profiles.size(); ++e)
            CHECK(profiles[e].flops > profiles[e - 1].flops);
    }
}

TEST_CASE("pruning scales the consumer conv MAC count by exactly c'/c") {
    NetworkDescriptor net = make_toy_network(10, 5);
    const int li = 3;  // second conv, c_in = 4
    const long long before = flops_of_layer(net.layers[li]);
    NetworkDescriptor pruned = prune_layer(net, li, 0.5);
    const long long after = flops_of_layer(pruned.layers[li]);
    CHECK(after * 4 == before * 2);  // c' = round(0.5 * 4) = 2
}

TEST_CASE("descriptor file round-trips bit-exactly") {
    NetworkDescriptor net = make_toy_network(10, 21);
    const ToyDataset data = gen_dataset(10, 3, 0.2, 5);
    calibrate_activations(net, data.train_x);
    fit_exit_heads(net, data, 1.0, false);
    const std::string path = "/tmp/ehmex_roundtrip.net";
    save_descriptor(net, path);
    const NetworkDescriptor back = load_descriptor(path);
    REQUIRE(back.layers.size() == net.layers.size());
    for (size_t i = 0; i < net.layers.size(); ++i) {
        REQUIRE(back.weights[i].size() == net.weights[i].size());
        for (size_t k = 0; k < net.weights[i].size(); ++k)
            CHECK(back.weights[i][k] == net.weights[i][k]);
        CHECK(back.act_max[i] == net.act_max[i]);
    }
    REQUIRE(back.exits.size() == net.exits.size());
    for (size_t e = 0; e < net.exits.size(); ++e) {
        CHECK(back.exits[e].after_layer == net.exits[e].after_layer);
        CHECK(back.exits[e].feature_index == net.exits[e].feature_index);
        CHECK(back.exits[e].trained == net.exits[e].trained);
        for (size_t k = 0; k < net.exits[e].weight.size(); ++k)
            CHECK(back.exits[e].weight[k] == net.exits[e].weight[k]);
    }
}

TEST_CASE("paper-profile mode reproduces the published per-exit numbers") {
    const auto profiles =
        profiles_from_table({0.4452e6, 1.2602e6, 1.6202e6}, {0.649, 0.720, 0.730}, 1.5);
    REQUIRE(profiles.size() == 3);
    CHECK(profiles[0].flops == doctest::Approx(0.4452e6));
    CHECK(profiles[1].flops == doctest::Approx(1.2602e6));
    CHECK(profiles[2].flops == doctest::Approx(1.6202e6));
    // energy at exit 1 under 1.5 mJ/MFLOP: 0.4452 * 1.5 = 0.6678 mJ
    CHECK(profiles[0].energy_cost_mj == doctest::Approx(0.6678).epsilon(1e-12));
    CHECK(profiles[1].energy_cost_mj == doctest::Approx(1.8903).epsilon(1e-12));
    CHECK(profiles[2].energy_cost_mj == doctest::Approx(2.4303).epsilon(1e-12));
}

TEST_CASE("bundled descriptor matches the frozen recount manifest") {
    const auto golden = load_golden();
    const std::string net_path = kRoot + "/data/nets/toy16.net";
    const NetworkDescriptor net = load_descriptor(net_path);
    const Recount rc = recount_descriptor(net_path);
    const auto profiles = exit_profiles(net, 1.5);
    const auto& manifest = golden.at("toy_manifest");
    REQUIRE(profiles.size() == rc.exit_flops.size());
    for (size_t e = 0; e < profiles.size(); ++e) {
        CHECK(profiles[e].flops == manifest.at("exit_flops")[e].get<double>());
        CHECK(rc.exit_flops[e] == manifest.at("exit_flops")[e].get<double>());
    }
    CHECK(model_flops(net) == manifest.at("f_model").get<double>());
    CHECK(rc.f_model == manifest.at("f_model").get<double>());
    CHECK(model_weight_bytes(net) == manifest.at("weight_bytes").get<double>());
    CHECK(rc.weight_bytes == manifest.at("weight_bytes").get<double>());
}

TEST_CASE("golden forward regression on the bundled net") {
    const auto golden = load_golden();
    const NetworkDescriptor net = load_descriptor(kRoot + "/data/nets/toy16.net");
    Activation img;
    img.c = 1;
    img.h = 16;
    img.w = 16;
    img.v = golden.at("sample_input").get<std::vector<double>>();
    const auto frozen = golden.at("forward_probs").get<std::vector<double>>();
    const auto r = forward(net, img, net.num_exits() - 1, false);
    REQUIRE(r.probs.size() == frozen.size());
    for (size_t i = 0; i < frozen.size(); ++i)
        CHECK(r.probs[i] == doctest::Approx(frozen[i]).epsilon(1e-12));
}
