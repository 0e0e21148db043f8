#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "ehmex/compress.hpp"
#include "ehmex/ehsim.hpp"
#include "ehmex/netcore.hpp"
#include "ehmex/runtime.hpp"
#include "ehmex/search.hpp"
#include "ehmex/toytrain.hpp"

namespace py = pybind11;
using namespace ehmex;

PYBIND11_MODULE(_core, m) {
    m.doc() = "Intermittent multi-exit inference toolkit: core operations.";

    m.def("entropy", &entropy, py::arg("probs"),
          "Shannon entropy in nats, 0*ln(0) == 0.");
    m.def("softmax", &softmax, py::arg("logits"));

    m.def(
        "flops_of_layer",
        [](const std::string& kind, int c_in, int c_out, int kernel, int out_h, int out_w) {
            LayerSpec l;
            l.kind = layer_kind_from_name(kind);
            l.c_in = c_in;
            l.c_out = c_out;
            l.kernel = kernel;
            l.out_h = out_h;
            l.out_w = out_w;
            return flops_of_layer(l);
        },
        py::arg("kind"), py::arg("c_in"), py::arg("c_out"), py::arg("kernel") = 1,
        py::arg("out_h") = 1, py::arg("out_w") = 1,
        "MAC count of one layer (1 MAC = 1 FLOP; relu/maxpool cost 0).");

    m.def("channel_importance", &channel_importance, py::arg("weights"), py::arg("n"),
          py::arg("c"), py::arg("k"), "Per-input-channel sum of absolute weights.");
    m.def("channels_to_drop", &channels_to_drop, py::arg("importance"), py::arg("c_keep"));

    m.def(
        "quantize_weights",
        [](const std::vector<double>& w, int bits) {
            const QuantResult r = quantize_weights(w, bits);
            return py::make_tuple(r.values, r.scale, r.l2_error);
        },
        py::arg("weights"), py::arg("bits"),
        "Linear quantization with L2-optimal scale; returns (values, scale, l2_error).");
    m.def("quantize_activations", &quantize_activations, py::arg("activations"), py::arg("bits"),
          py::arg("scale"));

    m.def("map_action_to_bitwidth", &map_action_to_bitwidth, py::arg("a"), py::arg("b_min"),
          py::arg("b_max"));
    m.def("map_action_to_alpha", &map_action_to_alpha, py::arg("a"));
    m.def("snap_alpha", &snap_alpha, py::arg("alpha"));

    m.def(
        "harvest",
        [](const std::vector<double>& time_s, const std::vector<double>& power_mw, double t0,
           double t1, double efficiency) {
            PowerTrace tr;
            tr.time_s = time_s;
            tr.power_mw = power_mw;
            tr.validate();
            return harvest(tr, t0, t1, efficiency);
        },
        py::arg("time_s"), py::arg("power_mw"), py::arg("t0"), py::arg("t1"),
        py::arg("efficiency") = 1.0,
        "Trapezoidal harvested energy (mJ) over [t0, t1].");

    m.def(
        "simulate_profile_scenario",
        [](const std::vector<double>& time_s, const std::vector<double>& power_mw,
           const std::vector<double>& event_times, const std::vector<double>& exit_flops,
           const std::vector<double>& exit_accuracy, double energy_per_mflop_mj,
           double capacity_mj, double initial_mj, uint64_t seed) {
            Scenario sc;
            sc.trace.time_s = time_s;
            sc.trace.power_mw = power_mw;
            sc.events.time_s = event_times;
            sc.store.capacity_mj = capacity_mj;
            sc.store.level_mj = initial_mj;
            sc.energy_per_mflop_mj = energy_per_mflop_mj;
            sc.profiles = profiles_from_table(exit_flops, exit_accuracy, energy_per_mflop_mj);
            GreedyStaticSelector greedy;
            const SimReport rep = simulate(sc, greedy, AccuracyMode::expected, seed);
            py::dict d;
            d["iepmj"] = rep.iepmj;
            d["avg_acc_all"] = rep.avg_acc_all;
            d["avg_acc_processed"] = rep.avg_acc_processed;
            d["processed"] = rep.processed;
            d["missed"] = rep.missed;
            d["n_correct"] = rep.n_correct;
            d["e_total_mj"] = rep.e_total_mj;
            d["exit_fraction"] = rep.exit_fraction_v;
            return d;
        },
        py::arg("time_s"), py::arg("power_mw"), py::arg("event_times"), py::arg("exit_flops"),
        py::arg("exit_accuracy"), py::arg("energy_per_mflop_mj") = 1.5,
        py::arg("capacity_mj") = 10.0, py::arg("initial_mj") = 0.0, py::arg("seed") = 1,
        "Greedy-static simulation over a profile-table scenario; returns the aggregates.");

    m.def(
        "q_update",
        [](double q, double r, double max_next, double alpha, double gamma) {
            return q + alpha * (r + gamma * max_next - q);
        },
        py::arg("q"), py::arg("r"), py::arg("max_next"), py::arg("alpha"), py::arg("gamma"),
        "One tabular Q-learning update on a single entry.");

    m.def("search_space_cardinality", &search_space_cardinality, py::arg("num_layers"),
          py::arg("bw_levels") = 8, py::arg("ba_levels") = 8, py::arg("alpha_levels") = 20);
    m.def("search_space_log10", &search_space_log10, py::arg("num_layers"),
          py::arg("bw_levels") = 8, py::arg("ba_levels") = 8, py::arg("alpha_levels") = 20);

    m.def(
        "toy_dataset_checksum",
        [](int num_classes, int n_per_class, double noise_sigma, uint64_t seed) {
            return dataset_checksum(gen_dataset(num_classes, n_per_class, noise_sigma, seed));
        },
        py::arg("num_classes"), py::arg("n_per_class"), py::arg("noise_sigma"), py::arg("seed"));
}
