#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ehmex/cli.hpp"
#include "ehmex/errors.hpp"

namespace {

// Machine-readable error contract: nonzero exit code + one JSON object on
// stderr. 2 = bad config/input, 3 = simulation fault, 1 = anything else.
int fail(const char* type, const std::string& message, int code) {
    nlohmann::ordered_json j;
    j["error"]["type"] = type;
    j["error"]["message"] = message;
    std::cerr << j.dump() << std::endl;
    return code;
}

struct CommonOpts {
    std::string config_path;
    std::string out_dir;
    std::string mode;
    long long seed = -1;
};

ehmex::ExperimentConfig resolve(const CommonOpts& opts) {
    ehmex::ExperimentConfig cfg = opts.config_path.empty()
                                      ? ehmex::ExperimentConfig{}
                                      : ehmex::ExperimentConfig::load(opts.config_path);
    if (opts.seed >= 0) cfg.seed = static_cast<uint64_t>(opts.seed);
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    if (!opts.mode.empty()) cfg.mode = opts.mode;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "Experiment config file");
    cmd->add_option("--seed", opts.seed, "Override the run seed");
    cmd->add_option("--out", opts.out_dir, "Override the output directory");
    cmd->add_option("--mode", opts.mode, "Accuracy mode: expected|bernoulli");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ehmex: intermittent multi-exit inference toolkit"};
    app.require_subcommand(1);

    CommonOpts gen_trace_o, gen_events_o, gen_net_o, simulate_o, search_o, runtime_o;
    std::string selector_override;
    std::string runtime_policy_override;
    std::vector<std::string> report_inputs;
    std::string report_out = "comparison.csv";

    add_common(app.add_subcommand("gen-trace", "Generate a synthetic power trace CSV"),
               gen_trace_o);
    add_common(app.add_subcommand("gen-events", "Generate an event stream CSV"), gen_events_o);
    add_common(app.add_subcommand("gen-net", "Generate the toy multi-exit descriptor"), gen_net_o);
    auto* sim = app.add_subcommand("simulate", "Run one intermittent-inference simulation");
    add_common(sim, simulate_o);
    sim->add_option("--selector", selector_override, "greedy|final_exit_only");
    add_common(app.add_subcommand("search", "Run the two-agent compression search"), search_o);
    auto* rt = app.add_subcommand("runtime", "Run online exit selection");
    add_common(rt, runtime_o);
    rt->add_option("--policy", runtime_policy_override,
                   "static_lut|q_learning|q_learning_incremental");
    auto* rep = app.add_subcommand("report", "Aggregate run reports into a comparison CSV");
    rep->add_option("inputs", report_inputs, "report.json files")->required();
    rep->add_option("--out", report_out, "Output CSV path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand("gen-trace")) {
            ehmex::cmd_gen_trace(resolve(gen_trace_o));
        } else if (app.got_subcommand("gen-events")) {
            ehmex::cmd_gen_events(resolve(gen_events_o));
        } else if (app.got_subcommand("gen-net")) {
            ehmex::cmd_gen_net(resolve(gen_net_o));
        } else if (app.got_subcommand("simulate")) {
            auto cfg = resolve(simulate_o);
            if (!selector_override.empty()) cfg.selector = selector_override;
            ehmex::cmd_simulate(cfg);
        } else if (app.got_subcommand("search")) {
            ehmex::cmd_search(resolve(search_o));
        } else if (app.got_subcommand("runtime")) {
            auto cfg = resolve(runtime_o);
            if (!runtime_policy_override.empty()) cfg.runtime_policy = runtime_policy_override;
            ehmex::cmd_runtime(cfg);
        } else if (app.got_subcommand("report")) {
            ehmex::cmd_report(report_inputs, report_out);
        }
    } catch (const ehmex::ConfigError& e) {
        return fail("config_error", e.what(), 2);
    } catch (const ehmex::InputError& e) {
        return fail("input_error", e.what(), 2);
    } catch (const ehmex::SimulationFault& e) {
        return fail("simulation_fault", e.what(), 3);
    } catch (const std::exception& e) {
        return fail("internal_error", e.what(), 1);
    }
    return 0;
}
