#include "ehmex/cli.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "ehmex/compress.hpp"
#include "ehmex/errors.hpp"
#include "ehmex/rng.hpp"
#include "ehmex/runtime.hpp"
#include "ehmex/search.hpp"
#include "ehmex/tracegen.hpp"

namespace fs = std::filesystem;

namespace ehmex {

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory " + dir);
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw InputError("cannot write " + path);
    os << text;
}

nlohmann::ordered_json meta_json(const ExperimentConfig& cfg) {
    nlohmann::ordered_json meta;
    meta["tool"] = "ehmex";
    meta["config_hash"] = cfg.hash();
    meta["seed"] = cfg.seed;
    return meta;
}

// report.json: meta + simulation aggregates + the full resolved config.
void write_report(const ExperimentConfig& cfg, const SimReport& report,
                  const std::string& selector_name, const std::string& path) {
    nlohmann::ordered_json j;
    j["meta"] = meta_json(cfg);
    j["meta"]["selector"] = selector_name;
    j["meta"]["mode"] = cfg.mode;
    j["report"] = nlohmann::ordered_json::parse(report.to_json());
    j["resolved_config"] = cfg.render();
    write_text(path, j.dump(2) + "\n");
}

TraceGenParams trace_params(const ExperimentConfig& cfg) {
    TraceGenParams p;
    p.duration_s = cfg.trace_duration_s;
    p.step_s = cfg.trace_step_s;
    p.peak_mw = cfg.trace_peak_mw;
    p.low_mw = cfg.trace_low_mw;
    p.period_s = cfg.trace_period_s;
    p.day_fraction = cfg.trace_day_fraction;
    p.cloud_sigma = cfg.trace_cloud_sigma;
    return p;
}

uint64_t stream_seed(const ExperimentConfig& cfg, const char* name) {
    // Named sub-streams of the single run seed, so components vary
    // independently.
    return hash_name(name) ^ (cfg.seed * 0x9e3779b97f4a7c15ULL);
}

AccuracyMode accuracy_mode(const ExperimentConfig& cfg) {
    return cfg.mode == "bernoulli" ? AccuracyMode::bernoulli : AccuracyMode::expected;
}

RuntimeParams runtime_params(const ExperimentConfig& cfg) {
    RuntimeParams p;
    p.energy_bins = cfg.energy_bins;
    p.power_bins = cfg.power_bins;
    p.entropy_bins = cfg.entropy_bins;
    p.eps0 = cfg.eps0;
    p.eps_decay = cfg.eps_decay;
    p.eps_floor = cfg.eps_floor;
    p.alpha_q = cfg.alpha_q;
    p.gamma = cfg.q_gamma;
    p.beta_energy_penalty = cfg.beta_energy_penalty;
    p.entropy_threshold = cfg.entropy_threshold;
    p.epochs = cfg.epochs;
    return p;
}

}  // namespace

Scenario build_scenario(const ExperimentConfig& cfg) {
    Scenario sc;
    if (!cfg.trace_path.empty()) {
        sc.trace = PowerTrace::load_csv(cfg.trace_path);
    } else {
        sc.trace = gen_trace(trace_kind_from_name(cfg.trace_kind), trace_params(cfg),
                             stream_seed(cfg, "trace"));
    }
    if (!cfg.events_path.empty()) {
        sc.events = EventStream::load_csv(cfg.events_path);
    } else {
        sc.events =
            EventStream::generate(cfg.event_count, sc.trace.duration_s(), stream_seed(cfg, "events"));
    }
    sc.store.capacity_mj = cfg.store_capacity_mj;
    sc.store.level_mj = cfg.store_initial_mj;
    sc.store.harvest_efficiency = cfg.store_efficiency;
    sc.energy_per_mflop_mj = cfg.energy_per_mflop_mj;
    sc.compute_rate_flops = cfg.compute_rate_flops;
    sc.p_window_s = cfg.p_window_s;
    sc.num_classes = cfg.num_classes;

    if (!cfg.descriptor_path.empty()) {
        NetworkDescriptor net = load_descriptor(cfg.descriptor_path);
        sc.num_classes = net.num_classes;
        sc.profiles = exit_profiles(net, cfg.energy_per_mflop_mj);
        // Accuracy measured on the toy dataset (deterministic by data_seed).
        const ToyDataset data =
            gen_dataset(net.num_classes, cfg.n_per_class, cfg.noise_sigma, cfg.data_seed);
        for (int e = 0; e < net.num_exits(); ++e)
            sc.profiles[static_cast<size_t>(e)].accuracy =
                eval_accuracy(net, data, e, /*quantized=*/true);
    } else {
        if (cfg.profile_flops.empty())
            throw ConfigError("scenario needs either a descriptor or a profile table");
        sc.profiles =
            profiles_from_table(cfg.profile_flops, cfg.profile_accuracy, cfg.energy_per_mflop_mj);
    }
    sc.validate();
    return sc;
}

void cmd_gen_trace(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const PowerTrace tr = gen_trace(trace_kind_from_name(cfg.trace_kind), trace_params(cfg),
                                    stream_seed(cfg, "trace"));
    tr.save_csv(cfg.out_dir + "/trace.csv");
    nlohmann::ordered_json j;
    j["meta"] = meta_json(cfg);
    j["samples"] = tr.time_s.size();
    j["duration_s"] = tr.duration_s();
    j["max_power_mw"] = tr.max_power_mw();
    j["resolved_config"] = cfg.render();
    write_text(cfg.out_dir + "/trace.json", j.dump(2) + "\n");
}

void cmd_gen_events(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const EventStream ev =
        EventStream::generate(cfg.event_count, cfg.trace_duration_s, stream_seed(cfg, "events"));
    ev.save_csv(cfg.out_dir + "/events.csv");
}

void cmd_gen_net(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    NetworkDescriptor net = make_toy_network(cfg.data_classes, stream_seed(cfg, "backbone"));
    const ToyDataset data =
        gen_dataset(cfg.data_classes, cfg.n_per_class, cfg.noise_sigma, cfg.data_seed);
    calibrate_activations(net, data.train_x);
    fit_exit_heads(net, data, cfg.ridge_lambda, /*quantized_features=*/false);
    save_descriptor(net, cfg.out_dir + "/toy.net");

    nlohmann::ordered_json j;
    j["meta"] = meta_json(cfg);
    const auto profiles = exit_profiles(net, cfg.energy_per_mflop_mj);
    for (int e = 0; e < net.num_exits(); ++e) {
        nlohmann::ordered_json pe;
        pe["flops"] = profiles[static_cast<size_t>(e)].flops;
        pe["weight_bytes"] = profiles[static_cast<size_t>(e)].weight_bytes;
        pe["energy_cost_mj"] = profiles[static_cast<size_t>(e)].energy_cost_mj;
        pe["accuracy"] = eval_accuracy(net, data, e, /*quantized=*/false);
        j["exits"].push_back(pe);
    }
    j["resolved_config"] = cfg.render();
    write_text(cfg.out_dir + "/toy_net.json", j.dump(2) + "\n");
}

void cmd_simulate(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const Scenario sc = build_scenario(cfg);
    GreedyStaticSelector greedy;
    FinalExitOnlySelector final_only;
    ExitSelector& sel =
        (cfg.selector == "final_exit_only") ? static_cast<ExitSelector&>(final_only)
                                            : static_cast<ExitSelector&>(greedy);
    const SimReport report = simulate(sc, sel, accuracy_mode(cfg), stream_seed(cfg, "simulate"));
    write_report(cfg, report, sel.name(), cfg.out_dir + "/report.json");
    save_events_csv(report, cfg.out_dir + "/events.csv");
}

void cmd_search(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    if (cfg.descriptor_path.empty()) throw ConfigError("cmd_search needs network.descriptor");
    NetworkDescriptor net = load_descriptor(cfg.descriptor_path);
    const ToyDataset data =
        gen_dataset(net.num_classes, cfg.n_per_class, cfg.noise_sigma, cfg.data_seed);

    Scenario sc = build_scenario(cfg);
    SearchEnvConfig env_cfg;
    env_cfg.flops_target =
        cfg.flops_target > 0.0 ? cfg.flops_target : cfg.flops_target_ratio * model_flops(net);
    env_cfg.size_target_bytes = cfg.size_target_bytes > 0.0
                                    ? cfg.size_target_bytes
                                    : cfg.size_target_ratio * model_weight_bytes(net);
    env_cfg.bw_min = cfg.bw_min;
    env_cfg.bw_max = cfg.bw_max;
    env_cfg.ba_min = cfg.ba_min;
    env_cfg.ba_max = cfg.ba_max;
    env_cfg.prune_heads = cfg.prune_heads;
    env_cfg.accuracy_mode = cfg.accuracy_mode == "descriptor" ? AccuracyEvalMode::descriptor
                                                              : AccuracyEvalMode::surrogate;
    env_cfg.lambda1 = cfg.lambda1;
    env_cfg.lambda2 = cfg.lambda2;
    env_cfg.ridge_lambda = cfg.ridge_lambda;
    env_cfg.refit_heads = cfg.refit_heads;
    env_cfg.surrogate_grid = cfg.surrogate_grid;

    const SearchEnv env(std::move(net), data, sc, env_cfg, stream_seed(cfg, "search_env"));

    AgentConfig agent_cfg;
    agent_cfg.hidden = cfg.hidden;
    agent_cfg.actor_lr = cfg.actor_lr;
    agent_cfg.critic_lr = cfg.critic_lr;
    agent_cfg.buffer_capacity = static_cast<size_t>(cfg.buffer_capacity);
    agent_cfg.batch_size = cfg.batch_size;
    agent_cfg.sigma0 = cfg.sigma0;
    agent_cfg.sigma_floor = cfg.sigma_floor;
    agent_cfg.updates_per_episode = cfg.updates_per_episode;
    AgentPair agents = AgentPair::make(12, agent_cfg, stream_seed(cfg, "agents"));

    const SearchResult result = search(env, agents, cfg.episodes, cfg.greedy_every);

    // history as line-delimited JSON
    std::ostringstream hist;
    for (const auto& h : result.history) {
        nlohmann::ordered_json j;
        j["episode"] = h.episode;
        j["greedy"] = h.greedy;
        j["r_acc"] = h.r_acc;
        j["r_prune"] = h.r_prune;
        j["r_quant"] = h.r_quant;
        j["f_model"] = h.f_model;
        j["s_model_bytes"] = h.s_model_bytes;
        j["feasible"] = h.feasible;
        hist << j.dump() << "\n";
    }
    write_text(cfg.out_dir + "/history.jsonl", hist.str());

    nlohmann::ordered_json j;
    j["meta"] = meta_json(cfg);
    j["flops_target"] = env_cfg.flops_target;
    j["size_target_bytes"] = env_cfg.size_target_bytes;
    j["uncompressed_flops"] = env.uncompressed_flops();
    j["uncompressed_bytes"] = env.uncompressed_bytes();
    j["accuracy_mode"] = cfg.accuracy_mode;
    j["found_feasible"] = result.found_feasible();
    auto eval_json = [](const PolicyEval& ev) {
        nlohmann::ordered_json e;
        e["r_acc"] = ev.r_acc;
        e["f_model"] = ev.f_model;
        e["s_model_bytes"] = ev.s_model_bytes;
        e["flops_ok"] = ev.flops_ok;
        e["size_ok"] = ev.size_ok;
        e["exit_accuracy"] = ev.exit_accuracy;
        e["exit_fractions"] = ev.exit_fractions;
        return e;
    };
    if (result.found_feasible()) {
        result.best_policy->save(cfg.out_dir + "/best_policy.cfg");
        j["best"] = eval_json(result.best_eval);
    } else if (result.best_infeasible_policy) {
        // No feasible policy: report the best infeasible candidate explicitly.
        result.best_infeasible_policy->save(cfg.out_dir + "/best_infeasible_policy.cfg");
        j["best_infeasible"] = eval_json(result.best_infeasible_eval);
    }
    if (cfg.baseline_samples > 0) {
        const SearchResult base =
            random_search_baseline(env, cfg.baseline_samples, stream_seed(cfg, "baseline"));
        j["baseline_found_feasible"] = base.found_feasible();
        if (base.found_feasible()) j["baseline_best"] = eval_json(base.best_eval);
    }
    j["resolved_config"] = cfg.render();
    write_text(cfg.out_dir + "/search_report.json", j.dump(2) + "\n");
}

void cmd_runtime(const ExperimentConfig& cfg) {
    ensure_dir(cfg.out_dir);
    const Scenario sc = build_scenario(cfg);
    const RuntimePolicyMode mode = runtime_mode_from_name(cfg.runtime_policy);
    RuntimeParams params = runtime_params(cfg);
    if (params.entropy_threshold < 0.0)
        params.entropy_threshold = std::log(static_cast<double>(sc.num_classes)) / 2.0;
    const RunOnlineResult result =
        run_online(sc, mode, params, accuracy_mode(cfg), stream_seed(cfg, "runtime"));
    write_report(cfg, result.report, result.mode, cfg.out_dir + "/report.json");
    save_events_csv(result.report, cfg.out_dir + "/events.csv");
    if (mode != RuntimePolicyMode::static_lut) {
        write_text(cfg.out_dir + "/qtable_exit.json", result.exit_table.to_json() + "\n");
        write_text(cfg.out_dir + "/qtable_continue.json", result.continue_table.to_json() + "\n");
    }
}

void cmd_report(const std::vector<std::string>& report_json_paths, const std::string& out_csv) {
    if (report_json_paths.empty()) throw InputError("cmd_report needs at least one report.json");
    struct Row {
        std::string name;
        nlohmann::json rep;
    };
    std::vector<Row> rows;
    for (const auto& p : report_json_paths) {
        std::ifstream in(p);
        if (!in) throw InputError("cannot open " + p);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw InputError(p + ": " + e.what());
        }
        std::string name = j.contains("meta") && j["meta"].contains("selector")
                               ? j["meta"]["selector"].get<std::string>()
                               : fs::path(p).parent_path().filename().string();
        rows.push_back({name, j.at("report")});
    }

    std::ostringstream os;
    os << "name,iepmj,avg_acc_all,avg_acc_processed,mean_event_latency_s,"
          "mean_inference_latency_s,processed,missed,exit_fractions,"
          "delta_iepmj,delta_avg_acc_all,delta_processed\n";
    const auto& base = rows.front().rep;
    char buf[64];
    auto num = [&buf](double x) {
        std::snprintf(buf, sizeof(buf), "%.17g", x);
        return std::string(buf);
    };
    for (const auto& row : rows) {
        const auto& r = row.rep;
        std::string fractions;
        for (const auto& f : r.at("exit_fraction")) {
            if (!fractions.empty()) fractions += ";";
            fractions += num(f.get<double>());
        }
        os << row.name << "," << num(r.at("iepmj").get<double>()) << ","
           << num(r.at("avg_acc_all").get<double>()) << ","
           << num(r.at("avg_acc_processed").get<double>()) << ","
           << num(r.at("mean_event_latency_s").get<double>()) << ","
           << num(r.at("mean_inference_latency_s").get<double>()) << ","
           << r.at("processed").get<int>() << "," << r.at("missed").get<int>() << "," << fractions
           << "," << num(r.at("iepmj").get<double>() - base.at("iepmj").get<double>()) << ","
           << num(r.at("avg_acc_all").get<double>() - base.at("avg_acc_all").get<double>()) << ","
           << (r.at("processed").get<int>() - base.at("processed").get<int>()) << "\n";
    }
    write_text(out_csv, os.str());
}

}  // namespace ehmex
