#include "ehmex/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "ehmex/errors.hpp"
#include "ehmex/rng.hpp"

namespace ehmex {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, b - a + 1);
}

std::string fmt_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::vector<double> parse_list(const std::string& v, const std::string& where) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw ConfigError(where + ": malformed number '" + item + "'");
        }
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& where) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(where + ": expected a boolean, got '" + v + "'");
}

std::string list_to_string(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ", ";
        out += fmt_double(v[i]);
    }
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
}

ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
    ExperimentConfig c;
    using Setter = std::function<void(const std::string&, const std::string&)>;
    std::map<std::string, std::map<std::string, Setter>> schema;

    auto str = [](std::string& field) {
        return [&field](const std::string& v, const std::string&) { field = v; };
    };
    auto num = [](double& field) {
        return [&field](const std::string& v, const std::string& where) {
            try {
                field = std::stod(v);
            } catch (...) {
                throw ConfigError(where + ": expected a number, got '" + v + "'");
            }
        };
    };
    auto integer = [](int& field) {
        return [&field](const std::string& v, const std::string& where) {
            try {
                field = std::stoi(v);
            } catch (...) {
                throw ConfigError(where + ": expected an integer, got '" + v + "'");
            }
        };
    };
    auto u64 = [](uint64_t& field) {
        return [&field](const std::string& v, const std::string& where) {
            try {
                field = std::stoull(v);
            } catch (...) {
                throw ConfigError(where + ": expected an integer, got '" + v + "'");
            }
        };
    };
    auto boolean = [](bool& field) {
        return [&field](const std::string& v, const std::string& where) {
            field = parse_bool(v, where);
        };
    };
    auto list = [](std::vector<double>& field) {
        return [&field](const std::string& v, const std::string& where) {
            field = parse_list(v, where);
        };
    };

    schema["run"] = {
        {"seed", u64(c.seed)},
        {"mode", str(c.mode)},
        {"out_dir", str(c.out_dir)},
        {"selector", str(c.selector)},
    };
    schema["scenario"] = {
        {"trace", str(c.trace_path)},
        {"trace_kind", str(c.trace_kind)},
        {"trace_duration_s", num(c.trace_duration_s)},
        {"trace_step_s", num(c.trace_step_s)},
        {"trace_peak_mw", num(c.trace_peak_mw)},
        {"trace_low_mw", num(c.trace_low_mw)},
        {"trace_period_s", num(c.trace_period_s)},
        {"trace_day_fraction", num(c.trace_day_fraction)},
        {"trace_cloud_sigma", num(c.trace_cloud_sigma)},
        {"events", str(c.events_path)},
        {"event_count", integer(c.event_count)},
        {"store_capacity_mj", num(c.store_capacity_mj)},
        {"store_initial_mj", num(c.store_initial_mj)},
        {"store_efficiency", num(c.store_efficiency)},
        {"energy_per_mflop_mj", num(c.energy_per_mflop_mj)},
        {"compute_rate_flops", num(c.compute_rate_flops)},
        {"p_window_s", num(c.p_window_s)},
    };
    schema["network"] = {
        {"descriptor", str(c.descriptor_path)},
        {"profile_flops", list(c.profile_flops)},
        {"profile_accuracy", list(c.profile_accuracy)},
        {"num_classes", integer(c.num_classes)},
    };
    schema["toytrain"] = {
        {"classes", integer(c.data_classes)},
        {"n_per_class", integer(c.n_per_class)},
        {"noise_sigma", num(c.noise_sigma)},
        {"ridge_lambda", num(c.ridge_lambda)},
        {"data_seed", u64(c.data_seed)},
    };
    schema["search"] = {
        {"flops_target_ratio", num(c.flops_target_ratio)},
        {"size_target_ratio", num(c.size_target_ratio)},
        {"flops_target", num(c.flops_target)},
        {"size_target_bytes", num(c.size_target_bytes)},
        {"episodes", integer(c.episodes)},
        {"greedy_every", integer(c.greedy_every)},
        {"baseline_samples", integer(c.baseline_samples)},
        {"accuracy_mode", str(c.accuracy_mode)},
        {"prune_heads", boolean(c.prune_heads)},
        {"refit_heads", boolean(c.refit_heads)},
        {"surrogate_grid", integer(c.surrogate_grid)},
        {"bw_min", integer(c.bw_min)},
        {"bw_max", integer(c.bw_max)},
        {"ba_min", integer(c.ba_min)},
        {"ba_max", integer(c.ba_max)},
        {"lambda1", num(c.lambda1)},
        {"lambda2", num(c.lambda2)},
        {"hidden", integer(c.hidden)},
        {"actor_lr", num(c.actor_lr)},
        {"critic_lr", num(c.critic_lr)},
        {"buffer_capacity", integer(c.buffer_capacity)},
        {"batch_size", integer(c.batch_size)},
        {"sigma0", num(c.sigma0)},
        {"sigma_floor", num(c.sigma_floor)},
        {"updates_per_episode", integer(c.updates_per_episode)},
    };
    schema["runtime"] = {
        {"policy", str(c.runtime_policy)},
        {"energy_bins", integer(c.energy_bins)},
        {"power_bins", integer(c.power_bins)},
        {"entropy_bins", integer(c.entropy_bins)},
        {"eps0", num(c.eps0)},
        {"eps_decay", num(c.eps_decay)},
        {"eps_floor", num(c.eps_floor)},
        {"alpha_q", num(c.alpha_q)},
        {"gamma", num(c.q_gamma)},
        {"beta_energy_penalty", num(c.beta_energy_penalty)},
        {"entropy_threshold", num(c.entropy_threshold)},
        {"epochs", integer(c.epochs)},
    };

    std::istringstream ss(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#' || line[0] == ';') continue;
        const std::string where = origin + ":" + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ConfigError(where + ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            if (schema.find(section) == schema.end())
                throw ConfigError(where + ": unknown section [" + section + "]");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (section.empty()) throw ConfigError(where + ": key outside any [section]");
        auto& keys = schema[section];
        const auto it = keys.find(key);
        if (it == keys.end())
            throw ConfigError(where + ": unknown key '" + key + "' in [" + section + "]");
        it->second(value, where);
    }

    if (c.mode != "expected" && c.mode != "bernoulli")
        throw ConfigError(origin + ": run.mode must be 'expected' or 'bernoulli'");
    if (c.selector != "greedy" && c.selector != "final_exit_only")
        throw ConfigError(origin + ": run.selector must be 'greedy' or 'final_exit_only'");
    if (c.accuracy_mode != "surrogate" && c.accuracy_mode != "descriptor")
        throw ConfigError(origin + ": search.accuracy_mode must be 'surrogate' or 'descriptor'");
    if (c.profile_flops.size() != c.profile_accuracy.size())
        throw ConfigError(origin + ": profile_flops and profile_accuracy must match in length");
    return c;
}

std::string ExperimentConfig::render() const {
    std::ostringstream os;
    // out_dir is invocation plumbing, not experiment identity; identical
    // (config, seed) runs stay byte-identical wherever they are written.
    os << "[run]\n";
    os << "seed = " << seed << "\n";
    os << "mode = " << mode << "\n";
    os << "selector = " << selector << "\n";
    os << "[scenario]\n";
    os << "trace = " << trace_path << "\n";
    os << "trace_kind = " << trace_kind << "\n";
    os << "trace_duration_s = " << fmt_double(trace_duration_s) << "\n";
    os << "trace_step_s = " << fmt_double(trace_step_s) << "\n";
    os << "trace_peak_mw = " << fmt_double(trace_peak_mw) << "\n";
    os << "trace_low_mw = " << fmt_double(trace_low_mw) << "\n";
    os << "trace_period_s = " << fmt_double(trace_period_s) << "\n";
    os << "trace_day_fraction = " << fmt_double(trace_day_fraction) << "\n";
    os << "trace_cloud_sigma = " << fmt_double(trace_cloud_sigma) << "\n";
    os << "events = " << events_path << "\n";
    os << "event_count = " << event_count << "\n";
    os << "store_capacity_mj = " << fmt_double(store_capacity_mj) << "\n";
    os << "store_initial_mj = " << fmt_double(store_initial_mj) << "\n";
    os << "store_efficiency = " << fmt_double(store_efficiency) << "\n";
    os << "energy_per_mflop_mj = " << fmt_double(energy_per_mflop_mj) << "\n";
    os << "compute_rate_flops = " << fmt_double(compute_rate_flops) << "\n";
    os << "p_window_s = " << fmt_double(p_window_s) << "\n";
    os << "[network]\n";
    os << "descriptor = " << descriptor_path << "\n";
    os << "profile_flops = " << list_to_string(profile_flops) << "\n";
    os << "profile_accuracy = " << list_to_string(profile_accuracy) << "\n";
    os << "num_classes = " << num_classes << "\n";
    os << "[toytrain]\n";
    os << "classes = " << data_classes << "\n";
    os << "n_per_class = " << n_per_class << "\n";
    os << "noise_sigma = " << fmt_double(noise_sigma) << "\n";
    os << "ridge_lambda = " << fmt_double(ridge_lambda) << "\n";
    os << "data_seed = " << data_seed << "\n";
    os << "[search]\n";
    os << "flops_target_ratio = " << fmt_double(flops_target_ratio) << "\n";
    os << "size_target_ratio = " << fmt_double(size_target_ratio) << "\n";
    os << "flops_target = " << fmt_double(flops_target) << "\n";
    os << "size_target_bytes = " << fmt_double(size_target_bytes) << "\n";
    os << "episodes = " << episodes << "\n";
    os << "greedy_every = " << greedy_every << "\n";
    os << "baseline_samples = " << baseline_samples << "\n";
    os << "accuracy_mode = " << accuracy_mode << "\n";
    os << "prune_heads = " << (prune_heads ? "true" : "false") << "\n";
    os << "refit_heads = " << (refit_heads ? "true" : "false") << "\n";
    os << "surrogate_grid = " << surrogate_grid << "\n";
    os << "bw_min = " << bw_min << "\n";
    os << "bw_max = " << bw_max << "\n";
    os << "ba_min = " << ba_min << "\n";
    os << "ba_max = " << ba_max << "\n";
    os << "lambda1 = " << fmt_double(lambda1) << "\n";
    os << "lambda2 = " << fmt_double(lambda2) << "\n";
    os << "hidden = " << hidden << "\n";
    os << "actor_lr = " << fmt_double(actor_lr) << "\n";
    os << "critic_lr = " << fmt_double(critic_lr) << "\n";
    os << "buffer_capacity = " << buffer_capacity << "\n";
    os << "batch_size = " << batch_size << "\n";
    os << "sigma0 = " << fmt_double(sigma0) << "\n";
    os << "sigma_floor = " << fmt_double(sigma_floor) << "\n";
    os << "updates_per_episode = " << updates_per_episode << "\n";
    os << "[runtime]\n";
    os << "policy = " << runtime_policy << "\n";
    os << "energy_bins = " << energy_bins << "\n";
    os << "power_bins = " << power_bins << "\n";
    os << "entropy_bins = " << entropy_bins << "\n";
    os << "eps0 = " << fmt_double(eps0) << "\n";
    os << "eps_decay = " << fmt_double(eps_decay) << "\n";
    os << "eps_floor = " << fmt_double(eps_floor) << "\n";
    os << "alpha_q = " << fmt_double(alpha_q) << "\n";
    os << "gamma = " << fmt_double(q_gamma) << "\n";
    os << "beta_energy_penalty = " << fmt_double(beta_energy_penalty) << "\n";
    os << "entropy_threshold = " << fmt_double(entropy_threshold) << "\n";
    os << "epochs = " << epochs << "\n";
    return os.str();
}

std::string ExperimentConfig::hash() const {
    const uint64_t h = hash_name(render());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace ehmex
