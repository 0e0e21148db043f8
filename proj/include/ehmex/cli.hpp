#pragma once

#include <string>
#include <vector>

#include "ehmex/config.hpp"
#include "ehmex/ehsim.hpp"
#include "ehmex/netcore.hpp"
#include "ehmex/toytrain.hpp"

namespace ehmex {

// Experiment harness behind the CLI subcommands. Every command writes its
// artifacts under config.out_dir; identical (config, seed) runs produce
// byte-identical files. Exceptions propagate to the CLI layer, which maps
// them to exit codes and machine-readable error JSON.

// Scenario assembly from a config: trace/events from files or generated from
// the run seed's named sub-streams; exit profiles from the profile table or
// from the descriptor (accuracy measured on the toy dataset).
Scenario build_scenario(const ExperimentConfig& cfg);

void cmd_gen_trace(const ExperimentConfig& cfg);
void cmd_gen_events(const ExperimentConfig& cfg);
void cmd_gen_net(const ExperimentConfig& cfg);
void cmd_simulate(const ExperimentConfig& cfg);
void cmd_search(const ExperimentConfig& cfg);
void cmd_runtime(const ExperimentConfig& cfg);
void cmd_report(const std::vector<std::string>& report_json_paths, const std::string& out_csv);

}  // namespace ehmex
