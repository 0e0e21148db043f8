#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ehmex/ehsim.hpp"
#include "ehmex/rng.hpp"

namespace ehmex {

// Online exit selection with two tabular Q-learners: one over the
// (stored energy, charging efficiency) state choosing the exit, and one over
// (result entropy, stored energy) deciding whether to extend the inference
// to the next exit.

struct GridDim {
    std::string variable;
    double min = 0.0;
    double max = 1.0;
    double step = 0.1;

    int bins() const;
    // Floor-binning with clamping to the grid edges.
    int bin(double value) const;
};

class QTable {
public:
    QTable() = default;
    QTable(std::vector<GridDim> dims, int num_actions);

    int num_states() const;
    int num_actions() const { return num_actions_; }
    int state_index(const std::vector<double>& values) const;

    double get(int state, int action) const;
    void set(int state, int action, double v);

    // Greedy action among `allowed` (ties break to the lowest index).
    int argmax(int state, const std::vector<char>& allowed) const;

    // Eq.-(16) update: Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).
    // Only the (s, a) entry changes. With s' < 0 the bootstrap term is 0.
    void update(int s, int a, double r, int s_next, double alpha, double gamma);

    std::string to_json() const;
    static QTable from_json(const std::string& text);

    const std::vector<GridDim>& dims() const { return dims_; }
    const std::vector<double>& values() const { return q_; }

private:
    std::vector<GridDim> dims_;
    int num_actions_ = 0;
    std::vector<double> q_;
};

// Epsilon-greedy over the affordable exits; the mask must be non-empty.
int select_exit(const QTable& table, int state, const std::vector<char>& affordable, double eps,
                Rng& rng);

struct RuntimeParams {
    int energy_bins = 20;
    int power_bins = 10;
    int entropy_bins = 8;
    double eps0 = 0.2;
    double eps_decay = 0.995;  // per event
    double eps_floor = 0.01;
    double alpha_q = 0.3;
    double gamma = 0.9;
    double beta_energy_penalty = 0.0;  // incremental-decision energy penalty
    double entropy_threshold = -1.0;   // <0 = ln(num_classes)/2
    int epochs = 1;
};

enum class RuntimePolicyMode { static_lut, q_learning, q_learning_incremental };

RuntimePolicyMode runtime_mode_from_name(const std::string& s);
const char* runtime_mode_name(RuntimePolicyMode m);

// Q-learning selector usable inside ehsim::simulate. Learns online: each
// decision forms a transition to the NEXT decision's state, with reward =
// accuracy of the realized exit (missed events in between form no
// transition). The continue/stop table is credited per decision with the
// realized accuracy minus beta * (extra energy) / capacity.
class QLearningSelector : public ExitSelector {
public:
    QLearningSelector(const Scenario& scenario, const RuntimeParams& params, bool incremental,
                      uint64_t seed);

    const char* name() const override { return "q_learning"; }
    int choose(const DecisionContext& ctx) override;
    bool extend(const ExtendContext& ctx) override;
    void observe(const EventOutcome& outcome) override;

    const QTable& exit_table() const { return exit_table_; }
    const QTable& continue_table() const { return cont_table_; }
    QTable& exit_table() { return exit_table_; }
    QTable& continue_table() { return cont_table_; }
    double epsilon() const { return eps_; }
    void set_epsilon(double eps) { eps_ = eps; }

private:
    RuntimeParams params_;
    bool incremental_ = false;
    double capacity_mj_ = 0.0;
    QTable exit_table_;
    QTable cont_table_;
    double eps_ = 0.0;
    Rng rng_;

    // open transition: last decision waiting for its successor state
    bool have_pending_ = false;
    int pending_state_ = -1;
    int pending_action_ = -1;
    double pending_reward_ = 0.0;
    // decisions taken for the event currently being processed
    int current_state_ = -1;
    int current_action_ = -1;
    std::vector<std::pair<int, int>> pending_cont_;  // (state, action in {stop=0, continue=1})
};

// Non-learning incremental baseline: greedy exit choice, then continue while
// entropy > threshold and the incremental cost is affordable.
class EntropyThresholdSelector : public ExitSelector {
public:
    EntropyThresholdSelector(double threshold_nats) : threshold_(threshold_nats) {}
    const char* name() const override { return "entropy_threshold"; }
    int choose(const DecisionContext& ctx) override;
    bool extend(const ExtendContext& ctx) override;

private:
    double threshold_;
    GreedyStaticSelector greedy_;
};

struct RunOnlineResult {
    SimReport report;            // final epoch
    std::vector<SimReport> epoch_reports;
    QTable exit_table;
    QTable continue_table;
    std::string mode;
};

// Runs the scenario under the requested policy. static_lut reproduces the
// greedy static selector exactly; q_learning modes learn across `epochs`
// passes over the same scenario (tables and epsilon carry over) and report
// the final pass.
RunOnlineResult run_online(const Scenario& scenario, RuntimePolicyMode mode,
                           const RuntimeParams& params, AccuracyMode acc_mode, uint64_t seed);

}  // namespace ehmex
