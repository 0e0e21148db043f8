#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "ehmex/netcore.hpp"

namespace ehmex {

// Discrete-time intermittent-inference simulation over a harvested power
// trace: the energy store charges between transactions, events trigger exit
// selection, inference occupies the device, and incremental inference may
// extend a result to a deeper exit.

struct PowerTrace {
    std::vector<double> time_s;    // strictly increasing
    std::vector<double> power_mw;  // >= 0

    double duration_s() const { return time_s.empty() ? 0.0 : time_s.back(); }
    double max_power_mw() const;
    double power_at(double t) const;  // linear interpolation inside the trace
    // Trapezoidal integral of power over [t0, t1] in mJ (no efficiency).
    double integral_mj(double t0, double t1) const;

    void validate() const;
    static PowerTrace load_csv(const std::string& path);
    void save_csv(const std::string& path) const;
};

// Harvested energy over [t0, t1]: trapezoidal integral times the harvester
// efficiency. Additive over adjacent intervals.
double harvest(const PowerTrace& trace, double t0, double t1, double efficiency = 1.0);

struct EventStream {
    std::vector<double> time_s;  // strictly increasing, within trace duration

    int count() const { return static_cast<int>(time_s.size()); }
    void validate(double trace_duration_s) const;
    static EventStream load_csv(const std::string& path);
    void save_csv(const std::string& path) const;
    // N event times uniform over (0, duration), sorted, deterministic by seed.
    static EventStream generate(int n, double duration_s, uint64_t seed);
};

struct EnergyStore {
    double capacity_mj = 10.0;
    double level_mj = 0.0;
    double harvest_efficiency = 1.0;
};

struct Scenario {
    PowerTrace trace;
    EventStream events;
    EnergyStore store;
    std::vector<ExitProfile> profiles;  // sorted by energy cost
    double energy_per_mflop_mj = 1.5;
    double compute_rate_flops = 2.0e5;  // per-inference latency = flops / rate
    double p_window_s = 30.0;           // trailing window for charging efficiency P
    int num_classes = 10;

    void validate() const;
    double exit_latency_s(int exit_index) const;
};

enum class AccuracyMode { expected, bernoulli };

enum class MissReason { not_missed, insufficient_energy, device_busy };

struct EventRecord {
    int index = 0;
    double time_s = 0.0;
    int exit_index = -1;  // -1 when missed
    MissReason miss = MissReason::not_missed;
    double acc = 0.0;        // expected accuracy or 0/1 Bernoulli outcome
    double latency_s = 0.0;  // stall + inference time (0 when missed)
    double inference_latency_s = 0.0;  // compute time only
    double energy_mj = 0.0;  // total energy drawn for this event
    double level_before_mj = 0.0;
    double level_after_mj = 0.0;
    double charge_power_mw = 0.0;  // trailing-window P at arrival
};

struct SimReport {
    std::vector<EventRecord> records;
    double e_total_mj = 0.0;     // harvested over the whole trace
    double harvested_mj = 0.0;   // harvested up to the last event
    double spent_mj = 0.0;
    int processed = 0;
    int missed = 0;
    double n_correct = 0.0;      // sum of Acc_j over processed events
    double iepmj = 0.0;
    double avg_acc_all = 0.0;
    double avg_acc_processed = 0.0;
    double mean_event_latency_s = 0.0;      // over processed events
    double mean_inference_latency_s = 0.0;  // compute time only
    std::vector<double> exit_fraction_v;
    double missed_fraction = 0.0;

    // Recomputes every aggregate from the records (used on construction and
    // by the invariant suite).
    void finalize(int num_exits, double e_total);
    std::string to_json() const;  // deterministic, fixed key order
};

// Interesting events per millijoule: N_correct / E_total.
double iepmj(const SimReport& report);
// The other side of the identity: (N / E_total) * mean(Acc_j over all N).
double iepmj_identity_form(const SimReport& report);

// p_i = (events exiting at i) / N, plus the missed fraction; sums to 1.
std::vector<double> exit_fraction(const SimReport& report);

struct DecisionContext {
    int event_index = 0;
    double time_s = 0.0;
    double level_mj = 0.0;
    double charge_power_mw = 0.0;
    const std::vector<ExitProfile>* profiles = nullptr;
    std::vector<char> affordable;  // per exit
};

struct ExtendContext {
    int event_index = 0;
    double time_s = 0.0;
    int current_exit = 0;
    double level_mj = 0.0;
    double charge_power_mw = 0.0;
    double entropy_nats = 0.0;
    double incremental_cost_mj = 0.0;
    const std::vector<ExitProfile>* profiles = nullptr;
};

struct EventOutcome {
    int event_index = 0;
    int exit_index = -1;
    MissReason miss = MissReason::not_missed;
    double acc = 0.0;
    double level_before_mj = 0.0;
    double level_after_mj = 0.0;
    double charge_power_mw = 0.0;
    double extra_energy_mj = 0.0;  // energy beyond the first selection
};

class ExitSelector {
public:
    virtual ~ExitSelector() = default;
    virtual const char* name() const = 0;
    // Picks an exit from ctx.affordable (at least one entry is true), or
    // returns -1 to decline the event (recorded as missed).
    virtual int choose(const DecisionContext& ctx) = 0;
    // Second decision: extend the inference to the next exit?
    virtual bool extend(const ExtendContext&) { return false; }
    // Called once per event with the realized outcome (learning hook).
    virtual void observe(const EventOutcome&) {}
    // Final-exit-style policies wait (stall) until their exit is affordable.
    virtual bool stall_until_affordable() const { return false; }
};

// Highest-accuracy exit whose energy cost fits the current level; never
// extends incrementally.
class GreedyStaticSelector : public ExitSelector {
public:
    const char* name() const override { return "greedy_static"; }
    int choose(const DecisionContext& ctx) override;
};

// Always the final exit (the single-exit baseline an uncompressed
// deployment is forced into). By default it stalls until that exit is
// affordable; with stall = false it declines instead, missing the event.
class FinalExitOnlySelector : public ExitSelector {
public:
    explicit FinalExitOnlySelector(bool stall = true) : stall_(stall) {}
    const char* name() const override { return "final_exit_only"; }
    int choose(const DecisionContext& ctx) override;
    bool stall_until_affordable() const override { return stall_; }

private:
    bool stall_;
};

// Runs the scenario. Throws SimulationFault if the selector returns an
// unaffordable exit or energy accounting breaks (conservation is asserted at
// every event to 1e-9 mJ).
SimReport simulate(const Scenario& scenario, ExitSelector& selector, AccuracyMode mode,
                   uint64_t seed);

void save_events_csv(const SimReport& report, const std::string& path);

}  // namespace ehmex
