#include <doctest.h>

#include <cmath>

#include "ehmex/errors.hpp"
#include "ehmex/runtime.hpp"
#include "ehmex/tracegen.hpp"

using namespace ehmex;

namespace {

Scenario paper_scenario(double peak_mw, double duration_s, int events, uint64_t seed) {
    Scenario sc;
    TraceGenParams params;
    params.duration_s = duration_s;
    params.step_s = 10.0;
    params.peak_mw = peak_mw;
    sc.trace = gen_trace(TraceKind::solar_like, params, seed);
    sc.events = EventStream::generate(events, sc.trace.duration_s(), seed + 1);
    sc.profiles = profiles_from_table({0.4452e6, 1.2602e6, 1.6202e6}, {0.649, 0.720, 0.730}, 1.5);
    sc.store.capacity_mj = 10.0;
    return sc;
}

}  // namespace

TEST_CASE("discretize: floor binning with edge clamping") {
    GridDim energy{"energy_mj", 0.0, 10.0, 0.5};
    CHECK(energy.bins() == 20);
    CHECK(energy.bin(0.0) == 0);
    CHECK(energy.bin(2.3) == 4);  // floor(2.3 / 0.5)
    CHECK(energy.bin(999.0) == 19);  // clamp to the top bin
    CHECK(energy.bin(-1.0) == 0);

    GridDim power{"p", 0.0, 1.0, 0.1};
    QTable table({energy, power}, 3);
    CHECK(table.num_states() == 200);
    CHECK(table.state_index({0.0, 0.0}) == 0);
    CHECK(table.state_index({2.3, 0.0}) == 4 * 10);
}

TEST_CASE("select_exit") {
    GridDim d{"x", 0.0, 1.0, 1.0};
    QTable t({d}, 3);
    Rng rng(1);

    SUBCASE("single affordable exit wins regardless of Q") {
        t.set(0, 0, -5.0);
        CHECK(select_exit(t, 0, {1, 0, 0}, 0.0, rng) == 0);
    }
    SUBCASE("argmax over affordable actions") {
        t.set(0, 0, 0.1);
        t.set(0, 1, 0.9);
        t.set(0, 2, 0.3);
        CHECK(select_exit(t, 0, {1, 1, 1}, 0.0, rng) == 1);
        // best action masked out: fall back to the best affordable
        CHECK(select_exit(t, 0, {1, 0, 1}, 0.0, rng) == 2);
    }
    SUBCASE("ties break to the lowest exit index") {
        t.set(0, 0, 0.5);
        t.set(0, 1, 0.5);
        t.set(0, 2, 0.1);
        CHECK(select_exit(t, 0, {1, 1, 1}, 0.0, rng) == 0);
    }
    SUBCASE("empty mask is a contract violation") {
        CHECK_THROWS_AS(select_exit(t, 0, {0, 0, 0}, 0.0, rng), StateError);
    }
    SUBCASE("epsilon = 1 explores uniformly over the affordable set") {
        t.set(0, 1, 99.0);
        int counts[3] = {0, 0, 0};
        for (int i = 0; i < 3000; ++i) ++counts[select_exit(t, 0, {1, 0, 1}, 1.0, rng)];
        CHECK(counts[1] == 0);
        CHECK(counts[0] > 1200);
        CHECK(counts[2] > 1200);
    }
}

TEST_CASE("q_update arithmetic (Eq. 16)") {
    GridDim d{"x", 0.0, 4.0, 1.0};
    QTable t({d}, 2);

    SUBCASE("plug-in example") {
        // Q = 0, r = 1, gamma = 0.9, alpha = 0.5, max Q(s') = 0 -> 0.5
        t.update(0, 0, 1.0, 1, 0.5, 0.9);
        CHECK(t.get(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
        // only entry (0,0) changed
        CHECK(t.get(0, 1) == 0.0);
        CHECK(t.get(1, 0) == 0.0);
    }
    SUBCASE("alpha = 0 leaves the entry unchanged") {
        t.set(0, 0, 0.7);
        t.update(0, 0, 5.0, 1, 0.0, 0.9);
        CHECK(t.get(0, 0) == 0.7);
    }
    SUBCASE("r = Q with gamma = 0 is a fixed point") {
        t.set(2, 1, 0.42);
        t.update(2, 1, 0.42, 3, 0.5, 0.0);
        CHECK(t.get(2, 1) == doctest::Approx(0.42).epsilon(1e-15));
    }
}

TEST_CASE("incremental decision is forced to stop at limits") {
    Scenario sc = paper_scenario(0.05, 4000.0, 5, 3);
    RuntimeParams params;
    QLearningSelector sel(sc, params, /*incremental=*/true, 5);

    // the simulator only asks extend() when a next exit exists and the
    // incremental cost is affordable; the selector itself answers the query
    ExtendContext ctx;
    ctx.current_exit = 0;
    ctx.level_mj = 5.0;
    ctx.charge_power_mw = 0.01;
    ctx.entropy_nats = 0.3;
    ctx.incremental_cost_mj = 1.2;
    ctx.profiles = &sc.profiles;
    CHECK_NOTHROW(sel.extend(ctx));

    // a non-incremental q-learning selector never extends
    QLearningSelector plain(sc, params, /*incremental=*/false, 5);
    CHECK_FALSE(plain.extend(ctx));

    // threshold fallback: one-hot confidence (zero entropy) stops
    EntropyThresholdSelector thr(std::log(10.0) / 2.0);
    ExtendContext confident = ctx;
    confident.entropy_nats = 0.0;
    CHECK_FALSE(thr.extend(confident));
    ExtendContext unsure = ctx;
    unsure.entropy_nats = 2.0;
    CHECK(thr.extend(unsure));
}

TEST_CASE("static_lut mode is definitionally the greedy static simulation") {
    Scenario sc = paper_scenario(0.03, 30000.0, 120, 11);
    RuntimeParams params;
    const RunOnlineResult lut = run_online(sc, RuntimePolicyMode::static_lut, params,
                                           AccuracyMode::expected, 21);
    GreedyStaticSelector greedy;
    const SimReport direct = simulate(sc, greedy, AccuracyMode::expected, 21);
    CHECK(lut.report.to_json() == direct.to_json());
}

TEST_CASE("with stationary abundant power the learner converges to the greedy choice") {
    Scenario sc;
    PowerTrace tr;
    for (double t = 0.0; t <= 200000.0; t += 100.0) {
        tr.time_s.push_back(t);
        tr.power_mw.push_back(5.0);  // plenty
    }
    sc.trace = tr;
    sc.events = EventStream::generate(1500, tr.duration_s(), 2);
    sc.profiles = profiles_from_table({0.4452e6, 1.2602e6, 1.6202e6}, {0.649, 0.720, 0.730}, 1.5);
    sc.store.capacity_mj = 10.0;
    RuntimeParams params;
    params.epochs = 5;
    const RunOnlineResult res =
        run_online(sc, RuntimePolicyMode::q_learning, params, AccuracyMode::expected, 7);
    // in the final epoch the exploitation choice is the max-accuracy exit
    int final_exit_count = 0, processed = 0;
    for (const auto& r : res.report.records) {
        if (r.exit_index < 0) continue;
        ++processed;
        if (r.exit_index == 2) ++final_exit_count;
    }
    REQUIRE(processed > 0);
    CHECK(static_cast<double>(final_exit_count) / processed > 0.9);
}

TEST_CASE("q-table serialization reproduces behavior under epsilon = 0") {
    Scenario sc = paper_scenario(0.02, 40000.0, 200, 13);
    RuntimeParams params;
    params.epochs = 2;
    const RunOnlineResult trained =
        run_online(sc, RuntimePolicyMode::q_learning, params, AccuracyMode::expected, 31);

    const QTable reloaded = QTable::from_json(trained.exit_table.to_json());
    CHECK(reloaded.to_json() == trained.exit_table.to_json());

    // frozen-table replay: argmax choices must be identical state by state
    const int states = trained.exit_table.num_states();
    const std::vector<char> all(static_cast<size_t>(trained.exit_table.num_actions()), 1);
    for (int s = 0; s < states; ++s)
        CHECK(trained.exit_table.argmax(s, all) == reloaded.argmax(s, all));
}

TEST_CASE("run_online with a frozen-epsilon table is deterministic") {
    Scenario sc = paper_scenario(0.02, 20000.0, 80, 17);
    RuntimeParams params;
    params.epochs = 2;
    const RunOnlineResult a =
        run_online(sc, RuntimePolicyMode::q_learning, params, AccuracyMode::expected, 99);
    const RunOnlineResult b =
        run_online(sc, RuntimePolicyMode::q_learning, params, AccuracyMode::expected, 99);
    CHECK(a.report.to_json() == b.report.to_json());
    CHECK(a.exit_table.to_json() == b.exit_table.to_json());
}

TEST_CASE("incremental mode never selects a shallower exit than computed") {
    Scenario sc = paper_scenario(0.05, 30000.0, 150, 23);
    RuntimeParams params;
    params.epochs = 2;
    const RunOnlineResult res = run_online(sc, RuntimePolicyMode::q_learning_incremental, params,
                                           AccuracyMode::expected, 41);
    for (const auto& r : res.report.records) {
        if (r.exit_index < 0) continue;
        // energy spent equals the realized exit's cumulative cost: extensions
        // only ever deepen the exit
        CHECK(r.energy_mj ==
              sc.profiles[static_cast<size_t>(r.exit_index)].energy_cost_mj);
    }
}
