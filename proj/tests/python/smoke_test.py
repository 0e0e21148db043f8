"""Smoke tests for the ehmex Python bindings."""

import math

import ehmex


def approx(a, b, tol=1e-9):
    assert abs(a - b) <= tol * max(1.0, abs(a), abs(b)), f"{a} != {b}"


def test_entropy():
    approx(ehmex.entropy([1.0, 0.0, 0.0]), 0.0)
    approx(ehmex.entropy([0.1] * 10), math.log(10.0))
    approx(ehmex.entropy([0.5, 0.5]), math.log(2.0))


def test_flops():
    assert ehmex.flops_of_layer("fc", 120, 10) == 1200
    assert ehmex.flops_of_layer("conv", 3, 16, kernel=5, out_h=28, out_w=28) == 940800
    assert ehmex.flops_of_layer("relu", 8, 8) == 0


def test_softmax():
    p = ehmex.softmax([0.0, 0.0, 0.0, 0.0])
    approx(sum(p), 1.0)
    approx(p[0], 0.25)


def test_quantization():
    values, scale, err = ehmex.quantize_weights([0.0, 0.0, 0.0], 4)
    assert scale == 1.0 and err == 0.0 and values == [0.0, 0.0, 0.0]
    values, scale, err = ehmex.quantize_weights([-1.0, 1.0], 8)
    assert max(abs(v - w) for v, w in zip(values, [-1.0, 1.0])) <= scale / 2
    acts = ehmex.quantize_activations([10.0], 4, 0.5)
    approx(acts[0], 7.5)


def test_importance():
    s = ehmex.channel_importance([1.0, 0.5, 3.0, -1.0, 0.5, 0.0], 2, 3, 1)
    assert s == [2.0, 1.0, 3.0]
    assert ehmex.channels_to_drop(s, 2) == [1]


def test_action_mapping():
    assert ehmex.map_action_to_bitwidth(0.0, 1, 8) == 1
    assert ehmex.map_action_to_bitwidth(1.0, 1, 8) == 8
    assert ehmex.map_action_to_bitwidth(0.5, 1, 8) == 4  # round-half-to-even
    approx(ehmex.map_action_to_alpha(0.0), 0.05)
    approx(ehmex.map_action_to_alpha(1.0), 1.0)
    approx(ehmex.snap_alpha(0.512), 0.5)


def test_harvest():
    time_s = [0.0, 1.0, 2.0, 3.0, 10.0]
    power = [2.0] * 5
    approx(ehmex.harvest(time_s, power, 1.0, 4.0), 6.0)
    approx(ehmex.harvest(time_s, power, 3.0, 3.0), 0.0)


def test_q_update():
    approx(ehmex.q_update(0.0, 1.0, 0.0, 0.5, 0.9), 0.5)
    approx(ehmex.q_update(0.7, 5.0, 1.0, 0.0, 0.9), 0.7)  # alpha = 0


def test_cardinality():
    assert ehmex.search_space_cardinality(1) == "1280"
    assert ehmex.search_space_cardinality(2) == "1638400"
    approx(ehmex.search_space_log10(1), math.log10(1280.0))


def test_simulation_end_to_end():
    time_s = [float(t) for t in range(0, 2001, 10)]
    power = [50.0] * len(time_s)
    events = [50.0 + 90.0 * i for i in range(20)]
    rep = ehmex.simulate_profile_scenario(
        time_s, power, events, [0.4452e6, 1.2602e6, 1.6202e6], [0.649, 0.720, 0.730]
    )
    assert rep["processed"] == 20
    approx(rep["avg_acc_processed"], 0.730)
    # Eq. 1 identity on the aggregates
    n = rep["processed"] + rep["missed"]
    approx(rep["iepmj"], (n / rep["e_total_mj"]) * rep["avg_acc_all"], tol=1e-12)
    assert rep["exit_fraction"][2] == 1.0


def test_dataset_checksum_determinism():
    a = ehmex.toy_dataset_checksum(10, 5, 0.3, 7)
    b = ehmex.toy_dataset_checksum(10, 5, 0.3, 7)
    c = ehmex.toy_dataset_checksum(10, 5, 0.3, 8)
    assert a == b
    assert a != c


if __name__ == "__main__":
    tests = [v for k, v in sorted(globals().items()) if k.startswith("test_")]
    for t in tests:
        t()
        print(f"ok {t.__name__}")
    print(f"{len(tests)} python smoke tests passed")
