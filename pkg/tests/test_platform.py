import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvfsim.platform import (ClusterSpec, ClusterTruth, ConfigError, Configuration, GroundTruthParams, KernelParams,
                             Machine, PlatformSpec, default_machine, default_tx2_spec, ground_truth_cpu_power,
                             ground_truth_mem_power, ground_truth_time, ladder_index, load_machine,
                             machine_from_dict, machine_to_dict, save_machine, snap_to_ladder, true_mb, truth_grid)


def unit_machine(alpha=1.0, beta=0.5, v0=0.0, v1=1.0, delta0=0.0, delta1=0.0):
    """One cluster, one core, ipc 1 and every efficiency at 1."""
    spec = PlatformSpec(clusters=(ClusterSpec("c", 1, (1.0, 2.04), "c"),), mem_freqs_ghz=(0.9, 1.87))
    truth = GroundTruthParams(
        classes={"c": ClusterTruth(ipc=1.0, eff={1: 1.0}, bw_gbps={1: 1.0}, alpha=alpha, beta=beta, v0=v0, v1=v1,
                                   iota=0.1)},
        delta0=delta0, delta1=delta1)
    return Machine(spec, truth)


def test_default_ladders_contain_named_points():
    p = default_tx2_spec()
    assert {1.11, 1.57, 2.04} <= set(p.core_freqs_ghz)
    assert {0.80, 1.33, 1.87} <= set(p.mem_freqs_ghz)
    assert p.fc_max == 2.04 and p.fm_max == 1.87
    assert [c.core_count for c in p.clusters] == [2, 4]


def test_options_are_powers_of_two_per_cluster():
    assert default_tx2_spec().options() == [(0, 1), (0, 2), (1, 1), (1, 2), (1, 4)]


@pytest.mark.parametrize("ladder", [(), (1.0, 1.0), (2.0, 1.0), (0.0, 1.0)])
def test_bad_core_ladder_rejected(ladder):
    with pytest.raises(ConfigError):
        ClusterSpec("x", 2, ladder)


def test_clusters_must_share_core_ladder():
    with pytest.raises(ConfigError):
        PlatformSpec(clusters=(ClusterSpec("a", 1, (1.0, 2.0)), ClusterSpec("b", 1, (1.0, 3.0))),
                     mem_freqs_ghz=(1.0,))


def test_validate_rejects_off_grid_configuration():
    p = default_tx2_spec()
    for cfg in (Configuration("denver", 4, 2.04, 1.87), Configuration("a57", 3, 2.04, 1.87),
                Configuration("denver", 1, 1.5, 1.87), Configuration("denver", 1, 2.04, 1.0),
                Configuration("big", 1, 2.04, 1.87)):
        with pytest.raises(ConfigError):
            p.validate(cfg)


def test_empty_task_takes_no_time():
    m = default_machine()
    assert ground_truth_time(m, KernelParams("e", 0.0, 0.0), Configuration("a57", 2, 1.11, 0.8)) == 0.0


def test_pure_compute_hand_value():
    m = unit_machine()
    t = ground_truth_time(m, KernelParams("k", 2.04, 0.0), Configuration("c", 1, 2.04, 1.87))
    assert t == pytest.approx(1.0, abs=1e-12)


def test_kappa_zero_removes_memory_frequency():
    m = default_machine()
    k = KernelParams("k", 0.01, 0.02, kappa=0.0, mu=0.0)
    a = ground_truth_time(m, k, Configuration("denver", 1, 1.27, 0.8))
    b = ground_truth_time(m, k, Configuration("denver", 1, 1.27, 1.87))
    assert a == b


def test_cpu_power_hand_value_and_limits():
    m = unit_machine(alpha=1.0, beta=0.5, v0=0.0, v1=1.0)
    k = KernelParams("k", 1.0, 0.0)
    cfg = Configuration("c", 1, 1.0, 1.87)
    assert ground_truth_cpu_power(m, k, cfg, mb_true=0.0) == pytest.approx(1.0, abs=1e-12)
    assert ground_truth_cpu_power(m, k, cfg, mb_true=1.0) == pytest.approx(0.5, abs=1e-12)
    m0 = unit_machine(alpha=0.0)
    assert ground_truth_cpu_power(m0, k, cfg, mb_true=0.3) == 0.0
    with pytest.raises(ConfigError):
        ground_truth_cpu_power(m, k, cfg, mb_true=1.5)


def test_mem_power_hand_values():
    k = KernelParams("k", 1.0, 0.0)
    cfg = Configuration("c", 1, 1.0, 1.87)
    assert ground_truth_mem_power(unit_machine(), k, cfg) == 0.0
    assert ground_truth_mem_power(unit_machine(delta0=1.0), k, cfg, 0.0) == pytest.approx(1.87)
    m = unit_machine(delta1=0.3)
    assert ground_truth_mem_power(m, k, cfg, 4.0) == pytest.approx(2 * ground_truth_mem_power(m, k, cfg, 2.0))


def test_pure_compute_denver_a57_ratio_is_ipc_ratio():
    m = default_machine()
    k = KernelParams("k", 0.05, 0.0)
    td = ground_truth_time(m, k, Configuration("denver", 1, 1.57, 1.87))
    ta = ground_truth_time(m, k, Configuration("a57", 1, 1.57, 1.87))
    tr = m.truth
    assert ta / td == pytest.approx(tr.classes["denver"].ipc / tr.classes["a57"].ipc, rel=1e-12)


kernels = st.builds(KernelParams, st.just("k"), st.floats(0, 0.1), st.floats(1e-4, 0.1), st.floats(0.01, 1.0),
                    st.floats(0, 0.5))


@given(kernels)
@settings(max_examples=60, deadline=None)
def test_time_non_increasing_in_both_frequencies(k):
    g = truth_grid(default_machine(), k)
    assert np.all(np.diff(g.time, axis=1) <= 1e-15)
    assert np.all(np.diff(g.time, axis=2) <= 1e-15)


@given(kernels)
@settings(max_examples=30, deadline=None)
def test_grid_matches_pointwise_oracle(k):
    m = default_machine()
    g = truth_grid(m, k)
    p = m.platform
    for o, (ci, n) in enumerate(p.options()):
        cfg = Configuration(p.clusters[ci].name, n, 1.42, 1.07)
        i, j = ladder_index(p.core_freqs_ghz, 1.42), ladder_index(p.mem_freqs_ghz, 1.07)
        assert g.time[o, i, j] == pytest.approx(ground_truth_time(m, k, cfg), rel=1e-12)
        assert g.cpu_w[o, i, j] == pytest.approx(ground_truth_cpu_power(m, k, cfg), rel=1e-12)
        assert g.mem_w[o, i, j] == pytest.approx(ground_truth_mem_power(m, k, cfg), rel=1e-12)
        assert 0.0 <= true_mb(m, k, cfg) <= 1.0


def test_noise_is_seeded():
    m = default_machine()
    noisy = Machine(m.platform, dataclasses.replace(m.truth, noise=0.05))
    k = KernelParams("k", 0.01, 0.01)
    cfg = Configuration("denver", 1, 2.04, 1.87)
    a = [ground_truth_time(noisy, k, cfg, np.random.default_rng(3)) for _ in range(2)]
    assert a[0] == a[1]
    assert ground_truth_time(noisy, k, cfg) == ground_truth_time(m, k, cfg)


def test_machine_roundtrip(tmp_path):
    m = default_machine()
    assert machine_from_dict(json.loads(json.dumps(machine_to_dict(m)))) == m
    save_machine(m, tmp_path / "m.json")
    assert load_machine(tmp_path / "m.json") == m
    assert load_machine(None) == m
    with pytest.raises(ConfigError):
        machine_from_dict({"platform": {}})


@given(st.floats(0.5, 2.5))
def test_snap_returns_nearest_ladder_value(x):
    lad = default_tx2_spec().core_freqs_ghz
    s = snap_to_ladder(x, lad)
    assert s in lad
    assert all(abs(s - x) <= abs(v - x) + 1e-12 for v in lad)


def test_snap_tie_goes_low():
    assert snap_to_ladder(1.5, (1.0, 2.0)) == 1.0
