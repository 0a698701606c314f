import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvfsim.mpr import MprModel
from dvfsim.models import (DEFAULT_SAMPLE_FC, UNATTRIBUTED, IdlePowerTable, KernelProfile, ModelError, ModelSet,
                           SyntheticLadder, accuracy, attribute_idle, build_tables, estimate_mb, predict_cpu_power,
                           predict_mem_power, predict_time, profile_from_oracle, random_kernels, sample_options,
                           table_entry_count)
from dvfsim.platform import ClusterSpec, PlatformSpec, ground_truth_time


def test_estimate_mb_examples():
    assert estimate_mb(1.0, 2.0, 2.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    assert estimate_mb(1.0, 1.0, 2.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert estimate_mb(1.0, 1.5, 2.0, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_estimate_mb_errors_and_clamp():
    with pytest.raises(ZeroDivisionError):
        estimate_mb(1.0, 1.0, 1.5, 1.5)
    with pytest.raises(ModelError):
        estimate_mb(0.0, 1.0, 2.0, 1.0)
    assert estimate_mb(1.0, 0.9, 2.0, 1.0) == 1.0
    assert estimate_mb(1.0, 2.5, 2.0, 1.0) == 0.0


@given(st.floats(0, 1), st.floats(1e-3, 10), st.sampled_from([(2.04, 1.11), (2.04, 0.65), (1.73, 1.42)]))
def test_estimate_mb_round_trip(mb0, t, fpair):
    fc, fcp = fpair
    tp = t * ((1 - mb0) * (fc / fcp) + mb0)
    assert estimate_mb(t, tp, fc, fcp) == pytest.approx(mb0, abs=1e-9)


def test_comp_component_by_hand():
    zero = MprModel.zeros(3)
    assert predict_time(10.0, 0.3, 2.04, 1.02, 1.87, 1.87, zero) == pytest.approx(14.0, abs=1e-12)


def test_predict_time_identity(machine, models):
    k = random_kernels(11, 1, machine=machine)[0]
    prof = profile_from_oracle(machine, k)
    o = ("denver", 2)
    t_hi = prof.samples[o][0]
    got = predict_time(t_hi, prof.mb(o), 2.04, 2.04, 1.87, 1.87, models.stall[o])
    assert got == pytest.approx(t_hi, rel=0.02)


def test_predict_time_mb0_ignores_memory_clock():
    # a stall model whose only non-zero term is MB times the memory ratio
    m = MprModel(3, (0, 0, 0, 0, 0, 0, 0, 1.0, 0, 0))
    a = predict_time(1.0, 0.0, 2.04, 1.11, 1.87, 0.8, m)
    b = predict_time(1.0, 0.0, 2.04, 1.11, 1.87, 1.87, m)
    assert a == b
    with pytest.raises(ModelError):
        predict_time(1.0, 1.2, 2.04, 1.11, 1.87, 1.87, m)


def test_power_predictions():
    m = MprModel.zeros(2, intercept=0.7)
    assert predict_cpu_power(0.4, 1.2, m) == 0.7
    assert predict_mem_power(0.4, 1.2, 0.8, MprModel.zeros(3, intercept=0.3)) == 0.3


def test_accuracy_examples():
    assert accuracy(5.0, 5.0) == 1.0
    assert accuracy(10, 9) == pytest.approx(0.9)
    assert accuracy(10, 21) == pytest.approx(-0.1)
    assert np.allclose(accuracy([10, 4], [9, 4]), [0.9, 1.0])
    with pytest.raises(ModelError):
        accuracy(0.0, 1.0)


def test_attribute_idle_examples():
    assert attribute_idle({"a57": 3.0}, 0.0, [("t", "a57", 4)]) == {"t": 3.0}
    s = attribute_idle({"denver": 3.0}, 0.0, [("x", "denver", 2), ("y", "denver", 1)])
    assert s["x"] == pytest.approx(2.0) and s["y"] == pytest.approx(1.0)
    s = attribute_idle({}, 2.0, [(i, "a57", 1) for i in range(4)])
    assert all(v == pytest.approx(0.5) for v in s.values())
    assert attribute_idle({"denver": 1.0}, 0.5, []) == {UNATTRIBUTED: 1.5}


running = st.lists(st.tuples(st.sampled_from(["denver", "a57"]), st.integers(1, 4)), max_size=6)


@given(running, st.floats(0, 5), st.floats(0, 5), st.floats(0, 5))
def test_attribute_idle_conserves_power(tasks, d, a, mem):
    shares = attribute_idle({"denver": d, "a57": a}, mem, [(i, cl, n) for i, (cl, n) in enumerate(tasks)])
    total = d + a + mem
    assert sum(shares.values()) == pytest.approx(total, rel=1e-12, abs=1e-12)


def test_synthetic_ladder(machine):
    lad = SyntheticLadder.build(machine)
    assert len(lad) == 41
    assert all(b - a == pytest.approx(0.025) for a, b in zip(lad.compute_fractions, lad.compute_fractions[1:]))
    for k in lad.kernels:
        assert ground_truth_time(machine, k, lad.reference) == pytest.approx(lad.reference_time_s, rel=1e-9)


def test_entry_counts(machine, models):
    assert table_entry_count(machine.platform) == 750
    solo = PlatformSpec((ClusterSpec("solo", 1, (1.0,)),), (1.0,))
    assert table_entry_count(solo) == 3
    prof = profile_from_oracle(machine, random_kernels(3, 1, machine=machine)[0])
    t = build_tables(prof, models, machine.platform)
    assert t.entry_count == 750
    assert len(t.rows()) == 250


def test_tables_complete_and_measured_cells_exact(machine, models):
    prof = profile_from_oracle(machine, random_kernels(4, 1, machine=machine)[0])
    t = build_tables(prof, models, machine.platform)
    assert int(t.measured.sum()) == 10
    assert np.all(t.time > 0) and np.all(t.cpu_w > 0) and np.all(t.mem_w > 0)
    for o, opt in enumerate(t.options):
        for stage, f in enumerate(DEFAULT_SAMPLE_FC):
            i = machine.platform.core_freqs_ghz.index(f)
            assert t.measured[o, i, -1]
            assert t.time[o, i, -1] == prof.samples[opt][stage]


def test_missing_profile_named(machine, models):
    prof = profile_from_oracle(machine, random_kernels(4, 1, machine=machine)[0])
    del prof.samples[("a57", 4)]
    with pytest.raises(ModelError, match="cluster=a57 n_cores=4"):
        build_tables(prof, models, machine.platform)


def test_fill_missing():
    opts = [("denver", 1), ("denver", 2), ("a57", 1)]
    p = KernelProfile("k", 2.0, 1.0, 1.87)
    p.record(opts[0], 0, 1.0)
    p.record(opts[0], 1, 1.5)
    p.record(opts[1], 0, 0.6)
    p.fill_missing(opts)
    assert p.fallback
    assert p.complete_for(opts)
    assert p.samples[opts[1]][1] == pytest.approx(0.9)
    assert p.samples[opts[2]] == [0.6, pytest.approx(0.9)]
    lone = KernelProfile("k", 2.0, 1.0, 1.87)
    lone.record(opts[0], 0, 1.0)
    lone.fill_missing(opts)
    assert lone.mb(opts[0]) == pytest.approx(0.5)
    with pytest.raises(ModelError):
        KernelProfile("k", 2.0, 1.0, 1.87).fill_missing(opts)


def test_training_accuracy(models):
    acc = models.training_accuracy
    assert acc["time"] >= 0.95 and acc["cpu_w"] >= 0.88 and acc["mem_w"] >= 0.78


def test_model_set_roundtrip(models, tmp_path):
    path = tmp_path / "m.json"
    models.save(path)
    back = ModelSet.load(path)
    assert back.stall == models.stall and back.cpu == models.cpu and back.mem == models.mem
    assert back.idle == models.idle and back.sample_fc == models.sample_fc


def test_idle_table_monotone(machine):
    idle = IdlePowerTable.from_machine(machine)
    for ws in list(idle.cpu_w.values()) + [idle.mem_w]:
        assert all(w >= 0 for w in ws)
        assert all(b >= a for a, b in zip(ws, ws[1:]))


@given(st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_predicted_time_non_increasing_in_core_clock(machine, models, seed):
    k = random_kernels(seed, 1, machine=machine)[0]
    t = build_tables(profile_from_oracle(machine, k), models, machine.platform)
    predicted = np.where(t.measured, np.nan, t.time)
    for o in range(t.time.shape[0]):
        for j in range(t.time.shape[2]):
            col = predicted[o, :, j]
            col = col[~np.isnan(col)]
            assert np.all(np.diff(col) <= 1e-12 * col.max())
