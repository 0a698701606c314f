import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvfsim.models import IdlePowerTable, LookupTables, oracle_tables, table_entry_count
from dvfsim.platform import ClusterSpec, Configuration, PlatformSpec, default_tx2_spec
from dvfsim.search import (constrained_min_energy, descent_min, energy_grid, energy_of, exhaustive_min,
                           exhaustive_min_energy, max_perf_cell, steepest_descent_min_energy)
from dvfsim.workloads import standard_kernels


def planted(platform, time, cpu=None, mem=None, idle_cpu=0.0, idle_mem=0.0, kernel="k"):
    shape = time.shape
    cpu = np.ones(shape) if cpu is None else cpu
    mem = np.zeros(shape) + 1e-9 if mem is None else mem
    idle = IdlePowerTable({c.name: (idle_cpu,) * len(c.core_freqs_ghz) for c in platform.clusters},
                          (idle_mem,) * len(platform.mem_freqs_ghz))
    return LookupTables(kernel, platform, time, cpu, mem, np.zeros(shape, bool), idle)


def tx2_shape():
    p = default_tx2_spec()
    return p, (len(p.options()), len(p.core_freqs_ghz), len(p.mem_freqs_ghz))


def brute_energy(t: LookupTables, hint=1.0):
    """Independent per-row evaluation of the energy objective."""
    out = {}
    for r in t.rows():
        idle = t.idle.cpu_w[r["cluster"]][t.platform.core_freqs_ghz.index(r["f_c"])]
        idle += t.idle.mem_w[t.platform.mem_freqs_ghz.index(r["f_m"])]
        cfg = Configuration(r["cluster"], r["n_cores"], r["f_c"], r["f_m"])
        out[cfg] = r["time_s"] * (r["cpu_w"] + r["mem_w"] + idle / max(1.0, hint))
    return out


def test_energy_of_by_hand():
    p = PlatformSpec((ClusterSpec("c", 1, (1.0,)),), (1.0,))
    t = planted(p, np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 2.0), np.full((1, 1, 1), 1.0))
    est = energy_of(t, "k", Configuration("c", 1, 1.0, 1.0))
    assert est.energy_j == pytest.approx(6.0)
    with pytest.raises(KeyError):
        energy_of(t, "other", Configuration("c", 1, 1.0, 1.0))


def test_hint_divides_idle():
    p = PlatformSpec((ClusterSpec("c", 1, (1.0,)),), (1.0,))
    t = planted(p, np.ones((1, 1, 1)), idle_cpu=1.0, idle_mem=3.0)
    cfg = Configuration("c", 1, 1.0, 1.0)
    assert energy_of(t, "k", cfg, 1).idle_share_w == pytest.approx(4.0)
    assert energy_of(t, "k", cfg, 2).idle_share_w == pytest.approx(2.0)


def test_single_cell_grid():
    p = PlatformSpec((ClusterSpec("c", 1, (1.0,)),), (1.0,))
    t = planted(p, np.ones((1, 1, 1)))
    cfg, stats = exhaustive_min_energy(t, "k")
    assert cfg == Configuration("c", 1, 1.0, 1.0) and stats.cells_evaluated == 1


def test_planted_minimum_found():
    p, shape = tx2_shape()
    time = np.full(shape, 5.0)
    time[3, 4, 2] = 1.0
    cfg, stats = exhaustive_min_energy(planted(p, time), "k")
    assert cfg == Configuration("a57", 2, p.core_freqs_ghz[4], p.mem_freqs_ghz[2])
    assert stats.cells_evaluated == 250


def test_bmod_oracle_choice(machine):
    t = oracle_tables(machine, standard_kernels()["bmod"])
    cfg, _ = exhaustive_min_energy(t, "bmod")
    assert cfg == Configuration("denver", 2, 1.11, 0.8)


def test_convex_table_descent_equals_exhaustive():
    p, shape = tx2_shape()
    i, j = np.meshgrid(np.arange(shape[1]), np.arange(shape[2]), indexing="ij")
    time = np.empty(shape)
    for o in range(shape[0]):
        time[o] = 2.0 + o + (i - 3 - 0.1 * o) ** 2 + 0.7 * (j - 2) ** 2 + 0.1 * (i - 3) * (j - 2)
    t = planted(p, time)
    assert steepest_descent_min_energy(t, "k")[0] == exhaustive_min_energy(t, "k")[0]


def test_two_by_two_ladder():
    p = PlatformSpec((ClusterSpec("c", 2, (1.0, 2.0)),), (1.0, 2.0))
    time = np.array([[[4.0, 3.0], [2.0, 5.0]], [[3.5, 6.0], [2.5, 2.2]]])
    t = planted(p, time)
    cfg, stats = steepest_descent_min_energy(t, "k")
    assert cfg == exhaustive_min_energy(t, "k")[0]
    assert stats.steps == 0


def test_descent_trace_lines():
    p, shape = tx2_shape()
    lines = []
    t = planted(p, np.random.default_rng(0).uniform(1, 2, shape))
    _, stats = steepest_descent_min_energy(t, "k", trace=lines.append)
    assert len(lines) == stats.steps + 1
    assert all(len(line.split()) == 6 for line in lines)


def test_constrained_target_one_is_min_energy(machine):
    for name, k in standard_kernels().items():
        t = oracle_tables(machine, k)
        assert constrained_min_energy(t, name, 1.0) == exhaustive_min_energy(t, name)[0]


def test_constrained_infeasible_gives_fastest(machine):
    t = oracle_tables(machine, standard_kernels()["stencil"])
    cfg = constrained_min_energy(t, "stencil", 1000.0)
    fastest = min(brute_energy(t), key=lambda c: t.cell(c)[0])
    assert t.cell(cfg)[0] == t.cell(fastest)[0]
    with pytest.raises(ValueError):
        constrained_min_energy(t, "stencil", 0.5)


@pytest.mark.parametrize("target", [1.1, 1.3, 1.6])
@pytest.mark.parametrize("kernel", ["bmod", "mc", "stencil", "conv"])
def test_constrained_matches_brute_force(machine, kernel, target):
    t = oracle_tables(machine, standard_kernels()[kernel])
    energies = brute_energy(t)
    base = min(energies, key=energies.get)
    feasible = [c for c in energies if t.cell(c)[0] <= t.cell(base)[0] / target]
    got = constrained_min_energy(t, kernel, target)
    if feasible:
        assert energies[got] == pytest.approx(min(energies[c] for c in feasible), rel=1e-12)
    else:
        assert t.cell(got)[0] == min(t.cell(c)[0] for c in energies)


def test_max_perf_is_fastest(machine):
    t = oracle_tables(machine, standard_kernels()["conv"])
    cell, stats = max_perf_cell(t, energy_grid(t))
    assert t.time[cell] == t.time.min()
    assert stats.cells_evaluated == 250


def test_fm_restriction(machine):
    t = oracle_tables(machine, standard_kernels()["bmod"])
    cfg, _ = exhaustive_min_energy(t, "bmod", fm_allowed=[1.87])
    assert cfg.f_m == 1.87
    with pytest.raises(ValueError):
        exhaustive_min_energy(t, "bmod", fm_allowed=[9.9])


tables_st = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s))


@given(tables_st, st.floats(1, 6))
@settings(max_examples=60, deadline=None)
def test_descent_never_beats_exhaustive(rng, hint):
    p, shape = tx2_shape()
    t = planted(p, rng.uniform(0.1, 3, shape), rng.uniform(0.2, 2, shape), rng.uniform(0.1, 1, shape),
                idle_cpu=0.3, idle_mem=0.2)
    e = energy_grid(t, hint)
    d_cell, d_stats = descent_min(t, e)
    x_cell, x_stats = exhaustive_min(t, e)
    assert e[d_cell] >= e[x_cell]
    assert d_stats.cells_evaluated <= x_stats.cells_evaluated <= table_entry_count(p) // 3
    # determinism
    assert descent_min(t, e)[0] == d_cell


@given(tables_st, st.floats(1, 4))
@settings(max_examples=30, deadline=None)
def test_energy_grid_matches_row_evaluation(rng, hint):
    p, shape = tx2_shape()
    t = planted(p, rng.uniform(0.1, 3, shape), rng.uniform(0.2, 2, shape), rng.uniform(0.1, 1, shape),
                idle_cpu=0.4, idle_mem=0.25)
    e = energy_grid(t, hint)
    for cfg, want in brute_energy(t, hint).items():
        assert e[t.index(cfg)] == pytest.approx(want, rel=1e-12)
        assert energy_of(t, "k", cfg, hint).energy_j == pytest.approx(want, rel=1e-12)


def test_descent_prunes_on_tx2(machine):
    reductions = []
    for k in standard_kernels().values():
        t = oracle_tables(machine, k)
        e = energy_grid(t)
        _, s = descent_min(t, e)
        reductions.append(1 - s.cells_evaluated / 250)
    assert np.mean(reductions) >= 0.5
