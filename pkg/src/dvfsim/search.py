"""Configuration search over per-kernel lookup tables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .models import LookupTables
from .platform import Configuration

Cell = tuple[int, int, int]  # (option, fc index, fm index)


@dataclass(frozen=True)
class EnergyEstimate:
    config: Configuration
    time_s: float
    energy_j: float
    power_w: float
    idle_share_w: float


@dataclass
class SearchStats:
    cells_evaluated: int = 0
    steps: int = 0

    def __iadd__(self, other: "SearchStats") -> "SearchStats":
        self.cells_evaluated += other.cells_evaluated
        self.steps += other.steps
        return self


def idle_share(tables: LookupTables, o: int, i: int, j: int, concurrency_hint: float) -> float:
    """Cluster plus memory idle power divided among ``concurrency_hint`` tasks."""
    return (tables.idle_cpu(o, i) + tables.idle_mem(j)) / max(1.0, concurrency_hint)


def energy_of(tables: LookupTables, kernel: str, cfg: Configuration, concurrency_hint: float = 1) -> EnergyEstimate:
    if kernel != tables.kernel:
        raise KeyError(f"tables belong to {tables.kernel!r}, not {kernel!r}")
    o, i, j = tables.index(cfg)
    t = float(tables.time[o, i, j])
    share = idle_share(tables, o, i, j, concurrency_hint)
    power = float(tables.cpu_w[o, i, j] + tables.mem_w[o, i, j]) + share
    return EnergyEstimate(cfg, t, t * power, power, share)


def energy_grid(tables: LookupTables, concurrency_hint: float = 1, cpu_only: bool = False) -> np.ndarray:
    """Predicted energy of every cell.

    ``cpu_only`` drops memory power (dynamic and idle) from the objective.
    """
    idle_cpu = np.array([tables.idle.cpu_w[cl] for cl, _ in tables.options])[:, :, None]
    h = max(1.0, concurrency_hint)
    if cpu_only:
        power = tables.cpu_w + idle_cpu / h
    else:
        idle_mem = np.asarray(tables.idle.mem_w)[None, None, :]
        power = tables.cpu_w + tables.mem_w + (idle_cpu + idle_mem) / h
    return tables.time * power


def _tie_key(tables: LookupTables, cell: Cell):
    o, i, _ = cell
    n = tables.options[o][1]
    ci = tables.platform.cluster_index(tables.options[o][0])
    # higher f_c first, then fewer cores, then platform cluster order
    return (-i, n, ci, cell)


def _argmin(tables: LookupTables, values: np.ndarray, cells: Sequence[Cell]) -> Cell:
    best = min(values[c] for c in cells)
    tied = [c for c in cells if values[c] == best]
    return min(tied, key=lambda c: _tie_key(tables, c))


def _fm_indices(tables: LookupTables, fm_allowed: Sequence[float] | None) -> list[int]:
    fms = tables.platform.mem_freqs_ghz
    if fm_allowed is None:
        return list(range(len(fms)))
    idx = [j for j, f in enumerate(fms) if any(abs(f - a) < 1e-12 for a in fm_allowed)]
    if not idx:
        raise ValueError("no allowed memory frequency is on the ladder")
    return idx


def _fc_indices(tables: LookupTables, fc_allowed: Sequence[float] | None) -> list[int]:
    fcs = tables.platform.core_freqs_ghz
    if fc_allowed is None:
        return list(range(len(fcs)))
    idx = [i for i, f in enumerate(fcs) if any(abs(f - a) < 1e-12 for a in fc_allowed)]
    if not idx:
        raise ValueError("no allowed core frequency is on the ladder")
    return idx


def all_cells(tables: LookupTables, fm_allowed=None, fc_allowed=None) -> list[Cell]:
    fi = _fc_indices(tables, fc_allowed)
    fj = _fm_indices(tables, fm_allowed)
    return [(o, i, j) for o in range(len(tables.options)) for i in fi for j in fj]


def _result(tables: LookupTables, cell: Cell) -> Configuration:
    return tables.config(*cell)


def exhaustive_min(tables: LookupTables, values: np.ndarray, fm_allowed=None, fc_allowed=None):
    cells = all_cells(tables, fm_allowed, fc_allowed)
    cell = _argmin(tables, values, cells)
    return cell, SearchStats(cells_evaluated=len(cells), steps=0)


def exhaustive_min_energy(tables: LookupTables, kernel: str | None = None, concurrency_hint: float = 1,
                          fm_allowed=None) -> tuple[Configuration, SearchStats]:
    """Global argmin of predicted energy."""
    _check_kernel(tables, kernel)
    cell, stats = exhaustive_min(tables, energy_grid(tables, concurrency_hint), fm_allowed)
    return _result(tables, cell), stats


def _check_kernel(tables: LookupTables, kernel: str | None) -> None:
    if kernel is not None and kernel != tables.kernel:
        raise KeyError(f"tables belong to {tables.kernel!r}, not {kernel!r}")


class _Evaluator:
    """Counts distinct cells whose energy has been looked at."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.seen: set[Cell] = set()

    def __call__(self, cell: Cell) -> float:
        self.seen.add(cell)
        return float(self.values[cell])


def descent_min(tables: LookupTables, values: np.ndarray, fm_allowed=None, fc_allowed=None,
                trace: Callable[[str], None] | None = None) -> tuple[Cell, SearchStats]:
    """Corner voting followed by 8-neighbour steepest descent."""
    fi = _fc_indices(tables, fc_allowed)
    fj = _fm_indices(tables, fm_allowed)
    n_opt = len(tables.options)
    ev = _Evaluator(values)
    corners = []
    for ci in (fi[0], fi[-1]):
        for cj in (fj[0], fj[-1]):
            if (ci, cj) not in corners:
                corners.append((ci, cj))
    corner_e = [[ev((o, i, j)) for (i, j) in corners] for o in range(n_opt)]
    wins = [0] * n_opt
    for k in range(len(corners)):
        col = [corner_e[o][k] for o in range(n_opt)]
        best = min(col)
        wins[col.index(best)] += 1
    chosen = min(range(n_opt), key=lambda o: (-wins[o], sum(corner_e[o]), o))
    k0 = min(range(len(corners)), key=lambda k: (corner_e[chosen][k], k))
    pos = (fi.index(corners[k0][0]), fj.index(corners[k0][1]))
    cur = (chosen, fi[pos[0]], fj[pos[1]])
    cur_e = ev(cur)
    steps = 0
    if trace:
        trace(_trace_line(tables, steps, cur, cur_e))
    while True:
        best_cell, best_e, best_pos = None, cur_e, None
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di == 0 and dj == 0:
                    continue
                a, b = pos[0] + di, pos[1] + dj
                if not (0 <= a < len(fi) and 0 <= b < len(fj)):
                    continue
                cell = (chosen, fi[a], fj[b])
                e = ev(cell)
                if e < best_e or (e == best_e and best_cell is not None
                                  and _tie_key(tables, cell) < _tie_key(tables, best_cell)):
                    if e < cur_e:
                        best_cell, best_e, best_pos = cell, e, (a, b)
        if best_cell is None:
            break
        cur, cur_e, pos = best_cell, best_e, best_pos
        steps += 1
        if trace:
            trace(_trace_line(tables, steps, cur, cur_e))
    return cur, SearchStats(cells_evaluated=len(ev.seen), steps=steps)


def _trace_line(tables: LookupTables, step: int, cell: Cell, e: float) -> str:
    cfg = tables.config(*cell)
    return f"{step} {cfg.cluster} {cfg.n_cores} {cfg.f_c:.2f} {cfg.f_m:.2f} {e!r}"


def steepest_descent_min_energy(tables: LookupTables, kernel: str | None = None, concurrency_hint: float = 1,
                                fm_allowed=None, trace=None) -> tuple[Configuration, SearchStats]:
    _check_kernel(tables, kernel)
    cell, stats = descent_min(tables, energy_grid(tables, concurrency_hint), fm_allowed, trace=trace)
    return _result(tables, cell), stats


def constrained_cell(tables: LookupTables, energies: np.ndarray, speedup_target: float,
                     mode: str = "exhaustive", fm_allowed=None) -> tuple[Cell, SearchStats, bool]:
    """Cheapest cell at least ``speedup_target`` times faster than the
    min-energy cell; the fastest cell when nothing qualifies.

    Returns ``(cell, stats, feasible)``.
    """
    if speedup_target < 1:
        raise ValueError("speedup target must be >= 1")
    if mode == "exhaustive":
        base, stats = exhaustive_min(tables, energies, fm_allowed)
    elif mode == "descent":
        base, stats = descent_min(tables, energies, fm_allowed)
    else:
        raise ValueError(f"unknown search mode {mode!r}")
    cells = all_cells(tables, fm_allowed)
    stats.cells_evaluated = len(cells)
    limit = tables.time[base] / speedup_target
    feasible = [c for c in cells if tables.time[c] <= limit]
    if feasible:
        return _argmin(tables, energies, feasible), stats, True
    tmin = min(tables.time[c] for c in cells)
    fastest = [c for c in cells if tables.time[c] == tmin]
    return _argmin(tables, energies, fastest), stats, False


def constrained_min_energy(tables: LookupTables, kernel: str | None, speedup_target: float,
                           mode: str = "exhaustive", concurrency_hint: float = 1,
                           fm_allowed=None) -> Configuration:
    _check_kernel(tables, kernel)
    cell, _, _ = constrained_cell(tables, energy_grid(tables, concurrency_hint), speedup_target, mode, fm_allowed)
    return _result(tables, cell)


def max_perf_cell(tables: LookupTables, energies: np.ndarray, fm_allowed=None) -> tuple[Cell, SearchStats]:
    """Fastest cell; ties go to lower energy."""
    cells = all_cells(tables, fm_allowed)
    tmin = min(tables.time[c] for c in cells)
    fastest = [c for c in cells if tables.time[c] == tmin]
    return _argmin(tables, energies, fastest), SearchStats(cells_evaluated=len(cells))
