"""Energy-aware task scheduling: sampling, selection, placement, coordination.

The policy objects here plug into :class:`dvfsim.simengine.Engine`. The
engine owns cores, queues and DVFS domains; a policy decides where ready
tasks go, how many cores they use and which frequencies they ask for.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass
from typing import Sequence

from .models import (KernelProfile, LookupTables, ModelSet, build_tables, oracle_tables, sample_options)
from .platform import Configuration, ladder_index, snap_to_ladder
from .search import (SearchStats, constrained_cell, descent_min, energy_grid, exhaustive_min, max_perf_cell)
from .simengine import MEM

log = logging.getLogger(__name__)

FREE, SAMPLE, STEADY = 0, 1, 2


class SchedulerError(ValueError):
    pass


@dataclass(frozen=True)
class Goal:
    kind: str = "min_energy"
    target: float = 1.0

    def __post_init__(self):
        if self.kind not in ("min_energy", "speedup", "max_perf"):
            raise SchedulerError(f"unknown goal {self.kind!r}")
        if self.kind == "speedup" and not self.target >= 1.0:
            raise SchedulerError("speedup target must be >= 1")

    @classmethod
    def parse(cls, text: str) -> "Goal":
        text = text.strip()
        if text in ("min_energy", "max_perf"):
            return cls(text)
        if text.startswith("speedup:"):
            try:
                return cls("speedup", float(text.split(":", 1)[1]))
            except ValueError:
                pass
        raise SchedulerError(f"cannot parse goal {text!r}; expected min_energy | speedup:<x> | max_perf")

    def __str__(self) -> str:
        return f"speedup:{self.target:g}" if self.kind == "speedup" else self.kind


def coordinate_frequency(requested: float, current: float, concurrency: int, ladder: Sequence[float]) -> float:
    """Reconcile a request with the domain's current setting.

    A lone task gets what it asks for. Otherwise the request is averaged
    with the current value and snapped to the ladder (ties to the lower
    step). When snapping lands back on the current value although the
    request differs, the result moves one step toward the request so that
    repeated requests still make progress.
    """
    if concurrency <= 1 or requested == current:
        return requested
    snapped = snap_to_ladder(0.5 * (requested + current), ladder)
    if snapped == current:
        i = ladder_index(ladder, current)
        snapped = ladder[i + 1] if requested > current else ladder[i - 1]
    return snapped


def place_task(rng, cores: Sequence[int]) -> int:
    """Seeded uniform choice among the cores of the chosen cluster."""
    return cores[0] if len(cores) == 1 else cores[rng.randrange(len(cores))]


def track_concurrency(engine) -> tuple[int, list[int]]:
    """Running-task count and busy cores per cluster at the current instant."""
    return engine.concurrency()


class Policy:
    """Base class; see :class:`dvfsim.simengine.Engine` for the call order."""

    name = "base"

    def attach(self, engine) -> None:
        self.engine = engine

    def start(self) -> None:
        pass

    def on_ready(self, task: int, core: int | None) -> None:
        raise NotImplementedError

    def next_work(self, core: int) -> int | None:
        raise NotImplementedError

    def prepare(self, task: int, core: int) -> int | None:
        """Partitions to run ``task`` with, or None to hold the core."""
        return 1

    def on_task_start(self, task: int, core: int, n: int) -> None:
        pass

    def on_task_done(self, task: int, core: int) -> None:
        pass

    def on_freq_change(self, domain: int) -> None:
        pass

    def on_tick(self, tag) -> None:
        pass

    def describe(self) -> dict:
        return {"name": self.name}

    def report(self) -> dict:
        return {}

    # shared queue discipline: owner pops newest, thieves take oldest
    def _pop_or_steal(self, core: int, same_cluster: bool) -> tuple[int | None, int | None]:
        eng = self.engine
        q = eng.cores[core].queue
        if q:
            return q.pop(), None
        pool = eng.cluster_cores[eng.cores[core].cluster] if same_cluster else range(len(eng.cores))
        victims = [v for v in pool if v != core and eng.cores[v].queue]
        if not victims:
            return None, None
        v = victims[0] if len(victims) == 1 else victims[eng.rng.randrange(len(victims))]
        t = eng.cores[v].queue.popleft()
        if eng.trace_enabled:
            eng.log("steal", core, eng.platform.clusters[eng.cores[core].cluster].name, t)
        return t, v


@dataclass
class _KernelSampling:
    profile: KernelProfile
    slots: dict  # (option index, stage) -> 0 free, 1 in flight, 2 done
    closed: bool = False
    inflight: int = 0


class Selector:
    """Memoised per-kernel configuration choice."""

    def __init__(self, choose):
        self._choose = choose
        self.memo: dict[str, tuple[Configuration, float, SearchStats, bool]] = {}
        self.stats = SearchStats()
        self.selections = 0

    def select(self, kernel: str, tables: LookupTables, hint: float) -> Configuration:
        hit = self.memo.get(kernel)
        if hit is not None:
            return hit[0]
        cell, stats, feasible = self._choose(tables, hint)
        cfg = tables.config(*cell)
        self.memo[kernel] = (cfg, hint, stats, feasible)
        self.stats += stats
        self.selections += 1
        return cfg


class TableScheduler(Policy):
    """Shared machinery of the table-driven schedulers.

    Ready tasks of unprofiled kernels fill sampling slots (one per option
    and sampling frequency). While a cluster hosts a sample it is locked to
    that sample's frequency, memory is held at its maximum, and other
    frequency requests on the locked domains are dropped. Tasks that find
    no compatible slot run on one core without frequency requests. Once a
    kernel's slots are filled its tables are built and every later
    instance runs with the selected configuration.
    """

    name = "table"
    core_dvfs = True
    mem_dvfs = True
    coarsening = True

    def __init__(self, models: ModelSet | None = None, goal: Goal | str = Goal(), *, oracle: bool = False,
                 fine_grain_threshold_s: float | None = None, min_group: int = 8, search: str = "descent"):
        if search not in ("descent", "exhaustive"):
            raise SchedulerError(f"unknown search mode {search!r}")
        if models is None and not oracle:
            raise SchedulerError(f"{self.name}: fitted models are required unless oracle tables are used")
        self.models = models
        self.goal = Goal.parse(goal) if isinstance(goal, str) else goal
        self.oracle = oracle
        self.fine_grain_threshold_s = fine_grain_threshold_s
        self.min_group = min_group
        self.search = search
        self.selector = Selector(self.choose)

    # -- configuration choice (overridden by baselines) -------------------

    def fm_allowed(self, tables: LookupTables):
        return None

    def choose(self, tables: LookupTables, hint: float):
        energies = energy_grid(tables, hint)
        fm = self.fm_allowed(tables)
        if self.goal.kind == "min_energy":
            if self.search == "exhaustive":
                cell, stats = exhaustive_min(tables, energies, fm)
            else:
                cell, stats = descent_min(tables, energies, fm)
            return cell, stats, True
        if self.goal.kind == "speedup":
            return constrained_cell(tables, energies, self.goal.target, self.search, fm)
        cell, stats = max_perf_cell(tables, energies, fm)
        return cell, stats, True

    # -- lifecycle --------------------------------------------------------

    def start(self) -> None:
        eng = self.engine
        p = eng.platform
        self.options = sample_options(p)
        self.cluster_of_option = [p.cluster_index(cl) for cl, _ in self.options]
        if self.models is not None:
            self.sample_fc = tuple(self.models.sample_fc)
        else:
            self.sample_fc = (p.fc_max, p.core_freqs_ghz[len(p.core_freqs_ghz) // 2 - 1])
        self.threshold = (self.fine_grain_threshold_s if self.fine_grain_threshold_s is not None
                          else 10.0 * p.cpu_dvfs_latency_s)
        n = len(eng.dag.tasks)
        self.kind = [FREE] * n
        self.cfg: list[Configuration | None] = [None] * n
        self.sample_slot: dict[int, tuple[int, int]] = {}
        self.group_of = [-1] * n
        self.remaining = dict(eng.dag.kernel_counts())
        self.tables: dict[str, LookupTables] = {}
        self.sampling: dict[str, _KernelSampling] = {}
        self.lock_stage = [None] * len(p.clusters)
        self.lock_count = [0] * len(p.clusters)
        self.mem_lock = 0
        self.outstanding = 0
        self.sampling_since = 0.0
        self.sampling_time = 0.0
        self.sample_began: set[int] = set()
        self.active_samples = 0
        self.running_steady = 0
        self.samples_run = 0
        self.groups = 0
        self.group_decisions = 0
        self.ungrouped_fine = 0
        self.freq_decisions = 0
        self.fine: dict[str, bool] = {}
        self.unsampled: dict[str, dict[int, int]] = {}  # queued FREE tasks per kernel -> core
        self.sample_q = [deque() for _ in p.clusters]  # samples run ahead of queued work
        for k in sorted(eng.dag.kernels):
            if self.oracle:
                self._install(k, oracle_tables(eng.machine, eng.dag.kernels[k]))
            else:
                prof = KernelProfile(k, self.sample_fc[0], self.sample_fc[1], p.fm_max)
                slots = {(o, s): 0 for s in (0, 1) for o in range(len(self.options))}
                self.sampling[k] = _KernelSampling(prof, slots)

    def _install(self, kernel: str, tables: LookupTables) -> None:
        self.tables[kernel] = tables
        p = self.engine.platform
        i = ladder_index(p.core_freqs_ghz, self.sample_fc[0]) if self.sample_fc[0] in p.core_freqs_ghz else -1
        # 1-core time on the fastest cluster class decides granularity
        t1 = min(float(tables.time[o, i, -1]) for o, (_, n) in enumerate(self.options) if n == 1)
        self.fine[kernel] = t1 < self.threshold

    # -- placement ----------------------------------------------------------

    def on_ready(self, t: int, core: int | None) -> None:
        eng = self.engine
        k = eng.task_kernel[t]
        self.remaining[k] -= 1
        if k in self.tables:
            self._place_steady(t)
            return
        ks = self.sampling[k]
        slot = None if ks.closed else self._free_slot(ks)
        if slot is not None:
            self._begin_sample(t, ks, slot)
        else:
            self.kind[t] = FREE
            c = place_task(eng.rng, list(range(len(eng.cores))))
            eng.enqueue(c, t)
            self.unsampled.setdefault(k, {})[t] = c
        free = sum(1 for v in ks.slots.values() if v == 0)
        if not ks.closed and free and self.remaining[k] + len(self.unsampled.get(k, ())) < free:
            ks.closed = True
            self._maybe_finalize(k)

    def _place_steady(self, t: int) -> None:
        eng = self.engine
        k = eng.task_kernel[t]
        # sampling-phase tasks are transient, so only steady tasks count
        hint = max(1, self.running_steady)
        cfg = self.selector.select(k, self.tables[k], hint)
        self.kind[t] = STEADY
        self.cfg[t] = cfg
        ci = eng.platform.cluster_index(cfg.cluster)
        eng.enqueue(place_task(eng.rng, eng.cluster_cores[ci]), t)

    def _free_slot(self, ks: _KernelSampling):
        for stage in (0, 1):
            for o in range(len(self.options)):
                if ks.slots[(o, stage)] != 0:
                    continue
                ci = self.cluster_of_option[o]
                if self.lock_stage[ci] in (None, stage):
                    return o, stage
        return None

    def _begin_sample(self, t: int, ks: _KernelSampling, slot: tuple[int, int]) -> None:
        eng = self.engine
        o, stage = slot
        ci = self.cluster_of_option[o]
        ks.slots[slot] = 1
        ks.inflight += 1
        self.kind[t] = SAMPLE
        self.sample_slot[t] = slot
        self.lock_stage[ci] = stage
        self.lock_count[ci] += 1
        self.mem_lock += 1
        self.outstanding += 1
        eng.request_freq(ci, self.sample_fc[stage])
        eng.request_freq(MEM, eng.platform.fm_max)
        self.sample_q[ci].append(t)

    # -- execution ------------------------------------------------------------

    def next_work(self, core: int) -> int | None:
        sq = self.sample_q[self.engine.cores[core].cluster]
        if sq:
            return sq.popleft()
        return self._pop_or_steal(core, same_cluster=True)[0]

    def prepare(self, t: int, core: int) -> int | None:
        kind = self.kind[t]
        if kind == FREE:
            return 1
        if kind == SAMPLE:
            eng = self.engine
            if t not in self.sample_began:
                # overhead clock runs from the first dispatch attempt, not from placement
                self.sample_began.add(t)
                if self.active_samples == 0:
                    self.sampling_since = eng.now
                self.active_samples += 1
            o, stage = self.sample_slot[t]
            ci = self.cluster_of_option[o]
            d = eng.domains[ci]
            want = self.sample_fc[stage]
            if d.pending or d.ghz != want or eng.mem.pending or eng.mem.ghz != eng.platform.fm_max:
                eng.request_freq(ci, want)
                eng.request_freq(MEM, eng.platform.fm_max)
                return None
            return self.options[o][1]
        return self.cfg[t].n_cores

    def on_task_start(self, t: int, core: int, n: int) -> None:
        if self.kind[t] != STEADY:
            if self.kind[t] == FREE:
                self.unsampled.get(self.engine.task_kernel[t], {}).pop(t, None)
            return
        self.running_steady += 1
        if self.group_of[t] >= 0:
            return
        cfg = self.cfg[t]
        if self.coarsening and self.fine[self.engine.task_kernel[t]]:
            members = self._collect_group(t, core)
            if len(members) + 1 < self.min_group:
                self.ungrouped_fine += 1
                return
            gid = self.groups
            self.groups += 1
            self.group_of[t] = gid
            q = self.engine.cores[core].queue
            for m in members:
                self.group_of[m] = gid
                q.append(m)
            self.group_decisions += 1
        self._request(cfg)

    def _collect_group(self, t: int, core: int) -> list[int]:
        eng = self.engine
        k = eng.task_kernel[t]
        cores = eng.cluster_cores[eng.cores[core].cluster]
        start = cores.index(core)
        order = cores[start:] + cores[:start]
        need = self.min_group - 1
        found: list[int] = []
        cursors = {c: 0 for c in order}
        progress = True
        while len(found) < need and progress:
            progress = False
            for c in order:
                q = eng.cores[c].queue
                i = cursors[c]
                while i < len(q):
                    m = q[i]
                    i += 1
                    if eng.task_kernel[m] == k and self.group_of[m] < 0 and self.kind[m] == STEADY:
                        found.append(m)
                        progress = True
                        break
                cursors[c] = i
                if len(found) >= need:
                    break
        if len(found) + 1 >= self.min_group:
            for m in found:
                for c in order:
                    q = eng.cores[c].queue
                    if m in q:
                        q.remove(m)
                        break
        return found

    def _request(self, cfg: Configuration) -> None:
        eng = self.engine
        ci = eng.platform.cluster_index(cfg.cluster)
        self.freq_decisions += 1
        if self.core_dvfs and self.lock_count[ci] == 0:
            d = eng.domains[ci]
            cur = d.ladder[d.effective_target]
            conc = eng.running_per_cluster[ci] + 1
            eng.request_freq(ci, coordinate_frequency(cfg.f_c, cur, conc, d.ladder))
        if self.mem_dvfs and self.mem_lock == 0:
            d = eng.mem
            cur = d.ladder[d.effective_target]
            conc = eng.running_tasks + 1
            eng.request_freq(MEM, coordinate_frequency(cfg.f_m, cur, conc, d.ladder))

    def on_task_done(self, t: int, core: int) -> None:
        if self.kind[t] == STEADY:
            self.running_steady -= 1
        if self.kind[t] != SAMPLE:
            return
        eng = self.engine
        k = eng.task_kernel[t]
        ks = self.sampling[k]
        o, stage = self.sample_slot[t]
        ci = self.cluster_of_option[o]
        ks.profile.record(self.options[o], stage, eng.max_part_dur[t])
        ks.slots[(o, stage)] = 2
        ks.inflight -= 1
        self.samples_run += 1
        self.lock_count[ci] -= 1
        if self.lock_count[ci] == 0:
            self.lock_stage[ci] = None
            if not self.core_dvfs:
                eng.request_freq(ci, eng.platform.fc_max)
        self.mem_lock -= 1
        self.outstanding -= 1
        self.active_samples -= 1
        if self.active_samples == 0:
            self.sampling_time += eng.now - self.sampling_since
        self._refill()
        self._maybe_finalize(k)

    def _refill(self) -> None:
        """Move still-queued unsampled tasks into slots freed by a lock release."""
        eng = self.engine
        for k in sorted(self.unsampled):
            waiting = self.unsampled[k]
            ks = self.sampling[k]
            while waiting and not ks.closed:
                slot = self._free_slot(ks)
                if slot is None:
                    break
                t, c = next(iter(waiting.items()))
                del waiting[t]
                eng.cores[c].queue.remove(t)
                self._begin_sample(t, ks, slot)

    def _maybe_finalize(self, k: str) -> None:
        ks = self.sampling.get(k)
        if ks is None or k in self.tables or ks.inflight:
            return
        if all(v == 2 for v in ks.slots.values()):
            pass
        elif ks.closed:
            if not any(v == 2 for v in ks.slots.values()):
                return
            ks.profile.fill_missing(self.options)
        else:
            return
        self._install(k, build_tables(ks.profile, self.models, self.engine.platform))
        # queued instances that never got a slot now follow the selected configuration
        eng = self.engine
        for t, c in self.unsampled.pop(k, {}).items():
            eng.cores[c].queue.remove(t)
            self._place_steady(t)

    # -- reporting ------------------------------------------------------------

    def describe(self) -> dict:
        return {"name": self.name, "goal": str(self.goal), "oracle": self.oracle,
                "fine_grain_threshold_s": self.fine_grain_threshold_s, "min_group": self.min_group,
                "search": self.search,
                "models": self.models.to_dict() if self.models is not None else None}

    def report(self) -> dict:
        per_kernel = {}
        for k, (cfg, hint, stats, feasible) in sorted(self.selector.memo.items()):
            tb = self.tables[k]
            per_kernel[k] = {"config": str(cfg), "config_fields": cfg.as_dict(), "hint": hint,
                             "cells_evaluated": stats.cells_evaluated, "feasible": feasible,
                             "fine_grained": self.fine.get(k, False),
                             "mb": {f"{cl}x{n}": v for (cl, n), v in sorted(tb.mb.items())}}
            if k in self.sampling:
                per_kernel[k]["fallback"] = self.sampling[k].profile.fallback
        return {
            "goal": str(self.goal),
            "per_kernel": per_kernel,
            "sampling_time_s": self.sampling_time,
            "search": {"cells_evaluated": self.selector.stats.cells_evaluated,
                       "steps": self.selector.stats.steps, "selections": self.selector.selections},
            "dvfs": {"groups": self.groups, "group_decisions": self.group_decisions,
                     "ungrouped_fine_tasks": self.ungrouped_fine, "decisions": self.freq_decisions},
            "extra": {"samples_run": self.samples_run},
        }


class JossScheduler(TableScheduler):
    """Joint core-type, core-count, core- and memory-frequency selection."""

    name = "joss"


class JossNoMemScheduler(TableScheduler):
    """The same policy with memory frequency pinned at its maximum."""

    name = "joss-nomem"
    mem_dvfs = False

    def fm_allowed(self, tables: LookupTables):
        return [tables.platform.fm_max]
