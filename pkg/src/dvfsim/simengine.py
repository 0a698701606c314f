"""Discrete-event simulation of a clustered multicore with CPU and memory DVFS.

Cores execute task partitions timed by the ground-truth oracle. Frequency
changes take effect after the domain's transition latency; in-flight
partitions are rescaled when they do. Energy is integrated exactly over the
piecewise-constant power profile and attributed to tasks as it accrues.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .dag import DagError, TaskDAG
from .platform import (Configuration, Machine, cluster_idle_power, ladder_index, machine_to_dict,
                       mem_idle_power, time_split)

EV_FREQ, EV_PART, EV_TICK = 0, 1, 2
MEM = -1  # domain id of the memory controller in :meth:`Engine.request_freq`


class SimulationError(RuntimeError):
    pass


@dataclass
class FreqDomain:
    name: str
    ladder: tuple[float, ...]
    latency_s: float
    idx: int
    target: int = 0
    pending: bool = False
    requests: int = 0
    transitions: int = 0

    @property
    def ghz(self) -> float:
        return self.ladder[self.idx]

    @property
    def effective_target(self) -> int:
        return self.target if self.pending else self.idx


@dataclass
class Partition:
    task: int
    index: int
    core: int = -1
    rem: float = 1.0
    last_t: float = 0.0
    start_t: float = 0.0
    dur: float = 0.0
    end_t: float = 0.0
    cpu_w: float = 0.0
    mem_w: float = 0.0
    idle_mark: float = 0.0
    version: int = 0


@dataclass
class Core:
    id: int
    cluster: int
    queue: deque = field(default_factory=deque)
    parts: deque = field(default_factory=deque)
    busy: Partition | None = None
    waiting: int | None = None
    tasks_run: int = 0


@dataclass
class _Phys:
    dur: float
    cpu_w: float  # per partition
    mem_w: float  # per partition


class Engine:
    """Event loop, cores, DVFS domains and energy meter for one run."""

    def __init__(self, machine: Machine, dag: TaskDAG, policy, seed: int = 0, trace: bool = False,
                 sampled_meter: bool = False):
        dag.validate()
        self.machine = machine
        self.platform = machine.platform
        self.dag = dag
        self.policy = policy
        self.seed = seed
        self.rng = random.Random(seed)
        self.trace_enabled = trace
        self.trace: list[str] = []
        self.sampled_meter = sampled_meter
        self.power_trace: list[tuple[float, float, float]] = []
        p = self.platform
        self.cores: list[Core] = []
        self.cluster_cores: list[list[int]] = []
        for ci, cl in enumerate(p.clusters):
            ids = []
            for _ in range(cl.core_count):
                ids.append(len(self.cores))
                self.cores.append(Core(len(self.cores), ci))
            self.cluster_cores.append(ids)
        self.domains = [FreqDomain(cl.name, cl.core_freqs_ghz, p.cpu_dvfs_latency_s, len(cl.core_freqs_ghz) - 1)
                        for cl in p.clusters]
        self.mem = FreqDomain("mem", p.mem_freqs_ghz, p.mem_dvfs_latency_s, len(p.mem_freqs_ghz) - 1)
        self.options = p.options()
        self.option_index = {(ci, n): k for k, (ci, n) in enumerate(self.options)}
        self._idle_cpu = [[float(cluster_idle_power(machine, cl, f)) for f in cl.core_freqs_ghz]
                          for cl in p.clusters]
        self._idle_mem = [float(mem_idle_power(machine, f)) for f in p.mem_freqs_ghz]
        self._phys_cache: dict[tuple, _Phys] = {}
        self._heap: list = []
        self._seq = 0
        self.now = 0.0
        n = len(dag.tasks)
        self.succ = dag.successors()
        self.preds_left = [len(t.preds) for t in dag.tasks]
        self.task_kernel = [t.kernel for t in dag.tasks]
        self.task_cluster = [-1] * n
        self.task_ncores = [0] * n
        self.parts_left = [0] * n
        self.running_parts = [0] * n
        self.start_t = [math.nan] * n
        self.done_t = [math.nan] * n
        self.max_part_dur = [0.0] * n
        self.work_done = [0.0] * n
        self.task_energy = [0.0] * n
        self._mem_mark = [0.0] * n
        self._noise = [1.0] * n
        self.done_count = 0
        self.executions = [0] * n
        # concurrency
        self.busy_cores = [0] * len(p.clusters)
        self.running_tasks = 0
        self.running_per_cluster = [0] * len(p.clusters)
        # meter
        self._meter_t = 0.0
        self.cpu_idle_j = 0.0
        self.cpu_dyn_j = 0.0
        self.mem_idle_j = 0.0
        self.mem_dyn_j = 0.0
        self.unattributed_j = 0.0
        self._sum_cpu = 0.0
        self._sum_mem = 0.0
        self._idle_int = [0.0] * len(p.clusters)
        self._mem_int = 0.0
        self._ticks_pending = 0
        if machine.truth.noise > 0:
            import numpy as np
            gen = np.random.default_rng(seed)
            for i in range(n):
                self._noise[i] = max(0.5, 1.0 + machine.truth.noise * float(gen.standard_normal()))

    # -- helpers for policies --------------------------------------------

    def domain(self, cluster: int) -> FreqDomain:
        return self.domains[cluster]

    def cluster_freq(self, cluster: int) -> float:
        return self.domains[cluster].ghz

    def mem_freq(self) -> float:
        return self.mem.ghz

    def idle_cores(self, cluster: int) -> list[int]:
        return [c for c in self.cluster_cores[cluster]
                if self.cores[c].busy is None and self.cores[c].waiting is None]

    def concurrency(self) -> tuple[int, list[int]]:
        """Running task count and busy cores per cluster."""
        return self.running_tasks, list(self.busy_cores)

    def enqueue(self, core: int, task: int, front: bool = False) -> None:
        q = self.cores[core].queue
        if front:
            q.appendleft(task)
        else:
            q.append(task)

    def schedule_tick(self, at: float, tag: Any) -> None:
        self._push(at, EV_TICK, 0, tag)
        self._ticks_pending += 1

    def request_freq(self, domain: int, ghz: float) -> bool:
        """Ask ``domain`` (cluster index or :data:`MEM`) to move to ``ghz``.

        Returns True when a new target was set. A request equal to the value
        the domain is already heading to is coalesced away.
        """
        d = self.mem if domain == MEM else self.domains[domain]
        ti = ladder_index(d.ladder, ghz)
        d.requests += 1
        if ti == d.effective_target:
            return False
        d.target = ti
        if not d.pending:
            d.pending = True
            self._push(self.now + d.latency_s, EV_FREQ, domain, None)
        return True

    def log(self, kind: str, core: int, cluster: str, task: int | str = "-") -> None:
        if self.trace_enabled:
            ci = self.platform.cluster_index(cluster) if cluster not in ("-", "mem") else None
            fc = self.domains[ci].ghz if ci is not None else float("nan")
            self.trace.append(f"{self.now!r} {kind} {core} {cluster} {fc:.2f} {self.mem.ghz:.2f} {task}")

    # -- physics ----------------------------------------------------------

    def phys(self, kernel: str, option: int, fc_idx: int, fm_idx: int) -> _Phys:
        key = (kernel, option, fc_idx, fm_idx)
        ph = self._phys_cache.get(key)
        if ph is None:
            ci, n = self.options[option]
            cl = self.platform.clusters[ci]
            cfg = Configuration(cl.name, n, cl.core_freqs_ghz[fc_idx], self.platform.mem_freqs_ghz[fm_idx])
            kp = self.dag.kernels[kernel]
            comp, stall = time_split(self.machine, kp, cfg)
            total = comp + stall
            mb = stall / total if total > 0 else 0.0
            t = self.machine.truth.for_cluster(cl)
            v = float(t.voltage(cfg.f_c))
            cpu = n * t.alpha * cfg.f_c * v * v * (1.0 - t.beta * mb)
            traffic = kp.bytes / total if total > 0 else 0.0
            mem = self.machine.truth.delta0 * cfg.f_m + self.machine.truth.delta1 * traffic
            ph = _Phys(total, cpu / n, mem / n)
            self._phys_cache[key] = ph
        return ph

    # -- event machinery --------------------------------------------------

    def _push(self, t: float, kind: int, key: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, kind, key, self._seq, payload))

    def _advance(self, t: float) -> None:
        dt = t - self._meter_t
        if dt <= 0:
            return
        mem_idle = self._idle_mem[self.mem.idx]
        for ci, d in enumerate(self.domains):
            w = self._idle_cpu[ci][d.idx]
            self.cpu_idle_j += w * dt
            if self.busy_cores[ci]:
                self._idle_int[ci] += w * dt / self.busy_cores[ci]
            else:
                self.unattributed_j += w * dt
        self.mem_idle_j += mem_idle * dt
        if self.running_tasks:
            self._mem_int += mem_idle * dt / self.running_tasks
        else:
            self.unattributed_j += mem_idle * dt
        self.cpu_dyn_j += self._sum_cpu * dt
        self.mem_dyn_j += self._sum_mem * dt
        self._meter_t = t

    def _record_power(self) -> None:
        if not self.sampled_meter:
            return
        cpu = sum(self._idle_cpu[ci][d.idx] for ci, d in enumerate(self.domains)) + self._sum_cpu
        mem = self._idle_mem[self.mem.idx] + self._sum_mem
        if self.power_trace and self.power_trace[-1][0] == self.now:
            self.power_trace[-1] = (self.now, cpu, mem)
        else:
            self.power_trace.append((self.now, cpu, mem))

    def run(self) -> None:
        self.policy.attach(self)
        self.policy.start()
        for t in self.dag.sources():
            self.policy.on_ready(t, None)
        self._dispatch()
        self._record_power()
        n = len(self.dag.tasks)
        while self.done_count < n:
            if not self._heap:
                stuck = [i for i in range(n) if math.isnan(self.done_t[i])][:5]
                raise SimulationError(f"deadlock at t={self.now}: tasks {stuck} never completed")
            t, kind, key, _, payload = heapq.heappop(self._heap)
            if kind == EV_PART:
                part, version = payload
                if version != part.version:
                    continue
            self._advance(t)
            self.now = t
            if kind == EV_PART:
                self._end_partition(payload[0])
            elif kind == EV_FREQ:
                self._freq_done(key)
            else:
                self._ticks_pending -= 1
                self.policy.on_tick(payload)
            self._dispatch()
            self._record_power()
        self.makespan = self.now if n else 0.0

    # -- frequency transitions --------------------------------------------

    def _freq_done(self, domain: int) -> None:
        d = self.mem if domain == MEM else self.domains[domain]
        d.pending = False
        if d.target != d.idx:
            d.idx = d.target
            d.transitions += 1
            self.log("freq", -1, d.name)
            for core in self.cores:
                p = core.busy
                if p is None or (domain != MEM and core.cluster != domain):
                    continue
                self._rescale(p)
            self.policy.on_freq_change(domain)
        for core in self.cores:
            if core.waiting is not None and core.busy is None:
                t = core.waiting
                n = self.policy.prepare(t, core.id)
                if n is not None:
                    core.waiting = None
                    self._start_task(t, core.id, n)

    def _segment(self, p: Partition) -> None:
        """Close the partition's current constant-frequency segment."""
        dt = self.now - p.last_t
        if dt > 0:
            frac = min(p.rem, dt / p.dur) if p.dur > 0 else p.rem
            p.rem -= frac
            self.work_done[p.task] += frac
            self.task_energy[p.task] += dt * (p.cpu_w + p.mem_w)
        p.last_t = self.now

    def _set_rates(self, p: Partition) -> None:
        ci = self.cores[p.core].cluster
        opt = self.option_index[(ci, self.task_ncores[p.task])]
        ph = self.phys(self.task_kernel[p.task], opt, self.domains[ci].idx, self.mem.idx)
        p.dur = ph.dur * self._noise[p.task]
        p.cpu_w = ph.cpu_w
        p.mem_w = ph.mem_w
        self._sum_cpu += p.cpu_w
        self._sum_mem += p.mem_w
        p.end_t = self.now + p.rem * p.dur
        p.version += 1
        self._push(p.end_t, EV_PART, p.core, (p, p.version))

    def _rescale(self, p: Partition) -> None:
        self._segment(p)
        self._sum_cpu -= p.cpu_w
        self._sum_mem -= p.mem_w
        self._set_rates(p)

    # -- task and partition lifecycle -------------------------------------

    def _dispatch(self) -> None:
        for core in self.cores:
            if core.busy is not None or core.waiting is not None:
                continue
            if self._take_partition(core):
                continue
            t = self.policy.next_work(core.id)
            if t is None:
                continue
            n = self.policy.prepare(t, core.id)
            if n is None:
                core.waiting = t
                continue
            self._start_task(t, core.id, n)

    def _take_partition(self, core: Core) -> bool:
        if core.parts:
            self._start_partition(core.parts.popleft(), core.id)
            return True
        victims = [c for c in self.cluster_cores[core.cluster] if self.cores[c].parts]
        if not victims:
            return False
        v = victims[0] if len(victims) == 1 else self.rng.choice(victims)
        p = self.cores[v].parts.pop()
        self.log("steal_part", core.id, self.platform.clusters[core.cluster].name, p.task)
        self._start_partition(p, core.id)
        return True

    def _start_task(self, t: int, core_id: int, n: int) -> None:
        core = self.cores[core_id]
        ci = core.cluster
        if self.preds_left[t] != 0:
            raise SimulationError(f"task {t} started with unresolved predecessors")
        if not math.isnan(self.start_t[t]):
            raise SimulationError(f"task {t} started twice")
        if (ci, n) not in self.option_index:
            raise SimulationError(f"task {t}: {n} cores not allowed on cluster {ci}")
        self.task_cluster[t] = ci
        self.task_ncores[t] = n
        self.parts_left[t] = n
        self.start_t[t] = self.now
        self.executions[t] += 1
        core.tasks_run += 1
        cname = self.platform.clusters[ci].name
        self.log("start", core_id, cname, t)
        self.policy.on_task_start(t, core_id, n)
        parts = [Partition(t, k) for k in range(n)]
        self._start_partition(parts[0], core_id)
        rest = parts[1:]
        if rest:
            for c in self.idle_cores(ci):
                if not rest:
                    break
                self._start_partition(rest.pop(0), c)
            if rest:
                others = [c for c in self.cluster_cores[ci] if c != core_id]
                others.sort(key=lambda c: (len(self.cores[c].parts), c))
                for k, p in enumerate(rest):
                    self.cores[others[k % len(others)]].parts.append(p)

    def _start_partition(self, p: Partition, core_id: int) -> None:
        core = self.cores[core_id]
        if core.busy is not None:
            raise SimulationError(f"core {core_id} is already busy")
        if core.cluster != self.task_cluster[p.task]:
            raise SimulationError(f"partition of task {p.task} moved across clusters")
        ci = core.cluster
        core.busy = p
        p.core = core_id
        p.start_t = self.now
        p.last_t = self.now
        p.idle_mark = self._idle_int[ci]
        self.busy_cores[ci] += 1
        t = p.task
        if self.running_parts[t] == 0:
            self.running_tasks += 1
            self.running_per_cluster[ci] += 1
            self._mem_mark[t] = self._mem_int
        self.running_parts[t] += 1
        self._set_rates(p)
        self.log("pstart", core_id, self.platform.clusters[ci].name, t)

    def _end_partition(self, p: Partition) -> None:
        core = self.cores[p.core]
        ci = core.cluster
        t = p.task
        self._segment(p)
        p.rem = 0.0
        self._sum_cpu -= p.cpu_w
        self._sum_mem -= p.mem_w
        self.task_energy[t] += self._idle_int[ci] - p.idle_mark
        self.busy_cores[ci] -= 1
        self.running_parts[t] -= 1
        if self.running_parts[t] == 0:
            self.task_energy[t] += self._mem_int - self._mem_mark[t]
            self.running_tasks -= 1
            self.running_per_cluster[ci] -= 1
        if self.running_tasks == 0:
            self._sum_cpu = 0.0
            self._sum_mem = 0.0
        core.busy = None
        self.max_part_dur[t] = max(self.max_part_dur[t], self.now - p.start_t)
        self.log("pend", core.id, self.platform.clusters[ci].name, t)
        self.parts_left[t] -= 1
        if self.parts_left[t] == 0:
            self._complete(t, core.id)

    def _complete(self, t: int, core_id: int) -> None:
        self.done_t[t] = self.now
        self.done_count += 1
        self.log("done", core_id, self.platform.clusters[self.task_cluster[t]].name, t)
        self.policy.on_task_done(t, core_id)
        for s in self.succ[t]:
            self.preds_left[s] -= 1
            if self.preds_left[s] == 0:
                self.policy.on_ready(s, core_id)
            elif self.preds_left[s] < 0:
                raise SimulationError(f"task {s} released twice")

    # -- results ----------------------------------------------------------

    @property
    def metered_j(self) -> float:
        return self.cpu_idle_j + self.cpu_dyn_j + self.mem_idle_j + self.mem_dyn_j

    def sampled_energy(self) -> tuple[float, float]:
        """Energy as a periodic power meter would report it (sample and hold)."""
        period = self.platform.power_sample_period_s
        if not self.power_trace or self.makespan <= 0:
            return 0.0, 0.0
        cpu = mem = 0.0
        k = 0
        idx = 0
        tr = self.power_trace
        while k * period < self.makespan:
            ts = k * period
            while idx + 1 < len(tr) and tr[idx + 1][0] <= ts:
                idx += 1
            step = min(period, self.makespan - ts)
            cpu += tr[idx][1] * step
            mem += tr[idx][2] * step
            k += 1
        return cpu, mem


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class RunReport:
    scheduler: str
    goal: str
    seed: int
    workload: str
    n_tasks: int
    makespan_s: float
    cpu_j: float
    mem_j: float
    cpu_idle_j: float
    cpu_dyn_j: float
    mem_idle_j: float
    mem_dyn_j: float
    attributed_j: float
    unattributed_j: float
    per_kernel: dict
    sampling_overhead: float
    search: dict
    dvfs: dict
    cluster_tasks: dict
    config_hash: str
    extra: dict = field(default_factory=dict)

    @property
    def total_j(self) -> float:
        return self.cpu_j + self.mem_j

    @property
    def closure_error(self) -> float:
        total = self.total_j
        if total == 0:
            return abs(self.attributed_j + self.unattributed_j)
        return abs(self.attributed_j + self.unattributed_j - total) / total

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["total_j"] = self.total_j
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def run(dag: TaskDAG, policy, machine: Machine, seed: int = 0, trace: bool = False,
        sampled_meter: bool = False, workload: str | None = None) -> tuple[RunReport, Engine]:
    """Simulate ``dag`` under ``policy`` to completion."""
    try:
        dag.validate()
    except DagError as exc:
        raise SimulationError(f"invalid DAG: {exc}") from None
    eng = Engine(machine, dag, policy, seed, trace=trace, sampled_meter=sampled_meter)
    eng.run()
    p = machine.platform
    counts = {cl.name: 0 for cl in p.clusters}
    for t in range(len(dag.tasks)):
        counts[p.clusters[eng.task_cluster[t]].name] += 1
    per_kernel: dict[str, dict] = {}
    for t, k in enumerate(eng.task_kernel):
        e = per_kernel.setdefault(k, {"tasks": 0, "energy_j": 0.0})
        e["tasks"] += 1
        e["energy_j"] += eng.task_energy[t]
    pinfo = policy.report()
    for k, info in pinfo.get("per_kernel", {}).items():
        per_kernel.setdefault(k, {}).update(info)
    sampled_time = pinfo.get("sampling_time_s", 0.0)
    dvfs = {d.name: {"requests": d.requests, "transitions": d.transitions} for d in eng.domains + [eng.mem]}
    dvfs.update(pinfo.get("dvfs", {}))
    extra = dict(pinfo.get("extra", {}))
    if sampled_meter:
        scpu, smem = eng.sampled_energy()
        extra["sampled_meter"] = {"cpu_j": scpu, "mem_j": smem}
    h = config_hash({"machine": machine_to_dict(machine), "dag": hashlib.sha256(dag.to_text().encode()).hexdigest(),
                     "scheduler": policy.describe(), "seed": seed})
    rep = RunReport(
        scheduler=policy.name, goal=pinfo.get("goal", "-"), seed=seed, workload=workload or dag.name,
        n_tasks=len(dag.tasks), makespan_s=eng.makespan,
        cpu_j=eng.cpu_idle_j + eng.cpu_dyn_j, mem_j=eng.mem_idle_j + eng.mem_dyn_j,
        cpu_idle_j=eng.cpu_idle_j, cpu_dyn_j=eng.cpu_dyn_j, mem_idle_j=eng.mem_idle_j, mem_dyn_j=eng.mem_dyn_j,
        attributed_j=math.fsum(eng.task_energy), unattributed_j=eng.unattributed_j,
        per_kernel=per_kernel, sampling_overhead=(sampled_time / eng.makespan) if eng.makespan > 0 else 0.0,
        search=pinfo.get("search", {}), dvfs=dvfs, cluster_tasks=counts, config_hash=h, extra=extra,
    )
    return rep, eng
