"""Comparison schedulers.

* GRWS: random work stealing, one core per task, frequencies left at max.
* ERASE-like: picks core type and count minimising CPU energy at maximum
  frequencies; never throttles.
* STEER-like: picks core type, count and core frequency minimising CPU
  energy; memory stays at its maximum.
* Aequitas-like: GRWS plus per-core frequency preferences applied to the
  cluster in one-second round-robin slices.
"""

from __future__ import annotations

from .models import LookupTables, ModelSet
from .sched import Goal, JossNoMemScheduler, JossScheduler, Policy, SchedulerError, TableScheduler
from .search import energy_grid, exhaustive_min


class GrwsScheduler(Policy):
    name = "grws"

    def start(self) -> None:
        self.steals = 0

    def on_ready(self, t: int, core: int | None) -> None:
        eng = self.engine
        if core is None:
            core = eng.rng.randrange(len(eng.cores))
        eng.enqueue(core, t)
        self._enqueued(core)

    def _enqueued(self, core: int) -> None:
        pass

    def next_work(self, core: int) -> int | None:
        t, victim = self._pop_or_steal(core, same_cluster=False)
        if victim is not None:
            self.steals += 1
            self._stole(core, victim)
        return t

    def _stole(self, thief: int, victim: int) -> None:
        pass

    def report(self) -> dict:
        return {"goal": "-", "extra": {"steals": self.steals}}


class AequitasLikeScheduler(GrwsScheduler):
    name = "aequitas"

    def __init__(self, slice_s: float = 1.0, queue_threshold: int = 4):
        self.slice_s = slice_s
        self.queue_threshold = queue_threshold

    def start(self) -> None:
        super().start()
        eng = self.engine
        top = [len(d.ladder) - 1 for d in eng.domains]
        self.desired = [top[c.cluster] for c in eng.cores]
        self.thief = [0] * len(eng.cores)
        self.victim = [0] * len(eng.cores)
        self.turn = [0] * len(eng.domains)
        self.slices = 0
        for ci in range(len(eng.domains)):
            eng.schedule_tick(self.slice_s, ci)

    def _enqueued(self, core: int) -> None:
        eng = self.engine
        if len(eng.cores[core].queue) > self.queue_threshold:
            top = len(eng.domains[eng.cores[core].cluster].ladder) - 1
            self.desired[core] = min(top, self.desired[core] + 1)

    def _stole(self, thief: int, victim: int) -> None:
        self.thief[thief] += 1
        self.victim[victim] += 1
        if self.thief[thief] > self.victim[thief]:
            self.desired[thief] = max(0, self.desired[thief] - 1)

    def on_tick(self, ci) -> None:
        eng = self.engine
        cores = eng.cluster_cores[ci]
        for k in range(len(cores)):
            c = cores[(self.turn[ci] + k) % len(cores)]
            if eng.cores[c].busy is not None:
                self.turn[ci] = (self.turn[ci] + k + 1) % len(cores)
                eng.request_freq(ci, eng.domains[ci].ladder[self.desired[c]])
                self.slices += 1
                break
        eng.schedule_tick(eng.now + self.slice_s, ci)

    def describe(self) -> dict:
        return {"name": self.name, "slice_s": self.slice_s, "queue_threshold": self.queue_threshold}

    def report(self) -> dict:
        rep = super().report()
        rep["extra"]["slices"] = self.slices
        return rep


def _cpu_choice(tables: LookupTables, hint: float, fc_allowed):
    energies = energy_grid(tables, hint, cpu_only=True)
    cell, stats = exhaustive_min(tables, energies, fm_allowed=[tables.platform.fm_max], fc_allowed=fc_allowed)
    return cell, stats, True


class EraseLikeScheduler(TableScheduler):
    """Core type and count only, judged by CPU energy at maximum frequencies."""

    name = "erase"
    core_dvfs = False
    mem_dvfs = False
    coarsening = False

    def choose(self, tables: LookupTables, hint: float):
        return _cpu_choice(tables, hint, [tables.platform.fc_max])


class SteerLikeScheduler(TableScheduler):
    """Core type, count and core frequency judged by CPU energy."""

    name = "steer"
    mem_dvfs = False

    def choose(self, tables: LookupTables, hint: float):
        return _cpu_choice(tables, hint, None)


SCHEDULERS = ("grws", "erase", "aequitas", "steer", "joss", "joss-nomem")


def make_scheduler(name: str, models: ModelSet | None = None, goal: Goal | str = "min_energy", *,
                   oracle: bool = False, fine_grain_threshold_s: float | None = None,
                   min_group: int = 8, search: str = "descent") -> Policy:
    if name == "grws":
        return GrwsScheduler()
    if name == "aequitas":
        return AequitasLikeScheduler()
    classes = {"erase": EraseLikeScheduler, "steer": SteerLikeScheduler, "joss": JossScheduler,
               "joss-nomem": JossNoMemScheduler}
    if name not in classes:
        raise SchedulerError(f"unknown scheduler {name!r}; choose from {', '.join(SCHEDULERS)}")
    return classes[name](models, goal, oracle=oracle, fine_grain_threshold_s=fine_grain_threshold_s,
                         min_group=min_group, search=search)
