"""Learned time and power models, per-kernel lookup tables and idle attribution.

Models are fitted per ``(cluster, n_cores)`` from profiles of a ladder of
synthetic kernels that sweep the compute:memory split of the reference
execution time. Each kernel at runtime is sampled at two core frequencies
(memory at its maximum); the resulting memory-boundness (MB) drives all
predictions.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import mpr
from .mpr import MprModel, ProfileDataset
from .platform import (ConfigError, Configuration, KernelParams, Machine, PlatformSpec,
                       cluster_idle_power, ladder_index, mem_idle_power, truth_grid)

log = logging.getLogger(__name__)

TIME_FLOOR_S = 1e-6
LADDER_STEPS = 41
DEFAULT_SAMPLE_FC = (2.04, 1.11)

Option = tuple[str, int]  # (cluster name, n_cores)


class ModelError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Elementary formulas
# ---------------------------------------------------------------------------

def estimate_mb(time_at_fc: float, time_at_fc_prime: float, f_c: float, f_c_prime: float) -> float:
    """Memory-boundness from two runs that differ only in core frequency."""
    if f_c == f_c_prime:
        raise ZeroDivisionError("sampling frequencies must differ")
    if time_at_fc <= 0 or time_at_fc_prime <= 0:
        raise ModelError("sampled times must be > 0")
    r = f_c / f_c_prime
    mb = (time_at_fc_prime / time_at_fc - r) / (1.0 - r)
    return min(1.0, max(0.0, mb))


def stall_features(mb, f_c, f_c_prime, f_m, f_m_prime) -> np.ndarray:
    return np.stack(np.broadcast_arrays(np.asarray(mb, float), np.asarray(f_c / np.asarray(f_c_prime, float)),
                                        np.asarray(f_m / np.asarray(f_m_prime, float))), axis=-1)


def predict_time(profile_time: float, mb: float, f_c: float, f_c_prime: float, f_m: float,
                 f_m_prime: float, stall_model: MprModel) -> float:
    """Scale a time measured at ``(f_c, f_m)`` to ``(f_c_prime, f_m_prime)``."""
    if not 0.0 <= mb <= 1.0:
        raise ModelError(f"MB must lie in [0, 1], got {mb}")
    comp = profile_time * (1.0 - mb) * (f_c / f_c_prime)
    stall = profile_time * stall_model.predict([mb, f_c / f_c_prime, f_m / f_m_prime])
    return max(TIME_FLOOR_S, comp + stall)


def predict_cpu_power(mb: float, f_c: float, model: MprModel) -> float:
    if not 0.0 <= mb <= 1.0:
        raise ModelError(f"MB must lie in [0, 1], got {mb}")
    return model.predict([mb, f_c])


def predict_mem_power(mb: float, f_c: float, f_m: float, model: MprModel) -> float:
    if not 0.0 <= mb <= 1.0:
        raise ModelError(f"MB must lie in [0, 1], got {mb}")
    return model.predict([mb, f_c, f_m])


def accuracy(real, predicted):
    """``1 - |real - predicted| / real``; works element-wise on arrays."""
    real_a = np.asarray(real, dtype=float)
    if np.any(real_a <= 0):
        raise ModelError("accuracy needs real > 0")
    out = 1.0 - np.abs(real_a - np.asarray(predicted, dtype=float)) / real_a
    return float(out) if out.ndim == 0 else out


UNATTRIBUTED = "unattributed"


def attribute_idle(cpu_idle_w: Mapping[str, float], mem_idle_w: float,
                   running: Sequence[tuple[object, str, int]]) -> dict:
    """Split idle power among running tasks.

    ``running`` holds ``(task, cluster, cores_used)``. CPU idle of a cluster
    is shared in proportion to cores used on it, memory idle equally across
    all running tasks. Power with no task to carry it lands on
    :data:`UNATTRIBUTED`.
    """
    shares: dict = {}
    per_cluster: dict[str, int] = {}
    for _, cl, n in running:
        if n <= 0:
            raise ModelError("cores_used must be >= 1")
        per_cluster[cl] = per_cluster.get(cl, 0) + n
    for task, cl, n in running:
        shares[task] = shares.get(task, 0.0) + cpu_idle_w.get(cl, 0.0) * n / per_cluster[cl]
        shares[task] += mem_idle_w / len(running)
    rest = sum(w for cl, w in cpu_idle_w.items() if cl not in per_cluster)
    if not running:
        rest += mem_idle_w
    if rest:
        shares[UNATTRIBUTED] = shares.get(UNATTRIBUTED, 0.0) + rest
    return shares


# ---------------------------------------------------------------------------
# Synthetic ladder and profiling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticLadder:
    """Kernels whose compute share of the reference time steps by 2.5 %."""

    kernels: tuple[KernelParams, ...]
    compute_fractions: tuple[float, ...]
    reference: Configuration
    reference_time_s: float

    @classmethod
    def build(cls, machine: Machine, reference_time_s: float = 0.01, kappa: float = 0.6,
              mu: float = 0.1, steps: int = LADDER_STEPS) -> "SyntheticLadder":
        p = machine.platform
        cl = p.clusters[0]
        ref = Configuration(cl.name, 1, p.fc_max, p.fm_max)
        t = machine.truth.for_cluster(cl)
        fracs = tuple(i / (steps - 1) for i in range(steps))
        kernels = []
        for i, c in enumerate(fracs):
            ops = c * reference_time_s * t.ipc * t.eff[1] * ref.f_c
            # at the reference point every stall ratio equals 1
            nbytes = (1.0 - c) * reference_time_s * t.bw_gbps[1] / (1.0 + mu)
            kernels.append(KernelParams(f"syn{i:02d}", ops, nbytes, kappa, mu))
        return cls(tuple(kernels), fracs, ref, reference_time_s)

    def __len__(self) -> int:
        return len(self.kernels)


def random_kernels(seed: int, count: int, reference_time_s: float = 0.01, machine: Machine | None = None,
                   prefix: str = "rnd") -> list[KernelParams]:
    """Held-out kernels with random compute share, latency mix and interaction."""
    from .platform import default_machine
    machine = machine or default_machine()
    rng = np.random.default_rng(seed)
    p = machine.platform
    t = machine.truth.for_cluster(p.clusters[0])
    out = []
    for i in range(count):
        c = float(rng.uniform(0.0, 1.0))
        kappa = float(rng.uniform(0.4, 0.9))
        mu = float(rng.uniform(0.0, 0.2))
        scale = reference_time_s * float(rng.uniform(0.5, 2.0))
        ops = c * scale * t.ipc * p.fc_max
        nbytes = (1.0 - c) * scale * t.bw_gbps[1] / (1.0 + mu)
        out.append(KernelParams(f"{prefix}{i:03d}", ops, nbytes, kappa, mu))
    return out


@dataclass
class KernelProfile:
    """Sampled times of one kernel: ``{option: [time at f_hi, time at f_lo]}``."""

    kernel: str
    f_hi: float
    f_lo: float
    f_m: float
    samples: dict[Option, list] = field(default_factory=dict)
    fallback: bool = False

    def record(self, option: Option, stage: int, seconds: float) -> None:
        if seconds <= 0:
            raise ModelError("sampled time must be > 0")
        self.samples.setdefault(option, [None, None])[stage] = float(seconds)

    def mb(self, option: Option) -> float:
        hi, lo = self.samples[option]
        return estimate_mb(hi, lo, self.f_hi, self.f_lo)

    def complete_for(self, options: Iterable[Option]) -> bool:
        return all(o in self.samples and None not in self.samples[o] for o in options)

    def fill_missing(self, options: Sequence[Option]) -> None:
        """Fill options lacking samples by reusing the most recent sample.

        A missing stage is reconstructed from the MB of the last option that
        has both stages; with no such option MB defaults to 0.5.
        """
        last_full = None
        last_any = None
        for o in options:
            s = self.samples.get(o)
            if s and None not in s:
                last_full = o
            if s and any(v is not None for v in s):
                last_any = o
        if last_any is None:
            raise ModelError(f"kernel {self.kernel}: no samples at all")
        if last_full is not None:
            mb = self.mb(last_full)
        else:
            mb = 0.5
            log.warning("kernel %s: only one sampling frequency observed; assuming MB=0.5", self.kernel)
        scale = (1.0 - mb) * self.f_hi / self.f_lo + mb
        for o in options:
            s = self.samples.get(o)
            if s is None or all(v is None for v in s):
                s = list(self.samples[last_any])
                self.fallback = True
            if s[0] is None:
                s[0] = s[1] / scale
                self.fallback = True
            if s[1] is None:
                s[1] = s[0] * scale
                self.fallback = True
            self.samples[o] = s


def sample_options(platform: PlatformSpec) -> list[Option]:
    return [(platform.clusters[ci].name, n) for ci, n in platform.options()]


def profile_from_oracle(machine: Machine, kernel: KernelParams,
                        sample_fc: tuple[float, float] = DEFAULT_SAMPLE_FC) -> KernelProfile:
    """Noise-free profile read straight off the ground truth."""
    from .platform import ground_truth_time
    p = machine.platform
    prof = KernelProfile(kernel.name, sample_fc[0], sample_fc[1], p.fm_max)
    for o in sample_options(p):
        for stage, f in enumerate(sample_fc):
            prof.record(o, stage, ground_truth_time(machine, kernel, Configuration(o[0], o[1], f, p.fm_max)))
    return prof


# ---------------------------------------------------------------------------
# Model set
# ---------------------------------------------------------------------------

@dataclass
class IdlePowerTable:
    cpu_w: dict[str, tuple[float, ...]]  # per cluster, indexed like the core ladder
    mem_w: tuple[float, ...]

    @classmethod
    def from_machine(cls, machine: Machine) -> "IdlePowerTable":
        p = machine.platform
        cpu = {c.name: tuple(float(cluster_idle_power(machine, c, f)) for f in c.core_freqs_ghz)
               for c in p.clusters}
        mem = tuple(float(mem_idle_power(machine, f)) for f in p.mem_freqs_ghz)
        return cls(cpu, mem)

    def to_dict(self) -> dict:
        return {"cpu_w": {k: list(v) for k, v in self.cpu_w.items()}, "mem_w": list(self.mem_w)}

    @classmethod
    def from_dict(cls, d: dict) -> "IdlePowerTable":
        return cls({k: tuple(v) for k, v in d["cpu_w"].items()}, tuple(d["mem_w"]))


@dataclass
class ModelSet:
    """Fitted stall, CPU-power and memory-power models per option."""

    stall: dict[Option, MprModel]
    cpu: dict[Option, MprModel]
    mem: dict[Option, MprModel]
    idle: IdlePowerTable
    sample_fc: tuple[float, float]
    sample_fm: float
    training_accuracy: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        models = []
        for kind, table in (("stall", self.stall), ("cpu", self.cpu), ("mem", self.mem)):
            for (cl, n), m in table.items():
                models.append({"kernel": "*", "cluster": cl, "n_cores": n, "kind": kind, **m.to_dict()})
        return {"models": models, "idle": self.idle.to_dict(), "sample_fc": list(self.sample_fc),
                "sample_fm": self.sample_fm, "training_accuracy": self.training_accuracy}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSet":
        tables: dict[str, dict] = {"stall": {}, "cpu": {}, "mem": {}}
        for m in d["models"]:
            tables[m["kind"]][(m["cluster"], int(m["n_cores"]))] = MprModel.from_dict(m)
        return cls(tables["stall"], tables["cpu"], tables["mem"], IdlePowerTable.from_dict(d["idle"]),
                   tuple(d["sample_fc"]), float(d["sample_fm"]), d.get("training_accuracy", {}))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "ModelSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ProfileRow:
    kernel: str
    cluster: str
    n_cores: int
    f_c: float
    f_m: float
    time_s: float
    cpu_w: float
    mem_w: float


PROFILE_FIELDS = ["kernel", "cluster", "n_cores", "f_c", "f_m", "time_s", "cpu_w", "mem_w"]


def profile_grid(machine: Machine, kernels: Sequence[KernelParams]) -> list[ProfileRow]:
    """Oracle measurements of every kernel over every configuration."""
    p = machine.platform
    opts = p.options()
    rows = []
    for k in kernels:
        g = truth_grid(machine, k)
        for o, (ci, n) in enumerate(opts):
            cl = p.clusters[ci].name
            for i, fc in enumerate(p.core_freqs_ghz):
                for j, fm in enumerate(p.mem_freqs_ghz):
                    rows.append(ProfileRow(k.name, cl, n, fc, fm, float(g.time[o, i, j]),
                                           float(g.cpu_w[o, i, j]), float(g.mem_w[o, i, j])))
    return rows


def write_profile_csv(rows: Sequence[ProfileRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROFILE_FIELDS)
        for r in rows:
            w.writerow([r.kernel, r.cluster, r.n_cores, repr(r.f_c), repr(r.f_m), repr(r.time_s),
                        repr(r.cpu_w), repr(r.mem_w)])


def read_profile_csv(path: str | Path) -> list[ProfileRow]:
    rows = []
    with open(path, newline="") as fh:
        for d in csv.DictReader(fh):
            rows.append(ProfileRow(d["kernel"], d["cluster"], int(d["n_cores"]), float(d["f_c"]),
                                   float(d["f_m"]), float(d["time_s"]), float(d["cpu_w"]), float(d["mem_w"])))
    return rows


def _row_arrays(rows: Sequence[ProfileRow]):
    by_opt: dict[Option, dict[str, list[ProfileRow]]] = {}
    for r in rows:
        by_opt.setdefault((r.cluster, r.n_cores), {}).setdefault(r.kernel, []).append(r)
    return by_opt


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9


def fit_models(rows: Sequence[ProfileRow], platform: PlatformSpec, idle: IdlePowerTable,
               sample_fc: tuple[float, float] = DEFAULT_SAMPLE_FC) -> ModelSet:
    """Fit the three models for every option from full-grid profile rows."""
    f_hi, f_lo = sample_fc
    f_ms = platform.fm_max
    stall_m, cpu_m, mem_m = {}, {}, {}
    acc = {}
    by_opt = _row_arrays(rows)
    for o in sample_options(platform):
        if o not in by_opt:
            raise ModelError(f"no profile rows for cluster={o[0]} n_cores={o[1]}")
        xs, ys, xc, yc, xm, ym = [], [], [], [], [], []
        for kname, krows in sorted(by_opt[o].items()):
            t_hi = next((r.time_s for r in krows if _close(r.f_c, f_hi) and _close(r.f_m, f_ms)), None)
            t_lo = next((r.time_s for r in krows if _close(r.f_c, f_lo) and _close(r.f_m, f_ms)), None)
            if t_hi is None or t_lo is None:
                raise ModelError(f"kernel {kname} lacks sampling-point rows at {o}")
            mb = estimate_mb(t_hi, t_lo, f_hi, f_lo)
            for r in krows:
                comp = t_hi * (1.0 - mb) * (f_hi / r.f_c)
                xs.append((mb, f_hi / r.f_c, f_ms / r.f_m))
                ys.append((r.time_s - comp) / t_hi)
                xc.append((mb, r.f_c))
                yc.append(r.cpu_w)
                xm.append((mb, r.f_c, r.f_m))
                ym.append(r.mem_w)
        tag = f"{o[0]}x{o[1]}"
        stall_m[o] = mpr.fit(ProfileDataset(np.array(xs), np.array(ys), tag))
        cpu_m[o] = mpr.fit(ProfileDataset(np.array(xc), np.array(yc), tag))
        mem_m[o] = mpr.fit(ProfileDataset(np.array(xm), np.array(ym), tag))
    ms = ModelSet(stall_m, cpu_m, mem_m, idle, (f_hi, f_lo), f_ms)
    ms.training_accuracy = training_accuracy(ms, rows)
    return ms


def training_accuracy(models: ModelSet, rows: Sequence[ProfileRow]) -> dict:
    """Median accuracy of each model over the rows it was trained on."""
    f_hi, f_lo = models.sample_fc
    f_ms = models.sample_fm
    acc: dict[str, list[float]] = {"time": [], "cpu_w": [], "mem_w": []}
    for o, kernels in _row_arrays(rows).items():
        for krows in kernels.values():
            t_hi = next(r.time_s for r in krows if _close(r.f_c, f_hi) and _close(r.f_m, f_ms))
            t_lo = next(r.time_s for r in krows if _close(r.f_c, f_lo) and _close(r.f_m, f_ms))
            mb = estimate_mb(t_hi, t_lo, f_hi, f_lo)
            for r in krows:
                pt = predict_time(t_hi, mb, f_hi, r.f_c, f_ms, r.f_m, models.stall[o])
                acc["time"].append(accuracy(r.time_s, pt))
                if r.cpu_w > 0:
                    acc["cpu_w"].append(accuracy(r.cpu_w, predict_cpu_power(mb, r.f_c, models.cpu[o])))
                if r.mem_w > 0:
                    acc["mem_w"].append(accuracy(r.mem_w, predict_mem_power(mb, r.f_c, r.f_m, models.mem[o])))
    return {k: float(np.median(v)) if v else float("nan") for k, v in acc.items()}


def fit_default_models(machine: Machine, ladder: SyntheticLadder | None = None) -> ModelSet:
    ladder = ladder or SyntheticLadder.build(machine)
    rows = profile_grid(machine, ladder.kernels)
    return fit_models(rows, machine.platform, IdlePowerTable.from_machine(machine))


# ---------------------------------------------------------------------------
# Lookup tables
# ---------------------------------------------------------------------------

@dataclass
class LookupTables:
    """Per-kernel time / CPU power / memory power over the configuration grid.

    Arrays are indexed ``[option, fc_index, fm_index]`` in
    :meth:`PlatformSpec.options` order. ``measured`` flags cells whose time
    is a sampled value rather than a prediction.
    """

    kernel: str
    platform: PlatformSpec
    time: np.ndarray
    cpu_w: np.ndarray
    mem_w: np.ndarray
    measured: np.ndarray
    idle: IdlePowerTable
    mb: dict[Option, float] = field(default_factory=dict)

    @property
    def options(self) -> list[Option]:
        return sample_options(self.platform)

    @property
    def entry_count(self) -> int:
        return self.time.size + self.cpu_w.size + self.mem_w.size

    def index(self, cfg: Configuration) -> tuple[int, int, int]:
        p = self.platform
        try:
            o = self.options.index((cfg.cluster, cfg.n_cores))
        except ValueError:
            raise ConfigError(f"no table entry for {cfg}") from None
        return o, ladder_index(p.core_freqs_ghz, cfg.f_c), ladder_index(p.mem_freqs_ghz, cfg.f_m)

    def config(self, o: int, i: int, j: int) -> Configuration:
        cl, n = self.options[o]
        return Configuration(cl, n, self.platform.core_freqs_ghz[i], self.platform.mem_freqs_ghz[j])

    def cell(self, cfg: Configuration) -> tuple[float, float, float]:
        o, i, j = self.index(cfg)
        return float(self.time[o, i, j]), float(self.cpu_w[o, i, j]), float(self.mem_w[o, i, j])

    def idle_cpu(self, o: int, i: int) -> float:
        return self.idle.cpu_w[self.options[o][0]][i]

    def idle_mem(self, j: int) -> float:
        return self.idle.mem_w[j]

    def rows(self) -> list[dict]:
        out = []
        p = self.platform
        for o, (cl, n) in enumerate(self.options):
            for i, fc in enumerate(p.core_freqs_ghz):
                for j, fm in enumerate(p.mem_freqs_ghz):
                    out.append({"kernel": self.kernel, "cluster": cl, "n_cores": n, "f_c": fc, "f_m": fm,
                                "time_s": float(self.time[o, i, j]), "cpu_w": float(self.cpu_w[o, i, j]),
                                "mem_w": float(self.mem_w[o, i, j]),
                                "source": "measured" if self.measured[o, i, j] else "predicted"})
        return out


TABLE_FIELDS = ["kernel", "cluster", "n_cores", "f_c", "f_m", "time_s", "cpu_w", "mem_w", "source"]


def write_tables_csv(tables: Iterable[LookupTables], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TABLE_FIELDS)
        w.writeheader()
        for t in tables:
            for r in t.rows():
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})


def table_entry_count(platform: PlatformSpec) -> int:
    return 3 * len(platform.options()) * len(platform.core_freqs_ghz) * len(platform.mem_freqs_ghz)


def build_tables(profile: KernelProfile, models: ModelSet, platform: PlatformSpec) -> LookupTables:
    """Populate every cell from the kernel's samples and the fitted models."""
    fcs = np.asarray(platform.core_freqs_ghz)
    fms = np.asarray(platform.mem_freqs_ghz)
    opts = sample_options(platform)
    shape = (len(opts), len(fcs), len(fms))
    time = np.empty(shape)
    cpu = np.empty(shape)
    mem = np.empty(shape)
    measured = np.zeros(shape, dtype=bool)
    f_hi, f_lo, f_ms = profile.f_hi, profile.f_lo, profile.f_m
    fc_g, fm_g = np.meshgrid(fcs, fms, indexing="ij")
    mbs = {}
    for o, opt in enumerate(opts):
        s = profile.samples.get(opt)
        if s is None or None in s:
            raise ModelError(f"kernel {profile.kernel}: missing profile for cluster={opt[0]} n_cores={opt[1]}")
        if opt not in models.stall:
            raise ModelError(f"no fitted models for cluster={opt[0]} n_cores={opt[1]}")
        t_hi, t_lo = s
        mb = estimate_mb(t_hi, t_lo, f_hi, f_lo)
        mbs[opt] = mb
        x = stall_features(mb, f_hi, fc_g, f_ms, fm_g)
        comp = t_hi * (1.0 - mb) * (f_hi / fc_g)
        stall = t_hi * models.stall[opt].predict_many(x.reshape(-1, 3)).reshape(fc_g.shape)
        time[o] = np.maximum(TIME_FLOOR_S, comp + stall)
        xc = np.stack([np.full(fcs.shape, mb), fcs], axis=1)
        cpu[o] = models.cpu[opt].predict_many(xc)[:, None]
        xm = np.stack([np.full(fc_g.size, mb), fc_g.ravel(), fm_g.ravel()], axis=1)
        mem[o] = models.mem[opt].predict_many(xm).reshape(fc_g.shape)
        jm = ladder_index(platform.mem_freqs_ghz, f_ms)
        for stage, f in enumerate((f_hi, f_lo)):
            i = ladder_index(platform.core_freqs_ghz, f)
            time[o, i, jm] = s[stage]
            measured[o, i, jm] = True
    # power predictions are kept strictly positive
    np.maximum(cpu, 1e-9, out=cpu)
    np.maximum(mem, 1e-9, out=mem)
    return LookupTables(profile.kernel, platform, time, cpu, mem, measured, models.idle, mbs)


def oracle_tables(machine: Machine, kernel: KernelParams) -> LookupTables:
    """Tables holding exact ground-truth values (every cell marked measured)."""
    p = machine.platform
    g = truth_grid(machine, kernel)
    idle = IdlePowerTable.from_machine(machine)
    mb = {o: float(g.mb[k, ladder_index(p.core_freqs_ghz, p.fc_max), -1])
          for k, o in enumerate(sample_options(p))}
    return LookupTables(kernel.name, p, g.time.copy(), g.cpu_w.copy(), g.mem_w.copy(),
                        np.ones(g.time.shape, dtype=bool), idle, mb)
