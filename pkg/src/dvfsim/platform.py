"""Simulated asymmetric multicore platform and its hidden ground-truth oracle.

The platform describes clusters, frequency ladders and DVFS latencies. The
ground truth turns a kernel description plus a configuration into the "real"
execution time and power draw that the learned models try to reproduce.

Time model for a task run on ``n`` cores of a cluster at ``(f_c, f_m)``::

    comp  = ops / (ipc * n * eff(n) * f_c)
    S0    = bytes / bw(n)
    stall = S0 * (kappa * Fm/f_m + (1 - kappa) * Fc/f_c + mu * Fc/f_c * Fm/f_m)

where ``Fc`` and ``Fm`` are the ladder maxima.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid platform, ground truth or configuration."""


def _check_ladder(name: str, values: Sequence[float]) -> tuple[float, ...]:
    vals = tuple(float(v) for v in values)
    if not vals:
        raise ConfigError(f"{name}: empty frequency ladder")
    if any(v <= 0 for v in vals):
        raise ConfigError(f"{name}: frequencies must be > 0")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError(f"{name}: ladder must be strictly ascending")
    return vals


def allowed_core_counts(core_count: int) -> tuple[int, ...]:
    """Powers of two up to ``core_count``."""
    counts = []
    n = 1
    while n <= core_count:
        counts.append(n)
        n *= 2
    return tuple(counts)


@dataclass(frozen=True)
class ClusterSpec:
    name: str
    core_count: int
    core_freqs_ghz: tuple[float, ...]
    perf_class: str = ""

    def __post_init__(self):
        if self.core_count < 1:
            raise ConfigError(f"cluster {self.name}: core_count must be >= 1")
        object.__setattr__(self, "core_freqs_ghz", _check_ladder(self.name, self.core_freqs_ghz))
        if not self.perf_class:
            object.__setattr__(self, "perf_class", self.name)

    @property
    def core_options(self) -> tuple[int, ...]:
        return allowed_core_counts(self.core_count)


@dataclass(frozen=True)
class Configuration:
    """``<core type, core count, core frequency, memory frequency>``."""

    cluster: str
    n_cores: int
    f_c: float
    f_m: float

    def __str__(self) -> str:
        return f"<{self.cluster}, {self.n_cores}, {self.f_c:.2f}, {self.f_m:.2f}>"

    def as_dict(self) -> dict:
        return {"cluster": self.cluster, "n_cores": self.n_cores, "f_c": self.f_c, "f_m": self.f_m}


@dataclass(frozen=True)
class PlatformSpec:
    clusters: tuple[ClusterSpec, ...]
    mem_freqs_ghz: tuple[float, ...]
    cpu_dvfs_latency_s: float = 50e-6
    mem_dvfs_latency_s: float = 100e-6
    power_sample_period_s: float = 5e-3

    def __post_init__(self):
        object.__setattr__(self, "clusters", tuple(self.clusters))
        if not self.clusters:
            raise ConfigError("platform needs at least one cluster")
        names = [c.name for c in self.clusters]
        if len(set(names)) != len(names):
            raise ConfigError("cluster names must be unique")
        object.__setattr__(self, "mem_freqs_ghz", _check_ladder("memory", self.mem_freqs_ghz))
        ladder = self.clusters[0].core_freqs_ghz
        for c in self.clusters[1:]:
            if c.core_freqs_ghz != ladder:
                raise ConfigError("all clusters must share the same core-frequency ladder")
        if self.cpu_dvfs_latency_s < 0 or self.mem_dvfs_latency_s < 0:
            raise ConfigError("DVFS latencies must be >= 0")

    @property
    def core_freqs_ghz(self) -> tuple[float, ...]:
        return self.clusters[0].core_freqs_ghz

    @property
    def fc_max(self) -> float:
        return self.core_freqs_ghz[-1]

    @property
    def fm_max(self) -> float:
        return self.mem_freqs_ghz[-1]

    @property
    def total_cores(self) -> int:
        return sum(c.core_count for c in self.clusters)

    def cluster_index(self, name: str) -> int:
        for i, c in enumerate(self.clusters):
            if c.name == name:
                return i
        raise ConfigError(f"unknown cluster {name!r}")

    def cluster(self, name: str) -> ClusterSpec:
        return self.clusters[self.cluster_index(name)]

    def options(self) -> list[tuple[int, int]]:
        """All ``(cluster index, n_cores)`` pairs in platform order."""
        return [(ci, n) for ci, c in enumerate(self.clusters) for n in c.core_options]

    def configurations(self) -> Iterator[Configuration]:
        for ci, n in self.options():
            name = self.clusters[ci].name
            for fc in self.core_freqs_ghz:
                for fm in self.mem_freqs_ghz:
                    yield Configuration(name, n, fc, fm)

    def validate(self, cfg: Configuration) -> None:
        try:
            cl = self.cluster(cfg.cluster)
        except ConfigError as exc:
            raise ConfigError(f"invalid configuration {cfg}: {exc}") from None
        if cfg.n_cores not in cl.core_options:
            raise ConfigError(f"invalid configuration {cfg}: n_cores not in {cl.core_options}")
        if cfg.f_c not in cl.core_freqs_ghz:
            raise ConfigError(f"invalid configuration {cfg}: f_c not on the core ladder")
        if cfg.f_m not in self.mem_freqs_ghz:
            raise ConfigError(f"invalid configuration {cfg}: f_m not on the memory ladder")


@dataclass(frozen=True)
class ClusterTruth:
    """Hidden per-core-type behaviour."""

    ipc: float
    eff: Mapping[int, float]
    bw_gbps: Mapping[int, float]
    alpha: float
    beta: float
    v0: float
    v1: float
    iota: float
    vmin: float = 0.0

    def __post_init__(self):
        eff = {int(k): float(v) for k, v in self.eff.items()}
        bw = {int(k): float(v) for k, v in self.bw_gbps.items()}
        object.__setattr__(self, "eff", eff)
        object.__setattr__(self, "bw_gbps", bw)
        for name in ("ipc", "alpha", "beta", "v0", "v1", "iota", "vmin"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.ipc <= 0:
            raise ConfigError("ipc must be > 0")
        ns = sorted(eff)
        if not ns or eff.get(1) != 1.0:
            raise ConfigError("eff(1) must equal 1")
        if any(eff[b] > eff[a] for a, b in zip(ns, ns[1:])):
            raise ConfigError("eff must be non-increasing in n")
        bns = sorted(bw)
        if any(bw[k] <= 0 for k in bns):
            raise ConfigError("bandwidth must be > 0")
        if any(bw[b] < bw[a] for a, b in zip(bns, bns[1:])):
            raise ConfigError("bandwidth must be non-decreasing in n")

    def voltage(self, f_c):
        # vmin models the regulator floor; 0 leaves the linear law untouched
        return np.maximum(self.vmin, self.v0 + self.v1 * f_c)


@dataclass(frozen=True)
class KernelParams:
    """Ground-truth description of one kernel (task type)."""

    name: str
    ops: float  # G-ops
    bytes: float  # GB
    kappa: float = 0.8
    mu: float = 0.1

    def __post_init__(self):
        if self.ops < 0 or self.bytes < 0 or self.mu < 0:
            raise ConfigError(f"kernel {self.name}: ops, bytes and mu must be >= 0")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kernel {self.name}: kappa must lie in [0, 1]")

    def as_dict(self) -> dict:
        return {"name": self.name, "ops": self.ops, "bytes": self.bytes, "kappa": self.kappa, "mu": self.mu}


@dataclass(frozen=True)
class GroundTruthParams:
    classes: Mapping[str, ClusterTruth]
    delta0: float = 0.15
    delta1: float = 0.05
    rho0: float = 0.10
    rho1: float = 0.10
    noise: float = 0.0

    def __post_init__(self):
        for name in ("delta0", "delta1", "rho0", "rho1", "noise"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")

    def for_cluster(self, cluster: ClusterSpec) -> ClusterTruth:
        try:
            return self.classes[cluster.perf_class]
        except KeyError:
            raise ConfigError(f"no ground truth for perf class {cluster.perf_class!r}") from None


@dataclass(frozen=True)
class Machine:
    """A platform together with the ground truth that drives it."""

    platform: PlatformSpec
    truth: GroundTruthParams

    def __post_init__(self):
        for c in self.platform.clusters:
            t = self.truth.for_cluster(c)
            for n in c.core_options:
                if n not in t.eff or n not in t.bw_gbps:
                    raise ConfigError(f"cluster {c.name}: missing eff/bw entry for n={n}")


# ---------------------------------------------------------------------------
# Oracle
# ---------------------------------------------------------------------------

def time_split(machine: Machine, kernel: KernelParams, cfg: Configuration) -> tuple[float, float]:
    """Return ``(comp, stall)`` seconds for ``kernel`` at ``cfg``."""
    p = machine.platform
    p.validate(cfg)
    t = machine.truth.for_cluster(p.cluster(cfg.cluster))
    n = cfg.n_cores
    comp = kernel.ops / (t.ipc * n * t.eff[n] * cfg.f_c)
    s0 = kernel.bytes / t.bw_gbps[n]
    rc = p.fc_max / cfg.f_c
    rm = p.fm_max / cfg.f_m
    stall = s0 * (kernel.kappa * rm + (1.0 - kernel.kappa) * rc + kernel.mu * rc * rm)
    return comp, stall


def ground_truth_time(machine: Machine, kernel: KernelParams, cfg: Configuration,
                      rng: np.random.Generator | None = None) -> float:
    comp, stall = time_split(machine, kernel, cfg)
    total = comp + stall
    if machine.truth.noise > 0 and rng is not None:
        total *= max(0.5, 1.0 + machine.truth.noise * rng.standard_normal())
    return total


def true_mb(machine: Machine, kernel: KernelParams, cfg: Configuration) -> float:
    comp, stall = time_split(machine, kernel, cfg)
    total = comp + stall
    return stall / total if total > 0 else 0.0


def ground_truth_cpu_power(machine: Machine, kernel: KernelParams, cfg: Configuration,
                           mb_true: float | None = None) -> float:
    """Dynamic CPU power of the whole task (all ``n_cores``)."""
    if mb_true is None:
        mb_true = true_mb(machine, kernel, cfg)
    if not 0.0 <= mb_true <= 1.0:
        raise ConfigError(f"mb_true must lie in [0, 1], got {mb_true}")
    p = machine.platform
    p.validate(cfg)
    t = machine.truth.for_cluster(p.cluster(cfg.cluster))
    v = t.voltage(cfg.f_c)
    return cfg.n_cores * t.alpha * cfg.f_c * v * v * (1.0 - t.beta * mb_true)


def ground_truth_mem_power(machine: Machine, kernel: KernelParams, cfg: Configuration,
                           traffic_rate_gbps: float | None = None) -> float:
    """Dynamic memory power attributable to the task."""
    if traffic_rate_gbps is None:
        tm = ground_truth_time(machine, kernel, cfg)
        traffic_rate_gbps = kernel.bytes / tm if tm > 0 else 0.0
    if traffic_rate_gbps < 0:
        raise ConfigError("traffic rate must be >= 0")
    tr = machine.truth
    return tr.delta0 * cfg.f_m + tr.delta1 * traffic_rate_gbps


def cluster_idle_power(machine: Machine, cluster: ClusterSpec, f_c) -> float:
    """Idle power of every core of ``cluster`` at core frequency ``f_c``."""
    t = machine.truth.for_cluster(cluster)
    return cluster.core_count * t.iota * t.voltage(f_c)


def mem_idle_power(machine: Machine, f_m) -> float:
    return machine.truth.rho0 + machine.truth.rho1 * f_m


@dataclass
class TruthGrid:
    """Oracle values over every configuration of one kernel.

    Arrays are indexed ``[option, fc_index, fm_index]`` with options in
    :meth:`PlatformSpec.options` order.
    """

    time: np.ndarray
    comp: np.ndarray
    stall: np.ndarray
    cpu_w: np.ndarray
    mem_w: np.ndarray

    @property
    def mb(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.time > 0, self.stall / self.time, 0.0)


def truth_grid(machine: Machine, kernel: KernelParams) -> TruthGrid:
    """Vectorised oracle evaluation; agrees with the scalar functions."""
    p = machine.platform
    fc = np.asarray(p.core_freqs_ghz)[:, None]
    fm = np.asarray(p.mem_freqs_ghz)[None, :]
    rc = p.fc_max / fc
    rm = p.fm_max / fm
    opts = p.options()
    shape = (len(opts), len(p.core_freqs_ghz), len(p.mem_freqs_ghz))
    comp = np.empty(shape)
    stall = np.empty(shape)
    cpu = np.empty(shape)
    for o, (ci, n) in enumerate(opts):
        t = machine.truth.for_cluster(p.clusters[ci])
        comp[o] = np.broadcast_to(kernel.ops / (t.ipc * n * t.eff[n] * fc), shape[1:])
        s0 = kernel.bytes / t.bw_gbps[n]
        stall[o] = s0 * (kernel.kappa * rm + (1.0 - kernel.kappa) * rc + kernel.mu * rc * rm)
        total = comp[o] + stall[o]
        with np.errstate(invalid="ignore", divide="ignore"):
            mb = np.where(total > 0, stall[o] / np.where(total > 0, total, 1.0), 0.0)
        v = t.voltage(fc)
        cpu[o] = n * t.alpha * fc * v * v * (1.0 - t.beta * mb)
    time = comp + stall
    with np.errstate(invalid="ignore", divide="ignore"):
        traffic = np.where(time > 0, kernel.bytes / np.where(time > 0, time, 1.0), 0.0)
    mem = machine.truth.delta0 * fm + machine.truth.delta1 * traffic
    return TruthGrid(time=time, comp=comp, stall=stall, cpu_w=cpu, mem_w=np.broadcast_to(mem, shape).copy())


# ---------------------------------------------------------------------------
# Defaults and config files
# ---------------------------------------------------------------------------

TX2_CORE_LADDER = (0.65, 0.81, 0.96, 1.11, 1.27, 1.42, 1.57, 1.73, 1.88, 2.04)
TX2_MEM_LADDER = (0.80, 1.07, 1.33, 1.60, 1.87)


def default_tx2_spec() -> PlatformSpec:
    return PlatformSpec(
        clusters=(
            ClusterSpec("denver", 2, TX2_CORE_LADDER, "denver"),
            ClusterSpec("a57", 4, TX2_CORE_LADDER, "a57"),
        ),
        mem_freqs_ghz=TX2_MEM_LADDER,
        cpu_dvfs_latency_s=50e-6,
        mem_dvfs_latency_s=100e-6,
        power_sample_period_s=5e-3,
    )


def default_tx2_truth() -> GroundTruthParams:
    # Denver single-core throughput is 3.4x an A57 core; the voltage floor
    # sits at 1.11 GHz on both clusters.
    return GroundTruthParams(
        classes={
            "denver": ClusterTruth(
                ipc=3.4, eff={1: 1.0, 2: 0.98}, bw_gbps={1: 8.0, 2: 10.0},
                alpha=0.90, beta=0.5, v0=0.467, v1=0.30, iota=0.20, vmin=0.80,
            ),
            "a57": ClusterTruth(
                ipc=1.0, eff={1: 1.0, 2: 0.97, 4: 0.93}, bw_gbps={1: 4.0, 2: 6.0, 4: 7.5},
                alpha=0.30, beta=0.5, v0=0.467, v1=0.30, iota=0.05, vmin=0.80,
            ),
        },
        delta0=0.25, delta1=0.04, rho0=0.10, rho1=0.15,
    )


def default_machine() -> Machine:
    return Machine(default_tx2_spec(), default_tx2_truth())


def machine_to_dict(machine: Machine) -> dict:
    p, t = machine.platform, machine.truth
    return {
        "platform": {
            "clusters": [
                {"name": c.name, "core_count": c.core_count, "core_freqs_ghz": list(c.core_freqs_ghz),
                 "perf_class": c.perf_class}
                for c in p.clusters
            ],
            "mem_freqs_ghz": list(p.mem_freqs_ghz),
            "cpu_dvfs_latency_s": p.cpu_dvfs_latency_s,
            "mem_dvfs_latency_s": p.mem_dvfs_latency_s,
            "power_sample_period_s": p.power_sample_period_s,
        },
        "ground_truth": {
            "classes": {
                k: {"ipc": v.ipc, "eff": {str(n): e for n, e in v.eff.items()},
                    "bw_gbps": {str(n): b for n, b in v.bw_gbps.items()},
                    "alpha": v.alpha, "beta": v.beta, "v0": v.v0, "v1": v.v1, "iota": v.iota,
                    "vmin": v.vmin}
                for k, v in t.classes.items()
            },
            "delta0": t.delta0, "delta1": t.delta1, "rho0": t.rho0, "rho1": t.rho1, "noise": t.noise,
        },
    }


def machine_from_dict(data: dict) -> Machine:
    try:
        pd = data["platform"]
        platform = PlatformSpec(
            clusters=tuple(ClusterSpec(c["name"], int(c["core_count"]), tuple(c["core_freqs_ghz"]),
                                       c.get("perf_class", "")) for c in pd["clusters"]),
            mem_freqs_ghz=tuple(pd["mem_freqs_ghz"]),
            cpu_dvfs_latency_s=float(pd.get("cpu_dvfs_latency_s", 50e-6)),
            mem_dvfs_latency_s=float(pd.get("mem_dvfs_latency_s", 100e-6)),
            power_sample_period_s=float(pd.get("power_sample_period_s", 5e-3)),
        )
        td = data["ground_truth"]
        classes = {name: ClusterTruth(**c) for name, c in td["classes"].items()}
        truth = GroundTruthParams(classes=classes, **{k: v for k, v in td.items() if k != "classes"})
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed platform description: {exc}") from None
    return Machine(platform, truth)


def load_machine(path: str | Path | None) -> Machine:
    if path is None:
        return default_machine()
    with open(path) as fh:
        return machine_from_dict(json.load(fh))


def save_machine(machine: Machine, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(machine_to_dict(machine), fh, indent=2, sort_keys=True)
        fh.write("\n")


def snap_to_ladder(value: float, ladder: Sequence[float]) -> float:
    """Nearest ladder value; exact ties go to the lower frequency."""
    best = ladder[0]
    best_d = abs(value - best)
    for f in ladder[1:]:
        d = abs(value - f)
        if d < best_d - 1e-12:
            best, best_d = f, d
    return best


def ladder_index(ladder: Sequence[float], value: float) -> int:
    for i, f in enumerate(ladder):
        if math.isclose(f, value, rel_tol=0, abs_tol=1e-12):
            return i
    raise ConfigError(f"{value} is not on the ladder {tuple(ladder)}")
