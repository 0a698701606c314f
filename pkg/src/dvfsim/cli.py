"""Command line harness: profile, fit, run, compare, sweep.

Every subcommand reads only files and flags, so the stages can be chained
(``profile`` -> ``fit`` -> ``run``) without hidden state.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import SCHEDULERS, make_scheduler
from .dag import DagError, TaskDAG
from .models import (IdlePowerTable, ModelError, ModelSet, SyntheticLadder, fit_default_models, fit_models,
                     read_profile_csv, write_profile_csv, profile_grid)
from .platform import (ConfigError, KernelParams, Machine, cluster_idle_power, load_machine, machine_to_dict,
                       mem_idle_power, truth_grid)
from .sched import Goal, SchedulerError
from .simengine import RunReport, SimulationError, config_hash, run
from .workloads import SUITE, standard_kernels, workload_from_spec

log = logging.getLogger("dvfsim")

SUMMARY_FIELDS = ["workload", "scheduler", "goal", "seed", "n_tasks", "makespan_s", "total_j", "cpu_j", "mem_j",
                  "sampling_overhead", "closure_error", "config_hash"]


class CliError(Exception):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    workload: dict
    scheduler: str = "joss"
    goal: str = "min_energy"
    platform: str | None = None
    models: str | None = None
    out: str = "out"
    oracle: bool = False
    schedulers: list[str] = field(default_factory=lambda: list(SCHEDULERS))

    def validate(self) -> None:
        for label, path in (("platform", self.platform), ("models", self.models)):
            if path is not None and not Path(path).is_file():
                raise CliError(f"{label} file not found: {path}")
        if self.workload.get("generator") == "file" and not Path(self.workload.get("path", "")).is_file():
            raise CliError(f"workload file not found: {self.workload.get('path')}")
        for s in [self.scheduler] + list(self.schedulers):
            if s not in SCHEDULERS:
                raise CliError(f"unknown scheduler {s!r}; choose from {', '.join(SCHEDULERS)}")
        Goal.parse(self.goal)

    def as_dict(self) -> dict:
        return {"seed": self.seed, "workload": self.workload, "scheduler": self.scheduler, "goal": self.goal,
                "platform": self.platform, "models": self.models, "oracle": self.oracle}


def parse_workload(text: str, scale: float = 1.0) -> dict:
    """A suite name, a JSON workload description or a DAG text file."""
    if text in SUITE:
        return {"suite": text, "scale": scale}
    path = Path(text)
    if not path.is_file():
        raise CliError(f"workload {text!r} is neither a suite member ({', '.join(SUITE)}) nor a file")
    if path.suffix == ".json":
        with open(path) as fh:
            return json.load(fh)
    return {"generator": "file", "path": str(path)}


def load_config(args) -> ExperimentConfig:
    data: dict = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
    seed = args.seed if args.seed is not None else data.get("seed")
    if seed is None:
        raise CliError("a seed is required (--seed or \"seed\" in the config file)")
    if args.workload is not None:
        workload = parse_workload(args.workload, args.scale)
    elif "workload" in data:
        w = data["workload"]
        workload = parse_workload(w, args.scale) if isinstance(w, str) else dict(w)
    else:
        raise CliError("no workload given (--workload or \"workload\" in the config file)")
    cfg = ExperimentConfig(
        seed=int(seed), workload=workload,
        scheduler=getattr(args, "scheduler", None) or data.get("scheduler", "joss"),
        goal=args.goal or data.get("goal", "min_energy"),
        platform=args.platform or data.get("platform"),
        models=args.models or data.get("models"),
        out=args.out or data.get("out", "out"),
        oracle=bool(getattr(args, "oracle", False) or data.get("oracle", False)),
    )
    sch = getattr(args, "schedulers", None) or data.get("schedulers")
    if sch:
        cfg.schedulers = sch.split(",") if isinstance(sch, str) else list(sch)
    cfg.validate()
    return cfg


def _machine(path: str | None) -> Machine:
    if path is not None and not Path(path).is_file():
        raise CliError(f"platform file not found: {path}")
    return load_machine(path)


def _models(cfg: ExperimentConfig, machine: Machine) -> ModelSet:
    if cfg.models:
        return ModelSet.load(cfg.models)
    return fit_default_models(machine)


def _outdir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}") from None
    return out


def summary_row(rep: RunReport) -> dict:
    return {"workload": rep.workload, "scheduler": rep.scheduler, "goal": rep.goal, "seed": rep.seed,
            "n_tasks": rep.n_tasks, "makespan_s": repr(rep.makespan_s), "total_j": repr(rep.total_j),
            "cpu_j": repr(rep.cpu_j), "mem_j": repr(rep.mem_j), "sampling_overhead": repr(rep.sampling_overhead),
            "closure_error": repr(rep.closure_error), "config_hash": rep.config_hash}


def _write_csv(path: Path, fields: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def run_one(machine: Machine, models: ModelSet | None, dag: TaskDAG, scheduler: str, goal: str, seed: int,
            oracle: bool = False, trace: bool = False, workload: str | None = None):
    policy = make_scheduler(scheduler, models, Goal.parse(goal), oracle=oracle)
    return run(dag, policy, machine, seed=seed, trace=trace, workload=workload)


def _workload_name(spec: dict) -> str:
    if "suite" in spec:
        return spec["suite"]
    if spec.get("generator") == "file":
        return Path(spec["path"]).stem
    return spec.get("name", spec.get("generator", "custom"))


# -- subcommands ------------------------------------------------------------

def cmd_profile(args) -> int:
    machine = _machine(args.platform)
    ladder = SyntheticLadder.build(machine)
    rows = profile_grid(machine, ladder.kernels)
    out = Path(args.out)
    try:
        write_profile_csv(rows, out)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from None
    h = config_hash({"cmd": "profile", "machine": machine_to_dict(machine)})
    print(f"wrote {len(rows)} rows for {len(ladder)} kernels to {out} (config {h[:12]})")
    return 0


def cmd_fit(args) -> int:
    machine = _machine(args.platform)
    if not Path(args.profile).is_file():
        raise CliError(f"profile file not found: {args.profile}")
    rows = read_profile_csv(args.profile)
    models = fit_models(rows, machine.platform, IdlePowerTable.from_machine(machine))
    try:
        models.save(args.out)
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    acc = models.training_accuracy
    print(f"fitted {len(models.stall)} options from {len(rows)} rows -> {args.out}")
    print("median training accuracy: " + ", ".join(f"{k} {v:.4f}" for k, v in acc.items()))
    return 0


def cmd_run(args) -> int:
    cfg = load_config(args)
    machine = _machine(cfg.platform)
    dag = workload_from_spec(cfg.workload)
    name = _workload_name(cfg.workload)
    models = None if cfg.oracle and not cfg.models else _models(cfg, machine)
    rep, eng = run_one(machine, models, dag, cfg.scheduler, cfg.goal, cfg.seed, cfg.oracle, args.trace, name)
    goal = Goal.parse(cfg.goal)
    if goal.kind != "min_energy":
        base, _ = run_one(machine, models, dag, cfg.scheduler, "min_energy", cfg.seed, cfg.oracle, False, name)
        rep.extra["baseline_makespan_s"] = base.makespan_s
        rep.extra["achieved_speedup"] = base.makespan_s / rep.makespan_s if rep.makespan_s > 0 else 0.0
        if goal.kind == "speedup":
            rep.extra["target_speedup"] = goal.target
    out = _outdir(cfg.out)
    stem = f"{name}_{cfg.scheduler}_{str(goal).replace(':', '')}_s{cfg.seed}"
    (out / f"{stem}.json").write_text(rep.to_json())
    _write_csv(out / f"{stem}.csv", SUMMARY_FIELDS, [summary_row(rep)])
    if args.trace:
        (out / f"{stem}.trace").write_text("\n".join(eng.trace) + "\n")
    line = f"{name} {cfg.scheduler} {goal}: {rep.total_j:.3f} J in {rep.makespan_s:.3f} s"
    if "achieved_speedup" in rep.extra:
        line += f", speedup {rep.extra['achieved_speedup']:.3f}"
    print(line + f" (config {rep.config_hash[:12]})")
    return 0


def _compare_job(job):
    machine_path, models_path, spec, scheduler, goal, seed, oracle = job
    machine = load_machine(machine_path)
    models = None
    if not (oracle and not models_path):
        models = ModelSet.load(models_path) if models_path else fit_default_models(machine)
    dag = workload_from_spec(spec)
    rep, _ = run_one(machine, models, dag, scheduler, goal, seed, oracle, False, _workload_name(spec))
    return rep


def cmd_compare(args) -> int:
    cfg = load_config(args)
    scheds = list(cfg.schedulers)
    if "grws" not in scheds:
        scheds.insert(0, "grws")
    jobs = [(cfg.platform, cfg.models, cfg.workload, s, cfg.goal, cfg.seed, cfg.oracle) for s in scheds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            reports = list(ex.map(_compare_job, jobs))
    else:
        reports = [_compare_job(j) for j in jobs]
    base = next(r for r in reports if r.scheduler == "grws").total_j
    rows = []
    for r in reports:
        row = summary_row(r)
        row["normalized"] = repr(r.total_j / base)
        rows.append(row)
    out = _outdir(cfg.out)
    name = _workload_name(cfg.workload)
    _write_csv(out / f"compare_{name}_s{cfg.seed}.csv", SUMMARY_FIELDS + ["normalized"], rows)
    (out / f"compare_{name}_s{cfg.seed}.json").write_text(
        json.dumps({"config": cfg.as_dict(), "reports": [r.to_dict() for r in reports]}, sort_keys=True, indent=2)
        + "\n")
    width = max(len(s) for s in scheds)
    print(f"{'scheduler':<{width}}  energy_j      normalized")
    for r, row in zip(reports, rows):
        print(f"{r.scheduler:<{width}}  {r.total_j:<12.4f}  {float(row['normalized']):.4f}")
    return 0


SWEEP_FIELDS = ["cluster", "n_cores", "f_c", "f_m", "time_s", "cpu_w", "mem_w", "idle_w", "cpu_energy_j",
                "total_energy_j"]


def sweep_rows(machine: Machine, kernel: KernelParams) -> list[dict]:
    """Oracle time, power and energy of ``kernel`` at every configuration.

    Energies charge the idle power of the chosen cluster and of the memory
    for the task's whole duration.
    """
    p = machine.platform
    g = truth_grid(machine, kernel)
    rows = []
    for o, (ci, n) in enumerate(p.options()):
        cl = p.clusters[ci]
        for i, fc in enumerate(p.core_freqs_ghz):
            cidle = float(cluster_idle_power(machine, cl, fc))
            for j, fm in enumerate(p.mem_freqs_ghz):
                t = float(g.time[o, i, j])
                idle = cidle + float(mem_idle_power(machine, fm))
                rows.append({"cluster": cl.name, "n_cores": n, "f_c": fc, "f_m": fm, "time_s": t,
                             "cpu_w": float(g.cpu_w[o, i, j]), "mem_w": float(g.mem_w[o, i, j]), "idle_w": idle,
                             "cpu_energy_j": t * (float(g.cpu_w[o, i, j]) + cidle),
                             "total_energy_j": t * (float(g.cpu_w[o, i, j]) + float(g.mem_w[o, i, j]) + idle)})
    return rows


def _kernel_arg(args) -> KernelParams:
    if args.kernel_params:
        try:
            ops, nbytes, kappa, mu = (float(v) for v in args.kernel_params.split(","))
        except ValueError:
            raise CliError("--kernel-params expects ops,bytes,kappa,mu") from None
        return KernelParams(args.kernel or "custom", ops, nbytes, kappa, mu)
    known = standard_kernels()
    if args.kernel not in known:
        raise CliError(f"unknown kernel {args.kernel!r}; known: {', '.join(sorted(known))}")
    return known[args.kernel]


def cmd_sweep(args) -> int:
    machine = _machine(args.platform)
    kernel = _kernel_arg(args)
    rows = sweep_rows(machine, kernel)
    try:
        _write_csv(Path(args.out), SWEEP_FIELDS, [{k: (repr(v) if isinstance(v, float) else v)
                                                   for k, v in r.items()} for r in rows])
    except OSError as exc:
        raise CliError(f"cannot write {args.out}: {exc}") from None
    best = min(rows, key=lambda r: r["total_energy_j"])
    print(f"{len(rows)} configurations -> {args.out}")
    print(f"minimum energy: <{best['cluster']}, {best['n_cores']}, {best['f_c']:.2f}, {best['f_m']:.2f}> "
          f"{best['total_energy_j']:.6g} J")
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dvfsim", description="Energy-aware task scheduling simulator")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("profile", help="profile the synthetic kernel ladder over every configuration")
    p.add_argument("--platform", help="platform JSON (default: built-in TX2-like machine)")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("fit", help="fit time and power models from a profile CSV")
    p.add_argument("--profile", required=True)
    p.add_argument("--platform")
    p.add_argument("--out", required=True, help="coefficient JSON to write")
    p.set_defaults(func=cmd_fit)

    def experiment(p, many: bool) -> None:
        p.add_argument("--config", help="experiment JSON; flags override its fields")
        p.add_argument("--platform")
        p.add_argument("--workload", help=f"suite member ({', '.join(SUITE)}), workload JSON or DAG file")
        p.add_argument("--scale", type=float, default=1.0, help="task-count scale for suite workloads")
        if many:
            p.add_argument("--schedulers", help="comma separated (default: all)")
            p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        else:
            p.add_argument("--scheduler", choices=SCHEDULERS)
            p.add_argument("--trace", action="store_true", help="also write the event trace")
        p.add_argument("--goal", help="min_energy | speedup:<x> | max_perf")
        p.add_argument("--seed", type=int)
        p.add_argument("--models", help="coefficient JSON from 'fit' (default: fit on the fly)")
        p.add_argument("--oracle", action="store_true", help="use oracle lookup tables instead of sampling")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("run", help="simulate one workload under one scheduler")
    experiment(p, many=False)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="run several schedulers and normalise to GRWS")
    experiment(p, many=True)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="oracle energy over every configuration of one kernel")
    p.add_argument("--platform")
    p.add_argument("--kernel", help="standard kernel name")
    p.add_argument("--kernel-params", help="ops,bytes,kappa,mu for a custom kernel")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CliError, ConfigError, DagError, ModelError, SchedulerError, SimulationError, FileNotFoundError,
            json.JSONDecodeError) as exc:
        print(f"dvfsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
