"""Reference kernels and the standard benchmark suite."""

from __future__ import annotations

from typing import Mapping

from .dag import DagError, TaskDAG, gen_chain, gen_forkjoin, gen_mixed, gen_sparselu, gen_stencil
from .platform import KernelParams


def standard_kernels() -> dict[str, KernelParams]:
    """Kernels spanning compute-bound to memory-bound behaviour."""
    ks = [
        KernelParams("bmod", 0.035, 0.0004, 0.8, 0.1),   # dense block update, compute-bound
        KernelParams("lu0", 0.030, 0.0010, 0.8, 0.1),
        KernelParams("fwd", 0.030, 0.0020, 0.8, 0.1),
        KernelParams("bdiv", 0.030, 0.0020, 0.8, 0.1),
        KernelParams("mc", 0.002, 0.0700, 0.8, 0.1),     # matrix copy, streaming
        KernelParams("copy", 0.002, 0.0500, 0.9, 0.1),   # streaming, stalls track memory clock
        KernelParams("stencil", 0.020, 0.0300, 0.6, 0.1),
        KernelParams("conv", 0.025, 0.0040, 0.7, 0.1),
        KernelParams("pool", 0.002, 0.0100, 0.7, 0.1),
        KernelParams("tiny", 0.0005, 0.0002, 0.7, 0.1),  # fine-grained
    ]
    return {k.name: k for k in ks}


SUITE = ("compute_chain", "memory_chain", "stencil", "sparselu", "forkjoin", "mixed")


def build_workload(name: str, scale: float = 1.0, kernels: Mapping[str, KernelParams] | None = None,
                   seed: int = 7) -> TaskDAG:
    """Suite member ``name``; ``scale`` shrinks or grows the task count."""
    k = dict(standard_kernels())
    if kernels:
        k.update(kernels)

    def sz(n: int, lo: int = 1) -> int:
        return max(lo, int(round(n * scale)))

    if name == "compute_chain":
        dag = gen_chain(k["bmod"], sz(10000))
    elif name == "memory_chain":
        dag = gen_chain(k["mc"], sz(10000))
    elif name == "stencil":
        dag = gen_stencil(k["stencil"], 40, sz(250))
    elif name == "sparselu":
        blocks = 48 if scale == 1.0 else max(2, int(round(48 * scale ** 0.5)))
        dag = gen_sparselu(blocks, {n: k[n] for n in ("lu0", "fwd", "bdiv", "bmod")})
    elif name == "forkjoin":
        dag = gen_forkjoin([(k["conv"], 64)] * 16, join=k["pool"], repeat=sz(10))
    elif name == "mixed":
        dag = gen_mixed(seed, [k["bmod"], k["mc"], k["copy"], k["stencil"], k["tiny"]], sz(10000))
    else:
        raise DagError(f"unknown workload {name!r}; known: {', '.join(SUITE)}")
    dag.name = name
    return dag


def workload_from_spec(spec: Mapping) -> TaskDAG:
    """Build a DAG from a config mapping.

    ``{"suite": name, "scale": x}`` picks a suite member; otherwise
    ``generator`` is one of chain, sparselu, forkjoin, stencil, mixed, file
    with generator-specific parameters. ``kernels`` may add or override
    kernel definitions (``{name: {ops, bytes, kappa, mu}}``).
    """
    extra = {name: KernelParams(name, float(v["ops"]), float(v["bytes"]), float(v.get("kappa", 0.8)),
                                float(v.get("mu", 0.1)))
             for name, v in spec.get("kernels", {}).items()}
    if "suite" in spec:
        return build_workload(spec["suite"], float(spec.get("scale", 1.0)), extra, int(spec.get("seed", 7)))
    k = dict(standard_kernels())
    k.update(extra)
    gen = spec.get("generator")

    def kern(key: str) -> KernelParams:
        try:
            return k[spec[key]]
        except KeyError:
            raise DagError(f"workload: unknown or missing kernel for {key!r}") from None

    if gen == "chain":
        return gen_chain(kern("kernel"), int(spec["n_tasks"]), int(spec.get("dop", 1)))
    if gen == "sparselu":
        return gen_sparselu(int(spec["blocks"]), {n: k[n] for n in ("lu0", "fwd", "bdiv", "bmod")},
                            spec.get("pattern", "bots"))
    if gen == "forkjoin":
        join = k[spec["join"]] if spec.get("join") else None
        layers = [(k[name], int(w)) for name, w in spec["layers"]]
        return gen_forkjoin(layers, join, int(spec.get("repeat", 1)))
    if gen == "stencil":
        return gen_stencil(kern("kernel"), int(spec["width"]), int(spec["steps"]))
    if gen == "mixed":
        pool = [k[name] for name in spec["pool"]]
        return gen_mixed(int(spec.get("seed", 0)), pool, int(spec["n_tasks"]))
    if gen == "file":
        return TaskDAG.load(spec["path"])
    raise DagError(f"workload: unknown generator {gen!r}")
