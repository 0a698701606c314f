"""Task DAGs and workload generators."""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .platform import KernelParams


class DagError(ValueError):
    """Malformed task graph."""


@dataclass(frozen=True)
class TaskNode:
    id: int
    kernel: str
    preds: tuple[int, ...] = ()


@dataclass
class TaskDAG:
    """Tasks are stored with ``tasks[i].id == i``."""

    kernels: dict[str, KernelParams]
    tasks: list[TaskNode]
    declared_dop: float | None = None
    name: str = ""
    _succ: list[list[int]] | None = field(default=None, repr=False, compare=False)
    _order: list[int] | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.tasks)

    def validate(self) -> None:
        """Check ids, kernel references, edges and acyclicity."""
        n = len(self.tasks)
        for i, t in enumerate(self.tasks):
            if t.id != i:
                raise DagError(f"task at position {i} has id {t.id}")
            if t.kernel not in self.kernels:
                raise DagError(f"task {i}: unknown kernel {t.kernel!r}")
            if len(set(t.preds)) != len(t.preds):
                raise DagError(f"task {i}: duplicate predecessor")
            for p in t.preds:
                if not 0 <= p < n:
                    raise DagError(f"task {i}: predecessor {p} does not exist")
                if p == i:
                    raise DagError(f"task {i}: self dependency")
        self.topo_order()

    def successors(self) -> list[list[int]]:
        if self._succ is None:
            succ: list[list[int]] = [[] for _ in self.tasks]
            for t in self.tasks:
                for p in t.preds:
                    succ[p].append(t.id)
            self._succ = succ
        return self._succ

    def topo_order(self) -> list[int]:
        if self._order is not None:
            return self._order
        succ = self.successors()
        indeg = [len(t.preds) for t in self.tasks]
        stack = [i for i in range(len(self.tasks)) if indeg[i] == 0]
        stack.reverse()
        order = []
        while stack:
            i = stack.pop()
            order.append(i)
            for s in succ[i]:
                indeg[s] -= 1
                if indeg[s] == 0:
                    stack.append(s)
        if len(order) != len(self.tasks):
            stuck = [i for i in range(len(self.tasks)) if indeg[i] > 0]
            raise DagError(f"cycle detected: {len(stuck)} tasks can never become ready (e.g. {stuck[:5]})")
        self._order = order
        return order

    def longest_path(self) -> int:
        """Number of nodes on the longest dependency path."""
        if not self.tasks:
            return 0
        depth = [0] * len(self.tasks)
        for i in self.topo_order():
            preds = self.tasks[i].preds
            depth[i] = 1 + (max(depth[p] for p in preds) if preds else 0)
        return max(depth)

    def dop(self) -> float:
        lp = self.longest_path()
        return len(self.tasks) / lp if lp else 0.0

    def kernel_counts(self) -> dict[str, int]:
        return dict(Counter(t.kernel for t in self.tasks))

    def sources(self) -> list[int]:
        return [t.id for t in self.tasks if not t.preds]

    # -- text format ------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        if self.name:
            lines.append(f"#name {self.name}")
        for k in sorted(self.kernels):
            kp = self.kernels[k]
            lines.append(f"#kernel {kp.name} {kp.ops!r} {kp.bytes!r} {kp.kappa!r} {kp.mu!r}")
        if self.declared_dop is not None:
            lines.append(f"#dop {self.declared_dop!r}")
        for t in self.tasks:
            preds = ",".join(str(p) for p in t.preds) if t.preds else "-"
            lines.append(f"{t.id} {t.kernel} {preds}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TaskDAG":
        kernels: dict[str, KernelParams] = {}
        tasks: list[TaskNode] = []
        dop = None
        name = ""
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            try:
                if parts[0] == "#kernel":
                    kernels[parts[1]] = KernelParams(parts[1], float(parts[2]), float(parts[3]),
                                                     float(parts[4]), float(parts[5]))
                elif parts[0] == "#dop":
                    dop = float(parts[1])
                elif parts[0] == "#name":
                    name = parts[1]
                elif line.startswith("#"):
                    continue
                else:
                    preds = () if parts[2] == "-" else tuple(int(p) for p in parts[2].split(","))
                    tasks.append(TaskNode(int(parts[0]), parts[1], preds))
            except (IndexError, ValueError) as exc:
                raise DagError(f"line {lineno}: cannot parse {raw!r} ({exc})") from None
        dag = cls(kernels, tasks, dop, name)
        dag.validate()
        return dag

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "TaskDAG":
        return cls.from_text(Path(path).read_text())


def _finish(kernels: Iterable[KernelParams], tasks: list[TaskNode], name: str) -> TaskDAG:
    dag = TaskDAG({k.name: k for k in kernels}, tasks, name=name)
    dag.validate()
    dag.declared_dop = dag.dop()
    return dag


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def gen_chain(kernel: KernelParams, n_tasks: int, dop: int = 1) -> TaskDAG:
    """``dop`` independent chains of equal length."""
    if n_tasks < 1 or dop < 1:
        raise DagError("n_tasks and dop must be >= 1")
    if n_tasks % dop:
        raise DagError(f"dop={dop} does not divide n_tasks={n_tasks}")
    length = n_tasks // dop
    tasks = []
    for c in range(dop):
        for j in range(length):
            i = c * length + j
            tasks.append(TaskNode(i, kernel.name, (i - 1,) if j else ()))
    return _finish([kernel], tasks, "chain")


def sparselu_pattern(blocks: int, pattern: str = "bots") -> list[list[bool]]:
    """Initially non-null blocks. ``bots`` mirrors the usual benchmark
    generator (every other row/column empty plus a banded diagonal)."""
    if pattern == "dense":
        return [[True] * blocks for _ in range(blocks)]
    if pattern != "bots":
        raise DagError(f"unknown sparsity pattern {pattern!r}")
    nz = [[False] * blocks for _ in range(blocks)]
    for i in range(blocks):
        for j in range(blocks):
            null = False
            if i < j and i % 3 != 0:
                null = True
            if i > j and j % 3 != 0:
                null = True
            if i % 2 == 1 or j % 2 == 1:
                null = True
            if i == j or i == j - 1 or i - 1 == j:
                null = False
            nz[i][j] = not null
    return nz


def gen_sparselu(blocks: int, kernels: dict[str, KernelParams], pattern: str = "bots") -> TaskDAG:
    """Blocked LU with fill-in; ``kernels`` needs keys lu0, fwd, bdiv, bmod.

    Each task depends on the last writer of every block it touches.
    """
    if blocks < 2:
        raise DagError("blocks must be >= 2")
    missing = {"lu0", "fwd", "bdiv", "bmod"} - set(kernels)
    if missing:
        raise DagError(f"missing kernels: {sorted(missing)}")
    nz = sparselu_pattern(blocks, pattern)
    writer: dict[tuple[int, int], int] = {}
    tasks: list[TaskNode] = []

    def add(kind: str, touched: Sequence[tuple[int, int]], out: tuple[int, int]) -> None:
        preds = sorted({writer[b] for b in touched if b in writer})
        tid = len(tasks)
        tasks.append(TaskNode(tid, kernels[kind].name, tuple(preds)))
        writer[out] = tid

    for k in range(blocks):
        add("lu0", [(k, k)], (k, k))
        for j in range(k + 1, blocks):
            if nz[k][j]:
                add("fwd", [(k, k), (k, j)], (k, j))
        for i in range(k + 1, blocks):
            if nz[i][k]:
                add("bdiv", [(k, k), (i, k)], (i, k))
        for i in range(k + 1, blocks):
            if not nz[i][k]:
                continue
            for j in range(k + 1, blocks):
                if nz[k][j]:
                    nz[i][j] = True  # fill-in
                    add("bmod", [(i, k), (k, j), (i, j)], (i, j))
    return _finish(kernels.values(), tasks, f"sparselu{blocks}")


def gen_forkjoin(layers: Sequence[tuple[KernelParams, int]], join: KernelParams | None = None,
                 repeat: int = 1) -> TaskDAG:
    """Layers of independent tasks.

    With ``join`` every layer is followed by one join task depending on the
    whole layer and the next layer forks from it. Without it each task of a
    layer depends on every task of the previous layer.
    """
    if not layers or repeat < 1:
        raise DagError("need at least one layer")
    if any(w < 1 for _, w in layers):
        raise DagError("layer widths must be >= 1")
    tasks: list[TaskNode] = []
    prev: tuple[int, ...] = ()
    used = {}
    for _ in range(repeat):
        for kernel, width in layers:
            used[kernel.name] = kernel
            cur = []
            for _ in range(width):
                tid = len(tasks)
                tasks.append(TaskNode(tid, kernel.name, prev))
                cur.append(tid)
            prev = tuple(cur)
            if join is not None:
                used[join.name] = join
                tid = len(tasks)
                tasks.append(TaskNode(tid, join.name, prev))
                prev = (tid,)
    return _finish(used.values(), tasks, "forkjoin")


def gen_stencil(kernel: KernelParams, width: int, steps: int, radius: int = 1) -> TaskDAG:
    """Iterative 1-D stencil sweep: cell ``i`` of step ``s`` depends on cells
    ``i-radius .. i+radius`` of step ``s-1``."""
    if width < 1 or steps < 1:
        raise DagError("width and steps must be >= 1")
    tasks = []
    for s in range(steps):
        for i in range(width):
            tid = s * width + i
            preds = ()
            if s:
                lo, hi = max(0, i - radius), min(width - 1, i + radius)
                preds = tuple((s - 1) * width + j for j in range(lo, hi + 1))
            tasks.append(TaskNode(tid, kernel.name, preds))
    return _finish([kernel], tasks, "stencil")


def gen_mixed(seed: int, pool: Sequence[KernelParams], n_tasks: int, max_width: int = 16,
              max_preds: int = 3) -> TaskDAG:
    """Seeded random layered DAG drawing kernels uniformly from ``pool``."""
    if not pool:
        raise DagError("kernel pool is empty")
    if n_tasks < 1:
        raise DagError("n_tasks must be >= 1 (empty DAG)")
    rng = random.Random(seed)
    tasks: list[TaskNode] = []
    prev: list[int] = []
    older: list[int] = []
    while len(tasks) < n_tasks:
        width = min(rng.randint(1, max_width), n_tasks - len(tasks))
        cur = []
        for _ in range(width):
            tid = len(tasks)
            cand = prev + older
            preds: tuple[int, ...] = ()
            if cand:
                k = rng.randint(1, min(max_preds, len(cand)))
                chosen = {rng.choice(prev)} if prev else set()
                while len(chosen) < k:
                    chosen.add(rng.choice(cand))
                preds = tuple(sorted(chosen))
            tasks.append(TaskNode(tid, pool[rng.randrange(len(pool))].name, preds))
            cur.append(tid)
        older = prev
        prev = cur
    return _finish(pool, tasks, f"mixed{seed}")
