"""Ulam-Harris labelled marked trees, spines and the fictitious node.

A :class:`MarkedTree` stores one row per node in flat arrays (the same
layout the simulation kernels fill) and derives labels on demand. Node
``u`` carries its birth time ``b^u``, death time ``zeta^u`` (``inf`` when
alive at the horizon), offspring count ``r^u`` (``-1`` when alive at the
horizon) and its path samples ``(t, x, type)``. The parent of every node
has a smaller index, so per-node recursions can run in index order.

Text dump format (one node per line, tab separated)::

    # spinesim-tree 1
    # horizon <T>
    # root <x> <type>
    # obs <t_1> <t_2> ...
    <label> <birth> <death> <r> <spine> <t,x,type> <t,x,type> ...

Labels are dot-joined integers with ``.`` for the root; ``death`` is
``inf`` and ``r`` is ``-`` for nodes alive at the horizon.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

Label = tuple


class TreeError(ValueError):
    """Raised on malformed tree data or queries outside the sampled range."""


class IntegrityError(TreeError):
    """A particle alive at ``t`` has no path sample at ``t``."""


@dataclass(frozen=True)
class NodeRecord:
    label: Label
    birth: float
    death: float
    offspring_count: int | None
    path: np.ndarray
    parent: Label | None
    on_spine: bool = False


def format_label(label: Label) -> str:
    return "." if not label else ".".join(str(j) for j in label)


def parse_label(text: str) -> Label:
    return () if text == "." else tuple(int(j) for j in text.split("."))


@dataclass(eq=False)
class MarkedTree:
    """A simulated (or hand-built) genealogy on ``[0, horizon]``."""

    birth: np.ndarray
    death: np.ndarray
    parent: np.ndarray
    child: np.ndarray
    r: np.ndarray
    spine: np.ndarray
    sample_start: np.ndarray
    sample_count: np.ndarray
    sample_t: np.ndarray
    sample_x: np.ndarray
    sample_type: np.ndarray
    horizon: float
    observation_times: np.ndarray
    root_state: tuple
    _labels: list = field(default=None, repr=False)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_records(cls, records, horizon: float, root_state=(0.0, 0), observation_times=()):
        """Build from an iterable of :class:`NodeRecord`.

        The given order is kept when every parent precedes its children
        (so dumps reload node for node); otherwise records are sorted by label.
        """
        recs = list(records)
        seen = set()
        for rec in recs:
            if rec.label and rec.label[:-1] not in seen:
                recs.sort(key=lambda rec: rec.label)
                break
            seen.add(rec.label)
        index = {rec.label: u for u, rec in enumerate(recs)}
        n = len(recs)
        parent = np.full(n, -1, dtype=np.int64)
        child = np.zeros(n, dtype=np.int64)
        for u, rec in enumerate(recs):
            if rec.label:
                if rec.label[:-1] not in index:
                    raise TreeError(f"node {format_label(rec.label)} has no parent in the tree")
                parent[u] = index[rec.label[:-1]]
                child[u] = rec.label[-1]
        paths = [np.asarray(rec.path, dtype=float).reshape(-1, 3) for rec in recs]
        counts = np.array([p.shape[0] for p in paths], dtype=np.int64)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        allp = np.concatenate(paths) if n else np.zeros((0, 3))
        return cls(
            birth=np.array([rec.birth for rec in recs], dtype=float),
            death=np.array([rec.death for rec in recs], dtype=float),
            parent=parent,
            child=child,
            r=np.array([-1 if rec.offspring_count is None else rec.offspring_count for rec in recs],
                       dtype=np.int64),
            spine=np.array([rec.on_spine for rec in recs], dtype=bool),
            sample_start=starts,
            sample_count=counts,
            sample_t=allp[:, 0].copy(),
            sample_x=allp[:, 1].copy(),
            sample_type=allp[:, 2].astype(np.int64),
            horizon=float(horizon),
            observation_times=np.asarray(observation_times, dtype=float),
            root_state=(float(root_state[0]), int(root_state[1])),
        )

    # -- labels and records ---------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.birth.size

    def labels(self) -> list:
        if self._labels is None:
            labels = [()] * self.n_nodes
            for u in range(self.n_nodes):
                p = self.parent[u]
                if p >= 0:
                    labels[u] = labels[p] + (int(self.child[u]),)
            self._labels = labels
        return self._labels

    def label(self, u: int) -> Label:
        return self.labels()[u]

    def index_of(self, label: Label) -> int:
        try:
            return self.labels().index(tuple(label))
        except ValueError:
            raise TreeError(f"no node labelled {format_label(tuple(label))}") from None

    def path(self, u: int) -> np.ndarray:
        s = slice(self.sample_start[u], self.sample_start[u] + self.sample_count[u])
        return np.column_stack([self.sample_t[s], self.sample_x[s], self.sample_type[s]])

    def node(self, u: int) -> NodeRecord:
        p = int(self.parent[u])
        return NodeRecord(
            label=self.label(u),
            birth=float(self.birth[u]),
            death=float(self.death[u]),
            offspring_count=None if self.r[u] < 0 else int(self.r[u]),
            path=self.path(u),
            parent=None if p < 0 else self.label(p),
            on_spine=bool(self.spine[u]),
        )

    def records(self) -> list:
        return [self.node(u) for u in range(self.n_nodes)]

    def children(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.parent == u)

    def ancestors(self, u: int) -> list:
        """Strict ancestors of ``u`` from the root down."""
        out = []
        p = self.parent[u]
        while p >= 0:
            out.append(int(p))
            p = self.parent[p]
        return out[::-1]

    # -- queries at time t -------------------------------------------------------

    def _check_time(self, t: float) -> None:
        if not 0.0 <= t <= self.horizon:
            raise TreeError(f"time {t} outside [0, {self.horizon}]")

    def alive_indices(self, t: float) -> np.ndarray:
        """Indices of L_t = {u : b^u <= t < zeta^u}."""
        self._check_time(t)
        return np.flatnonzero((self.birth <= t) & (t < self.death))

    def alive_at(self, t: float) -> set:
        labels = self.labels()
        return {labels[u] for u in self.alive_indices(t)}

    def died_childless(self, t: float) -> np.ndarray:
        """Indices of D_t = {u : zeta^u <= t, r^u = 0}."""
        self._check_time(t)
        return np.flatnonzero((self.death <= t) & (self.r == 0))

    def state_at(self, t: float, nodes=None):
        """Positions and types of the given nodes (default L_t) at time ``t``.

        Only exact path samples are used; there is no interpolation.
        """
        nodes = self.alive_indices(t) if nodes is None else np.asarray(nodes, dtype=np.int64)
        x = np.empty(nodes.size)
        types = np.empty(nodes.size, dtype=np.int64)
        for j, u in enumerate(nodes):
            s0, sn = self.sample_start[u], self.sample_count[u]
            hit = np.flatnonzero(self.sample_t[s0:s0 + sn] == t)
            if hit.size == 0:
                raise IntegrityError(f"node {format_label(self.label(u))} has no sample at t={t}")
            s = s0 + hit[-1]
            x[j] = self.sample_x[s]
            types[j] = self.sample_type[s]
        return x, types

    def point_measure(self, t: float, f=None) -> float:
        """Σ_{u in L_t} f(Y^u_t); ``f(x, types)`` is vectorized, default f = 1."""
        x, types = self.state_at(t)
        if f is None:
            return float(x.size)
        return float(np.sum(f(x, types)))

    def ancestral_weights(self) -> np.ndarray:
        """Π_{v < u} 1 / r^v for every node (zero where an ancestor has r^v = 0)."""
        w = np.ones(self.n_nodes)
        for u in range(1, self.n_nodes):
            p = self.parent[u]
            w[u] = w[p] / self.r[p] if self.r[p] > 0 else 0.0
        return w

    def weight_identity(self, t: float) -> float:
        """Σ_{L_t} Π 1/r^v + Σ_{D_t} Π 1/r^v, equal to 1 for every tree and t."""
        w = self.ancestral_weights()
        return float(w[self.alive_indices(t)].sum() + w[self.died_childless(t)].sum())

    # -- spine -------------------------------------------------------------

    def spine_indices(self) -> np.ndarray:
        return np.flatnonzero(self.spine)

    def spine_at(self, t: float) -> int | None:
        """Index of the spine node alive at ``t``, or None if the spine is at the dagger."""
        alive = self.alive_indices(t)
        on = alive[self.spine[alive]]
        return int(on[0]) if on.size else None

    # -- validation -------------------------------------------------------------

    def validate(self, tol: float = 1e-12) -> list:
        """Check every structural invariant; returns human-readable violations."""
        problems = []
        labels = self.labels()
        n = self.n_nodes
        n_children = np.bincount(self.parent[self.parent >= 0], minlength=n)
        for u in range(n):
            name = format_label(labels[u])
            b, d = self.birth[u], self.death[u]
            if not d > b:
                problems.append(f"{name}: death {d} not after birth {b}")
            p = self.parent[u]
            if p >= 0 and b != self.death[p]:
                problems.append(f"{name}: birth {b} differs from parent death {self.death[p]}")
            if p < 0 and u != 0:
                problems.append(f"{name}: second root")
            r = self.r[u]
            if math.isinf(d):
                if r >= 0:
                    problems.append(f"{name}: alive at horizon but has offspring count {r}")
            elif n_children[u] != r:
                problems.append(f"{name}: offspring count {r} but {n_children[u]} children recorded")
            path = self.path(u)
            if path.shape[0] == 0:
                problems.append(f"{name}: empty path")
                continue
            if path[0, 0] != b:
                problems.append(f"{name}: first sample at {path[0, 0]}, birth at {b}")
            if np.any(np.diff(path[:, 0]) < 0):
                problems.append(f"{name}: path samples out of order")
            end = min(d, self.horizon)
            if path[-1, 0] != end:
                problems.append(f"{name}: last sample at {path[-1, 0]}, expected {end}")
            if p >= 0 and self.sample_count[p] > 0:
                last = self.path(p)[-1]
                if abs(last[1] - path[0, 1]) > tol or last[2] != path[0, 2]:
                    problems.append(f"{name}: birth state {tuple(path[0, 1:])} differs from parent end state"
                                    f" {tuple(last[1:])}")
        if n and self.sample_count[0] > 0:
            x0, i0 = self.path(0)[0, 1:]
            if abs(x0 - self.root_state[0]) > tol or int(i0) != self.root_state[1]:
                problems.append(".: root path does not start at the root state")
        return problems

    # -- text dump --------------------------------------------------------------

    def dumps(self) -> str:
        out = io.StringIO()
        out.write("# spinesim-tree 1\n")
        out.write(f"# horizon {float(self.horizon)!r}\n")
        out.write(f"# root {float(self.root_state[0])!r} {int(self.root_state[1])}\n")
        out.write("# obs " + " ".join(repr(float(t)) for t in self.observation_times) + "\n")
        for u in range(self.n_nodes):
            r = "-" if self.r[u] < 0 else str(int(self.r[u]))
            samples = " ".join(f"{float(t)!r},{float(x)!r},{int(i)}" for t, x, i in self.path(u))
            out.write(f"{format_label(self.label(u))}\t{float(self.birth[u])!r}\t{float(self.death[u])!r}"
                      f"\t{r}\t{int(self.spine[u])}\t{samples}\n")
        return out.getvalue()

    @classmethod
    def loads(cls, text: str) -> "MarkedTree":
        horizon, root, obs = None, (0.0, 0), ()
        records = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "horizon":
                    horizon = float(parts[1])
                elif parts and parts[0] == "root":
                    root = (float(parts[1]), int(parts[2]))
                elif parts and parts[0] == "obs":
                    obs = tuple(float(t) for t in parts[1:])
                continue
            fields = line.split("\t")
            if len(fields) < 5:
                raise TreeError(f"line {lineno}: expected at least 5 tab-separated fields")
            samples = []
            if len(fields) > 5 and fields[5].strip():
                for tok in fields[5].split():
                    t, x, i = tok.split(",")
                    samples.append((float(t), float(x), int(i)))
            records.append(NodeRecord(
                label=parse_label(fields[0]),
                birth=float(fields[1]),
                death=float(fields[2]),
                offspring_count=None if fields[3] == "-" else int(fields[3]),
                path=np.array(samples, dtype=float).reshape(-1, 3),
                parent=None,
                on_spine=fields[4] == "1",
            ))
        if horizon is None:
            raise TreeError("missing '# horizon' header")
        return cls.from_records(records, horizon, root, obs)


@dataclass(frozen=True)
class SpineRecord:
    """The distinguished line of descent.

    ``fission_*`` arrays have one entry per spine fission before the
    horizon: time, spine position and type at the fission, offspring count
    and the 1-based ordinal of the child that continues the spine (0 when
    the spine enters the dagger). ``path`` has columns ``(t, x, type,
    generation)`` covering the spine on ``[0, min(dagger_time, horizon)]``;
    ``generation`` indexes ``labels``.
    """

    labels: tuple
    fission_times: np.ndarray
    fission_x: np.ndarray
    fission_types: np.ndarray
    offspring_counts: np.ndarray
    spine_children: np.ndarray
    path: np.ndarray
    dagger_time: float | None
    horizon: float
    root_state: tuple
    observation_times: np.ndarray

    @classmethod
    def from_tree(cls, tree: MarkedTree) -> "SpineRecord":
        nodes = tree.spine_indices()
        if nodes.size == 0 or nodes[0] != 0:
            raise TreeError("tree has no spine starting at the root")
        labels = tuple(tree.label(u) for u in nodes)
        for a, b in zip(labels, labels[1:]):
            if b[:-1] != a:
                raise TreeError(f"spine node {format_label(b)} is not a child of {format_label(a)}")
        dead = nodes[np.isfinite(tree.death[nodes])]
        fission_x = np.empty(dead.size)
        fission_types = np.empty(dead.size, dtype=np.int64)
        for j, u in enumerate(dead):
            fission_x[j], fission_types[j] = tree.path(u)[-1, 1:]
        spine_children = np.zeros(dead.size, dtype=np.int64)
        spine_children[: nodes.size - 1] = tree.child[nodes[1:]]
        parts = []
        for g, u in enumerate(nodes):
            p = tree.path(u)
            if g > 0:
                p = p[1:]  # birth sample repeats the parent's last sample
            parts.append(np.column_stack([p, np.full(p.shape[0], g)]))
        last = nodes[-1]
        dagger = None
        if math.isfinite(tree.death[last]) and tree.r[last] == 0:
            dagger = float(tree.death[last])
        return cls(
            labels=labels,
            fission_times=tree.death[dead].copy(),
            fission_x=fission_x,
            fission_types=fission_types,
            offspring_counts=tree.r[dead].copy(),
            spine_children=spine_children,
            path=np.concatenate(parts),
            dagger_time=dagger,
            horizon=tree.horizon,
            root_state=tree.root_state,
            observation_times=tree.observation_times.copy(),
        )

    @property
    def n_fissions(self) -> int:
        return self.fission_times.size

    def state_at(self, t: float):
        """Spine position and type at ``t`` (exact sample required)."""
        if self.dagger_time is not None and t >= self.dagger_time:
            raise TreeError(f"spine is at the dagger at t={t}")
        hit = np.flatnonzero(self.path[:, 0] == t)
        if hit.size == 0:
            raise IntegrityError(f"spine has no sample at t={t}")
        row = self.path[hit[-1]]
        return float(row[1]), int(row[2])
