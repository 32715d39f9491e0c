"""Series tree, summing matrix and coherence checks."""
from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class StructureError(ValueError):
    """Malformed hierarchy definition."""

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message)
        self.node = node


@dataclass(frozen=True)
class Hierarchy:
    """A strictly hierarchical tree whose leaves all sit on the bottom level.

    ``nodes`` is level-major (the root, then every level-1 node, ...), with
    siblings kept in definition order.
    """

    nodes: tuple[str, ...]
    parent: Mapping[str, str]
    children: Mapping[str, tuple[str, ...]]
    level_of: Mapping[str, int]
    bottom_ids: tuple[str, ...]
    levels: int

    @property
    def root(self) -> str:
        return self.nodes[0]

    @property
    def m(self) -> int:
        return len(self.nodes)

    @property
    def m_bottom(self) -> int:
        return len(self.bottom_ids)

    def level_nodes(self, level: int) -> tuple[str, ...]:
        return tuple(n for n in self.nodes if self.level_of[n] == level)

    def index(self, node: str) -> int:
        return self.nodes.index(node)

    def leaves_under(self, node: str) -> list[str]:
        stack, out = [node], []
        while stack:
            cur = stack.pop()
            kids = self.children.get(cur, ())
            if kids:
                stack.extend(reversed(kids))
            else:
                out.append(cur)
        return out

    @classmethod
    def from_tree(cls, tree: Mapping) -> "Hierarchy":
        """Build from a nested ``{"id": ..., "children": [...]}`` document."""
        parent: dict[str, str] = {}
        order: list[str] = []

        def walk(node: Mapping, par: str | None) -> None:
            if "id" not in node:
                raise StructureError("tree node without an 'id' field")
            nid = str(node["id"])
            if nid in parent or (order and nid == order[0]) or nid in order:
                raise StructureError(f"duplicate node id {nid!r}", nid)
            order.append(nid)
            if par is not None:
                parent[nid] = par
            for child in node.get("children", []) or []:
                walk(child, nid)

        walk(tree, None)
        return cls.from_parent_map(parent, roots=[order[0]], child_order=order)

    @classmethod
    def from_parent_map(cls, parent: Mapping[str, str], roots: Sequence[str] | None = None,
                        child_order: Sequence[str] | None = None) -> "Hierarchy":
        """Build from a child -> parent map. Sibling order follows
        ``child_order`` when given, else the map's iteration order."""
        parent = {str(k): str(v) for k, v in parent.items()}
        known = set(parent) | set(parent.values()) | set(roots or ())
        root_candidates = sorted(known - set(parent), key=lambda n: _position(n, child_order))
        if roots is not None:
            extra = [r for r in root_candidates if r not in roots]
            if extra:
                raise StructureError(f"node {extra[0]!r} has no parent (orphan)", extra[0])
            root_candidates = list(roots)
        if len(root_candidates) != 1:
            if not root_candidates:
                bad = next(iter(parent))
                raise StructureError(f"no root: cycle through {bad!r}", bad)
            raise StructureError(
                f"expected exactly one root, found {root_candidates}", root_candidates[1])
        root = root_candidates[0]

        for start in parent:
            seen = {start}
            cur = start
            while cur in parent:
                cur = parent[cur]
                if cur in seen:
                    raise StructureError(f"cycle detected at node {cur!r}", cur)
                seen.add(cur)
            if cur != root:
                raise StructureError(f"node {start!r} is not connected to root {root!r}", start)

        seq = list(child_order) if child_order is not None else list(parent)
        children: dict[str, list[str]] = {}
        for node in seq:
            if node in parent:
                children.setdefault(parent[node], []).append(node)
        for node in parent:
            if node not in children.get(parent[node], []):
                children.setdefault(parent[node], []).append(node)

        nodes: list[str] = []
        level_of: dict[str, int] = {}
        frontier = [root]
        depth = 0
        while frontier:
            nxt = []
            for node in frontier:
                nodes.append(node)
                level_of[node] = depth
                nxt.extend(children.get(node, []))
            frontier = nxt
            depth += 1
        leaves = [n for n in nodes if n not in children]
        levels = max(level_of.values()) + 1
        for leaf in leaves:
            if level_of[leaf] != levels - 1:
                raise StructureError(
                    f"leaf {leaf!r} sits on level {level_of[leaf]} but the bottom level is "
                    f"{levels - 1}; all leaves must share the bottom level", leaf)
        return cls(
            nodes=tuple(nodes),
            parent=dict(parent),
            children={k: tuple(v) for k, v in children.items()},
            level_of=level_of,
            bottom_ids=tuple(leaves),
            levels=levels,
        )

    def to_tree(self) -> dict:
        def build(node: str) -> dict:
            kids = self.children.get(node, ())
            out: dict = {"id": node}
            if kids:
                out["children"] = [build(k) for k in kids]
            return out

        return build(self.root)


def _position(node: str, order: Sequence[str] | None) -> tuple:
    if order is not None and node in order:
        return (0, list(order).index(node))
    return (1, node)


def load_hierarchy(path: str | Path) -> Hierarchy:
    with open(path, encoding="utf-8") as fh:
        return Hierarchy.from_tree(json.load(fh))


def save_hierarchy(h: Hierarchy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(h.to_tree(), fh, indent=2)
        fh.write("\n")


@dataclass(frozen=True)
class SummingMatrix:
    """0/1 matrix mapping bottom series to every node (rows follow hierarchy order)."""

    entries: np.ndarray
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def m_bottom(self) -> int:
        return self.entries.shape[1]


def build_summing_matrix(h: Hierarchy) -> SummingMatrix:
    col = {leaf: j for j, leaf in enumerate(h.bottom_ids)}
    s = np.zeros((h.m, h.m_bottom))
    for i, node in enumerate(h.nodes):
        for leaf in h.leaves_under(node):
            s[i, col[leaf]] = 1.0
    s.setflags(write=False)
    return SummingMatrix(s, h.nodes, h.bottom_ids)


def aggregate_bottom(s, bottom) -> np.ndarray:
    """Map bottom-level values (vector, or m_k x n matrix) to all levels."""
    s = np.asarray(s)
    b = np.asarray(bottom, dtype=float)
    if b.shape[0] != s.shape[1]:
        raise ValueError(f"expected {s.shape[1]} bottom values, got {b.shape[0]}")
    out = s @ b
    out[-s.shape[1]:] = b
    return out


@dataclass(frozen=True)
class CoherenceResult:
    coherent: bool
    max_violation: float
    node: str | None = None
    period: int | None = None

    def __bool__(self) -> bool:
        return self.coherent


def check_coherence(s, values, tol: float = 1e-9, rtol: float = 0.0) -> CoherenceResult:
    """Compare every aggregate against the sum of its bottom series.

    ``values`` is a length-m vector or an m x n matrix. The allowed violation
    is ``tol + rtol * max|values|`` (per column). Entries that depend on an
    absent (NaN) bottom value are skipped.
    """
    if tol < 0 or rtol < 0:
        raise ValueError("tolerances must be nonnegative")
    labels = getattr(s, "row_labels", None)
    smat = np.asarray(s)
    y = np.asarray(values, dtype=float)
    vector = y.ndim == 1
    if vector:
        y = y[:, None]
    mk = smat.shape[1]
    bottom = y[-mk:]
    missing = np.isnan(bottom)
    implied = smat @ np.where(missing, 0.0, bottom)
    touched = (smat @ missing.astype(float)) > 0
    diff = np.abs(y - implied)
    diff[touched | np.isnan(y)] = 0.0
    scale = np.nanmax(np.abs(y), axis=0, initial=0.0)
    allowed = tol + rtol * scale
    excess = diff - allowed[None, :]
    worst = float(diff.max()) if diff.size else 0.0
    ok = bool(np.all(excess <= 0))
    node = period = None
    if diff.size and worst > 0:
        i, t = np.unravel_index(int(np.argmax(diff)), diff.shape)
        node = labels[i] if labels is not None else str(i)
        period = None if vector else int(t)
    return CoherenceResult(ok, worst, node, period)


@dataclass
class Panel:
    """m x n values on a shared monthly calendar; NaN marks months before a
    series starts."""

    values: np.ndarray
    calendar: np.ndarray
    labels: tuple[str, ...]
    start_offsets: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.calendar = np.asarray(self.calendar, dtype="datetime64[M]")
        self.labels = tuple(self.labels)
        if self.values.shape != (len(self.labels), len(self.calendar)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.labels)} labels x {len(self.calendar)} months")
        if len(self.calendar) > 1 and np.any(np.diff(self.calendar).astype(int) != 1):
            raise ValueError("calendar must be a continuous monthly range")
        if not self.start_offsets:
            offsets = []
            for row in self.values:
                ok = np.flatnonzero(~np.isnan(row))
                offsets.append(int(ok[0]) if len(ok) else len(row))
            self.start_offsets = tuple(offsets)

    @property
    def n(self) -> int:
        return len(self.calendar)

    def row(self, label: str) -> np.ndarray:
        return self.values[self.labels.index(label)]

    def observed(self, i: int) -> np.ndarray:
        """Values of series ``i`` from its first observed month."""
        return self.values[i, self.start_offsets[i]:]

    def slice_months(self, start: int, stop: int) -> "Panel":
        return Panel(self.values[:, start:stop].copy(), self.calendar[start:stop], self.labels)

    def month_index(self, stamp: str) -> int:
        target = np.datetime64(stamp, "M")
        hits = np.flatnonzero(self.calendar == target)
        if not len(hits):
            raise ValueError(f"month {stamp} is outside the calendar "
                             f"{self.calendar[0]}..{self.calendar[-1]}")
        return int(hits[0])
