"""Finite groups, Cayley graphs, box spaces, and the finite-level invariant mean.

Supported families: cyclic groups, direct products of cyclics, SL(2, p) for
small primes, and arbitrary explicit multiplication tables. Cayley graphs use
right-multiplication edges {g, gs}, so left translations act by graph
automorphisms; the invariant-mean defect of that action is zero up to float
rounding, which is the finite-level shadow of the boundary invariant state.
"""
from __future__ import annotations

import math
from itertools import product

import numpy as np

from .errors import InputError, NotGeneratingError
from .spaces import CoarseUnion, MetricSpace, build_graph_space, coarse_union

__all__ = [
    "FiniteGroup",
    "GeneratingSet",
    "cyclic_group",
    "direct_product",
    "sl2_group",
    "sl2_standard_generators",
    "group_from_dict",
    "cayley_graph",
    "box_space",
    "BoxSpace",
    "cyclic_box_space",
    "invariant_mean_defect",
    "girth",
]

_FULL_CHECK_LIMIT = 1000
_ASSOC_SAMPLES = 100_000


class FiniteGroup:
    """A finite group given by its multiplication table.

    table[a, b] is the index of the product a*b. Identity, inverses and
    associativity are verified on construction (exhaustively up to order
    1000, by random sampling beyond).
    """

    def __init__(self, table: np.ndarray, labels: list[str] | None = None,
                 name: str = "group"):
        table = np.asarray(table, dtype=np.int64)
        if table.ndim != 2 or table.shape[0] != table.shape[1]:
            raise InputError("multiplication table must be square")
        n = table.shape[0]
        if n == 0:
            raise InputError("a group needs at least one element")
        if table.min() < 0 or table.max() >= n:
            raise InputError("table entries must be element indices")
        self.order = int(n)
        self.table = table
        self.labels = labels if labels is not None else [str(i) for i in range(n)]
        if len(self.labels) != n:
            raise InputError("labels must match the group order")
        self.name = name
        self._label_index = {lab: i for i, lab in enumerate(self.labels)}
        self.identity = self._find_identity()
        self.inverse = self._find_inverses()
        self._check_associativity()

    def _find_identity(self) -> int:
        idx = np.arange(self.order)
        for e in range(self.order):
            if (self.table[e] == idx).all() and (self.table[:, e] == idx).all():
                return e
        raise InputError("table has no identity element")

    def _find_inverses(self) -> np.ndarray:
        e = self.identity
        inv = np.argmax(self.table == e, axis=1)
        ok = (self.table[np.arange(self.order), inv] == e).all() \
            and (self.table[inv, np.arange(self.order)] == e).all()
        if not ok:
            raise InputError("table has an element without a two-sided inverse")
        return inv

    def _check_associativity(self) -> None:
        n = self.order
        t = self.table
        if n <= _FULL_CHECK_LIMIT:
            for a in range(n):
                if not (t[t[a], :] == t[a, t]).all():
                    raise InputError(f"associativity fails at element {a}")
        else:
            rng = np.random.default_rng(0)
            a, b, c = rng.integers(0, n, size=(3, _ASSOC_SAMPLES))
            if not (t[t[a, b], c] == t[a, t[b, c]]).all():
                raise InputError("associativity fails on sampled triples")

    def element_index(self, element) -> int:
        """Resolve an element given by label, index, or (cyclic) integer."""
        if isinstance(element, str):
            if element not in self._label_index:
                raise InputError(
                    f"element {element!r} not in group {self.name}")
            return self._label_index[element]
        if self.name == f"Z/{self.order}":
            return int(element) % self.order
        idx = int(element)
        if not (0 <= idx < self.order):
            raise InputError(f"element index {idx} out of range "
                             f"in group {self.name}")
        return idx

    def mul(self, a: int, b: int) -> int:
        return int(self.table[a, b])

    def __len__(self) -> int:
        return self.order

    def __repr__(self) -> str:
        return f"FiniteGroup({self.name}, order={self.order})"


class GeneratingSet:
    """A symmetric generating set, validated on construction."""

    def __init__(self, group: FiniteGroup, elements):
        self.group = group
        self.elements = sorted({group.element_index(g) for g in elements})
        missing = [g for g in self.elements
                   if int(group.inverse[g]) not in self.elements]
        if missing:
            labs = ", ".join(group.labels[g] for g in missing)
            raise InputError(f"generating set is not symmetric: missing "
                             f"inverses of {labs}")
        self._check_generates()

    def _check_generates(self) -> None:
        reached = {self.group.identity}
        frontier = [self.group.identity]
        while frontier:
            nxt = []
            for g in frontier:
                for s in self.elements:
                    h = self.group.mul(g, s)
                    if h not in reached:
                        reached.add(h)
                        nxt.append(h)
            frontier = nxt
        if len(reached) < self.group.order:
            unreached = next(i for i in range(self.group.order)
                             if i not in reached)
            raise NotGeneratingError(
                f"generators do not reach element "
                f"{self.group.labels[unreached]!r} of {self.group.name}")

    def __iter__(self):
        return iter(self.elements)

    def __len__(self) -> int:
        return len(self.elements)


# -- group families -----------------------------------------------------------

def cyclic_group(n: int) -> FiniteGroup:
    """The cyclic group Z/n with labels '0'..'n-1'."""
    if n < 1:
        raise InputError("cyclic group order must be >= 1")
    idx = np.arange(n)
    table = (idx[:, None] + idx[None, :]) % n
    return FiniteGroup(table, name=f"Z/{n}")


def direct_product(*factors: FiniteGroup) -> FiniteGroup:
    """Direct product; element labels join the factor labels with '|'."""
    if not factors:
        raise InputError("direct product needs at least one factor")
    orders = [g.order for g in factors]
    elements = list(product(*[range(o) for o in orders]))
    pos = {el: i for i, el in enumerate(elements)}
    n = len(elements)
    table = np.zeros((n, n), dtype=np.int64)
    for i, a in enumerate(elements):
        for j, b in enumerate(elements):
            table[i, j] = pos[tuple(int(g.table[x, y])
                                    for g, x, y in zip(factors, a, b))]
    labels = ["|".join(g.labels[x] for g, x in zip(factors, el))
              for el in elements]
    name = " x ".join(g.name for g in factors)
    return FiniteGroup(table, labels=labels, name=name)


def _sl2_elements(p: int) -> list[tuple[int, int, int, int]]:
    out = []
    for a, b, c, d in product(range(p), repeat=4):
        if (a * d - b * c) % p == 1:
            out.append((a, b, c, d))
    return out


def _sl2_label(m: tuple[int, int, int, int]) -> str:
    a, b, c, d = m
    return f"[[{a},{b}],[{c},{d}]]"


def sl2_group(p: int) -> FiniteGroup:
    """SL(2, Z/p) for a small prime p, elements enumerated explicitly."""
    if p < 2 or any(p % q == 0 for q in range(2, int(math.isqrt(p)) + 1)):
        raise InputError("p must be a prime")
    if p > 13:
        raise InputError("sl2_group is meant for desk scale (p <= 13)")
    elements = _sl2_elements(p)
    pos = {m: i for i, m in enumerate(elements)}
    n = len(elements)
    table = np.zeros((n, n), dtype=np.int64)
    for i, (a, b, c, d) in enumerate(elements):
        for j, (e, f, g, h) in enumerate(elements):
            prod_m = ((a * e + b * g) % p, (a * f + b * h) % p,
                      (c * e + d * g) % p, (c * f + d * h) % p)
            table[i, j] = pos[prod_m]
    labels = [_sl2_label(m) for m in elements]
    return FiniteGroup(table, labels=labels, name=f"SL(2,{p})")


def sl2_standard_generators(p: int) -> list[str]:
    """Labels of S, T and their inverses in SL(2, p)."""
    s = (0, (-1) % p, 1, 0)
    s_inv = (0, 1, (-1) % p, 0)
    t = (1, 1, 0, 1)
    t_inv = (1, (-1) % p, 0, 1)
    return [_sl2_label(m) for m in dict.fromkeys([s, s_inv, t, t_inv])]


def group_from_dict(doc: dict) -> FiniteGroup:
    """Build a group from {"kind": "cyclic"|"sl2"|"table", ...}."""
    kind = doc.get("kind")
    if kind == "cyclic":
        return cyclic_group(int(doc["n"]))
    if kind == "sl2":
        return sl2_group(int(doc["p"]))
    if kind == "table":
        return FiniteGroup(np.asarray(doc["mul"]), labels=doc.get("labels"),
                           name=doc.get("name", "table-group"))
    if kind == "product":
        return direct_product(*[group_from_dict(d) for d in doc["factors"]])
    raise InputError(f"unknown group kind {kind!r}")


# -- Cayley graphs and box spaces ----------------------------------------------

def cayley_graph(group: FiniteGroup, gens) -> MetricSpace:
    """The Cayley graph with edges {g, gs} for s in the generating set.

    The resulting metric is the word metric of the generating set. Raises
    NotGeneratingError (naming an unreachable element) when the set does not
    generate.
    """
    gens = gens if isinstance(gens, GeneratingSet) else GeneratingSet(group, gens)
    edges = []
    for g in range(group.order):
        for s in gens:
            h = group.mul(g, s)
            if g < h:
                edges.append((g, h))
    return build_graph_space(edges, group.order, labels=list(group.labels))


class BoxSpace(CoarseUnion):
    """Coarse disjoint union of Cayley graphs of finite quotients."""

    def __init__(self, components, offsets, basepoints,
                 groups: list[FiniteGroup], gens_per_group: list[list[int]]):
        super().__init__(components, offsets, basepoints)
        self.groups = groups
        self.gens_per_group = gens_per_group


def box_space(quotients: list[FiniteGroup], gens,
              offsets: list[int] | None = None) -> BoxSpace:
    """Assemble the box space of a quotient sequence with a fixed generating set.

    `gens` is either one list of element labels resolved in every quotient, or
    a per-quotient list of lists. Quotient orders must be strictly increasing.
    """
    if not quotients:
        raise InputError("box space needs at least one quotient")
    orders = [g.order for g in quotients]
    if any(b <= a for a, b in zip(orders, orders[1:])):
        raise InputError("quotient orders must be strictly increasing")
    if gens and isinstance(gens[0], (list, tuple)):
        per_group = list(gens)
        if len(per_group) != len(quotients):
            raise InputError("one generator list per quotient is required")
    else:
        per_group = [gens] * len(quotients)
    graphs, gen_indices = [], []
    for grp, gg in zip(quotients, per_group):
        gset = GeneratingSet(grp, gg)
        graphs.append(cayley_graph(grp, gset))
        gen_indices.append(list(gset.elements))
    base = coarse_union(graphs, offsets=offsets)
    return BoxSpace(base.components, base.offsets, base.basepoints,
                    quotients, gen_indices)


def cyclic_box_space(ns: list[int],
                     offsets: list[int] | None = None) -> BoxSpace:
    """Box space of Z/n over the given n's with generators {+1, -1}."""
    quotients = [cyclic_group(n) for n in ns]
    gens = [[1 % n, (n - 1) % n] for n in ns]
    return box_space(quotients, gens, offsets=offsets)


def invariant_mean_defect(box: BoxSpace, f, g) -> float:
    """Largest per-component defect of the mean under left translation by g.

    For a genuine quotient action this is zero up to float rounding: left
    translation permutes each component, so the component averages agree
    after relabelling.
    """
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (box.n,):
        raise InputError(f"f must assign one value to each of {box.n} points")
    defect = 0.0
    for i, grp in enumerate(box.groups):
        e = grp.element_index(g)
        if not (0 <= e < grp.order):
            raise InputError(f"element {g!r} not representable in {grp.name}")
        pts = box.component_points(i)
        vals = f[pts]
        translated = vals[grp.table[e]]
        defect = max(defect, abs(float(translated.mean() - vals.mean())))
    return defect


# -- girth ---------------------------------------------------------------------

def girth(space: MetricSpace) -> int | float:
    """Length of the shortest cycle; math.inf for forests.

    BFS from every vertex; a non-tree edge seen at depths (dx, dy) witnesses
    a cycle of length dx + dy + 1, and the minimum over all roots is exact.
    """
    n = space.n
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in space.edges:
        adj[int(u)].append(int(v))
        adj[int(v)].append(int(u))
    best = math.inf
    for root in range(n):
        depth = np.full(n, -1, dtype=np.int64)
        parent = np.full(n, -1, dtype=np.int64)
        depth[root] = 0
        frontier = [root]
        while frontier and 2 * depth[frontier[0]] < best - 1:
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if depth[v] < 0:
                        depth[v] = depth[u] + 1
                        parent[v] = u
                        nxt.append(v)
                    elif v != parent[u]:
                        best = min(best, int(depth[u] + depth[v] + 1))
            frontier = nxt
    return best if best < math.inf else math.inf
