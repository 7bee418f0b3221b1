"""Finite metric spaces with integer graph metrics and coarse disjoint unions.

The metric layer is exact: distances inside a component are int64 hop counts,
and cross-component distances in a :class:`CoarseUnion` are arbitrary-precision
Python ints (offsets on the ray can exceed 2**63 in the multiscale pipelines).
No floating point enters any distance computation.

A coarse union glues its components onto a ray through per-component
basepoints: for x in component i and y in component j != i,

    d(x, y) = d_i(x, p_i) + |o_i - o_j| + d_j(p_j, y).

This is the shortest-path metric of the wedge of the components along an
integer ray, so the triangle inequality is inherited rather than imposed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc
from scipy.sparse.csgraph import shortest_path as _sp

from .errors import DisconnectedGraphError, InputError

__all__ = [
    "MetricSpace",
    "CoarseUnion",
    "Entourage",
    "build_graph_space",
    "cycle_space",
    "path_space",
    "entourage",
    "coarse_components",
    "coarse_union",
    "save_space",
    "load_space",
    "space_to_dict",
    "space_from_dict",
]

# Dense distance matrices above this point count are refused; the lazy
# CoarseUnion representation must be used instead.
_DENSE_LIMIT = 6000


class MetricSpace:
    """A finite connected graph space with its exact hop metric.

    Attributes:
        n: point count.
        dist: (n, n) int64 shortest-path matrix.
        edges: (m, 2) int64 array of the defining undirected edges.
        labels: optional per-point annotations (e.g. group element names).
    """

    def __init__(self, dist: np.ndarray, edges: np.ndarray | None = None,
                 labels: list[str] | None = None):
        dist = np.asarray(dist, dtype=np.int64)
        if dist.ndim != 2 or dist.shape[0] != dist.shape[1]:
            raise InputError("distance matrix must be square")
        if (dist.diagonal() != 0).any():
            raise InputError("distance matrix must vanish on the diagonal")
        if (dist != dist.T).any():
            raise InputError("distance matrix must be symmetric")
        self.n = int(dist.shape[0])
        self.dist = dist
        self.edges = (np.zeros((0, 2), dtype=np.int64) if edges is None
                      else np.asarray(edges, dtype=np.int64).reshape(-1, 2))
        self.labels = labels
        self.component_of = np.zeros(self.n, dtype=np.int64)

    # -- protocol shared with CoarseUnion ------------------------------------

    @property
    def components(self) -> list[MetricSpace]:
        return [self]

    def distance(self, x: int, y: int) -> int:
        return int(self.dist[x, y])

    def distances_from(self, x: int) -> list[int]:
        return [int(v) for v in self.dist[x]]

    def ball(self, x: int, radius: int) -> np.ndarray:
        """Point ids within `radius` of x (including x)."""
        return np.flatnonzero(self.dist[x] <= radius)

    @property
    def diameter(self) -> int:
        return int(self.dist.max()) if self.n else 0

    def max_ball_size(self, radius: int) -> int:
        """Bounded-geometry profile N_R: the largest ball cardinality."""
        return int((self.dist <= radius).sum(axis=1).max())

    def ball_profile(self) -> np.ndarray:
        """N_R for every radius R in 0..diameter."""
        radii = np.arange(self.diameter + 1)
        return np.array([self.max_ball_size(int(r)) for r in radii])

    def pairs_within(self, radius: int,
                     excluded: frozenset[int] = frozenset()) -> np.ndarray:
        """All off-diagonal pairs (x, y), x < y, with d(x, y) <= radius."""
        xs, ys = np.nonzero(np.triu(self.dist <= radius, k=1))
        pairs = np.column_stack([xs, ys]).astype(np.int64)
        if excluded:
            keep = ~(np.isin(pairs[:, 0], list(excluded))
                     | np.isin(pairs[:, 1], list(excluded)))
            pairs = pairs[keep]
        return pairs

    def label(self, x: int) -> str:
        return self.labels[x] if self.labels else str(x)

    def __repr__(self) -> str:
        return f"MetricSpace(n={self.n}, diameter={self.diameter})"


def build_graph_space(edge_list, n: int,
                      labels: list[str] | None = None) -> MetricSpace:
    """Build a MetricSpace from an undirected edge list on points 0..n-1.

    Raises InputError on self-loops or out-of-range vertices, and
    DisconnectedGraphError if the hop metric would be infinite somewhere
    (disconnected inputs must go through :func:`coarse_union` instead).
    """
    if n < 1:
        raise InputError("a space needs at least one point")
    edges = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if edges.size:
        if edges.min() < 0 or edges.max() >= n:
            raise InputError(f"edge endpoint out of range 0..{n - 1}")
        if (edges[:, 0] == edges[:, 1]).any():
            bad = edges[edges[:, 0] == edges[:, 1]][0]
            raise InputError(f"self-loop at vertex {bad[0]} is not allowed")
        lo = np.minimum(edges[:, 0], edges[:, 1])
        hi = np.maximum(edges[:, 0], edges[:, 1])
        edges = np.unique(np.column_stack([lo, hi]), axis=0)
    if n > _DENSE_LIMIT:
        raise InputError(
            f"refusing a dense {n}x{n} metric; split into a coarse union")
    if n == 1:
        return MetricSpace(np.zeros((1, 1), dtype=np.int64),
                           edges=edges, labels=labels)
    data = np.ones(len(edges), dtype=np.int8)
    adj = coo_matrix((data, (edges[:, 0], edges[:, 1])), shape=(n, n))
    adj = adj + adj.T
    dist = _sp(adj.tocsr(), method="D", unweighted=True, directed=False)
    if np.isinf(dist).any():
        ncomp, lab = _cc(adj.tocsr(), directed=False)
        raise DisconnectedGraphError(
            f"graph has {ncomp} connected components; build each separately "
            "and combine with coarse_union")
    return MetricSpace(dist.astype(np.int64), edges=edges, labels=labels)


def cycle_space(n: int) -> MetricSpace:
    """The cycle graph C_n."""
    if n < 3:
        raise InputError("a cycle needs at least 3 vertices")
    edges = [(i, (i + 1) % n) for i in range(n)]
    return build_graph_space(edges, n)


def path_space(n: int) -> MetricSpace:
    """The path graph on n vertices."""
    edges = [(i, i + 1) for i in range(n - 1)]
    return build_graph_space(edges, n)


class CoarseUnion:
    """A coarse disjoint union of finite metric spaces along a ray.

    Points are indexed globally, component after component. Offsets are
    Python ints (they can be astronomically large); within-component
    arithmetic stays in int64.
    """

    def __init__(self, components: list[MetricSpace], offsets: list[int],
                 basepoints: list[int]):
        if not components:
            raise InputError("a coarse union needs at least one component")
        if not (len(components) == len(offsets) == len(basepoints)):
            raise InputError("components, offsets and basepoints must align")
        for i, (sp, p) in enumerate(zip(components, basepoints)):
            if not (0 <= p < sp.n):
                raise InputError(f"basepoint {p} out of range in component {i}")
        mins = _minimal_offsets(components)
        for i in range(1, len(components)):
            need = offsets[i - 1] + (mins[i] - mins[i - 1])
            if offsets[i] < need:
                raise InputError(
                    f"offset {i} violates the gap recurrence: "
                    f"need >= previous + diam_i + diam_j + i")
        self.components = components
        self.offsets = [int(o) for o in offsets]
        self.basepoints = [int(p) for p in basepoints]
        self.starts = np.cumsum([0] + [sp.n for sp in components])
        self.n = int(self.starts[-1])
        self.component_of = np.repeat(
            np.arange(len(components)), [sp.n for sp in components])

    # -- indexing -------------------------------------------------------------

    def locate(self, x: int) -> tuple[int, int]:
        """Global index -> (component index, local index)."""
        c = int(np.searchsorted(self.starts, x, side="right") - 1)
        return c, x - int(self.starts[c])

    def global_index(self, comp: int, local: int) -> int:
        return int(self.starts[comp]) + local

    def component_points(self, comp: int) -> np.ndarray:
        return np.arange(self.starts[comp], self.starts[comp + 1],
                         dtype=np.int64)

    def basepoint_row(self, comp: int) -> np.ndarray:
        """Distances from the basepoint of `comp` to each of its points."""
        return self.components[comp].dist[self.basepoints[comp]]

    # -- metric ---------------------------------------------------------------

    def distance(self, x: int, y: int) -> int:
        ci, xi = self.locate(x)
        cj, yj = self.locate(y)
        if ci == cj:
            return int(self.components[ci].dist[xi, yj])
        gap = abs(self.offsets[ci] - self.offsets[cj])
        return (int(self.basepoint_row(ci)[xi]) + gap
                + int(self.basepoint_row(cj)[yj]))

    def gap(self, i: int, j: int) -> int:
        """Distance between components i and j (attained at basepoints)."""
        return abs(self.offsets[i] - self.offsets[j])

    def distances_from(self, x: int) -> list[int]:
        ci, xi = self.locate(x)
        to_base = int(self.basepoint_row(ci)[xi])
        out: list[int] = []
        for j, sp in enumerate(self.components):
            if j == ci:
                out.extend(int(v) for v in sp.dist[xi])
            else:
                base = to_base + self.gap(ci, j)
                out.extend(base + int(v) for v in self.basepoint_row(j))
        return out

    def radial_decomposition(self, z0: int) -> list[tuple[int, np.ndarray]]:
        """Per component j: (base_j, row_j) with d(z0, x) = base_j + row_j[x].

        base_j is an exact Python int; row_j covers the points of component j
        in local order as int64.
        """
        ci, zi = self.locate(z0)
        out = []
        for j, sp in enumerate(self.components):
            if j == ci:
                out.append((0, sp.dist[zi].copy()))
            else:
                base = int(self.basepoint_row(ci)[zi]) + self.gap(ci, j)
                out.append((base, self.basepoint_row(j).copy()))
        return out

    def ball(self, x: int, radius: int) -> np.ndarray:
        ci, xi = self.locate(x)
        sp = self.components[ci]
        hits = [self.starts[ci] + np.flatnonzero(sp.dist[xi] <= radius)]
        to_base = int(self.basepoint_row(ci)[xi])
        for j in range(len(self.components)):
            if j == ci:
                continue
            slack = radius - to_base - self.gap(ci, j)
            if slack >= 0:
                hits.append(self.starts[j]
                            + np.flatnonzero(self.basepoint_row(j) <= slack))
        return np.sort(np.concatenate(hits)).astype(np.int64)

    def max_ball_size(self, radius: int) -> int:
        best = 0
        radius = int(radius)
        for ci, sp in enumerate(self.components):
            clamped = min(radius, sp.diameter)
            within = (sp.dist <= clamped).sum(axis=1)
            row = self.basepoint_row(ci)
            for j in range(len(self.components)):
                if j == ci:
                    continue
                budget = radius - self.gap(ci, j)  # exact Python int
                if budget < 0:
                    continue
                other = np.sort(self.basepoint_row(j))
                if budget >= int(row.max(initial=0)) + int(other[-1]):
                    within = within + len(other)
                    continue
                keys = np.int64(budget) - row
                within = within + np.searchsorted(other, keys, side="right")
            best = max(best, int(within.max()))
        return best

    def pairs_within(self, radius: int,
                     excluded: frozenset[int] = frozenset()) -> np.ndarray:
        """Off-diagonal pairs (x, y), x < y, with d(x, y) <= radius."""
        chunks = []
        for ci, sp in enumerate(self.components):
            local = sp.pairs_within(radius)
            if local.size:
                chunks.append(local + int(self.starts[ci]))
        for ci in range(len(self.components)):
            for cj in range(ci + 1, len(self.components)):
                budget = radius - self.gap(ci, cj)
                if budget < 0:
                    continue
                ri = self.basepoint_row(ci)
                rj = self.basepoint_row(cj)
                xs = np.flatnonzero(ri <= budget)
                for xi in xs:
                    ys = np.flatnonzero(rj <= budget - int(ri[xi]))
                    if ys.size:
                        gx = self.global_index(ci, int(xi))
                        chunks.append(np.column_stack(
                            [np.full(ys.size, gx, dtype=np.int64),
                             ys + int(self.starts[cj])]))
        if not chunks:
            return np.zeros((0, 2), dtype=np.int64)
        pairs = np.vstack(chunks)
        if excluded:
            keep = ~(np.isin(pairs[:, 0], list(excluded))
                     | np.isin(pairs[:, 1], list(excluded)))
            pairs = pairs[keep]
        return pairs

    def to_metric_space(self) -> MetricSpace:
        """Materialise the dense metric (small unions only)."""
        if self.n > _DENSE_LIMIT:
            raise InputError(f"union too large to densify ({self.n} points)")
        dist = np.zeros((self.n, self.n), dtype=np.int64)
        for ci, sp in enumerate(self.components):
            s = int(self.starts[ci])
            dist[s:s + sp.n, s:s + sp.n] = sp.dist
            for cj in range(ci + 1, len(self.components)):
                t = int(self.starts[cj])
                block = (self.basepoint_row(ci)[:, None] + self.gap(ci, cj)
                         + self.basepoint_row(cj)[None, :])
                nj = self.components[cj].n
                dist[s:s + sp.n, t:t + nj] = block
                dist[t:t + nj, s:s + sp.n] = block.T
        out = MetricSpace(dist)
        out.component_of = self.component_of.copy()
        return out

    def label(self, x: int) -> str:
        c, i = self.locate(x)
        return f"{c}:{self.components[c].label(i)}"

    def __repr__(self) -> str:
        return (f"CoarseUnion({len(self.components)} components, "
                f"n={self.n})")


def _minimal_offsets(components: list[MetricSpace]) -> list[int]:
    """Smallest offsets satisfying o_{i+1} >= o_i + diam_i + diam_{i+1} + i + 1."""
    offs = [0]
    for i in range(1, len(components)):
        offs.append(offs[-1] + components[i - 1].diameter
                    + components[i].diameter + i)
    return offs


def coarse_union(spaces: list[MetricSpace],
                 basepoints: list[int] | None = None,
                 offsets: list[int] | None = None) -> CoarseUnion:
    """Assemble a coarse disjoint union with growing inter-component gaps.

    Default offsets follow the minimal recurrence
    o_{i+1} = o_i + diam(X_i) + diam(X_{i+1}) + i + 1, which makes
    consecutive gaps strictly increasing. Explicit offsets may be larger
    (never smaller); the multiscale pipelines use exponentially spaced ones.
    """
    if not spaces:
        raise InputError("cannot form a coarse union of nothing")
    for i, sp in enumerate(spaces):
        if sp.n < 1:
            raise InputError(f"component {i} is empty")
    if basepoints is None:
        basepoints = [0] * len(spaces)
    if offsets is None:
        offsets = _minimal_offsets(spaces)
    return CoarseUnion(spaces, offsets, basepoints)


# -- entourages ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Entourage:
    """The pairs (x, y) with d(x, y) <= radius avoiding an excluded set.

    With no exclusions this is the R-neighbourhood of the diagonal; with a
    per-scale excluded set it is the restricted entourage used by the
    scale-indexed kernel families. Pairs are stored canonically (x <= y,
    diagonal included) and the symmetric closure is implicit.
    """

    space: object
    radius: int
    excluded: frozenset[int]
    pairs: np.ndarray  # (m, 2) int64, x <= y, includes (x, x)
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        idx = {(int(x), int(y)): k for k, (x, y) in enumerate(self.pairs)}
        object.__setattr__(self, "_index", idx)

    def __len__(self) -> int:
        return len(self.pairs)

    def index_of(self, x: int, y: int) -> int | None:
        if x > y:
            x, y = y, x
        return self._index.get((x, y))

    def contains(self, x: int, y: int) -> bool:
        return self.index_of(x, y) is not None

    def points(self) -> np.ndarray:
        return np.unique(self.pairs)

    def is_full_square(self) -> bool:
        pts = self.points()
        m = len(pts)
        return len(self.pairs) == m * (m + 1) // 2

    def pair_set(self) -> set[tuple[int, int]]:
        return set(self._index.keys())


def entourage(space, radius: int,
              excluded: frozenset[int] | set[int] = frozenset()) -> Entourage:
    """All pairs at distance <= radius avoiding `excluded` (symmetric closure)."""
    if radius < 0:
        raise InputError("entourage radius must be >= 0")
    excluded = frozenset(int(e) for e in excluded)
    off = space.pairs_within(int(radius), excluded=excluded)
    diag = np.setdiff1d(np.arange(space.n, dtype=np.int64),
                        np.fromiter(excluded, dtype=np.int64, count=len(excluded)))
    rows = [np.column_stack([diag, diag])]
    if off.size:
        lo = np.minimum(off[:, 0], off[:, 1])
        hi = np.maximum(off[:, 0], off[:, 1])
        rows.append(np.column_stack([lo, hi]))
    pairs = np.vstack(rows)
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    return Entourage(space, int(radius), excluded, pairs[order])


def full_support(points) -> Entourage:
    """The complete pair set over `points` (for fully supported kernels)."""
    pts = np.unique(np.asarray(list(points), dtype=np.int64))
    xs, ys = np.triu_indices(len(pts))
    pairs = np.column_stack([pts[xs], pts[ys]])
    return Entourage(None, -1, frozenset(), pairs)


def coarse_components(space, radius: int) -> tuple[np.ndarray, list[int]]:
    """Connected components of the graph with edges d <= radius.

    Returns (labels, sizes) with sizes in decreasing order.
    """
    if radius < 0:
        raise InputError("radius must be >= 0")
    pairs = space.pairs_within(int(radius))
    n = space.n
    if pairs.size:
        data = np.ones(len(pairs), dtype=np.int8)
        adj = coo_matrix((data, (pairs[:, 0], pairs[:, 1])), shape=(n, n))
        _, labels = _cc(adj.tocsr(), directed=False)
    else:
        labels = np.arange(n)
    sizes = sorted(np.bincount(labels).tolist(), reverse=True)
    return labels, sizes


# -- serialization ------------------------------------------------------------

def space_to_dict(space) -> dict:
    if isinstance(space, CoarseUnion):
        return {
            "components": [space_to_dict(sp) for sp in space.components],
            "offsets": space.offsets,
            "basepoints": space.basepoints,
        }
    doc = {"n": space.n, "edges": space.edges.tolist()}
    if space.labels:
        doc["labels"] = list(space.labels)
    return doc


def space_from_dict(doc: dict):
    if "components" in doc:
        comps = [space_from_dict(d) for d in doc["components"]]
        return CoarseUnion(comps, [int(o) for o in doc["offsets"]],
                           [int(p) for p in doc["basepoints"]])
    return build_graph_space(doc["edges"], int(doc["n"]),
                             labels=doc.get("labels"))


def save_space(space, path) -> None:
    with open(path, "w") as fh:
        json.dump(space_to_dict(space), fh)


def load_space(path):
    with open(path) as fh:
        return space_from_dict(json.load(fh))
