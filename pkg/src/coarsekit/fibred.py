"""Fibred coarse embeddings over coarse disjoint unions.

An embedding assigns each point a fiber vector and each center x a chart: an
affine isometry per point z of the ball B_{l_i}(x), all sharing one linear
part. Transitions t_{xy} relate overlapping charts via t_x(z) = t_{xy} t_y(z).
Two generators are provided, both exact in integer arithmetic:

* cycles: charts send ball points to signed arc coordinates (clockwise, i.e.
  increasing vertex index, is positive); transitions are translations. The
  chart radius (n-1)//4 is the largest radius for which arc coordinates are
  isometric on every ball pair and transitions are single translations.
* large girth: within a ball that induces a tree, charts send z to the 0/1
  indicator of the edge path from the center to z (component-global edge
  axes, component root = vertex 0); transitions flip signs on the edges of
  the path between the two centers and translate by its indicator.

Scale-indexed kernel families read off squared chart displacements on the
restricted entourages A_R; chart coherence makes the values independent of
the chart used, so the family is scale independent on the nose.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (FeasibilityError, InputError, MissingChartError,
                     ScaleUnavailableError)
from .groups import cyclic_box_space, girth
from .kernels import (ControlFunctions, Kernel, ScaleFamily, StepFunction)
from .spaces import CoarseUnion, MetricSpace, coarse_union, entourage

__all__ = [
    "AffineIsometry",
    "Chart",
    "FibredEmbedding",
    "FceReport",
    "arc_coordinate",
    "fce_cycles",
    "fce_large_girth",
    "validate_fce",
    "kernels_from_fce",
    "fce_to_dict",
    "fce_from_dict",
    "save_fce",
    "load_fce",
]

_EXACT_TOL = 1e-9


def _q_apply(q, v: np.ndarray) -> np.ndarray:
    """Apply a linear part stored as None (identity), diag vector, or matrix."""
    if q is None:
        return v
    q = np.asarray(q)
    return q * v if q.ndim == 1 else q @ v


def _q_compose(q1, q2):
    """Linear part of q1 following q2."""
    if q1 is None:
        return None if q2 is None else np.asarray(q2).copy()
    if q2 is None:
        return np.asarray(q1).copy()
    a, b = np.asarray(q1), np.asarray(q2)
    if a.ndim == 1 and b.ndim == 1:
        return a * b
    a2 = np.diag(a) if a.ndim == 1 else a
    b2 = np.diag(b) if b.ndim == 1 else b
    return a2 @ b2


def _q_inverse(q):
    if q is None:
        return None
    q = np.asarray(q)
    return q.copy() if q.ndim == 1 else q.T.copy()  # signs are involutions


def _q_residual(q1, q2, dim: int) -> float:
    """Max-entry difference between two linear parts."""
    def dense(q):
        if q is None:
            return np.eye(dim)
        q = np.asarray(q)
        return np.diag(q) if q.ndim == 1 else q
    return float(np.abs(dense(q1) - dense(q2)).max()) if dim else 0.0


@dataclass
class AffineIsometry:
    """v -> Q v + b with Q orthogonal.

    Q is stored as None (identity), a diagonal sign vector, or a dense
    matrix; all three compose freely.
    """
    q: object
    b: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        return _q_apply(self.q, np.asarray(v, dtype=np.float64)) + self.b

    def compose(self, other: AffineIsometry) -> AffineIsometry:
        """self after other."""
        return AffineIsometry(_q_compose(self.q, other.q),
                              _q_apply(self.q, other.b) + self.b)

    def inverse(self) -> AffineIsometry:
        qi = _q_inverse(self.q)
        return AffineIsometry(qi, -_q_apply(qi, self.b))

    def orthogonality_residual(self) -> float:
        if self.q is None:
            return 0.0
        q = np.asarray(self.q)
        if q.ndim == 1:
            return float(np.abs(q * q - 1.0).max())
        return float(np.abs(q.T @ q - np.eye(q.shape[0])).max())

    def map_residual(self, other: AffineIsometry) -> float:
        dim = len(self.b)
        return max(_q_residual(self.q, other.q, dim),
                   float(np.abs(self.b - other.b).max(initial=0.0)))


@dataclass
class Chart:
    """Trivialization over one ball: shared linear part, per-member offsets."""
    center: int
    members: np.ndarray          # global point ids, sorted
    q: object                    # shared linear part (None | diag | dense)
    b: np.ndarray                # (len(members), dim)
    _row: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._row = {int(z): i for i, z in enumerate(self.members)}

    def has(self, z: int) -> bool:
        return int(z) in self._row

    def map_at(self, z: int) -> AffineIsometry:
        return AffineIsometry(self.q, self.b[self._row[int(z)]])

    def value(self, z: int, section_vec: np.ndarray | None = None) -> np.ndarray:
        """t_x(z)(s(z)); section defaults to zero."""
        row = self.b[self._row[int(z)]]
        if section_vec is None:
            return row
        return _q_apply(self.q, section_vec) + row

    def values(self, section: np.ndarray | None = None) -> np.ndarray:
        if section is None:
            return self.b
        svecs = section[self.members]
        if self.q is None:
            return svecs + self.b
        q = np.asarray(self.q)
        rotated = svecs * q if q.ndim == 1 else svecs @ q.T
        return rotated + self.b


class FibredEmbedding:
    """Charts, transitions, scales and controls over a coarse union."""

    def __init__(self, space: CoarseUnion, dim: int, scales: list[int],
                 charts: dict[int, Chart],
                 transitions: dict[tuple[int, int], AffineIsometry],
                 controls: ControlFunctions,
                 section: np.ndarray | None = None):
        if len(scales) != len(space.components):
            raise InputError("one scale per component is required")
        if any(b < a for a, b in zip(scales, scales[1:])):
            raise InputError("chart scales must be non-decreasing")
        if any(s < 0 for s in scales):
            raise InputError("chart scales must be >= 0")
        for i in range(len(space.components) - 1):
            if space.gap(i, i + 1) <= scales[i + 1]:
                raise InputError("chart balls would cross components; "
                                 "increase the union gaps")
        self.space = space
        self.dim = int(dim)
        self.scales = [int(l) for l in scales]
        self.charts = charts
        self.transitions = transitions
        self.controls = controls
        self.section = section

    def scale_of_point(self, x: int) -> int:
        return self.scales[self.space.locate(x)[0]]

    def chart_value(self, center: int, z: int) -> np.ndarray:
        chart = self.charts.get(int(center))
        if chart is None or not chart.has(z):
            raise MissingChartError(
                f"no chart at {center} covering {z}")
        svec = None if self.section is None else self.section[int(z)]
        return chart.value(z, svec)

    def transition(self, x: int, y: int) -> AffineIsometry | None:
        """Stored t_{xy} with t_x(z) = t_{xy} t_y(z); derived by inversion
        when only the mirror orientation is stored."""
        t = self.transitions.get((int(x), int(y)))
        if t is not None:
            return t
        t = self.transitions.get((int(y), int(x)))
        return None if t is None else t.inverse()

    def __repr__(self) -> str:
        return (f"FibredEmbedding(dim={self.dim}, "
                f"components={len(self.space.components)}, "
                f"charts={len(self.charts)})")


# -- generators ----------------------------------------------------------------

def arc_coordinate(n: int, i: int, j: int) -> int:
    """Signed arc position of vertex j relative to i on the n-cycle,
    the representative of (j - i) mod n in (-n/2, n/2]."""
    m = (j - i) % n
    return m - n if m > n // 2 else m


def cycle_chart_radius(n: int) -> int:
    """Largest radius with exact interval charts and single-translation
    transitions on C_n (needs 4*radius < n)."""
    return (n - 1) // 4


def fce_cycles(cycle_lengths: list[int],
               offsets: list[int] | None = None,
               with_transitions: bool = True) -> FibredEmbedding:
    """Exact fibred embedding of the box space of cycles, with dim-1 fibers.

    Chart at x sends z to its signed arc coordinate relative to x;
    transitions are the translations by the arc coordinate of one center
    relative to the other. Achieves rho_1(r) = rho_2(r) = r on every
    in-ball pair. `with_transitions=False` skips the transition table
    (validators derive transitions from overlapping charts on demand);
    the deep pipeline truncations use that to keep memory flat.
    """
    lengths = [int(n) for n in cycle_lengths]
    if any(b <= a for a, b in zip(lengths, lengths[1:])):
        raise InputError("cycle lengths must be strictly increasing")
    if any(n < 4 for n in lengths):
        raise InputError("cycle lengths must be >= 4")
    space = cyclic_box_space(lengths, offsets=offsets)
    scales = [cycle_chart_radius(n) for n in lengths]
    charts: dict[int, Chart] = {}
    transitions: dict[tuple[int, int], AffineIsometry] = {}
    for ci, n in enumerate(lengths):
        l = scales[ci]
        start = int(space.starts[ci])
        for xi in range(n):
            offs = np.arange(-l, l + 1)
            members = start + (xi + offs) % n
            order = np.argsort(members)
            b = offs[order].astype(np.float64).reshape(-1, 1)
            charts[start + xi] = Chart(start + xi, members[order], None, b)
        if not with_transitions:
            continue
        for xi in range(n):
            for step in range(1, 2 * l + 1):
                yi = (xi + step) % n
                a, b_ = min(xi, yi), max(xi, yi)
                key = (start + a, start + b_)
                if key not in transitions:
                    c = float(arc_coordinate(n, a, b_))
                    transitions[key] = AffineIsometry(None, np.array([c]))
    max_r = 2 * max(scales) if scales else 0
    knots = list(range(max_r + 1))
    ident = StepFunction(knots, np.array(knots, dtype=np.float64), "floor")
    ident_ceil = StepFunction(knots, np.array(knots, dtype=np.float64), "ceil")
    controls = ControlFunctions(rho_minus=ident_ceil, rho_plus=ident)
    return FibredEmbedding(space, 1, scales, charts, transitions, controls)


def _bfs_paths(adj: list[list[int]], root: int, radius: int,
               edge_key, n_edges: int,
               signed: bool) -> tuple[list[int], dict[int, np.ndarray]]:
    """Ball members and the path vector of each member relative to the root.

    `signed=False` gives 0/1 indicators (valid when paths are unique, i.e.
    inside tree balls); `signed=True` orients each edge from its smaller to
    its larger endpoint and records +-1 traversals, which is the convention
    the non-tree large-girth charts use.
    """
    from collections import deque
    depth = {root: 0}
    paths: dict[int, np.ndarray] = {root: np.zeros(n_edges)}
    queue = deque([root])
    while queue:
        u = queue.popleft()
        if depth[u] == radius:
            continue
        for v in adj[u]:
            if v not in depth:
                depth[v] = depth[u] + 1
                vec = paths[u].copy()
                if signed:
                    vec[edge_key[(min(u, v), max(u, v))]] += 1.0 if u < v else -1.0
                else:
                    vec[edge_key[(min(u, v), max(u, v))]] = 1.0
                paths[v] = vec
                queue.append(v)
    members = sorted(depth)
    return members, paths


def large_girth_chart_radius(g) -> int | None:
    """Largest admissible chart radius for girth g (None = unrestricted)."""
    if g == float("inf"):
        return None
    return (int(g) - 1) // 4


def fce_large_girth(graph_list: list[MetricSpace],
                    scales: list[int] | None = None,
                    offsets: list[int] | None = None) -> FibredEmbedding:
    """Fibred embedding of a union of graphs whose chart balls are trees.

    Tree components use 0/1 path-indicator charts with sign-flip transitions
    (re-rooting flips the edges along the path between the two centers) and
    any radius up to the diameter. Components with finite girth g use signed
    path indicators with translation transitions instead, admissible while
    4*l < g: below that bound every ball is a tree, every in-ball pair
    realizes its distance inside the ball, and closed walks short enough to
    break transition constancy cannot exist. Either way the squared chart
    displacement equals the distance exactly, so rho_1(r) = rho_2(r) =
    sqrt(r) on the observed range.
    """
    if not graph_list:
        raise InputError("need at least one graph")
    girths = [girth(sp) for sp in graph_list]
    raw = []
    for g, sp in zip(girths, graph_list):
        cap = large_girth_chart_radius(g)
        raw.append(sp.diameter if cap is None else min(cap, sp.diameter))
    if scales is None:
        scales = [min(raw[i:]) for i in range(len(raw))]
    else:
        scales = [int(l) for l in scales]
        for i, (l, g) in enumerate(zip(scales, girths)):
            cap = large_girth_chart_radius(g)
            if cap is not None and l > cap:
                raise InputError(
                    f"component {i}: girth {g} too small for chart radius "
                    f"{l} (need 4*l < girth)")
    space = coarse_union(list(graph_list), offsets=offsets)
    dim = max(max((len(sp.edges) for sp in graph_list), default=1), 1)
    charts: dict[int, Chart] = {}
    transitions: dict[tuple[int, int], AffineIsometry] = {}
    for ci, sp in enumerate(graph_list):
        l = scales[ci]
        start = int(space.starts[ci])
        n_edges = len(sp.edges)
        is_tree = n_edges == sp.n - 1
        edge_key = {(int(u), int(v)): k for k, (u, v) in enumerate(sp.edges)}
        adj: list[list[int]] = [[] for _ in range(sp.n)]
        for u, v in sp.edges:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
        root_vecs: dict[int, np.ndarray] = {}
        if is_tree:
            # component root = vertex 0 fixes the re-rooting signs
            _, root_vecs = _bfs_paths(adj, 0, sp.n, edge_key, n_edges,
                                      signed=False)
        # chart offsets: path vectors from each center over its ball
        for xi in range(sp.n):
            members, paths = _bfs_paths(adj, xi, l, edge_key, n_edges,
                                        signed=not is_tree)
            b = np.zeros((len(members), dim))
            for row, z in enumerate(members):
                b[row, :n_edges] = paths[z]
            if is_tree:
                sign = np.ones(dim)
                sign[:n_edges] -= 2.0 * root_vecs[xi]
                q = sign
            else:
                q = None
            charts[start + xi] = Chart(
                start + xi, start + np.array(members, dtype=np.int64), q, b)
        # transitions between overlapping charts
        for xi in range(sp.n):
            for yi in range(xi + 1, sp.n):
                if sp.dist[xi, yi] > 2 * l:
                    continue
                q = None
                c = np.zeros(dim)
                if is_tree:
                    # path(x, y) = symmetric difference of the root paths
                    diff = np.abs(root_vecs[xi] - root_vecs[yi])
                    q = np.ones(dim)
                    q[:n_edges] -= 2.0 * diff
                    c[:n_edges] = diff
                else:
                    # signed path x -> y, canonical below 4*l < girth
                    _, from_x = _bfs_paths(adj, xi, int(sp.dist[xi, yi]),
                                           edge_key, n_edges, signed=True)
                    c[:n_edges] = from_x[yi]
                transitions[(start + xi, start + yi)] = AffineIsometry(q, c)
    max_r = 2 * max(scales) if scales else 0
    knots = list(range(max_r + 1))
    vals = np.sqrt(np.array(knots, dtype=np.float64))
    controls = ControlFunctions(
        rho_minus=StepFunction(knots, vals, "ceil"),
        rho_plus=StepFunction(knots, vals, "floor"))
    return FibredEmbedding(space, dim, scales, charts, transitions, controls)


# -- validation ----------------------------------------------------------------

@dataclass
class FceReport:
    ok: bool
    coverage_ok: bool
    condition1_ok: bool
    condition2_ok: bool
    max_transition_residual: float
    max_orthogonality_residual: float
    empirical: ControlFunctions | None
    failures: list[str]

    def summary(self) -> dict:
        return {
            "ok": self.ok,
            "coverage_ok": self.coverage_ok,
            "condition1_ok": self.condition1_ok,
            "condition2_ok": self.condition2_ok,
            "max_transition_residual": self.max_transition_residual,
            "max_orthogonality_residual": self.max_orthogonality_residual,
            "failures": self.failures[:20],
        }


def validate_fce(fce: FibredEmbedding, space: CoarseUnion | None = None,
                 tol: float = _EXACT_TOL) -> FceReport:
    """Check chart coverage, the control inequalities, and transition coherence.

    Condition (1) is checked against the embedding's declared controls on
    every in-ball pair; condition (2) compares each stored transition with
    both charts as affine maps and reports the largest residual. Overlapping
    chart pairs without a stored transition are checked for the existence of
    a coherent transition (constancy of t_x(z) composed with t_y(z)^{-1}).
    """
    space = space or fce.space
    failures: list[str] = []
    coverage_ok = True
    # chart coverage of every ball
    for ci, comp in enumerate(space.components):
        l = fce.scales[ci]
        start = int(space.starts[ci])
        for xi in range(comp.n):
            x = start + xi
            chart = fce.charts.get(x)
            if chart is None:
                raise MissingChartError(f"no chart centered at point {x}")
            ball = start + np.flatnonzero(comp.dist[xi] <= l)
            missing = np.setdiff1d(ball, chart.members)
            if missing.size:
                raise MissingChartError(
                    f"chart at {x} misses ball point {int(missing[0])}")
    # orthogonality of linear parts
    max_orth = 0.0
    for chart in fce.charts.values():
        max_orth = max(max_orth,
                       AffineIsometry(chart.q, np.zeros(fce.dim))
                       .orthogonality_residual())
    for t in fce.transitions.values():
        max_orth = max(max_orth, t.orthogonality_residual())
    # condition (1): declared controls hold on all in-ball pairs
    condition1_ok = True
    dists_all: list[int] = []
    norms_all: list[float] = []
    for x, chart in fce.charts.items():
        vals = chart.values(fce.section)
        m = len(chart.members)
        if m < 2:
            continue
        diff = vals[:, None, :] - vals[None, :, :]
        norms = np.sqrt((diff * diff).sum(axis=2))
        ci, _ = space.locate(x)
        comp = space.components[ci]
        start = int(space.starts[ci])
        local = chart.members - start
        dmat = comp.dist[np.ix_(local, local)]
        iu, ju = np.triu_indices(m, k=1)
        ds = dmat[iu, ju]
        ns = norms[iu, ju]
        dists_all.extend(int(d) for d in ds)
        norms_all.extend(float(v) for v in ns)
        lo = np.array([fce.controls.rho_minus(int(d)) for d in ds])
        hi = np.array([fce.controls.rho_plus(int(d)) for d in ds])
        bad = (ns < lo - tol) | (ns > hi + tol)
        if bad.any():
            condition1_ok = False
            k = int(np.flatnonzero(bad)[0])
            failures.append(
                f"condition (1) fails in chart {x}: pair at distance "
                f"{int(ds[k])} has displacement {ns[k]:.6g} outside "
                f"[{lo[k]:.6g}, {hi[k]:.6g}]")
    # condition (2): stored transitions match the charts
    max_resid = 0.0
    for ci, comp in enumerate(space.components):
        l = fce.scales[ci]
        start = int(space.starts[ci])
        pairs = comp.pairs_within(2 * l)
        for xi, yi in pairs:
            x, y = start + int(xi), start + int(yi)
            cx, cy = fce.charts[x], fce.charts[y]
            common = np.intersect1d(cx.members, cy.members)
            if common.size == 0:
                continue
            t = fce.transition(x, y)
            if t is None:
                z0 = int(common[0])
                t = cx.map_at(z0).compose(cy.map_at(z0).inverse())
            q_resid = _q_residual(cx.q, _q_compose(t.q, cy.q), fce.dim)
            rows_x = np.array([cx._row[int(z)] for z in common])
            rows_y = np.array([cy._row[int(z)] for z in common])
            via_y = cy.b[rows_y]
            if t.q is not None:
                qq = np.asarray(t.q)
                via_y = via_y * qq if qq.ndim == 1 else via_y @ qq.T
            b_resid = float(np.abs(cx.b[rows_x] - (via_y + t.b)).max())
            resid = max(q_resid, b_resid)
            if resid > max_resid:
                max_resid = resid
            if resid > tol and len(failures) < 50:
                failures.append(
                    f"condition (2) residual {resid:.3e} between charts "
                    f"{x} and {y}")
    condition2_ok = max_resid <= tol
    empirical = None
    if dists_all:
        from .kernels import envelopes_from_samples
        empirical = envelopes_from_samples(dists_all, np.array(norms_all))
    ok = coverage_ok and condition1_ok and condition2_ok and max_orth <= tol
    return FceReport(ok, coverage_ok, condition1_ok, condition2_ok,
                     max_resid, max_orth, empirical, failures)


# -- kernels -------------------------------------------------------------------

def kernels_from_fce(fce: FibredEmbedding, space: CoarseUnion | None = None,
                     scales: list[int] | None = None) -> ScaleFamily:
    """The scale-indexed family k_R(x, y) = ||t_x(x)s(x) - t_x(y)s(y)||^2.

    For each R the support is the restricted entourage A_R: pairs at
    distance <= R between points of components whose chart scale reaches R;
    the excluded set K_R collects the components below that scale. Values
    use the chart at min(x, y); chart coherence makes the choice immaterial.
    """
    space = space or fce.space
    if scales is None:
        top = max(fce.scales)
        scales = [R for R in range(1, top + 1)]
    kernels: dict[int, Kernel] = {}
    for R in scales:
        R = int(R)
        i_R = next((i for i, l in enumerate(fce.scales) if l >= R), None)
        if i_R is None:
            raise ScaleUnavailableError(
                f"no component has chart scale >= {R}")
        excluded = frozenset(
            int(p) for i in range(i_R) for p in space.component_points(i))
        sup = entourage(space, R, excluded)
        vals = np.zeros(len(sup.pairs))
        for k, (x, y) in enumerate(sup.pairs):
            x, y = int(x), int(y)
            if x == y:
                continue
            if space.component_of[x] != space.component_of[y]:
                raise FeasibilityError(
                    "entourage pair crosses components; union gaps are "
                    "too small for this scale")
            vx = fce.chart_value(x, x)
            vy = fce.chart_value(x, y)
            d = vx - vy
            vals[k] = float(d @ d)
        kernels[R] = Kernel(sup, vals)
    return ScaleFamily(kernels)


# -- serialization ------------------------------------------------------------

def _q_to_json(q):
    if q is None:
        return None
    q = np.asarray(q)
    return q.tolist()


def _q_from_json(doc):
    if doc is None:
        return None
    return np.asarray(doc, dtype=np.float64)


def fce_to_dict(fce: FibredEmbedding) -> dict:
    from .spaces import space_to_dict
    return {
        "space": space_to_dict(fce.space),
        "dim": fce.dim,
        "scales": fce.scales,
        "section": None if fce.section is None else fce.section.tolist(),
        "charts": [
            {"center": int(c.center), "members": c.members.tolist(),
             "Q": _q_to_json(c.q), "b": c.b.tolist()}
            for c in fce.charts.values()
        ],
        "transitions": [
            {"x": int(x), "y": int(y), "Q": _q_to_json(t.q),
             "b": t.b.tolist()}
            for (x, y), t in fce.transitions.items()
        ],
        "controls": {
            "knots": list(fce.controls.rho_plus.knots),
            "rho_minus": fce.controls.rho_minus.values.tolist(),
            "rho_plus": fce.controls.rho_plus.values.tolist(),
        },
    }


def fce_from_dict(doc: dict) -> FibredEmbedding:
    from .spaces import space_from_dict
    space = space_from_dict(doc["space"])
    charts = {}
    for c in doc["charts"]:
        charts[int(c["center"])] = Chart(
            int(c["center"]), np.asarray(c["members"], dtype=np.int64),
            _q_from_json(c["Q"]), np.asarray(c["b"], dtype=np.float64))
    transitions = {}
    for t in doc["transitions"]:
        transitions[(int(t["x"]), int(t["y"]))] = AffineIsometry(
            _q_from_json(t["Q"]), np.asarray(t["b"], dtype=np.float64))
    knots = doc["controls"]["knots"]
    controls = ControlFunctions(
        rho_minus=StepFunction(knots, doc["controls"]["rho_minus"], "ceil"),
        rho_plus=StepFunction(knots, doc["controls"]["rho_plus"], "floor"))
    section = doc.get("section")
    section = None if section is None else np.asarray(section)
    return FibredEmbedding(space, int(doc["dim"]),
                           [int(l) for l in doc["scales"]],
                           charts, transitions, controls, section)


def save_fce(fce: FibredEmbedding, path) -> None:
    with open(path, "w") as fh:
        json.dump(fce_to_dict(fce), fh)


def load_fce(path) -> FibredEmbedding:
    with open(path) as fh:
        return fce_from_dict(json.load(fh))
