"""Annular decomposition, square-root partition of unity, kernel gluing, and
the truncated proper-function pipeline.

The decomposition covers the space by radial annuli around a basepoint,

    Z_n = { z : n^3 - n <= d(z, z0) <= (n+1)^3 + (n+1) },

whose multiplicity is 2 and whose consecutive symmetric differences are
2(n+1)-separated, so past the annulus index floor(L/2) the cover has
Lebesgue number at least L. The partition phi_n(x) = d(x, X \\ Z_n) /
sum_m d(x, X \\ Z_m) is 5/L-Lipschitz edgewise, and its square root Phi_n
has l2-sum one, which lets positive-type kernels on the even and odd
annulus unions glue into a single family

    F_{R,t}(x, y) = sum_n Phi_n(x) F^{[n]}_{R,t}(x, y) Phi_n(y)

that is scale independent in R for fixed t. With t = eps / (3 (1 +
rho_plus(R)^2)) and Lebesgue target S = 180 R / eps^2, the glued kernel has
(R, eps)-variation outside the bounded set D of annuli up to o = max(least
integer above S/2 - 1, m_R). Summing 1 - F_n over the schedule (R, eps) =
(n, 2^-n) gives the truncated proper-function approximation, bounded above
by R + 1 on distance-R pairs and below by N/2 beyond the decay thresholds
S_N.

Everything runs on a finite truncation: radial distances are exact Python
ints (the schedules push annulus indices past 10^7 and radii past 10^21),
excluded sets are reported rather than dropped, and pairs beyond the
available chart scales contribute through the decay bound
exp(-t * rho_minus(d)^2), counted per kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (CoverageError, FeasibilityError, InputError,
                     MissingPairError)
from .fibred import FibredEmbedding
from .kernels import (ControlFunctions, Kernel, ScaleFamily, StepFunction,
                      has_variation, support_from_pairs)
from .spaces import CoarseUnion, Entourage, MetricSpace, coarse_union

__all__ = [
    "AnnularDecomposition",
    "SqrtPartition",
    "ChunkKernelFamily",
    "GlueReport",
    "GluedFamily",
    "Schedule",
    "ProperFunctionApprox",
    "PropernessReport",
    "icbrt",
    "annulus_bounds",
    "annuli_containing",
    "annular_decomposition",
    "separation_check",
    "partition_of_unity",
    "parameter_schedule",
    "chunk_families",
    "glue",
    "glued_family",
    "proper_function",
    "verify_properness",
    "negative_type_on_balls",
]


# -- integer helpers -----------------------------------------------------------

def icbrt(x: int) -> int:
    """Floor cube root of a nonnegative (arbitrarily large) integer."""
    if x < 0:
        raise InputError("icbrt needs x >= 0")
    if x == 0:
        return 0
    k = max(int(round(float(x) ** (1.0 / 3.0))), 1)
    while k ** 3 > x:
        k -= 1
    while (k + 1) ** 3 <= x:
        k += 1
    return k


def annulus_bounds(n: int) -> tuple[int, int]:
    """Radial band [n^3 - n, (n+1)^3 + (n+1)] of the n-th annulus."""
    return n ** 3 - n, (n + 1) ** 3 + (n + 1)


def annuli_containing(r: int) -> list[int]:
    """Indices n with n^3 - n <= r <= (n+1)^3 + (n+1); one or two of them."""
    if r < 0:
        raise InputError("radial distance must be >= 0")
    seed = icbrt(r)
    hi = seed + 2
    while hi ** 3 - hi > r:
        hi -= 1
    lo = max(seed - 2, 0)
    while (lo + 1) ** 3 + (lo + 1) < r:
        lo += 1
    return list(range(lo, hi + 1))


def _least_integer_above(x: float) -> int:
    f = math.floor(x)
    return int(f) + 1 if f == x else int(math.ceil(x))


def _as_union(space) -> CoarseUnion:
    if isinstance(space, CoarseUnion):
        return space
    if isinstance(space, MetricSpace):
        return coarse_union([space])
    raise InputError("expected a MetricSpace or CoarseUnion")


# -- annular decomposition ------------------------------------------------------

class AnnularDecomposition:
    """The annular cover of a coarse union around a basepoint.

    Stores exact radial distances (Python ints, decomposed per component as
    base + small int64 part), per-point containing-annulus indices, the
    even/odd chunk unions Y0 / Y1, and radial-slack Lebesgue certificates.
    """

    def __init__(self, space: CoarseUnion, z0: int):
        self.space = space
        self.z0 = int(z0)
        self.radial = space.radial_decomposition(self.z0)
        n = space.n
        self.ann_lo = np.zeros(n, dtype=np.int64)
        self.ann_hi = np.zeros(n, dtype=np.int64)
        self._slack = [0] * n     # best radial margin inside a containing annulus
        for ci in range(len(space.components)):
            base, small = self.radial[ci]
            start = int(space.starts[ci])
            cache: dict[int, tuple[int, int, int]] = {}
            for li, s in enumerate(small.tolist()):
                if s not in cache:
                    r = base + s
                    members = annuli_containing(r)
                    best = 0
                    for m in members:
                        lo, hi = annulus_bounds(m)
                        best = max(best, min(r - lo, hi - r))
                    cache[s] = (members[0], members[-1], best)
                m_lo, m_hi, best = cache[s]
                p = start + li
                self.ann_lo[p] = m_lo
                self.ann_hi[p] = m_hi
                self._slack[p] = best
        self._annuli: dict[int, np.ndarray] = {}
        for m in np.unique(np.concatenate([self.ann_lo, self.ann_hi])):
            m = int(m)
            self._annuli[m] = np.flatnonzero(
                (self.ann_lo == m) | (self.ann_hi == m))
        self._complement_cache: dict | None = None

    def radius_of(self, x: int) -> int:
        ci, li = self.space.locate(int(x))
        base, small = self.radial[ci]
        return base + int(small[li])

    def members(self, x: int) -> list[int]:
        lo, hi = int(self.ann_lo[x]), int(self.ann_hi[x])
        return [lo] if lo == hi else [lo, hi]

    def annulus_indices(self) -> list[int]:
        return sorted(self._annuli)

    def annulus_points(self, n: int) -> np.ndarray:
        return self._annuli.get(int(n), np.zeros(0, dtype=np.int64))

    def multiplicity_ok(self) -> bool:
        """Every point lies in at most two annuli (and at least one)."""
        return bool(np.all(self.ann_hi - self.ann_lo <= 1))

    def chunks(self, parity: int) -> list[tuple[int, np.ndarray]]:
        """The finite pieces (n, points) of Y_parity, parity in {0, 1}."""
        return [(m, self._annuli[m]) for m in self.annulus_indices()
                if m % 2 == parity and len(self._annuli[m])]

    def region_above(self, o: int) -> np.ndarray:
        """Points outside D = union of annuli up to o (all their annuli > o)."""
        return np.flatnonzero(self.ann_lo > o)

    def excluded_below(self, o: int) -> np.ndarray:
        """The bounded set D: points touching any annulus of index <= o."""
        return np.flatnonzero(self.ann_lo <= o)

    def best_slack(self, x: int) -> int:
        """Largest radial margin of x inside one of its annuli; every ball
        of this radius around x stays inside that annulus."""
        return self._slack[int(x)]

    def lebesgue_floor(self, region: np.ndarray) -> int:
        """A certified Lebesgue number of the cover restricted to `region`."""
        if len(region) == 0:
            return 0
        return min(self._slack[int(p)] for p in region)

    def n_L(self, L: float) -> int:
        """Annulus floor: past index n_L the cover has Lebesgue number >= L."""
        return _least_integer_above(L / 2.0 - 1.0)

    def component_annulus_range(self, ci: int) -> tuple[int, int]:
        pts = self.space.component_points(ci)
        return int(self.ann_lo[pts].min()), int(self.ann_hi[pts].max())


def annular_decomposition(space, z0: int = 0) -> AnnularDecomposition:
    """Cover the space by the cubic annuli around the basepoint z0."""
    return AnnularDecomposition(_as_union(space), z0)


def separation_check(decomp: AnnularDecomposition) -> bool:
    """Exhaustively verify d(x, y) >= 2(n+1) for x in Z_n \\ Z_{n+1} and
    y in Z_{n+1} \\ Z_n, over every consecutive annulus pair with points.

    Cross-component blocks go through the exact decomposition
    d(x, y) = a_x + gap + b_y, whose minimum is min(a) + gap + min(b);
    same-component blocks take the minimum of the dense submatrix.
    """
    space = decomp.space
    for n in decomp.annulus_indices():
        a_pts = decomp.annulus_points(n)
        b_pts = decomp.annulus_points(n + 1)
        if not len(a_pts) or not len(b_pts):
            continue
        only_a = a_pts[(decomp.ann_lo[a_pts] != n + 1)
                       & (decomp.ann_hi[a_pts] != n + 1)]
        only_b = b_pts[(decomp.ann_lo[b_pts] != n)
                       & (decomp.ann_hi[b_pts] != n)]
        if not len(only_a) or not len(only_b):
            continue
        bound = 2 * (n + 1)
        groups_a = _group_by_component(space, only_a)
        groups_b = _group_by_component(space, only_b)
        for ci, a_local in groups_a.items():
            row_a = space.basepoint_row(ci)[a_local]
            for cj, b_local in groups_b.items():
                if ci == cj:
                    block = space.components[ci].dist[np.ix_(a_local, b_local)]
                    if int(block.min()) < bound:
                        return False
                else:
                    least = (int(row_a.min()) + space.gap(ci, cj)
                             + int(space.basepoint_row(cj)[b_local].min()))
                    if least < bound:
                        return False
    return True


def _group_by_component(space: CoarseUnion,
                        points: np.ndarray) -> dict[int, np.ndarray]:
    out: dict[int, list[int]] = {}
    for p in points.tolist():
        ci = int(space.component_of[p])
        out.setdefault(ci, []).append(p - int(space.starts[ci]))
    return {ci: np.asarray(v, dtype=np.int64) for ci, v in out.items()}


# -- partition of unity ---------------------------------------------------------

class SqrtPartition:
    """phi_n and Phi_n = sqrt(phi_n) on a working region.

    phi values depend only on the decomposition (they are cached on it), so
    partitions over different regions agree bitwise; the region fixes the
    Lebesgue certificate and the Lipschitz checks. Per point only the one
    or two containing annuli carry mass.
    """

    def __init__(self, decomp: AnnularDecomposition, region: np.ndarray,
                 phi_lo: np.ndarray, phi_hi: np.ndarray):
        self.decomp = decomp
        self.region = np.asarray(region, dtype=np.int64)
        self.phi_lo = phi_lo
        self.phi_hi = phi_hi
        self.sqrt_lo = np.sqrt(phi_lo)
        self.sqrt_hi = np.sqrt(phi_hi)
        self.lebesgue = decomp.lebesgue_floor(self.region)

    def phi(self, n: int, x: int) -> float:
        if self.decomp.ann_lo[x] == n:
            return float(self.phi_lo[x])
        if self.decomp.ann_hi[x] == n:
            return float(self.phi_hi[x])
        return 0.0

    def sqrt_phi(self, n: int, x: int) -> float:
        if self.decomp.ann_lo[x] == n:
            return float(self.sqrt_lo[x])
        if self.decomp.ann_hi[x] == n:
            return float(self.sqrt_hi[x])
        return 0.0

    def sums(self, points: np.ndarray | None = None) -> np.ndarray:
        pts = self.region if points is None else points
        return self.phi_lo[pts] + self.phi_hi[pts]

    def sq_sums(self, points: np.ndarray | None = None) -> np.ndarray:
        pts = self.region if points is None else points
        return self.sqrt_lo[pts] ** 2 + self.sqrt_hi[pts] ** 2

    def lipschitz_certificate(self) -> dict:
        """Edgewise increments against the 5/L and sqrt(5 d / L) bounds."""
        space = self.decomp.space
        region = set(int(p) for p in self.region)
        worst_phi = 0.0
        worst_sqrt = 0.0
        checked = 0
        for ci, comp in enumerate(space.components):
            start = int(space.starts[ci])
            for u, v in comp.edges:
                x, y = start + int(u), start + int(v)
                if x not in region or y not in region:
                    continue
                checked += 1
                for n in set(self.decomp.members(x) + self.decomp.members(y)):
                    worst_phi = max(worst_phi,
                                    abs(self.phi(n, x) - self.phi(n, y)))
                    worst_sqrt = max(
                        worst_sqrt,
                        abs(self.sqrt_phi(n, x) - self.sqrt_phi(n, y)))
        L = self.lebesgue
        return {
            "edges_checked": checked,
            "max_edge_phi_increment": worst_phi,
            "phi_bound": 5.0 / L if L else math.inf,
            "max_edge_sqrt_increment": worst_sqrt,
            "sqrt_bound": math.sqrt(5.0 / L) if L else math.inf,
            "lebesgue": L,
        }


def partition_of_unity(decomp: AnnularDecomposition,
                       region: np.ndarray) -> SqrtPartition:
    """phi_n(x) = d(x, X \\ Z_n) / sum_m d(x, X \\ Z_m) over the region.

    Numerators are exact integer distances to annulus complements within the
    truncation; an empty complement acts as an infinite numerator (its phi
    tends to one). A region point outside every annulus, possible only for
    corrupted decompositions, raises CoverageError.
    """
    space = decomp.space
    region = np.asarray(region, dtype=np.int64)
    phi_lo = np.zeros(space.n)
    phi_hi = np.zeros(space.n)
    numerators = _complement_distances(decomp)
    for p in region.tolist():
        lo, hi = int(decomp.ann_lo[p]), int(decomp.ann_hi[p])
        a = numerators[(p, lo)]
        if lo == hi:
            if a is not None and a == 0:
                raise CoverageError(
                    f"point {p} lies on the boundary of its only annulus")
            phi_lo[p] = 1.0
            continue
        b = numerators[(p, hi)]
        if a is None and b is None:
            raise CoverageError(
                f"point {p}: both annulus complements are empty")
        if a is None:
            phi_lo[p] = 1.0
        elif b is None:
            phi_hi[p] = 1.0
        else:
            if a == 0 and b == 0:
                raise CoverageError(f"point {p} lies outside every annulus")
            s = a + b
            phi_lo[p] = a / s
            phi_hi[p] = b / s
    return SqrtPartition(decomp, region, phi_lo, phi_hi)


def _complement_distances(decomp: AnnularDecomposition) -> dict:
    """d(x, X \\ Z_n) for every point x and containing annulus n.

    Exact integers; None encodes an empty complement. Cached on the
    decomposition so different regions share bitwise-identical phi values.
    """
    if decomp._complement_cache is not None:
        return decomp._complement_cache
    space = decomp.space
    ncomp = len(space.components)
    wanted = sorted({int(m) for p in range(space.n)
                     for m in decomp.members(p)})
    # per (component, annulus): mask of the component's points outside Z_n
    # and the least basepoint distance among them
    outside_masks: dict[tuple[int, int], np.ndarray] = {}
    out_min: dict[tuple[int, int], int | None] = {}
    for ci in range(ncomp):
        base, small = decomp.radial[ci]
        row = space.basepoint_row(ci)
        dmax = int(small.max())
        for nn in wanted:
            lo, hi = annulus_bounds(nn)
            lo_local = lo - base
            hi_local = hi - base
            if lo_local > 0:
                below = small < min(int(lo_local), dmax + 1)
            else:
                below = np.zeros(len(small), dtype=bool)
            if hi_local < 0:
                above = np.ones(len(small), dtype=bool)
            elif hi_local >= dmax:
                above = np.zeros(len(small), dtype=bool)
            else:
                above = small > int(hi_local)
            mask = below | above
            outside_masks[(ci, nn)] = mask
            out_min[(ci, nn)] = int(row[mask].min()) if mask.any() else None
    cross_min: dict[tuple[int, int], int | None] = {}
    for ci in range(ncomp):
        for nn in wanted:
            best = None
            for cj in range(ncomp):
                if cj == ci:
                    continue
                m = out_min[(cj, nn)]
                if m is None:
                    continue
                cand = space.gap(ci, cj) + m
                if best is None or cand < best:
                    best = cand
            cross_min[(ci, nn)] = best
    cache: dict[tuple[int, int], int | None] = {}
    for ci in range(ncomp):
        comp = space.components[ci]
        start = int(space.starts[ci])
        row = space.basepoint_row(ci)
        needed = {int(m) for p in space.component_points(ci)
                  for m in decomp.members(int(p))}
        for nn in needed:
            mask = outside_masks[(ci, nn)]
            inner = comp.dist[:, mask].min(axis=1) if mask.any() else None
            cb = cross_min[(ci, nn)]
            for li in range(comp.n):
                p = start + li
                if nn not in decomp.members(p):
                    continue
                best: int | None = None
                if inner is not None:
                    best = int(inner[li])
                if cb is not None:
                    cand = int(row[li]) + cb
                    if best is None or cand < best:
                        best = cand
                cache[(p, nn)] = best
    decomp._complement_cache = cache
    return cache


# -- schedules ------------------------------------------------------------------

@dataclass
class Schedule:
    """Parameters realising (R, eps)-variation of the glued kernel."""
    R: int
    eps: float
    t: float
    S: float
    o: int
    m_R: int
    D_size: int
    region_size: int
    lebesgue_achieved: int | None = None

    def as_dict(self) -> dict:
        return {"R": self.R, "eps": self.eps, "t": self.t, "S": self.S,
                "o": self.o, "m_R": self.m_R, "D_size": self.D_size,
                "region_size": self.region_size,
                "lebesgue_achieved": self.lebesgue_achieved}


def parameter_schedule(R: int, eps: float, controls: ControlFunctions,
                       decomp: AnnularDecomposition | None = None,
                       fce: FibredEmbedding | None = None) -> Schedule:
    """t = eps / (3 (1 + rho_plus(R)^2)), S = 180 R / eps^2, and the annulus
    floor o = max(least integer above S/2 - 1, m_R), D = annuli up to o."""
    if eps <= 0:
        raise InputError("eps must be positive")
    R = int(R)
    rho_plus_R = controls.rho_plus(R)
    t = eps / (3.0 * (1.0 + rho_plus_R ** 2))
    S = 180.0 * R / (eps * eps)
    m_R = 0
    if decomp is not None and fce is not None:
        for ci, l in enumerate(fce.scales):
            if l < R:
                m_R = max(m_R, decomp.component_annulus_range(ci)[1])
    o = max(_least_integer_above(S / 2.0 - 1.0), m_R)
    d_size = region_size = 0
    if decomp is not None:
        d_size = int(len(decomp.excluded_below(o)))
        region_size = int(len(decomp.region_above(o)))
    return Schedule(R, float(eps), float(t), float(S), int(o), int(m_R),
                    d_size, region_size)


# -- chunk kernel families -------------------------------------------------------

class ChunkKernelFamily:
    """Scale-independent negative-type kernels on one parity of annuli.

    Values are squared chart displacements of the ambient fibred embedding,
    restricted to pairs inside a common chunk Z_n (n of this parity). A pair
    beyond the available chart scale returns None; gluing then applies the
    decay bound. Restricting one coherent embedding keeps the values
    literally identical across scales and parities, which is what makes the
    glued family scale independent on the nose.
    """

    def __init__(self, fce: FibredEmbedding, decomp: AnnularDecomposition,
                 parity: int):
        self.fce = fce
        self.decomp = decomp
        self.parity = int(parity)
        self.space = fce.space

    def chunks(self) -> list[tuple[int, np.ndarray]]:
        return self.decomp.chunks(self.parity)

    def value(self, x: int, y: int, d: int | None = None) -> float | None:
        """Squared chart displacement, or None when no chart reaches the pair."""
        if x == y:
            return 0.0
        ci = int(self.space.component_of[x])
        if ci != int(self.space.component_of[y]):
            return None
        if d is None:
            d = self.space.distance(x, y)
        if d > self.fce.scales[ci]:
            return None
        vx = self.fce.chart_value(min(x, y), x)
        vy = self.fce.chart_value(min(x, y), y)
        diff = vx - vy
        return float(diff @ diff)

    def materialise(self, R: int, region: np.ndarray) -> Kernel:
        """The scale-R kernel on in-chunk, in-region pairs at distance <= R."""
        region_set = set(int(p) for p in region)
        space = self.space
        pairs: list[tuple[int, int]] = [(p, p) for p in sorted(region_set)]
        vals: list[float] = [0.0] * len(pairs)
        for x, y in space.pairs_within(int(R)):
            x, y = int(x), int(y)
            if x not in region_set or y not in region_set:
                continue
            common = set(self.decomp.members(x)) & set(self.decomp.members(y))
            if not any(m % 2 == self.parity for m in common):
                continue
            d = space.distance(x, y)
            v = self.value(x, y, d)
            if v is None:
                raise FeasibilityError(
                    f"no chart reaches pair ({x}, {y}) at distance {d}")
            pairs.append((min(x, y), max(x, y)))
            vals.append(v)
        sup = support_from_pairs(np.asarray(pairs))
        order = {(int(a), int(b)): k for k, (a, b) in enumerate(sup.pairs)}
        out = np.zeros(len(sup.pairs))
        for (a, b), v in zip(pairs, vals):
            out[order[(min(a, b), max(a, b))]] = v
        return Kernel(sup, out)


def chunk_families(fce: FibredEmbedding, decomp: AnnularDecomposition
                   ) -> tuple[ChunkKernelFamily, ChunkKernelFamily]:
    """The negative-type kernel families carried by Y0 and Y1."""
    return (ChunkKernelFamily(fce, decomp, 0),
            ChunkKernelFamily(fce, decomp, 1))


# -- gluing ----------------------------------------------------------------------

class _PairEvaluator:
    """Glued-value evaluator shared by glue() and the proper-function sum.

    Caches the per-distance Schoenberg factor. When the embedding's declared
    controls are tight (rho_minus == rho_plus at a distance), the chunk
    kernel value is rho(d)^2 for every in-chart pair at that distance, which
    the generators achieve exactly; otherwise the charts are consulted pair
    by pair.
    """

    def __init__(self, family0: ChunkKernelFamily, family1: ChunkKernelFamily,
                 partition: SqrtPartition, t: float,
                 decay_controls: ControlFunctions | None):
        self.fam = (family0, family1)
        self.partition = partition
        self.decomp = partition.decomp
        self.space = self.decomp.space
        self.t = float(t)
        self.decay = decay_controls
        self.fce = family0.fce
        self.controls = self.fce.controls
        self._factor_cache: dict[tuple[int, bool], tuple[float, str]] = {}

    def _factor(self, x: int, y: int, d: int) -> tuple[float, str]:
        """exp(-t k(x, y)) and how it was obtained ('ok' or 'decay')."""
        ci = int(self.space.component_of[x])
        same = ci == int(self.space.component_of[y])
        in_chart = same and d <= self.fce.scales[ci]
        key = (d if isinstance(d, int) and d.bit_length() < 62 else -1,
               in_chart)
        if key[0] >= 0 and key in self._factor_cache:
            return self._factor_cache[key]
        if in_chart:
            lo = float(self.controls.rho_minus(d))
            hi = float(self.controls.rho_plus(d))
            if lo == hi:
                out = (math.exp(-self.t * lo * lo), "ok")
            else:
                kv = self.fam[0].value(x, y, d)
                return (math.exp(-self.t * kv), "ok")
        elif self.decay is not None:
            rho = max(float(self.decay.rho_minus(d)), 0.0)
            out = (math.exp(-self.t * rho * rho), "decay")
        else:
            return (0.0, "uncovered")
        if key[0] >= 0:
            self._factor_cache[key] = out
        return out

    def evaluate(self, x: int, y: int,
                 d: int | None = None) -> tuple[float, str]:
        decomp = self.decomp
        part = self.partition
        if x == y:
            return (float(part.sqrt_lo[x] ** 2 + part.sqrt_hi[x] ** 2), "ok")
        lo_x, hi_x = int(decomp.ann_lo[x]), int(decomp.ann_hi[x])
        lo_y, hi_y = int(decomp.ann_lo[y]), int(decomp.ann_hi[y])
        weight = 0.0
        if lo_x == lo_y:
            weight += part.sqrt_lo[x] * part.sqrt_lo[y]
        if lo_x == hi_y and hi_y != lo_y:
            weight += part.sqrt_lo[x] * part.sqrt_hi[y]
        if hi_x == lo_y and hi_x != lo_x:
            weight += part.sqrt_hi[x] * part.sqrt_lo[y]
        if hi_x == hi_y and hi_x != lo_x and hi_y != lo_y:
            weight += part.sqrt_hi[x] * part.sqrt_hi[y]
        shared = (lo_x in (lo_y, hi_y)) or (hi_x in (lo_y, hi_y))
        if not shared:
            return (0.0, "uncovered")
        if d is None:
            d = self.space.distance(x, y)
        factor, kind = self._factor(x, y, d)
        return (weight * factor, kind)


@dataclass
class GlueReport:
    R: int
    t: float
    n_pairs: int
    uncovered: list[tuple[int, int]] = field(default_factory=list)
    decay_bounded: int = 0
    max_diagonal_deviation: float = 0.0

    def as_dict(self) -> dict:
        return {"R": self.R, "t": self.t, "n_pairs": self.n_pairs,
                "uncovered_pairs": len(self.uncovered),
                "decay_bounded_pairs": self.decay_bounded,
                "max_diagonal_deviation": self.max_diagonal_deviation}


def glue(family0: ChunkKernelFamily, family1: ChunkKernelFamily,
         partition: SqrtPartition, R: int, t: float,
         decay_controls: ControlFunctions | None = None
         ) -> tuple[Kernel, GlueReport]:
    """F_{R,t}(x, y) = sum over common annuli n of
    Phi_n(x) exp(-t k_{[n]}(x, y)) Phi_n(y), on A_R over the region.

    Pairs sharing no annulus get value 0 and are flagged (the separation
    bound keeps them far apart, so they never enter variation checks).
    Pairs whose chunk kernel is out of chart range use the decay bound
    exp(-t rho_minus(d)^2) when `decay_controls` is given, and are counted.
    """
    if t < 0:
        raise InputError("t must be >= 0")
    space = partition.decomp.space
    region_set = set(int(p) for p in partition.region)
    pairs: list[tuple[int, int]] = [(p, p) for p in sorted(region_set)]
    for x, y in space.pairs_within(int(R)):
        x, y = int(x), int(y)
        if x in region_set and y in region_set:
            pairs.append((min(x, y), max(x, y)))
    evaluator = _PairEvaluator(family0, family1, partition, t, decay_controls)
    report = GlueReport(int(R), float(t), len(pairs))
    vals = np.zeros(len(pairs))
    for k, (x, y) in enumerate(pairs):
        vals[k], kind = evaluator.evaluate(x, y)
        if kind == "uncovered":
            report.uncovered.append((x, y))
        elif kind == "decay":
            report.decay_bounded += 1
        if x == y:
            report.max_diagonal_deviation = max(
                report.max_diagonal_deviation, abs(1.0 - float(vals[k])))
    excluded = frozenset(range(space.n)) - frozenset(region_set)
    sup = Entourage(space, int(R), excluded,
                    np.asarray(sorted(set(pairs)), dtype=np.int64))
    order = {(int(a), int(b)): k for k, (a, b) in enumerate(sup.pairs)}
    out = np.zeros(len(sup.pairs))
    for (a, b), v in zip(pairs, vals):
        out[order[(a, b)]] = v
    return Kernel(sup, out), report


@dataclass
class GluedFamily:
    """Glued kernels per scale at a fixed t, with their schedule records."""
    t: float
    kernels: dict[int, Kernel]
    reports: dict[int, GlueReport]
    schedules: list[Schedule]

    def as_scale_family(self) -> ScaleFamily:
        return ScaleFamily(dict(self.kernels))


def glued_family(fce: FibredEmbedding, decomp: AnnularDecomposition,
                 scales: list[int], t: float, region: np.ndarray,
                 schedules: list[Schedule] | None = None) -> GluedFamily:
    """Build F_{R,t} for several R at one t on one region (hence one
    partition), the setting in which scale independence is bitwise."""
    fam0, fam1 = chunk_families(fce, decomp)
    partition = partition_of_unity(decomp, region)
    kernels: dict[int, Kernel] = {}
    reports: dict[int, GlueReport] = {}
    for R in scales:
        k, rep = glue(fam0, fam1, partition, int(R), t,
                      decay_controls=fce.controls)
        kernels[int(R)] = k
        reports[int(R)] = rep
    return GluedFamily(float(t), kernels, reports, schedules or [])


# -- the proper function ----------------------------------------------------------

class ProperFunctionApprox:
    """k = sum_{n <= N_max} (1 - F_n) on the pairs of the common region.

    Keeps the per-term glued values so the partial sums k_N needed by the
    properness thresholds are available. Distances are exact Python ints.
    """

    def __init__(self, space: CoarseUnion, fce: FibredEmbedding,
                 decomp: AnnularDecomposition, n_max: int,
                 schedules: list[Schedule], region: np.ndarray,
                 pairs: np.ndarray, dists: list[int], terms: np.ndarray,
                 variation_ok: list[bool], reports: list[GlueReport],
                 t_values: list[float]):
        self.space = space
        self.fce = fce
        self.decomp = decomp
        self.n_max = int(n_max)
        self.schedules = schedules
        self.region = region
        self.pairs = pairs              # (m, 2) canonical x <= y
        self.dists = dists              # exact ints, aligned with pairs
        self.terms = terms              # (m, n_max): F_n(x, y)
        self.k = (1.0 - terms).sum(axis=1)
        self.variation_ok = variation_ok
        self.reports = reports
        self.t_values = t_values
        self._index = {(int(a), int(b)): i for i, (a, b) in enumerate(pairs)}

    def value(self, x: int, y: int) -> float:
        x, y = int(x), int(y)
        key = (min(x, y), max(x, y))
        if key not in self._index:
            raise MissingPairError(f"pair {key} outside the common region")
        return float(self.k[self._index[key]])

    def partial(self, N: int) -> np.ndarray:
        """k_N = sum_{n <= N} (1 - F_n) per pair."""
        return (1.0 - self.terms[:, :N]).sum(axis=1)

    def as_kernel(self) -> Kernel:
        sup = support_from_pairs(self.pairs)
        order = {(int(a), int(b)): i for i, (a, b) in enumerate(sup.pairs)}
        vals = np.zeros(len(sup.pairs))
        for (a, b), v in zip(self.pairs, self.k):
            vals[order[(int(a), int(b))]] = v
        return Kernel(sup, vals)


def proper_function(space, fce: FibredEmbedding, n_max: int, z0: int = 0,
                    decomp: AnnularDecomposition | None = None
                    ) -> ProperFunctionApprox:
    """Run the schedule (R, eps) = (n, 2^-n) for n <= n_max and sum the tails.

    Each F_n is glued on its own region beyond annulus o_n and checked for
    (n, 2^-n)-variation there; k is assembled on all pairs of the common
    (deepest) region, with decay-bounded terms past chart range. Raises
    FeasibilityError naming the first n whose region is empty or lacks a
    component of chart scale >= n.
    """
    if n_max < 1:
        raise InputError("n_max must be >= 1")
    space = _as_union(space)
    decomp = decomp or annular_decomposition(space, z0)
    fam0, fam1 = chunk_families(fce, decomp)
    schedules: list[Schedule] = []
    variation_ok: list[bool] = []
    reports: list[GlueReport] = []
    t_values: list[float] = []
    partitions: dict[int, SqrtPartition] = {}
    for n in range(1, n_max + 1):
        eps = 2.0 ** (-n)
        sched = parameter_schedule(n, eps, fce.controls, decomp, fce)
        region = decomp.region_above(sched.o)
        if len(region) == 0:
            raise FeasibilityError(
                f"truncation too small: region beyond annulus {sched.o} "
                f"(scale n={n}) is empty")
        comps = {int(space.component_of[p]) for p in region}
        if not any(fce.scales[c] >= n for c in comps):
            raise FeasibilityError(
                f"truncation too small: no component of chart scale >= {n} "
                f"beyond annulus {sched.o}")
        partition = partition_of_unity(decomp, region)
        sched.lebesgue_achieved = partition.lebesgue
        schedules.append(sched)
        partitions[n] = partition
        t_values.append(sched.t)
    common_region = partitions[n_max].region
    pairs = _region_pairs(common_region)
    dists = _pair_distances_exact(space, pairs)
    terms = np.zeros((len(pairs), n_max))
    for n in range(1, n_max + 1):
        evaluator = _PairEvaluator(fam0, fam1, partitions[n],
                                   t_values[n - 1], fce.controls)
        col = n - 1
        for i in range(len(pairs)):
            terms[i, col], _ = evaluator.evaluate(
                int(pairs[i, 0]), int(pairs[i, 1]), dists[i])
        kern, rep = glue(fam0, fam1, partitions[n], n, t_values[n - 1],
                         decay_controls=fce.controls)
        reports.append(rep)
        variation_ok.append(
            has_variation(kern, n, 2.0 ** (-n), partitions[n].region,
                          skip=frozenset(rep.uncovered)))
    return ProperFunctionApprox(space, fce, decomp, n_max, schedules,
                                common_region, pairs, dists, terms,
                                variation_ok, reports, t_values)


def _region_pairs(region: np.ndarray) -> np.ndarray:
    region = np.asarray(sorted(int(p) for p in region), dtype=np.int64)
    m = len(region)
    iu, ju = np.triu_indices(m)
    return np.column_stack([region[iu], region[ju]])


def _pair_distances_exact(space: CoarseUnion, pairs: np.ndarray) -> list[int]:
    """Exact distances, vectorised within components, exact ints across."""
    out: list[int] = [0] * len(pairs)
    comp = space.component_of
    for i, (a, b) in enumerate(pairs):
        a, b = int(a), int(b)
        ca, cb = int(comp[a]), int(comp[b])
        if ca == cb:
            sp = space.components[ca]
            s = int(space.starts[ca])
            out[i] = int(sp.dist[a - s, b - s])
        else:
            out[i] = (int(space.basepoint_row(ca)[a - int(space.starts[ca])])
                      + space.gap(ca, cb)
                      + int(space.basepoint_row(cb)[b - int(space.starts[cb])]))
    return out


# -- properness -------------------------------------------------------------------

@dataclass
class PropernessReport:
    shells: list[dict]
    s_thresholds: dict[int, int | None]
    upper_ok: bool
    lower_ok: bool
    tau_minus: StepFunction | None
    n_max: int

    @property
    def ok(self) -> bool:
        return self.upper_ok and self.lower_ok

    def as_dict(self) -> dict:
        return {
            "upper_ok": self.upper_ok,
            "lower_ok": self.lower_ok,
            "s_thresholds": {str(k): (None if v is None else int(v))
                             for k, v in self.s_thresholds.items()},
            "shells": self.shells[:200],
        }


def verify_properness(approx: ProperFunctionApprox,
                      controls: ControlFunctions | None = None
                      ) -> PropernessReport:
    """Check the distance-shell envelopes of the truncated function.

    Upper: every shell max of k is <= d + 1. Lower: with h_n(s) =
    exp(-t_n rho_minus(s)^2) (rho_minus clamped at 0) and S_N the least
    observed shell where h_n < 1/2 for all n <= N, the partial sum k_N must
    reach N/2 on every pair beyond S_N. tau_minus(s) = max{N : s >= S_N}/2.
    """
    controls = controls or approx.fce.controls
    dists = approx.dists
    shells_sorted = sorted(set(dists))

    def h(n: int, s) -> float:
        rho = max(float(controls.rho_minus(s)), 0.0)
        return math.exp(-approx.t_values[n - 1] * rho * rho)

    s_thresholds: dict[int, int | None] = {}
    for N in range(1, approx.n_max + 1):
        found = None
        for s in shells_sorted:
            if all(h(n, s) < 0.5 for n in range(1, N + 1)):
                found = s
                break
        s_thresholds[N] = found
    by_shell: dict = {}
    for d, v in zip(dists, approx.k):
        lo, hi = by_shell.get(d, (math.inf, -math.inf))
        by_shell[d] = (min(lo, float(v)), max(hi, float(v)))
    upper_ok = True
    shells = []
    for d in shells_sorted:
        mn, mx = by_shell[d]
        if mx > d + 1 + 1e-12:
            upper_ok = False
        shells.append({"d": int(d), "min": mn, "max": mx,
                       "tau_plus": int(d) + 1})
    lower_ok = True
    partials = {N: approx.partial(N) for N in range(1, approx.n_max + 1)}
    for N in range(1, approx.n_max + 1):
        s_n = s_thresholds[N]
        if s_n is None:
            continue
        kn = partials[N]
        for d, v in zip(dists, kn):
            if d > s_n and v < N / 2.0 - 1e-12:
                lower_ok = False
                break
    tau = None
    merged: dict = {}
    for N in range(1, approx.n_max + 1):
        if s_thresholds[N] is not None:
            key = s_thresholds[N]
            merged[key] = max(merged.get(key, 0.0), N / 2.0)
    if merged:
        ks = sorted(merged)
        vals = np.maximum.accumulate([merged[k] for k in ks])
        if ks[0] > 0:   # tau_minus vanishes below the first threshold
            ks = [0] + ks
            vals = np.concatenate([[0.0], vals])
        tau = StepFunction(ks, vals, mode="floor")
        controls.tau_minus = tau
        controls.tau_plus = lambda r: r + 1
    return PropernessReport(shells, s_thresholds, upper_ok, lower_ok, tau,
                            approx.n_max)


# -- truncation planning -----------------------------------------------------------

def plan_cycle_truncation(n_max: int) -> tuple[list[int], list[int]]:
    """Cycle lengths and ray offsets making proper_function(n_max) feasible.

    Layout: two small cycles near the basepoint (they populate the excluded
    sets K_R), one mid cycle beyond each scale threshold o_n for n < n_max,
    and a deepest group of three cycles around one annulus overlap band --
    one inside Z_m, one across Z_m and Z_{m+1} (fractional partition mass),
    one inside Z_{m+1} -- the last long enough that the decay thresholds
    S_N fall inside its observed distance shells.
    """
    if n_max < 1:
        raise InputError("n_max must be >= 1")
    lengths = [8, 12]
    targets: list[int | None] = [None, None]
    for n in range(1, n_max):
        s_half = (180 * n * 4 ** n) // 2     # o_n, Lebesgue term
        t_n = (s_half + 1) ** 3 + (s_half + 1) + 1
        lengths.append(32 + 4 * n)
        targets.append(t_n)
    # deepest group: S_N must be an observed shell, so the longest cycle
    # needs chart scale above sqrt(ln 2 / t_{n_max})
    t_last = (2.0 ** -n_max) / (3.0 * (1.0 + n_max ** 2))
    s_req = int(math.ceil(math.sqrt(math.log(2.0) / t_last)))
    long_len = 4 * (s_req + 10)   # shells past s_req observed within one cycle
    base = max(lengths[-1] + 4, 4 * n_max + 8)
    len_a = ((base + 3) // 4) * 4
    len_b = len_a + 4
    len_c = max(long_len, len_b + 4)
    o_last = (180 * n_max * 4 ** n_max) // 2
    m = o_last + 2
    ob_lo = (m + 1) ** 3 - (m + 1)
    ob_hi = (m + 1) ** 3 + (m + 1)
    off_a = ob_lo - 10_000 - len_a
    off_b = (m + 1) ** 3 - len_b // 4
    off_c = ob_hi + 10_000
    lengths.extend([len_a, len_b, len_c])
    targets.extend([off_a, off_b, off_c])
    # realise offsets: at least the recurrence minimum, at least the target
    offsets: list[int] = []
    prev_off = 0
    prev_diam = 0
    for i, (length, tgt) in enumerate(zip(lengths, targets)):
        diam = length // 2
        if i == 0:
            off = 0
        else:
            off = prev_off + prev_diam + diam + i
            if tgt is not None:
                off = max(off, tgt)
        offsets.append(off)
        prev_off, prev_diam = off, diam
    return lengths, offsets


# -- negative type on trivialized balls --------------------------------------------

def negative_type_on_balls(source, space, tuple_budget: int = 500,
                           fce: FibredEmbedding | None = None,
                           rng: np.random.Generator | None = None,
                           tol: float = 1e-8,
                           sigmas_per_tuple: int = 1000) -> bool:
    """Sum-zero quadratic-form test on tuples drawn inside common chart balls.

    `source` is a ProperFunctionApprox (its k values) or a Kernel. Tuples
    are sampled inside one chart ball so every pair is covered; for each
    tuple, random sum-zero coefficient vectors must keep the form <= tol.
    """
    rng = rng or np.random.default_rng(0)
    if isinstance(source, ProperFunctionApprox):
        fce = fce or source.fce
        candidates = [int(p) for p in source.region]
        value = source.value
    elif isinstance(source, Kernel):
        if fce is None:
            raise InputError("a fibred embedding is needed to pick balls")
        candidates = [int(p) for p in source.points()]
        value = source.value
    else:
        raise InputError("source must be a ProperFunctionApprox or Kernel")
    if not candidates:
        raise InputError("no candidate points to sample")
    cand_set = set(candidates)
    done = 0
    attempts = 0
    while done < tuple_budget and attempts < tuple_budget * 40:
        attempts += 1
        center = int(candidates[int(rng.integers(len(candidates)))])
        chart = fce.charts.get(center)
        if chart is None:
            continue
        members = [int(z) for z in chart.members if int(z) in cand_set]
        if len(members) < 2:
            continue
        size = int(rng.integers(2, min(6, len(members)) + 1))
        tup = [int(v) for v in rng.choice(members, size=size, replace=False)]
        K = np.zeros((size, size))
        usable = True
        for i in range(size):
            for j in range(i + 1, size):
                try:
                    K[i, j] = K[j, i] = value(tup[i], tup[j])
                except MissingPairError:
                    usable = False
                    break
            if not usable:
                break
        if not usable:
            continue
        sig = rng.standard_normal((sigmas_per_tuple, size))
        sig -= sig.mean(axis=1, keepdims=True)
        forms = np.einsum("si,ij,sj->s", sig, K, sig)
        if float(forms.max()) > tol:
            return False
        done += 1
    if done < tuple_budget:
        raise FeasibilityError(
            f"could only sample {done} of {tuple_budget} in-ball tuples")
    return True
