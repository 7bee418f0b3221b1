"""Kernel calculus: negative/positive type, the exponential transform, embeddings.

A kernel is a symmetric real function stored sparsely on a pair support
(an entourage or a full square). Negative type means the quadratic form is
<= 0 on every sum-zero coefficient vector; the decision procedure projects
onto the sum-zero subspace and examines the spectrum there, which is exact
up to LAPACK rounding, while randomized sum-zero sampling is kept in the
test suite as an independent oracle.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass

import numpy as np

from .errors import (InputError, MissingPairError, NotNegativeTypeError,
                     PartialSupportError)
from .spaces import Entourage, full_support

__all__ = [
    "Kernel",
    "CheckResult",
    "StepFunction",
    "ControlFunctions",
    "Embedding",
    "ScaleFamily",
    "metric_kernel",
    "is_negative_type",
    "is_positive_type",
    "schoenberg",
    "embed",
    "control_envelopes",
    "envelopes_from_samples",
    "has_variation",
    "check_scale_independence",
    "pair_distances",
    "save_kernel",
    "load_kernel",
    "support_from_pairs",
]


class Kernel:
    """Symmetric values over a canonical pair support (x <= y)."""

    def __init__(self, support: Entourage, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (len(support.pairs),):
            raise InputError("one value per supported pair is required")
        self.support = support
        self.values = values

    @classmethod
    def from_dense(cls, matrix: np.ndarray, points=None) -> Kernel:
        matrix = np.asarray(matrix, dtype=np.float64)
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise InputError("kernel matrix must be square")
        if not np.array_equal(matrix, matrix.T):
            raise InputError("kernel matrix must be symmetric")
        pts = np.arange(n) if points is None else np.asarray(points)
        sup = full_support(pts)
        pos = {int(p): i for i, p in enumerate(np.unique(pts))}
        vals = np.array([matrix[pos[int(x)], pos[int(y)]]
                         for x, y in sup.pairs])
        return cls(sup, vals)

    @classmethod
    def from_function(cls, support: Entourage, func) -> Kernel:
        vals = np.array([func(int(x), int(y)) for x, y in support.pairs],
                        dtype=np.float64)
        return cls(support, vals)

    def value(self, x: int, y: int) -> float:
        k = self.support.index_of(int(x), int(y))
        if k is None:
            raise MissingPairError(f"pair ({x}, {y}) is outside the support")
        return float(self.values[k])

    def has(self, x: int, y: int) -> bool:
        return self.support.contains(int(x), int(y))

    def points(self) -> np.ndarray:
        return self.support.points()

    def dense(self) -> tuple[np.ndarray, np.ndarray]:
        """(points, full matrix); raises PartialSupportError if incomplete."""
        pts = self.points()
        if not self.support.is_full_square():
            raise PartialSupportError(
                "operation needs a kernel on a full square of points")
        pos = {int(p): i for i, p in enumerate(pts)}
        m = np.zeros((len(pts), len(pts)))
        for (x, y), v in zip(self.support.pairs, self.values):
            i, j = pos[int(x)], pos[int(y)]
            m[i, j] = m[j, i] = v
        return pts, m

    def diagonal(self) -> np.ndarray:
        mask = self.support.pairs[:, 0] == self.support.pairs[:, 1]
        return self.values[mask]

    def transformed(self, func) -> Kernel:
        return Kernel(self.support, func(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __repr__(self) -> str:
        return f"Kernel({len(self)} pairs on {len(self.points())} points)"


def metric_kernel(space, points=None, squared: bool = False) -> Kernel:
    """The graph metric (optionally squared) as a fully supported kernel."""
    pts = np.arange(space.n) if points is None else np.asarray(points)
    sup = full_support(pts)
    d = np.array([float(space.distance(int(x), int(y)))
                  for x, y in sup.pairs])
    return Kernel(sup, d * d if squared else d)


@dataclass
class CheckResult:
    """Outcome of a type test: the decision, the extreme quadratic-form
    value (max over sum-zero directions, or min eigenvalue), and a
    violating vector when the test fails."""
    ok: bool
    extreme: float
    witness: np.ndarray | None

    def __bool__(self) -> bool:
        return self.ok


def _helmert_basis(n: int) -> np.ndarray:
    """Orthonormal basis of the sum-zero subspace of R^n, as columns."""
    basis = np.zeros((n, n - 1))
    for k in range(1, n):
        basis[:k, k - 1] = 1.0
        basis[k, k - 1] = -float(k)
        basis[:, k - 1] /= np.sqrt(k * (k + 1))
    return basis


def _default_tol(matrix: np.ndarray, tol: float | None) -> float:
    if tol is not None:
        return float(tol)
    scale = float(np.abs(matrix).max()) if matrix.size else 0.0
    return 1e-8 * max(1.0, scale)


def is_negative_type(kernel: Kernel, tol: float | None = None) -> CheckResult:
    """Decide whether the quadratic form is <= tol on all sum-zero vectors.

    Requires full support, zero diagonal, symmetry. On failure the witness
    is a unit sum-zero vector sigma with sigma' K sigma = extreme > tol.
    """
    pts, K = kernel.dense()
    tol = _default_tol(K, tol)
    if np.abs(np.diag(K)).max(initial=0.0) > tol:
        raise InputError("negative-type test requires a zero diagonal")
    n = len(pts)
    if n == 1:
        return CheckResult(True, 0.0, None)
    B = _helmert_basis(n)
    M = B.T @ K @ B
    M = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(M)
    extreme = float(w[-1])
    if extreme <= tol:
        return CheckResult(True, extreme, None)
    sigma = B @ V[:, -1]
    return CheckResult(False, extreme, sigma)


def is_positive_type(kernel: Kernel, tol: float | None = None) -> CheckResult:
    """Positive type = positive semidefinite Gram matrix (up to tol)."""
    pts, K = kernel.dense()
    tol = _default_tol(K, tol)
    w, V = np.linalg.eigh(K)
    low = float(w[0])
    if low >= -tol:
        return CheckResult(True, low, None)
    return CheckResult(False, low, V[:, 0])


def schoenberg(kernel: Kernel, t: float) -> Kernel:
    """Pointwise exp(-t * k) on the same support (diagonal becomes 1)."""
    if t < 0:
        raise InputError("the transform parameter t must be >= 0")
    diag = kernel.diagonal()
    if diag.size and np.abs(diag).max() > 0:
        raise InputError("expected a negative-type candidate (zero diagonal)")
    return kernel.transformed(lambda v: np.exp(-t * v))


@dataclass
class Embedding:
    """Point vectors realizing a kernel as squared Hilbert distances."""
    points: np.ndarray
    coords: np.ndarray  # (n, d)

    def __post_init__(self):
        self._pos = {int(p): i for i, p in enumerate(self.points)}

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def vector(self, x: int) -> np.ndarray:
        return self.coords[self._pos[int(x)]]

    def displacement_norm(self, x: int, y: int) -> float:
        return float(np.linalg.norm(self.vector(x) - self.vector(y)))

    def squared_distance(self, x: int, y: int) -> float:
        d = self.vector(x) - self.vector(y)
        return float(d @ d)


def embed(kernel: Kernel, tol: float | None = None) -> Embedding:
    """Extract vectors with ||f(x) - f(y)||^2 = k(x, y) via the centered Gram.

    G = -1/2 J K J with J the centering projection; eigenvalues in
    [-tol, tol] are discarded, and a significantly negative one means the
    kernel was not of negative type.
    """
    pts, K = kernel.dense()
    n = len(pts)
    J = np.eye(n) - np.ones((n, n)) / n
    G = -0.5 * (J @ K @ J)
    G = 0.5 * (G + G.T)
    tol = _default_tol(G, tol)
    w, V = np.linalg.eigh(G)
    if float(w[0]) < -tol:
        raise NotNegativeTypeError(
            f"centered Gram has eigenvalue {w[0]:.3e} < -{tol:.3e}")
    keep = w > tol
    coords = V[:, keep] * np.sqrt(w[keep])
    if coords.size == 0:
        coords = np.zeros((n, 1))
    return Embedding(np.asarray(pts), coords)


class StepFunction:
    """Monotone step function over observed knots.

    mode="floor": value at the largest knot <= r (clamped to the first knot).
    mode="ceil":  value at the smallest knot >= r (clamped to the last knot).
    """

    def __init__(self, knots, values, mode: str = "floor"):
        self.knots = list(knots)
        self.values = np.asarray(values, dtype=np.float64)
        if len(self.knots) != len(self.values):
            raise InputError("knots and values must align")
        if mode not in ("floor", "ceil"):
            raise InputError("mode must be 'floor' or 'ceil'")
        self.mode = mode

    def __call__(self, r) -> float:
        if not self.knots:
            raise InputError("empty step function")
        if self.mode == "floor":
            i = bisect.bisect_right(self.knots, r) - 1
            i = max(i, 0)
        else:
            i = bisect.bisect_left(self.knots, r)
            i = min(i, len(self.knots) - 1)
        return float(self.values[i])

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0))


@dataclass
class ControlFunctions:
    """Distance controls: rho_minus(r) <= ||f(x)-f(y)|| <= rho_plus(r).

    Both envelopes are non-decreasing step functions over the observed
    distances. tau_minus / tau_plus are filled by the properness verifier.
    """
    rho_minus: StepFunction
    rho_plus: StepFunction
    tau_minus: StepFunction | None = None
    tau_plus: object | None = None

    def rho_minus_clamped(self, r) -> float:
        return max(self.rho_minus(r), 0.0)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["r", "rho_minus", "rho_plus"])
            for r in self.rho_plus.knots:
                writer.writerow([r, self.rho_minus(r), self.rho_plus(r)])


def pair_distances(space, pairs) -> list[int]:
    """Exact distances for an iterable of (x, y) pairs."""
    return [space.distance(int(x), int(y)) for x, y in pairs]


def envelopes_from_samples(dists, norms: np.ndarray) -> ControlFunctions:
    """Tightest monotone envelopes through observed (distance, norm) samples."""
    if len(dists) == 0:
        raise InputError("cannot build envelopes from an empty pair set")
    norms = np.asarray(norms, dtype=np.float64)
    order = sorted(range(len(dists)), key=lambda i: dists[i])
    d_sorted = [dists[i] for i in order]
    v_sorted = norms[order]
    knots: list = []
    upper: list[float] = []
    lower: list[float] = []
    i = 0
    while i < len(d_sorted):
        j = i
        while j < len(d_sorted) and d_sorted[j] == d_sorted[i]:
            j += 1
        knots.append(d_sorted[i])
        upper.append(float(v_sorted[i:j].max()))
        lower.append(float(v_sorted[i:j].min()))
        i = j
    rho_plus_vals = np.maximum.accumulate(upper)
    rho_minus_vals = np.minimum.accumulate(lower[::-1])[::-1]
    return ControlFunctions(
        rho_minus=StepFunction(knots, rho_minus_vals, mode="ceil"),
        rho_plus=StepFunction(knots, rho_plus_vals, mode="floor"),
    )


def control_envelopes(source, space) -> ControlFunctions:
    """Empirical distance controls of a kernel or an embedding over a space.

    rho_plus(r) = max displacement over pairs at distance <= r;
    rho_minus(r) = min displacement over pairs at distance >= r. Both are
    non-decreasing by construction.
    """
    if isinstance(source, Embedding):
        pts = source.points
        pairs = [(int(pts[i]), int(pts[j]))
                 for i in range(len(pts)) for j in range(i, len(pts))]
        norms = np.array([source.displacement_norm(x, y) for x, y in pairs])
    elif isinstance(source, Kernel):
        pairs = [(int(x), int(y)) for x, y in source.support.pairs]
        norms = np.sqrt(np.clip(source.values, 0.0, None))
    else:
        raise InputError("source must be a Kernel or an Embedding")
    if not pairs:
        raise InputError("cannot build envelopes from an empty pair set")
    dists = pair_distances(space, pairs)
    return envelopes_from_samples(dists, norms)


def has_variation(kernel: Kernel, radius: int, eps: float, region,
                  skip: frozenset = frozenset()) -> bool:
    """True iff |1 - k(x, y)| <= eps for all in-region pairs at distance <= radius.

    Raises MissingPairError when a required value is absent. Pairs listed in
    `skip` (canonical (x, y), x <= y) are ignored; gluing flags pairs with no
    common cover element this way.
    """
    region = set(int(p) for p in region)
    space = kernel.support.space
    if space is None:
        raise InputError("kernel support must reference a space")
    off = space.pairs_within(int(radius))
    check = [(int(x), int(y)) for x, y in off
             if int(x) in region and int(y) in region]
    check.extend((p, p) for p in region)
    for x, y in check:
        if (x, y) in skip or (y, x) in skip:
            continue
        v = kernel.value(x, y)
        if abs(1.0 - v) > eps:
            return False
    return True


@dataclass
class ScaleFamily:
    """A kernel per scale R, each supported on its restricted entourage A_R."""
    kernels: dict[int, Kernel]

    def scales(self) -> list[int]:
        return sorted(self.kernels)

    def __getitem__(self, R: int) -> Kernel:
        return self.kernels[R]

    def excluded(self, R: int) -> frozenset[int]:
        return self.kernels[R].support.excluded


def check_scale_independence(family: ScaleFamily):
    """Exact (bitwise) agreement of kernels on overlapping supports.

    Returns (True, None) or (False, (R, S, (x, y))) for the first violation.
    """
    scales = family.scales()
    if not scales:
        raise InputError("scale family is empty")
    for i, R in enumerate(scales):
        kR = family[R]
        for S in scales[i + 1:]:
            kS = family[S]
            small, big = (kR, kS) if len(kR) <= len(kS) else (kS, kR)
            for (x, y), v in zip(small.support.pairs, small.values):
                j = big.support.index_of(int(x), int(y))
                if j is None:
                    continue
                if float(big.values[j]) != float(v):
                    return False, (R, S, (int(x), int(y)))
    return True, None


# -- serialization ------------------------------------------------------------

def support_from_pairs(pairs) -> Entourage:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    canon = np.unique(np.column_stack([lo, hi]), axis=0)
    return Entourage(None, -1, frozenset(), canon)


def save_kernel(kernel: Kernel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "value"])
        for (x, y), v in zip(kernel.support.pairs, kernel.values):
            writer.writerow([int(x), int(y), repr(float(v))])


def load_kernel(path) -> Kernel:
    pairs, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for x, y, v in reader:
            pairs.append((int(x), int(y)))
            vals.append(float(v))
    sup = support_from_pairs(pairs)
    order = {(int(x), int(y)): k for k, (x, y) in enumerate(sup.pairs)}
    out = np.zeros(len(pairs))
    for (x, y), v in zip(pairs, vals):
        out[order[(min(x, y), max(x, y))]] = v
    return Kernel(sup, out)
