"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete. The heavyweight multiscale pipeline (criteria 7-10)
is built once as a module fixture and timed against its budget.
"""
import time
from itertools import product

import numpy as np
import pytest

from coarsekit.fibred import fce_cycles, fce_large_girth, validate_fce
from coarsekit.gluing import (annular_decomposition, annuli_containing,
                              chunk_families, glue, glued_family,
                              negative_type_on_balls, parameter_schedule,
                              partition_of_unity, plan_cycle_truncation,
                              proper_function, separation_check,
                              verify_properness)
from coarsekit.groups import cyclic_box_space, invariant_mean_defect
from coarsekit.kernels import (Kernel, check_scale_independence, embed,
                               has_variation, is_negative_type,
                               is_positive_type, metric_kernel, schoenberg)
from coarsekit.spaces import build_graph_space, coarse_union, cycle_space


def announce(number: int, ok: bool, label: str) -> None:
    print(f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'} - {label}")
    assert ok, f"criterion {number} failed: {label}"


def squared_distance_kernel(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return (diff * diff).sum(axis=2)


def random_kernel(rng: np.random.Generator, n: int, cnd: bool) -> np.ndarray:
    if cnd:
        coords = rng.standard_normal((n, max(1, n // 2)))
        return squared_distance_kernel(coords)
    K = rng.uniform(-1.0, 1.0, size=(n, n))
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 0.0)
    return K


@pytest.fixture(scope="module")
def pipeline():
    """The n_max = 8 truncation: space, embedding, proper function, timing."""
    t0 = time.monotonic()
    lengths, offsets = plan_cycle_truncation(8)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    decomp = annular_decomposition(fce.space, 0)
    approx = proper_function(fce.space, fce, 8, decomp=decomp)
    elapsed = time.monotonic() - t0
    return {"fce": fce, "decomp": decomp, "approx": approx,
            "elapsed": elapsed}


def test_criterion_1_cnd_oracle_equivalence():
    t0 = time.monotonic()
    rng = np.random.default_rng(2024)
    disagreements = 0
    for trial in range(200):
        n = int(rng.integers(3, 11))
        K = random_kernel(rng, n, cnd=(trial % 2 == 0))
        res = is_negative_type(Kernel.from_dense(K))
        tol = 1e-8 * max(1.0, float(np.abs(K).max()))
        sig = rng.standard_normal((100_000, n))
        sig -= sig.mean(axis=1, keepdims=True)
        norms = np.linalg.norm(sig, axis=1, keepdims=True)
        sig /= np.where(norms == 0, 1.0, norms)
        brute = float(np.einsum("si,ij,sj->s", sig, K, sig).max())
        if res.ok != (brute <= tol):
            disagreements += 1
    elapsed = time.monotonic() - t0
    announce(1, disagreements == 0 and elapsed < 30.0,
             f"CND decision vs 1e5-draw oracle: {disagreements} "
             f"disagreements in 200 kernels ({elapsed:.1f}s)")


def test_criterion_2_schoenberg_positive_type():
    t0 = time.monotonic()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(3, 11))
        k = Kernel.from_dense(random_kernel(rng, n, cnd=True))
        for t in (0.1, 1.0, 10.0):
            f = schoenberg(k, t)
            _, F = f.dense()
            bound = 1e-8 * float(np.abs(F).max())
            res = is_positive_type(f, tol=bound)
            worst = min(worst, res.extreme)
            assert res.ok
    elapsed = time.monotonic() - t0
    announce(2, elapsed < 30.0,
             f"exp(-tK) stays positive type for 100 CND kernels x 3 t's, "
             f"min eigenvalue {worst:.2e} ({elapsed:.1f}s)")


def test_criterion_3_embedding_roundtrip():
    rng = np.random.default_rng(12)
    worst = 0.0

    def roundtrip(kernel: Kernel) -> float:
        emb = embed(kernel)
        bad = 0.0
        pts = [int(p) for p in kernel.points()]
        for i, x in enumerate(pts):
            for y in pts[i + 1:]:
                want = kernel.value(x, y)
                got = emb.squared_distance(x, y)
                bad = max(bad, abs(got - want) / max(1.0, abs(want)))
        return bad

    worst = max(worst, roundtrip(metric_kernel(cycle_space(8))))
    worst = max(worst, roundtrip(metric_kernel(cycle_space(12))))
    for _ in range(50):
        n = int(rng.integers(3, 11))
        worst = max(worst, roundtrip(
            Kernel.from_dense(random_kernel(rng, n, cnd=True))))
    announce(3, worst <= 1e-6,
             f"embedding reproduces kernels within relative {worst:.2e} "
             f"(C_8, C_12, 50 random CND)")


def test_criterion_4_fce_exactness():
    fce = fce_cycles([8, 16, 32, 64])
    report = validate_fce(fce)
    ok = report.ok and report.max_transition_residual == 0.0
    # identity controls achieved on every in-ball pair
    exact = True
    space = fce.space
    for x, chart in fce.charts.items():
        ci, _ = space.locate(x)
        comp = space.components[ci]
        start = int(space.starts[ci])
        for z in chart.members:
            for w in chart.members:
                d = comp.distance(int(z) - start, int(w) - start)
                disp = abs(float(fce.chart_value(x, int(z))[0]
                                 - fce.chart_value(x, int(w))[0]))
                if disp != float(d):
                    exact = False
    # trees of depth <= 6: squared chart displacement equals the distance
    def binary_tree(depth):
        n = 2 ** (depth + 1) - 1
        edges = [(i, c) for i in range(n)
                 for c in (2 * i + 1, 2 * i + 2) if c < n]
        return build_graph_space(edges, n)

    trees = [binary_tree(5), binary_tree(6)]
    tfce = fce_large_girth(trees)
    tree_exact = True
    tspace = tfce.space
    rng = np.random.default_rng(5)
    for ci, comp in enumerate(tspace.components):
        start = int(tspace.starts[ci])
        for _ in range(400):
            x, z, w = (int(v) for v in rng.integers(0, comp.n, size=3))
            vz = tfce.chart_value(start + x, start + z)
            vw = tfce.chart_value(start + x, start + w)
            diff = vz - vw
            if float(diff @ diff) != float(comp.dist[z, w]):
                tree_exact = False
    tree_report = validate_fce(tfce)
    ok = ok and exact and tree_exact and tree_report.ok \
        and tree_report.max_transition_residual == 0.0
    announce(4, ok,
             "cycle embedding exact (identity controls, residual 0); "
             "tree charts reproduce distances exactly")


@pytest.fixture(scope="module")
def big_box():
    t0 = time.monotonic()
    lengths = list(range(8, 408, 8))   # 50 cycles, 10200 points
    space = coarse_union([cycle_space(n) for n in lengths])
    decomp = annular_decomposition(space, 0)
    return space, decomp, time.monotonic() - t0


def test_criterion_5_annular_decomposition(big_box):
    t0 = time.monotonic()
    space, decomp, build_time = big_box
    assert space.n >= 10_000
    coverage = True
    multiplicity = True
    for p in range(space.n):
        members = decomp.members(p)
        r = decomp.radius_of(p)
        if members != annuli_containing(r):
            coverage = False
        if not (1 <= len(members) <= 2):
            multiplicity = False
    sep = separation_check(decomp)
    elapsed = time.monotonic() - t0
    announce(5, coverage and multiplicity and sep and elapsed < 60.0,
             f"{space.n}-point box space: total coverage, multiplicity <= 2, "
             f"2(n+1)-separation, all exhaustive ({elapsed:.1f}s)")


def test_criterion_6_partition_of_unity(big_box):
    space, decomp = big_box
    region = decomp.region_above(3)
    assert len(region) > 5000
    part = partition_of_unity(decomp, region)
    sums = part.sums()
    sums_ok = bool(np.max(np.abs(sums - 1.0)) <= 1e-12)
    cert = part.lipschitz_certificate()
    lip_ok = (cert["edges_checked"] > 0
              and cert["max_edge_phi_increment"] <= cert["phi_bound"])
    announce(6, sums_ok and lip_ok,
             f"sum phi = 1 within 1e-12 on {len(region)} points; edgewise "
             f"increment {cert['max_edge_phi_increment']:.2e} <= 5/L = "
             f"{cert['phi_bound']:.2e}")


def test_criterion_7_schedule_variation(pipeline):
    fce, decomp = pipeline["fce"], pipeline["decomp"]
    fam0, fam1 = chunk_families(fce, decomp)
    ok = True
    details = []
    for R, eps in [(2, 0.5), (4, 0.25)]:
        sched = parameter_schedule(R, eps, fce.controls, decomp, fce)
        region = decomp.region_above(sched.o)
        assert len(region) > 0
        part = partition_of_unity(decomp, region)
        kern, rep = glue(fam0, fam1, part, R, sched.t,
                         decay_controls=fce.controls)
        good = has_variation(kern, R, eps, region,
                             skip=frozenset(rep.uncovered))
        ok = ok and good
        details.append(f"(R={R}, eps={eps}: t={sched.t:.4g}, S={sched.S:g}, "
                       f"o={sched.o})")
    announce(7, ok, "glued kernels meet (R, eps)-variation with zero slack "
             + "; ".join(details))


def test_criterion_8_scale_independence(pipeline):
    fce, decomp = pipeline["fce"], pipeline["decomp"]
    sched = parameter_schedule(4, 0.25, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    gf = glued_family(fce, decomp, [1, 2, 4], sched.t, region)
    ok, viol = check_scale_independence(gf.as_scale_family())
    announce(8, ok, f"glued family at fixed t={sched.t:.4g} agrees bitwise "
             f"on all overlaps (scales 1, 2, 4)"
             + ("" if ok else f"; first violation {viol}"))


def test_criterion_9_properness_envelopes(pipeline):
    t0 = time.monotonic()
    approx = pipeline["approx"]
    report = verify_properness(approx)
    upper_ok = report.upper_ok
    lower_ok = True
    for N in (2, 4, 8):
        s_n = report.s_thresholds[N]
        if s_n is None:
            lower_ok = False
            continue
        kn = approx.partial(N)
        beyond = [float(v) for d, v in zip(approx.dists, kn) if d > s_n]
        if not beyond or min(beyond) < N / 2.0:
            lower_ok = False
    total = pipeline["elapsed"] + (time.monotonic() - t0)
    announce(9, upper_ok and lower_ok and total < 300.0,
             f"N_max=8 envelopes: shell max <= d+1 everywhere; k_N >= N/2 "
             f"beyond S_N for N in (2,4,8), S_8={report.s_thresholds[8]}; "
             f"pipeline {total:.0f}s")


def test_criterion_10_negative_type_downstream(pipeline):
    approx = pipeline["approx"]
    rng = np.random.default_rng(99)
    ok = negative_type_on_balls(approx, approx.space, tuple_budget=500,
                                rng=rng, tol=1e-8, sigmas_per_tuple=1000)
    announce(10, ok, "truncated k passes the sum-zero form test on 500 "
             "in-ball tuples at tol 1e-8")


def test_criterion_11_invariant_mean():
    box = cyclic_box_space([4, 8, 16])
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(100):
        f = rng.standard_normal(box.n)
        for g in (1, -1):   # the generators, reduced in every quotient
            worst = max(worst, invariant_mean_defect(box, f, g))
    announce(11, worst <= 1e-12,
             f"invariant-mean defect <= 1e-12 on box of Z/(4,8,16) for 100 "
             f"random f and all generators (worst {worst:.2e})")
