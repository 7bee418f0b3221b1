import math

import numpy as np
import pytest

from coarsekit.errors import FeasibilityError, InputError
from coarsekit.fibred import fce_cycles
from coarsekit.gluing import (annular_decomposition, annuli_containing,
                              annulus_bounds, chunk_families, glue,
                              glued_family, icbrt, negative_type_on_balls,
                              parameter_schedule, partition_of_unity,
                              plan_cycle_truncation, proper_function,
                              separation_check, verify_properness)
from coarsekit.groups import cyclic_box_space
from coarsekit.kernels import check_scale_independence, has_variation
from coarsekit.spaces import coarse_union, cycle_space


@pytest.fixture(scope="module")
def small_pipeline():
    """n_max = 2 cycle truncation with its embedding and decomposition."""
    lengths, offsets = plan_cycle_truncation(2)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    decomp = annular_decomposition(fce.space, 0)
    return fce, decomp


def test_icbrt_exact():
    for x in (0, 1, 7, 8, 26, 27, 10 ** 18, 10 ** 24, 7 ** 30):
        k = icbrt(x)
        assert k ** 3 <= x < (k + 1) ** 3


def test_annulus_bounds():
    assert annulus_bounds(0) == (0, 2)
    assert annulus_bounds(1) == (0, 10)
    assert annulus_bounds(2) == (6, 30)


def test_annuli_containing_examples():
    # radial distance 7 lies in Z_1 and Z_2 only
    assert annuli_containing(7) == [1, 2]
    # the basepoint itself lies in Z_0 (and the overlapping Z_1)
    assert 0 in annuli_containing(0)
    assert annuli_containing(0) == [0, 1]
    assert annuli_containing(5) == [1]
    # never more than two
    for r in list(range(200)) + [10 ** 9, 10 ** 21 + 12345]:
        members = annuli_containing(r)
        assert 1 <= len(members) <= 2
        for m in members:
            lo, hi = annulus_bounds(m)
            assert lo <= r <= hi


def test_decomposition_membership_and_multiplicity():
    u = coarse_union([cycle_space(n) for n in range(8, 88, 8)])
    decomp = annular_decomposition(u, 0)
    assert decomp.multiplicity_ok()
    for p in range(0, u.n, 7):
        r = decomp.radius_of(p)
        assert decomp.members(p) == annuli_containing(r)
    # coverage is total by construction: every point has a lowest annulus
    assert decomp.region_above(-1).size == u.n


def test_separation_check_generated_space():
    u = coarse_union([cycle_space(n) for n in range(8, 88, 8)])
    decomp = annular_decomposition(u, 0)
    assert separation_check(decomp)


def test_separation_vacuous_on_single_annulus():
    u = coarse_union([cycle_space(4)])
    decomp = annular_decomposition(u, 0)
    assert separation_check(decomp)   # nothing to compare


def test_y0_y1_chunks_partition_annuli():
    u = coarse_union([cycle_space(n) for n in range(8, 48, 8)])
    decomp = annular_decomposition(u, 0)
    evens = {n for n, _ in decomp.chunks(0)}
    odds = {n for n, _ in decomp.chunks(1)}
    assert all(n % 2 == 0 for n in evens)
    assert all(n % 2 == 1 for n in odds)
    assert evens | odds == set(decomp.annulus_indices())


def test_partition_sums_and_interior(small_pipeline):
    fce, decomp = small_pipeline
    region = decomp.region_above(2)
    part = partition_of_unity(decomp, region)
    sums = part.sums()
    assert np.max(np.abs(sums - 1.0)) <= 1e-12
    sq = part.sq_sums()
    assert np.max(np.abs(sq - 1.0)) <= 1e-12
    # a single-annulus point carries full mass there
    singles = [int(p) for p in region
               if decomp.ann_lo[p] == decomp.ann_hi[p]]
    assert singles
    p = singles[0]
    assert part.phi(int(decomp.ann_lo[p]), p) == 1.0


def test_partition_fractional_mass_exists(small_pipeline):
    fce, decomp = small_pipeline
    # the deepest group straddles an overlap band by construction
    region = decomp.region_above(decomp.annulus_indices()[0])
    part = partition_of_unity(decomp, region)
    fractional = [(float(part.phi_lo[p]), float(part.phi_hi[p]))
                  for p in region
                  if 0.05 < part.phi_lo[p] < 0.95]
    assert fractional


def test_partition_lipschitz_certificate(small_pipeline):
    fce, decomp = small_pipeline
    sched = parameter_schedule(1, 0.5, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    part = partition_of_unity(decomp, region)
    cert = part.lipschitz_certificate()
    assert cert["edges_checked"] > 0
    assert cert["max_edge_phi_increment"] <= cert["phi_bound"]
    assert cert["max_edge_sqrt_increment"] <= cert["sqrt_bound"]


def test_parameter_schedule_formulas(small_pipeline):
    fce, decomp = small_pipeline
    sched = parameter_schedule(2, 0.5, fce.controls)
    assert sched.t == pytest.approx(0.5 / (3 * (1 + 4)))     # 1/30
    assert sched.S == pytest.approx(1440.0)
    assert sched.o == 720
    half = parameter_schedule(2, 0.25, fce.controls)
    assert half.t == pytest.approx(sched.t / 2)   # linear in eps
    assert half.S == pytest.approx(4 * sched.S)   # quadratic in 1/eps


def test_parameter_schedule_rejects_bad_eps(small_pipeline):
    fce, _ = small_pipeline
    with pytest.raises(InputError):
        parameter_schedule(2, 0.0, fce.controls)
    with pytest.raises(InputError):
        parameter_schedule(2, -0.5, fce.controls)


def test_parameter_schedule_m_R(small_pipeline):
    fce, decomp = small_pipeline
    # scale 2 excludes the first component (chart scale 1); m_R covers its annuli
    sched = parameter_schedule(2, 0.5, fce.controls, decomp, fce)
    assert sched.m_R >= decomp.component_annulus_range(0)[1]
    assert sched.o >= sched.m_R
    assert sched.D_size > 0


def test_glue_t0_is_one_on_covered_pairs(small_pipeline):
    fce, decomp = small_pipeline
    fam0, fam1 = chunk_families(fce, decomp)
    sched = parameter_schedule(1, 0.5, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    part = partition_of_unity(decomp, region)
    kern, rep = glue(fam0, fam1, part, 1, 0.0, decay_controls=fce.controls)
    skip = set(rep.uncovered)
    for (x, y), v in zip(kern.support.pairs, kern.values):
        if (int(x), int(y)) in skip:
            assert v == 0.0
        else:
            assert v == pytest.approx(1.0, abs=1e-12)


def test_glue_diagonal_one(small_pipeline):
    fce, decomp = small_pipeline
    fam0, fam1 = chunk_families(fce, decomp)
    sched = parameter_schedule(2, 0.25, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    part = partition_of_unity(decomp, region)
    kern, rep = glue(fam0, fam1, part, 2, sched.t,
                     decay_controls=fce.controls)
    assert rep.max_diagonal_deviation <= 1e-12
    for p in region[:20]:
        assert kern.value(int(p), int(p)) == pytest.approx(1.0, abs=1e-12)


def test_glue_variation_with_schedule(small_pipeline):
    fce, decomp = small_pipeline
    fam0, fam1 = chunk_families(fce, decomp)
    for R, eps in [(1, 0.5), (2, 0.25)]:
        sched = parameter_schedule(R, eps, fce.controls, decomp, fce)
        region = decomp.region_above(sched.o)
        part = partition_of_unity(decomp, region)
        kern, rep = glue(fam0, fam1, part, R, sched.t,
                         decay_controls=fce.controls)
        assert has_variation(kern, R, eps, region,
                             skip=frozenset(rep.uncovered))


def test_glue_flags_uncovered_pairs(small_pipeline):
    fce, decomp = small_pipeline
    fam0, fam1 = chunk_families(fce, decomp)
    space = fce.space
    # the deepest group has pure-Z_m and pure-Z_{m+1} components; use a
    # radius reaching across them so uncovered pairs enter the support
    big_r = space.gap(len(space.components) - 3, len(space.components) - 1) \
        + space.components[-1].diameter + space.components[-3].diameter
    region = decomp.region_above(decomp.n_L(1.0))
    region = np.asarray([p for p in region
                         if space.component_of[p] >= len(space.components) - 3])
    part = partition_of_unity(decomp, region)
    kern, rep = glue(fam0, fam1, part, big_r, 0.01,
                     decay_controls=fce.controls)
    assert rep.uncovered, "expected pairs with no common annulus"
    assert rep.decay_bounded > 0
    x, y = rep.uncovered[0]
    assert kern.value(x, y) == 0.0
    # flagged pairs really share no annulus
    assert not (set(decomp.members(x)) & set(decomp.members(y)))


def test_glued_family_scale_independent(small_pipeline):
    fce, decomp = small_pipeline
    sched = parameter_schedule(2, 0.25, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    gf = glued_family(fce, decomp, [1, 2], sched.t, region)
    ok, viol = check_scale_independence(gf.as_scale_family())
    assert ok, viol


def test_proper_function_small():
    lengths, offsets = plan_cycle_truncation(2)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    approx = proper_function(fce.space, fce, 2)
    assert all(approx.variation_ok)
    # diagonal vanishes
    for p in approx.region[:10]:
        assert approx.value(int(p), int(p)) == pytest.approx(0.0, abs=1e-12)
    # symmetric lookups agree
    a, b = int(approx.region[0]), int(approx.region[1])
    assert approx.value(a, b) == approx.value(b, a)
    # k <= R + 1 on in-scope pairs at distance <= R
    for (x, y), d, v in zip(approx.pairs, approx.dists, approx.k):
        if d <= 2:
            assert v <= d + 1 + 1e-12


def test_proper_function_infeasible_truncation():
    fce = fce_cycles([8, 16, 32])
    with pytest.raises(FeasibilityError) as err:
        proper_function(fce.space, fce, 1)
    assert "n=1" in str(err.value)


def test_verify_properness_small():
    lengths, offsets = plan_cycle_truncation(2)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    approx = proper_function(fce.space, fce, 2)
    rep = verify_properness(approx)
    assert rep.upper_ok and rep.lower_ok
    assert rep.s_thresholds[1] == 3 and rep.s_thresholds[2] == 7
    # beyond S_N the partial sums clear N/2
    for N in (1, 2):
        kn = approx.partial(N)
        s_n = rep.s_thresholds[N]
        beyond = [v for d, v in zip(approx.dists, kn) if d > s_n]
        assert beyond and min(beyond) >= N / 2
    # tau_minus is recorded and sits below the shell minima
    assert rep.tau_minus is not None
    for row in rep.shells:
        assert rep.tau_minus(row["d"]) <= row["min"] + 1e-12


def test_truncation_monotonicity():
    lengths, offsets = plan_cycle_truncation(2)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    approx = proper_function(fce.space, fce, 2)
    k1 = approx.partial(1)
    k2 = approx.partial(2)
    assert np.all(k2 >= k1 - 1e-15)


def test_negative_type_on_balls_small():
    lengths, offsets = plan_cycle_truncation(2)
    fce = fce_cycles(lengths, offsets=offsets, with_transitions=False)
    approx = proper_function(fce.space, fce, 2)
    rng = np.random.default_rng(11)
    assert negative_type_on_balls(approx, fce.space, tuple_budget=100,
                                  rng=rng, tol=1e-8)


def test_negative_type_on_balls_squared_chart_kernel():
    # squared chart distances are CND on any tuple inside one chart
    fce = fce_cycles([16, 20])
    fam = __import__("coarsekit.fibred", fromlist=["kernels_from_fce"]) \
        .kernels_from_fce(fce, scales=[3])
    rng = np.random.default_rng(3)
    assert negative_type_on_balls(fam[3], fce.space, tuple_budget=60,
                                  fce=fce, rng=rng, tol=1e-8)


def test_plan_cycle_truncation_shape():
    lengths, offsets = plan_cycle_truncation(3)
    assert all(b > a for a, b in zip(lengths, lengths[1:]))
    assert all(b > a for a, b in zip(offsets, offsets[1:]))
    # deepest three components place interior / overlap / interior
    u = cyclic_box_space(lengths, offsets=offsets)
    decomp = annular_decomposition(u, 0)
    kinds = []
    for ci in range(len(lengths) - 3, len(lengths)):
        pts = u.component_points(ci)
        two = bool(np.any(decomp.ann_lo[pts] != decomp.ann_hi[pts]))
        kinds.append(two)
    assert kinds[1]           # middle component straddles the overlap
    assert not kinds[0] and not kinds[2]


def test_schedule_lebesgue_matches_region(small_pipeline):
    fce, decomp = small_pipeline
    sched = parameter_schedule(1, 0.5, fce.controls, decomp, fce)
    region = decomp.region_above(sched.o)
    part = partition_of_unity(decomp, region)
    # radial-slack certificate past the floor stays at least o+1-ish
    assert part.lebesgue > sched.o
