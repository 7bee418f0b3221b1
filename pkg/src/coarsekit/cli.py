"""Batch orchestration: build spaces and embeddings, run the gluing pipeline,
execute verification suites, and emit JSON reports with CSV sidecars.

Subcommands:

    coarsekit boxspace build --config cfg.json --out DIR
    coarsekit fce build      --config cfg.json --out DIR
    coarsekit fce validate   --config cfg.json --out DIR
    coarsekit kernel check   --kernel k.csv    --out DIR
    coarsekit glue run       --config cfg.json --out DIR
    coarsekit proper run     --config cfg.json --out DIR
    coarsekit verify all     --config cfg.json --out DIR
    coarsekit report         --out DIR

Reports are deterministic for a fixed config and seed: the report body is
byte-identical across reruns, with the wall-clock timestamp kept in a
separate field.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fibred, gluing, groups, kernels, spaces
from .errors import CoarsekitError, ConfigError

_DEF_SCHEDULES = [[2, 0.5], [4, 0.25]]


@dataclass
class PipelineConfig:
    """Validated pipeline settings."""
    space: dict
    fce: str = "cycles"
    n_max: int = 4
    schedules: list = field(default_factory=lambda: [list(s) for s in _DEF_SCHEDULES])
    seed: int = 0
    tol: float = 1e-8
    z0: int = 0

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        space = doc.get("space")
        if not isinstance(space, dict):
            raise ConfigError("config needs a 'space' object")
        known = {"cycles", "offsets", "auto", "quotients", "generators",
                 "graphs"}
        if not set(space) & known:
            raise ConfigError(f"space spec must use one of {sorted(known)}")
        n_max = int(doc.get("n_max", 4))
        if n_max < 1:
            raise ConfigError("n_max must be >= 1")
        schedules = doc.get("schedules", _DEF_SCHEDULES)
        for pair in schedules:
            if len(pair) != 2:
                raise ConfigError("each schedule entry is a [R, eps] pair")
            r, eps = pair
            if r < 1:
                raise ConfigError(f"schedule radius {r} must be >= 1")
            if not (0 < eps <= 1):
                raise ConfigError(f"schedule eps {eps} must lie in (0, 1]")
        seed = int(doc.get("seed", 0))
        tol = float(doc.get("tol", 1e-8))
        if tol <= 0:
            raise ConfigError("tol must be positive")
        return cls(space=space, fce=doc.get("fce", "cycles"), n_max=n_max,
                   schedules=[list(s) for s in schedules], seed=seed,
                   tol=tol, z0=int(doc.get("z0", 0)))


def load_config(path: str | None, overrides: argparse.Namespace
                ) -> PipelineConfig:
    if path is None:
        raise ConfigError("--config is required for this subcommand")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path} does not exist")
    with open(p) as fh:
        doc = json.load(fh)
    cfg = PipelineConfig.from_dict(doc)
    if getattr(overrides, "nmax", None) is not None:
        cfg.n_max = int(overrides.nmax)
    if getattr(overrides, "seed", None) is not None:
        cfg.seed = int(overrides.seed)
    if getattr(overrides, "tol", None) is not None:
        cfg.tol = float(overrides.tol)
    return cfg


# -- construction from config ---------------------------------------------------

def build_space(cfg: PipelineConfig):
    sp = cfg.space
    if sp.get("auto"):
        lengths, offsets = gluing.plan_cycle_truncation(cfg.n_max)
        return groups.cyclic_box_space(lengths, offsets=offsets)
    if "cycles" in sp:
        return groups.cyclic_box_space(
            [int(n) for n in sp["cycles"]],
            offsets=[int(o) for o in sp["offsets"]] if "offsets" in sp else None)
    if "quotients" in sp:
        quots = [groups.group_from_dict(d) for d in sp["quotients"]]
        return groups.box_space(quots, sp["generators"])
    if "graphs" in sp:
        comps = [spaces.space_from_dict(d) for d in sp["graphs"]]
        return spaces.coarse_union(comps)
    raise ConfigError("unsupported space spec")


def build_fce(cfg: PipelineConfig):
    sp = cfg.space
    if cfg.fce == "cycles":
        if sp.get("auto"):
            lengths, offsets = gluing.plan_cycle_truncation(cfg.n_max)
        elif "cycles" in sp:
            lengths = [int(n) for n in sp["cycles"]]
            offsets = [int(o) for o in sp["offsets"]] if "offsets" in sp else None
        else:
            raise ConfigError("fce 'cycles' needs a cycle space spec")
        return fibred.fce_cycles(lengths, offsets=offsets)
    if cfg.fce == "large_girth":
        if "graphs" not in sp:
            raise ConfigError("fce 'large_girth' needs space.graphs")
        comps = [spaces.space_from_dict(d) for d in sp["graphs"]]
        return fibred.fce_large_girth(comps)
    raise ConfigError(f"unknown fce generator {cfg.fce!r}")


# -- report plumbing --------------------------------------------------------------

def _emit(out_dir: Path, name: str, body: dict, quiet: bool) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"report": body, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%SZ",
                                                      time.gmtime())}
    path = out_dir / name
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not quiet:
        print(f"wrote {path}")
    return doc


def _print_checks(body: dict, quiet: bool) -> None:
    if quiet:
        return
    for name, ok in body.get("checks", {}).items():
        print(f"  [{'PASS' if ok else 'FAIL'}] {name}")


def _all_ok(body: dict) -> bool:
    return all(bool(v) for v in body.get("checks", {}).values())


# -- subcommand implementations ----------------------------------------------------

def cmd_boxspace_build(args) -> int:
    cfg = load_config(args.config, args)
    space = build_space(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spaces.save_space(space, out / "space.json")
    comps = space.components
    body = {
        "n": space.n,
        "components": [
            {"n": sp.n, "diameter": sp.diameter,
             "girth": (None if groups.girth(sp) == float("inf")
                       else int(groups.girth(sp)))}
            for sp in comps
        ],
        "offsets_are_exact_ints": True,
        "gaps": [str(space.gap(i, i + 1)) for i in range(len(comps) - 1)],
        "checks": {"built": True},
    }
    _emit(out, "boxspace_report.json", body, args.quiet)
    if not args.quiet:
        print(f"space: {space.n} points in {len(comps)} components")
    return 0


def cmd_fce_build(args) -> int:
    cfg = load_config(args.config, args)
    fce = build_fce(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if fce.space.n <= 5000:
        fibred.save_fce(fce, out / "fce.json")
    report = fibred.validate_fce(fce)
    body = {"dim": fce.dim, "scales_head": fce.scales[:16],
            "charts": len(fce.charts),
            "validation": report.summary(),
            "checks": {"fce_valid": report.ok}}
    _emit(out, "fce_report.json", body, args.quiet)
    _print_checks(body, args.quiet)
    return 0 if report.ok else 1


def cmd_fce_validate(args) -> int:
    if args.fce:
        fce = fibred.load_fce(args.fce)
    else:
        cfg = load_config(args.config, args)
        fce = build_fce(cfg)
    report = fibred.validate_fce(fce)
    body = {"validation": report.summary(),
            "checks": {"fce_valid": report.ok}}
    _emit(Path(args.out), "fce_validation.json", body, args.quiet)
    _print_checks(body, args.quiet)
    return 0 if report.ok else 1


def cmd_kernel_check(args) -> int:
    if not args.kernel:
        raise ConfigError("--kernel <csv> is required")
    kern = kernels.load_kernel(args.kernel)
    tol = args.tol if args.tol is not None else 1e-8
    body: dict = {"pairs": len(kern), "points": len(kern.points())}
    try:
        neg = kernels.is_negative_type(kern, tol=tol)
        body["negative_type"] = {"ok": neg.ok, "extreme": neg.extreme}
    except CoarsekitError as exc:
        body["negative_type"] = {"error": str(exc)}
    try:
        pos = kernels.is_positive_type(kern, tol=tol)
        body["positive_type"] = {"ok": pos.ok, "min_eigenvalue": pos.extreme}
    except CoarsekitError as exc:
        body["positive_type"] = {"error": str(exc)}
    # the type tests are diagnostics, not gates: report and exit clean
    body["checks"] = {"completed": True}
    _emit(Path(args.out), "kernel_check.json", body, args.quiet)
    if not args.quiet:
        for name in ("negative_type", "positive_type"):
            info = body[name]
            verdict = info.get("ok", "n/a")
            print(f"  {name}: {verdict}")
    return 0


def cmd_glue_run(args) -> int:
    cfg = load_config(args.config, args)
    space = build_space(cfg)
    fce = build_fce(cfg)
    decomp = gluing.annular_decomposition(space, cfg.z0)
    fam0, fam1 = gluing.chunk_families(fce, decomp)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    checks = {}
    for R, eps in cfg.schedules:
        sched = gluing.parameter_schedule(int(R), float(eps), fce.controls,
                                          decomp, fce)
        region = decomp.region_above(sched.o)
        if len(region) == 0:
            raise gluing.FeasibilityError(
                f"no points beyond annulus {sched.o} for (R, eps) = "
                f"({R}, {eps}); enlarge the truncation")
        partition = gluing.partition_of_unity(decomp, region)
        sched.lebesgue_achieved = partition.lebesgue
        kern, rep = gluing.glue(fam0, fam1, partition, int(R), sched.t,
                                decay_controls=fce.controls)
        ok = kernels.has_variation(kern, int(R), float(eps), region,
                                   skip=frozenset(rep.uncovered))
        checks[f"variation_R{R}_eps{eps}"] = ok
        rows.append({"schedule": sched.as_dict(), "glue": rep.as_dict(),
                     "variation_ok": ok})
        if space.n <= 20000:
            kernels.save_kernel(kern, out / f"glued_R{R}.csv")
    body = {"runs": rows, "checks": checks}
    _emit(out, "glue_report.json", body, args.quiet)
    _print_checks(body, args.quiet)
    return 0 if _all_ok(body) else 1


def cmd_proper_run(args) -> int:
    cfg = load_config(args.config, args)
    space = build_space(cfg)
    fce = build_fce(cfg)
    approx = gluing.proper_function(space, fce, cfg.n_max, z0=cfg.z0)
    report = gluing.verify_properness(approx)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "envelopes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d", "shell_min", "shell_max", "tau_minus",
                         "tau_plus"])
        for row in report.shells:
            tau_m = (report.tau_minus(row["d"])
                     if report.tau_minus is not None else 0.0)
            writer.writerow([row["d"], repr(row["min"]), repr(row["max"]),
                             repr(tau_m), row["tau_plus"]])
    body = {
        "n_max": approx.n_max,
        "schedule_table": [s.as_dict() for s in approx.schedules],
        "glue_reports": [r.as_dict() for r in approx.reports],
        "region_size": int(len(approx.region)),
        "pairs": int(len(approx.pairs)),
        "properness": report.as_dict(),
        "checks": {
            **{f"variation_n{i + 1}": bool(v)
               for i, v in enumerate(approx.variation_ok)},
            "upper_envelope": report.upper_ok,
            "lower_envelope": report.lower_ok,
        },
    }
    _emit(out, "proper_report.json", body, args.quiet)
    _print_checks(body, args.quiet)
    return 0 if _all_ok(body) else 1


def cmd_verify_all(args) -> int:
    cfg = load_config(args.config, args)
    rng = np.random.default_rng(cfg.seed)
    space = build_space(cfg)
    fce = build_fce(cfg)
    checks: dict[str, bool] = {}
    details: dict = {"seed": cfg.seed}

    # metric sanity: sampled triangle inequality
    n = space.n
    triples = rng.integers(0, n, size=(min(10_000, 20 * n), 3))
    tri_ok = True
    for a, b, c in triples:
        a, b, c = int(a), int(b), int(c)
        if space.distance(a, c) > space.distance(a, b) + space.distance(b, c):
            tri_ok = False
            break
    checks["triangle_inequality_sampled"] = tri_ok

    # fibred embedding validation
    fce_report = fibred.validate_fce(fce)
    checks["fce_valid"] = fce_report.ok
    details["fce"] = fce_report.summary()

    # annular decomposition invariants
    decomp = gluing.annular_decomposition(space, cfg.z0)
    checks["annuli_multiplicity"] = decomp.multiplicity_ok()
    checks["annuli_separation"] = gluing.separation_check(decomp)

    # scale family and its independence
    top = min(max(fce.scales), max(4, cfg.n_max))
    scales = sorted({1, max(1, top // 2), top})
    family = fibred.kernels_from_fce(fce, scales=scales)
    indep, viol = kernels.check_scale_independence(family)
    checks["fce_kernels_scale_independent"] = indep
    if viol:
        details["scale_violation"] = [str(v) for v in viol]

    # glued schedules, partition bounds, variation
    fam0, fam1 = gluing.chunk_families(fce, decomp)
    glue_rows = []
    for R, eps in cfg.schedules:
        sched = gluing.parameter_schedule(int(R), float(eps), fce.controls,
                                          decomp, fce)
        region = decomp.region_above(sched.o)
        if len(region) == 0:
            checks[f"schedule_feasible_R{R}_eps{eps}"] = False
            continue
        checks[f"schedule_feasible_R{R}_eps{eps}"] = True
        partition = gluing.partition_of_unity(decomp, region)
        sums = partition.sums()
        checks[f"partition_sums_R{R}_eps{eps}"] = bool(
            np.max(np.abs(sums - 1.0)) <= 1e-12)
        cert = partition.lipschitz_certificate()
        checks[f"partition_lipschitz_R{R}_eps{eps}"] = (
            cert["max_edge_phi_increment"] <= cert["phi_bound"] + 1e-15)
        kern, rep = gluing.glue(fam0, fam1, partition, int(R), sched.t,
                                decay_controls=fce.controls)
        ok = kernels.has_variation(kern, int(R), float(eps), region,
                                   skip=frozenset(rep.uncovered))
        checks[f"variation_R{R}_eps{eps}"] = ok
        glue_rows.append({"schedule": sched.as_dict(),
                          "glue": rep.as_dict(), "lipschitz": cert})
    details["glue_runs"] = glue_rows

    # glued-family scale independence at fixed t
    if cfg.schedules:
        R0, eps0 = cfg.schedules[-1]
        sched = gluing.parameter_schedule(int(R0), float(eps0), fce.controls,
                                          decomp, fce)
        region = decomp.region_above(sched.o)
        if len(region):
            fam_scales = sorted({1, max(1, int(R0) // 2), int(R0)})
            gf = gluing.glued_family(fce, decomp, fam_scales, sched.t, region)
            g_ok, g_viol = kernels.check_scale_independence(
                gf.as_scale_family())
            checks["glued_family_scale_independent"] = g_ok

    # proper function and properness envelopes
    try:
        approx = gluing.proper_function(space, fce, cfg.n_max, z0=cfg.z0,
                                        decomp=decomp)
        prop = gluing.verify_properness(approx)
        for i, v in enumerate(approx.variation_ok):
            checks[f"proper_variation_n{i + 1}"] = bool(v)
        checks["proper_upper_envelope"] = prop.upper_ok
        checks["proper_lower_envelope"] = prop.lower_ok
        checks["negative_type_on_balls"] = gluing.negative_type_on_balls(
            approx, space, tuple_budget=200, rng=rng, tol=cfg.tol)
        details["properness"] = prop.as_dict()
        details["proper_schedules"] = [s.as_dict() for s in approx.schedules]
    except gluing.FeasibilityError as exc:
        checks["proper_function_feasible"] = False
        details["proper_error"] = str(exc)

    # invariant mean on quotient actions
    if isinstance(space, groups.BoxSpace):
        worst = 0.0
        for _ in range(20):
            f = rng.standard_normal(space.n)
            for gen_label_idx in range(len(space.gens_per_group[0])):
                g_idx = space.gens_per_group[0][gen_label_idx]
                g_label = space.groups[0].labels[g_idx]
                try:
                    worst = max(worst, groups.invariant_mean_defect(
                        space, f, g_label))
                except CoarsekitError:
                    continue
        checks["invariant_mean"] = worst <= 1e-12
        details["invariant_mean_worst"] = worst

    body = {"checks": checks, "details": details,
            "summary": {"passed": sum(bool(v) for v in checks.values()),
                        "total": len(checks)}}
    _emit(Path(args.out), "verify_report.json", body, args.quiet)
    _print_checks(body, args.quiet)
    if not args.quiet:
        s = body["summary"]
        print(f"{s['passed']}/{s['total']} checks passed")
    return 0 if _all_ok(body) else 1


def cmd_report(args) -> int:
    out = Path(args.out)
    if not out.exists():
        print(f"no output directory {out}", file=sys.stderr)
        return 1
    found = sorted(out.glob("*_report.json")) + sorted(
        out.glob("*_validation.json")) + sorted(out.glob("kernel_check.json"))
    if not found:
        print(f"no reports under {out}", file=sys.stderr)
        return 1
    status = 0
    for path in found:
        with open(path) as fh:
            doc = json.load(fh)
        body = doc.get("report", {})
        checks = body.get("checks", {})
        n_pass = sum(bool(v) for v in checks.values())
        print(f"{path.name}: {n_pass}/{len(checks)} checks passed "
              f"({doc.get('timestamp', '?')})")
        for name, ok in checks.items():
            print(f"  [{'PASS' if ok else 'FAIL'}] {name}")
            if not ok:
                status = 1
    return status


# -- entry point --------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None, help="RNG seed")
    p.add_argument("--nmax", type=int, default=None,
                   help="override the truncation depth N_max")
    p.add_argument("--tol", type=float, default=None,
                   help="override the numeric tolerance")
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coarsekit",
        description="coarse-geometry constructions at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p_box = sub.add_parser("boxspace", help="box space construction")
    box_sub = p_box.add_subparsers(dest="action", required=True)
    p = box_sub.add_parser("build")
    _add_common(p)
    p.set_defaults(func=cmd_boxspace_build)

    p_fce = sub.add_parser("fce", help="fibred coarse embeddings")
    fce_sub = p_fce.add_subparsers(dest="action", required=True)
    p = fce_sub.add_parser("build")
    _add_common(p)
    p.set_defaults(func=cmd_fce_build)
    p = fce_sub.add_parser("validate")
    _add_common(p)
    p.add_argument("--fce", help="saved embedding JSON to validate")
    p.set_defaults(func=cmd_fce_validate)

    p_k = sub.add_parser("kernel", help="kernel type checks")
    k_sub = p_k.add_subparsers(dest="action", required=True)
    p = k_sub.add_parser("check")
    _add_common(p)
    p.add_argument("--kernel", help="kernel CSV (x,y,value)")
    p.set_defaults(func=cmd_kernel_check)

    p_g = sub.add_parser("glue", help="glued kernels with schedules")
    g_sub = p_g.add_subparsers(dest="action", required=True)
    p = g_sub.add_parser("run")
    _add_common(p)
    p.set_defaults(func=cmd_glue_run)

    p_p = sub.add_parser("proper", help="truncated proper function")
    p_sub = p_p.add_subparsers(dest="action", required=True)
    p = p_sub.add_parser("run")
    _add_common(p)
    p.set_defaults(func=cmd_proper_run)

    p_v = sub.add_parser("verify", help="verification suites")
    v_sub = p_v.add_subparsers(dest="action", required=True)
    p = v_sub.add_parser("all")
    _add_common(p)
    p.set_defaults(func=cmd_verify_all)

    p_r = sub.add_parser("report", help="summarise existing reports")
    _add_common(p_r)
    p_r.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CoarsekitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
