"""Command-line front end: problem-file ingestion and report emission.

Problem files are TOML with sections [grid], [diffusion], [reaction],
[solver], [output].  Four commands: ``certify`` (spectral two-end check),
``solve`` (full existence pipeline plus solution profile), ``regularize``
(jump table of both box constructions), ``oracle`` (closed-form degrees
against the brute-force count on tiny instances).  All randomness is seeded
from the file or --seed, so identical inputs produce byte-identical outputs.

Exit codes: 0 success / certified; 2 certificate declined (no jump or
inconclusive); 3 solver failure or oracle disagreement; 4 invalid input.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

try:
    import tomllib
except ImportError:
    import tomli as tomllib

import numpy as np

from .cones import ConstraintCone
from .degree import (
    Problem,
    SolverConfig,
    brouwer_degree_bruteforce,
    degree_linear,
    existence_pipeline,
    iteration_map,
)
from .exprfield import FieldExpr, ParseError, eval_field_batch, parse_field
from .operators import GridSpec, laplacian_dirichlet, principal_eigenpair
from .setvalued import SetValuedField, filippov, krasowski, nemytskii
from .spectral import ReactionMatrices, certificate

EXIT_OK = 0
EXIT_DECLINED = 2
EXIT_FAILURE = 3
EXIT_INVALID = 4

_FILIPPOV_WARNING = (
    "warning: the essential (limits-only) construction drops point values; "
    "a selection that relied on the point value at a switching threshold may "
    "lose tangency on the boundary of the orthant")


class InputError(ValueError):
    """Problem-file validation failure; maps to exit code 4."""


# -- problem file ------------------------------------------------------------

def _as_matrix(raw, m: int, name: str) -> np.ndarray:
    if isinstance(raw, (int, float)):
        mat = np.array([[float(raw)]])
    else:
        mat = np.asarray(raw, dtype=float)
        if mat.ndim == 1:
            mat = np.diag(mat)
    if mat.shape != (m, m):
        raise InputError(f"{name} must be a {m}x{m} matrix")
    return mat


def _as_tuple(raw, dim: int, name: str, cast):
    if isinstance(raw, (int, float)):
        return tuple(cast(raw) for _ in range(dim))
    vals = tuple(cast(v) for v in raw)
    if len(vals) != dim:
        raise InputError(f"{name} must have {dim} entries")
    return vals


def load_problem_file(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise InputError(f"no such file: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"invalid problem file: {exc}")
    if "grid" not in raw:
        raise InputError("missing [grid] section")
    return raw


def build_grid(raw: dict) -> GridSpec:
    g = raw["grid"]
    try:
        dim = int(g.get("dim", 1))
        m = int(g.get("M", 1))
        extents = _as_tuple(g.get("extents", 1.0), dim, "extents", float)
        nodes = _as_tuple(g["nodes"], dim, "nodes", int)
    except KeyError as exc:
        raise InputError(f"missing grid key {exc}")
    try:
        return GridSpec(dim=dim, extents=extents, nodes=nodes, components=m)
    except ValueError as exc:
        raise InputError(str(exc))


def build_matrices(raw: dict, m: int) -> ReactionMatrices:
    reaction = raw.get("reaction", {})
    diffusion = raw.get("diffusion", {})
    for key, section in (("D0", reaction), ("Dinf", reaction),
                         ("R0", diffusion), ("Rinf", diffusion)):
        if key not in section:
            raise InputError(f"missing matrix {key}")
    try:
        return ReactionMatrices(
            reaction_at_zero=_as_matrix(reaction["D0"], m, "D0"),
            reaction_at_infinity=_as_matrix(reaction["Dinf"], m, "Dinf"),
            diffusion_at_zero=_as_matrix(diffusion["R0"], m, "R0"),
            diffusion_at_infinity=_as_matrix(diffusion["Rinf"], m, "Rinf"))
    except ValueError as exc:
        raise InputError(str(exc))


def _parse_expression(text: str, m: int, name: str) -> FieldExpr:
    try:
        return parse_field(text, m)
    except ParseError as exc:
        raise InputError(f"{name}: {exc}")


def build_reaction(raw: dict, m: int, regularization: str):
    """Returns (f_expr or None, svf or None, overrides)."""
    reaction = raw.get("reaction", {})
    overrides = {}
    for key, val in reaction.get("overrides", {}).items():
        try:
            overrides[int(key)] = float(val)
        except ValueError:
            raise InputError(f"override key {key!r} is not a descriptor index")
    if "phi" in reaction:
        bounds = reaction["phi"]
        if not isinstance(bounds, list) or len(bounds) != 2:
            raise InputError("phi must be a [lower, upper] expression pair")
        lo = _parse_expression(bounds[0], m, "phi lower")
        hi = _parse_expression(bounds[1], m, "phi upper")
        try:
            return None, SetValuedField.from_bounds(lo, hi), overrides
        except ValueError as exc:
            raise InputError(str(exc))
    if "f" in reaction:
        return _parse_expression(reaction["f"], m, "f"), None, overrides
    raise InputError("reaction needs an f expression or a phi pair")


def build_rho(raw: dict, m: int):
    rho = raw.get("diffusion", {}).get("rho", "identity")
    if rho == "identity":
        return None
    return _parse_expression(rho, m, "rho")


def build_solver_config(raw: dict, seed) -> SolverConfig:
    s = dict(raw.get("solver", {}))
    if "lambda" in s:          # accepted alias for the resolvent step size
        s["step"] = s.pop("lambda")
    known = {f.name for f in dataclasses.fields(SolverConfig)}
    unknown = set(s) - known
    if unknown:
        raise InputError(f"unknown solver keys: {sorted(unknown)}")
    if seed is not None:
        s["seed"] = seed
    try:
        return SolverConfig(**s)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc))


# -- serialization -----------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name))
                for f in dataclasses.fields(obj)}
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def _solve_summary(rep) -> dict:
    u = rep.solution
    return {"start_index": rep.start_index, "converged": rep.converged,
            "trivial": rep.trivial, "residual": rep.residual,
            "box_distance": rep.box_distance, "iterations": rep.iterations,
            "complementarity_gap": rep.complementarity_gap,
            "max_norm": rep.max_norm, "escaped": rep.escaped,
            "note": rep.note,
            "sup_norm": float(np.abs(u).max()) if u.size else 0.0,
            "l2_norm": float(np.linalg.norm(u))}


def _degree_summary(rep) -> dict | None:
    if rep is None:
        return None
    return {"value": rep.value, "rule": rep.rule,
            "hypotheses": {k: dataclasses.asdict(h)
                           for k, h in rep.hypotheses.items()},
            "window": rep.window}


def emit_report(report: dict, raw: dict, quiet: bool) -> None:
    path = raw.get("output", {}).get("report")
    text = json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    elif quiet:
        sys.stdout.write(text)


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_profile(path: str, grid: GridSpec, svf, gamma, w: np.ndarray,
                  op, eps: float) -> None:
    img = nemytskii(svf, gamma, w, jump_tol=eps)
    aw = op.apply(w)
    coords = grid.coordinates()
    ns = coords.shape[0]
    m = grid.components
    lines = ["node_index,x,component,u,w,Au,box_lo,box_hi"]
    for k in range(ns):
        x = " ".join(_fmt(c) for c in np.atleast_1d(coords[k]))
        for c in range(m):
            i = c * ns + k
            lines.append(",".join([str(k), x, str(c + 1),
                                   _fmt(img.inner_points[k, c]), _fmt(w[i]),
                                   _fmt(aw[i]), _fmt(img.lower[i]),
                                   _fmt(img.upper[i])]))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _say(quiet: bool, *parts) -> None:
    if not quiet:
        print(*parts)


# -- commands ----------------------------------------------------------------

def cmd_certify(raw: dict, args) -> int:
    grid = build_grid(raw)
    mats = build_matrices(raw, grid.components)
    op = laplacian_dirichlet(grid)
    lam1 = principal_eigenpair(op).value
    cert = certificate(mats, lam1)
    code = EXIT_OK if cert.verdict == "degree_jump_exists" else EXIT_DECLINED
    report = {"command": "certify", "verdict": cert.verdict,
              "certificate": dataclasses.asdict(cert),
              "lambda1": lam1, "exit_code": code}
    emit_report(report, raw, args.quiet)
    _say(args.quiet, f"verdict: {cert.verdict} (margin {cert.margin:.6g}, "
                     f"principal eigenvalue {lam1:.6g})")
    return code


def _resolve_regularization(raw: dict, args) -> str:
    reg = args.regularization or \
        raw.get("reaction", {}).get("regularization", "krasowski")
    if reg not in ("krasowski", "filippov", "none"):
        raise InputError(f"unknown regularization {reg!r}")
    if reg == "filippov":
        print(_FILIPPOV_WARNING, file=sys.stderr)
    return reg


def cmd_solve(raw: dict, args) -> int:
    grid = build_grid(raw)
    m = grid.components
    mats = build_matrices(raw, m)
    reg = _resolve_regularization(raw, args)
    f_expr, svf, overrides = build_reaction(raw, m, reg)
    rho = build_rho(raw, m)
    cfg = build_solver_config(raw, args.seed)
    selection = args.selection or raw.get("solver", {}).get("selection", "mid")
    if selection not in ("mid", "lower", "upper"):
        raise InputError(f"unknown selection {selection!r}")
    op = laplacian_dirichlet(grid)
    problem = Problem(op=op, mats=mats, reaction=f_expr, svf=svf, rho=rho,
                      overrides=overrides or None, regularization=reg,
                      cfg=cfg, selection=selection)
    try:
        rep = existence_pipeline(problem)
    except ValueError as exc:
        raise InputError(str(exc))
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    code = {"solution_found": EXIT_OK, "certificate_declined": EXIT_DECLINED,
            "theory_gap": EXIT_FAILURE}[rep.outcome]
    report = {"command": "solve", "outcome": rep.outcome, "exit_code": code,
              "seed": cfg.seed, "regularization": reg,
              "selection_used": rep.selection_used,
              "certificate": dataclasses.asdict(rep.certificate),
              "checks": {k: dataclasses.asdict(h)
                         for k, h in rep.checks.items()},
              "degree_zero": _degree_summary(rep.degree_zero),
              "degree_infinity": _degree_summary(rep.degree_infinity),
              "annulus": list(rep.annulus) if rep.annulus else None,
              "best": _solve_summary(rep.best) if rep.best else None,
              "attempts": [_solve_summary(r) for r in rep.attempts],
              "primitive": _jsonable(rep.primitive)}
    emit_report(report, raw, args.quiet)
    if rep.outcome == "solution_found":
        profile = raw.get("output", {}).get("profile")
        if profile:
            write_profile(profile, grid, rep.svf, rep.gamma,
                          rep.solution_substituted, op, cfg.eps)
        sup = float(np.abs(rep.best.solution).max())
        _say(args.quiet, f"outcome: solution_found  sup-norm {sup:.6g}  "
                         f"box distance {rep.best.box_distance:.3g}  "
                         f"annulus {rep.annulus}")
    else:
        _say(args.quiet, f"outcome: {rep.outcome}")
    return code


def cmd_regularize(raw: dict, args) -> int:
    grid = build_grid(raw)
    m = grid.components
    f_expr, svf, overrides = build_reaction(raw, m, "krasowski")
    if f_expr is None:
        raise InputError("regularize needs a single-valued f expression")
    probe_default = raw.get("reaction", {}).get("probe")
    rows = []
    if not f_expr.jump_descriptors:
        print("warning: the reaction is continuous; nothing to regularize",
              file=sys.stderr)
    k_field = krasowski(f_expr, overrides or None)
    f_field = filippov(f_expr)
    for d in f_expr.jump_descriptors:
        if probe_default is not None:
            probe = np.asarray([float(v) for v in probe_default])
            if probe.shape != (m,):
                raise InputError(f"probe must have {m} entries")
        else:
            probe = np.ones(m)
        probe[d.var - 1] = d.threshold
        pt = probe.reshape(1, -1)
        left = eval_field_batch(f_expr, pt, forced={d.index: "left"})[0]
        right = eval_field_batch(f_expr, pt, forced={d.index: "right"})[0]
        k_lo, k_hi = k_field.box(probe)
        f_lo, f_hi = f_field.box(probe)
        c = d.component - 1
        rows.append({"descriptor": d.index, "component": d.component,
                     "variable": d.var, "threshold": d.threshold,
                     "left_limit": float(left[c]),
                     "right_limit": float(right[c]),
                     "point_value": float(k_field.value(probe)[c]),
                     "hull_box": [float(k_lo[c]), float(k_hi[c])],
                     "limits_box": [float(f_lo[c]), float(f_hi[c])],
                     "probe": [float(v) for v in probe]})
    code = EXIT_OK if rows else EXIT_INVALID
    report = {"command": "regularize", "jumps": rows, "exit_code": code}
    emit_report(report, raw, args.quiet)
    if not args.quiet:
        header = (f"{'comp':>4} {'var':>3} {'threshold':>12} {'left':>12} "
                  f"{'right':>12} {'value':>12} {'hull box':>28} "
                  f"{'limits box':>28}")
        print(header)
        for r in rows:
            print(f"{r['component']:>4} {r['variable']:>3} "
                  f"{r['threshold']:>12.6g} {r['left_limit']:>12.6g} "
                  f"{r['right_limit']:>12.6g} {r['point_value']:>12.6g} "
                  f"{str(r['hull_box']):>28} {str(r['limits_box']):>28}")
    return code


def cmd_oracle(raw: dict, args) -> int:
    grid = build_grid(raw)
    m = grid.components
    size = grid.n_sites() * m
    if size > 3:
        raise InputError("oracle cross-check needs at most 3 unknowns")
    mats = build_matrices(raw, m)
    op = laplacian_dirichlet(grid)
    cfg = build_solver_config(raw, args.seed)
    step = cfg.resolve_step(op)
    cone = ConstraintCone(dimension=size)
    oracle_section = raw.get("oracle", {})
    rows = []
    for end, ratio in (("zero", mats.ratio_at_zero()),
                       ("infinity", mats.ratio_at_infinity())):
        formula = degree_linear(op, ratio)
        probe_mat = oracle_section.get(f"comparison_at_{end}")
        probe = _as_matrix(probe_mat, m, f"comparison_at_{end}") \
            if probe_mat is not None else ratio
        fld = lambda u, mat=probe: (mat @ u.reshape(m, -1)).reshape(-1)
        g = iteration_map(op, fld, step, cone)
        box = (np.full(size, -0.75), np.full(size, 1.25))
        try:
            count = brouwer_degree_bruteforce(g, box, seed=cfg.seed)
        except (ValueError, RuntimeError) as exc:
            raise InputError(f"brute-force count failed at {end}: {exc}")
        rows.append({"end": end, "formula": formula.value,
                     "bruteforce": count,
                     "agree": formula.value == count})
    code = EXIT_OK if all(r["agree"] for r in rows) else EXIT_FAILURE
    report = {"command": "oracle", "rows": rows, "exit_code": code}
    emit_report(report, raw, args.quiet)
    for r in rows:
        _say(args.quiet, f"{r['end']:>9}: formula {r['formula']} vs "
                         f"brute force {r['bruteforce']} -> "
                         f"{'agree' if r['agree'] else 'DISAGREE'}")
    return code


# -- entry point ---------------------------------------------------------------

def _seed(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return val


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("path", help="TOML problem file")
    shared.add_argument("--seed", type=_seed, default=None,
                        help="override the random seed (64-bit unsigned)")
    shared.add_argument("--regularization",
                        choices=("krasowski", "filippov"), default=None,
                        help="box construction for discontinuous reactions")
    shared.add_argument("--selection", choices=("mid", "lower", "upper"),
                        default=None, help="solver selection inside the box")
    shared.add_argument("--quiet", action="store_true",
                        help="suppress the human summary")
    parser = argparse.ArgumentParser(
        prog="conequil",
        description="equilibrium existence on the nonnegative orthant")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("certify", parents=[shared],
                   help="two-end spectral comparison")
    sub.add_parser("solve", parents=[shared],
                   help="run the existence pipeline")
    sub.add_parser("regularize", parents=[shared],
                   help="tabulate boxes at every switching threshold")
    sub.add_parser("oracle", parents=[shared],
                   help="brute-force degree cross-check (at most 3 unknowns)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"certify": cmd_certify, "solve": cmd_solve,
               "regularize": cmd_regularize, "oracle": cmd_oracle}[args.command]
    try:
        raw = load_problem_file(args.path)
        return handler(raw, args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
