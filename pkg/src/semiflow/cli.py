"""Command-line front end: catalog browsing, experiment runs, bound suites.

Exit codes: 0 success, 2 config error, 3 oracle validation failure, 4 bound
violation.  All emitted files are UTF-8 with LF line endings and floats
printed to 17 significant digits, so reruns with the same config are
byte-identical.  Wall-clock timings are emitted as 0 unless SEMIFLOW_TIMING=1
(real timings would break byte-identical reruns).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import gallery, harness
from .config import ExperimentConfig, parse_config_file
from .errors import ConfigError, DomainError, OracleValidationError, UnsupportedOperatorError
from .gallery import CouplingSpec, GalleryRecipe, build_instance, gallery_list
from .schemes import Scheme

_EXIT_OK = 0
_EXIT_CONFIG = 2
_EXIT_ORACLE = 3
_EXIT_BOUND = 4


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _write_lines(path: str, lines: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines))
        if lines:
            fh.write("\n")


def _timing_enabled() -> bool:
    return os.environ.get("SEMIFLOW_TIMING", "") == "1"


def _cert_status(inst: gallery.ProblemInstance) -> str:
    flags = []
    ok = inst.bounds1.is_contraction and inst.bounds2.is_contraction
    flags.append("contraction" if ok else "NOT-CONTRACTION")
    if inst.bounds1.spd and inst.bounds2.spd:
        flags.append("spd")
    if inst.bounds1.invertible and inst.bounds2.invertible:
        flags.append("invertible")
    m_a = max(inst.bounds1.m_a or 0.0, inst.bounds2.m_a or 0.0)
    flags.append(f"M_A={m_a:.4g}")
    return " ".join(flags)


def cmd_gallery_list(as_json: bool) -> int:
    recipes = gallery_list()
    entries = []
    for recipe in recipes:
        inst = build_instance(recipe)
        entries.append({
            "family": recipe.family,
            "dims": list(recipe.dims),
            "coupling": recipe.coupling.tag(),
            "seed": recipe.seed,
            "id": inst.id,
            "status": _cert_status(inst),
            "note": recipe.note,
        })
    if as_json:
        sys.stdout.write(json.dumps(entries, indent=2, sort_keys=True) + "\n")
        return _EXIT_OK
    header = f"{'family':<16} {'dims':<8} {'coupling':<22} {'seed':<6} status"
    sys.stdout.write(header + "\n")
    for e in entries:
        dims = f"{e['dims'][0]}+{e['dims'][1]}"
        sys.stdout.write(
            f"{e['family']:<16} {dims:<8} {e['coupling']:<22} {e['seed']:<6} {e['status']}\n"
        )
    return _EXIT_OK


def _recipe_from_config(cfg: ExperimentConfig) -> GalleryRecipe:
    spec = CouplingSpec(cfg.coupling, cfg.coupling_scale, cfg.coupling_beta)
    return GalleryRecipe(cfg.family, (cfg.n1, cfg.n2), spec, cfg.seed)


def _report_rows_csv(report: harness.RateReport) -> list[str]:
    lines = ["problem_id,scheme,dim1,dim2,t,n,error_op,error_weighted,norm_power,bound_rhs,wall_ns"]
    for row in report.rows:
        lines.append(",".join([
            report.problem_id, report.scheme,
            str(report.dims[0]), str(report.dims[1]),
            _fmt(report.t), str(row.n),
            _fmt(row.error_op), _fmt(row.error_weighted),
            _fmt(row.norm_power), _fmt(row.bound_rhs), str(row.wall_ns),
        ]))
    return lines


def cmd_run(config_path: str) -> int:
    cfg = parse_config_file(config_path)
    try:
        instance = build_instance(_recipe_from_config(cfg))
    except (DomainError, UnsupportedOperatorError) as exc:
        raise ConfigError(str(exc)) from exc
    os.makedirs(cfg.output_path, exist_ok=True)
    timed = _timing_enabled()
    violations = 0
    for scheme_name in cfg.schemes:
        scheme = Scheme.from_name(scheme_name)
        reports = [
            harness.error_curve(instance, scheme, t, cfg.n_values, timed=timed)
            for t in cfg.t_values
        ]
        violations += sum(r.bound_violations for r in reports)
        stem = os.path.join(cfg.output_path, f"{instance.id}__{scheme_name}")
        if cfg.emit == "csv":
            lines = _report_rows_csv(reports[0])[:1]
            for rep in reports:
                lines += _report_rows_csv(rep)[1:]
            _write_lines(stem + ".csv", lines)
        else:
            payload = [{
                "problem_id": rep.problem_id, "scheme": rep.scheme,
                "dims": list(rep.dims), "t": rep.t, "eta": rep.eta,
                "fitted_slope_op": rep.fitted_slope_op,
                "fitted_slope_weighted": rep.fitted_slope_weighted,
                "bound_violations": rep.bound_violations,
                "rows": [{"n": r.n, "error_op": r.error_op,
                          "error_weighted": r.error_weighted,
                          "norm_power": r.norm_power, "bound_rhs": r.bound_rhs,
                          "wall_ns": r.wall_ns} for r in rep.rows],
            } for rep in reports]
            _write_lines(stem + ".json", [json.dumps(payload, indent=2, sort_keys=True)])
    return _EXIT_OK if violations == 0 else _EXIT_BOUND


def cmd_verify_lemmas(config_path: str) -> int:
    cfg = parse_config_file(config_path)
    try:
        instance = build_instance(_recipe_from_config(cfg))
    except (DomainError, UnsupportedOperatorError) as exc:
        raise ConfigError(str(exc)) from exc
    reports = harness.verify_all_lemmas(instance)
    os.makedirs(cfg.output_path, exist_ok=True)
    stem = os.path.join(cfg.output_path, f"{instance.id}__lemmas")
    if cfg.emit == "csv":
        lines = ["problem_id,lemma_id,max_ratio,constant,refined_constant,explicit,passed"]
        for rep in sorted(reports, key=lambda r: r.lemma_id):
            refined = "" if rep.refined_constant is None else _fmt(rep.refined_constant)
            lines.append(",".join([
                rep.problem_id, rep.lemma_id, _fmt(rep.max_ratio), _fmt(rep.constant),
                refined, str(int(rep.explicit)), str(int(rep.passed)),
            ]))
        _write_lines(stem + ".csv", lines)
    else:
        payload = [{
            "problem_id": rep.problem_id, "lemma_id": rep.lemma_id,
            "max_ratio": rep.max_ratio, "constant": rep.constant,
            "refined_constant": rep.refined_constant, "explicit": rep.explicit,
            "passed": rep.passed,
        } for rep in sorted(reports, key=lambda r: r.lemma_id)]
        _write_lines(stem + ".json", [json.dumps(payload, indent=2, sort_keys=True)])
    explicit_ok = all(r.passed for r in reports if r.explicit)
    return _EXIT_OK if explicit_ok else _EXIT_BOUND


def _instability_n_list(n_max: int) -> list[int]:
    values = []
    n = 4
    while n <= n_max:
        values.append(n)
        n *= 4
    if not values or values[-1] != n_max:
        values.append(n_max)
    return values


def cmd_instability(beta_list, t: float, n_max: int, dim: int, scale: float,
                    seed: int, output: str | None) -> int:
    betas = list(beta_list or [])
    for beta in betas:
        if not 0.0 < beta <= 1.0:
            raise ConfigError(f"--beta values must lie in (0, 1], got {beta}")
    if n_max < 1:
        raise ConfigError(f"--n-max must be >= 1, got {n_max}")
    base = gallery.make_laplacian_problem(dim, dim, 0.0, seed)
    rows = harness.instability_sweep(base, betas, t, _instability_n_list(n_max),
                                     scale=scale)
    lines = ["beta,n,norm_power,lower_bound,scalar_norm,scalar_lambda_pow"]
    for r in rows:
        lines.append(",".join([
            _fmt(r.beta), str(r.n), _fmt(r.norm_power), _fmt(r.lower_bound),
            _fmt(r.scalar_norm), _fmt(r.scalar_lambda_pow),
        ]))
    if output:
        _write_lines(output, lines)
    else:
        sys.stdout.write("\n".join(lines) + "\n")
    if not betas:
        sys.stderr.write("verdict: stable (control only)\n")
    else:
        growth = harness.instability_growth(rows)
        worst_beta = max(growth, key=growth.get)
        factor = growth[worst_beta]
        word = "unstable" if factor >= 2.0 else "stable"
        sys.stderr.write(
            f"verdict: {word} (beta={worst_beta:g} grows {factor:.3g}x over the "
            f"beta=0 control at n={max(r.n for r in rows)})\n"
        )
    return _EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semiflow",
        description="Split-step semigroup approximation benchmarks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gallery = sub.add_parser("gallery", help="catalog commands")
    gallery_sub = p_gallery.add_subparsers(dest="gallery_command", required=True)
    p_list = gallery_sub.add_parser("list", help="print the built-in catalog")
    p_list.add_argument("--json", action="store_true", help="machine-readable output")

    p_run = sub.add_parser("run", help="run a rate experiment from a config file")
    p_run.add_argument("config")

    p_verify = sub.add_parser("verify-lemmas", help="run the bound suite from a config file")
    p_verify.add_argument("config")

    p_inst = sub.add_parser("instability", help="fractional-coupling blow-up sweep")
    p_inst.add_argument("--beta", action="append", type=float, default=None)
    p_inst.add_argument("--t", type=float, default=1.0)
    p_inst.add_argument("--n-max", type=int, default=256)
    p_inst.add_argument("--dim", type=int, default=16)
    p_inst.add_argument("--scale", type=float, default=1.0)
    p_inst.add_argument("--seed", type=int, default=11)
    p_inst.add_argument("--output", default=None)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gallery":
            return cmd_gallery_list(args.json)
        if args.command == "run":
            return cmd_run(args.config)
        if args.command == "verify-lemmas":
            return cmd_verify_lemmas(args.config)
        if args.command == "instability":
            return cmd_instability(args.beta, args.t, args.n_max, args.dim,
                                   args.scale, args.seed, args.output)
    except ConfigError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return _EXIT_CONFIG
    except FileNotFoundError as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return _EXIT_CONFIG
    except OracleValidationError as exc:
        sys.stderr.write(f"oracle validation failed: {exc}\n")
        return _EXIT_ORACLE
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
