"""Command line entry point: ``dnlab <subcommand> [flags]``.

Exit codes: 0 success, 2 validation failure, 3 numerical failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import DnlabError, NumericalError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_USAGE = 0, 2, 3, 64


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _pair(text: str) -> tuple[float, float]:
    try:
        a, b = (float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}") from None
    return a, b


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=str, help="TOML experiment file")
    common.add_argument("--out", type=str, help="output directory")
    common.add_argument("--seed", type=int, help="noise seed")
    common.add_argument("--mode", choices=("slice", "full3d"), help="grid mode")
    common.add_argument("--threads", type=int, default=1, help="worker threads for ray jobs")

    p = _Parser(prog="dnlab", description="DN-map inversion laboratory")
    sub = p.add_subparsers(dest="cmd", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    sub.add_parser("check-potentials", parents=[common], help="admissibility of every scale")
    pv = sub.add_parser("probe-verify", parents=[common], help="transport residual and remainder decay")
    pv.add_argument("--lams", type=_floats, default=[5.0, 10.0, 20.0, 40.0])
    pv.add_argument("--no-remainder", action="store_true")
    ic = sub.add_parser("identity-check", parents=[common], help="volume pairing vs boundary pairing")
    ic.add_argument("--lam", type=float, default=10.0)
    ic.add_argument("--scale", type=float)
    rc = sub.add_parser("reconstruct", parents=[common], help="one-scale reconstruction report")
    rc.add_argument("--scale", type=float)
    sub.add_parser("sweep", parents=[common], help="stability curve over all scales")
    sub.add_parser("exponents", parents=[common], help="print the exponent table")
    orc = sub.add_parser("oracle-radon", parents=[common], help="direct quadrature of one ray")
    orc.add_argument("--kind", choices=("vector", "phi"), default="vector")
    orc.add_argument("--theta", type=_pair, default=(1.0, 0.0))
    orc.add_argument("--point", type=_pair, default=(0.0, 0.0))
    orc.add_argument("--y", type=float)
    orc.add_argument("--scale", type=float)
    return p


def _config(args):
    from .lab import ExperimentConfig

    if args.config:
        cfg = ExperimentConfig.from_toml(args.config)
    else:
        cfg = ExperimentConfig.from_dict({})
    threads = args.threads if args.threads and args.threads > 0 else 1
    return cfg.override(out=args.out, seed=args.seed, mode=args.mode, threads=threads)


def _scale(cfg, value):
    return max(cfg.scales) if value is None else float(value)


def cmd_check_potentials(args) -> int:
    from .lab import build_pair
    from .potentials import check_admissible

    cfg = _config(args)
    g = cfg.grid()
    ex = cfg.stability_exponents()
    bad = 0
    for s in cfg.scales:
        P1, P2 = build_pair(cfg, g, s)
        rep = check_admissible(P1, P2, cfg.R1 or math.inf, cfg.R2 or math.inf,
                               float(ex.s0), float(ex.s1), float(ex.s2), g.T)
        print(f"# scale {s:g}")
        print(rep.summary())
        if rep.smallness_margin <= 0 or not (rep.passes_R1 and rep.passes_R2):
            bad += 1
    if bad:
        print(f"{bad} scale(s) not admissible", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_probe_verify(args) -> int:
    from .lab import _angles, beam_probe, build_pair
    from .probes import remainder_norms, remainder_scaling, transport_residual

    cfg = _config(args)
    g = cfg.grid()
    P = build_pair(cfg, g, max(cfg.scales))[1]
    worst = max(transport_residual(P, th) for th in _angles(8))
    print(f"transport residual (8 directions): {worst:.6g}")
    if args.no_remainder:
        return EXIT_OK
    specs = [beam_probe(g, (1.0, 0.0), lam) for lam in args.lams]
    if not (np.any(P.A0) or np.any(P.A) or np.any(P.Phi)):
        sup = max(remainder_norms(s, P, every=8, carrier="numerical")[1].max() for s in specs)
        print(f"remainder sup norm (zero potential): {sup:.6g}")
        return EXIT_OK
    rs = remainder_scaling(specs, P, every=8, min_ppw=cfg.min_ppw, carrier="numerical")
    for lam, v in zip(rs.lams, rs.sup_norms):
        print(f"lambda {lam:g}: sup_t |r| = {v:.6g}")
    print(f"remainder slope {rs.slope:.4f} (r2 {rs.r2:.4f})")
    return EXIT_OK


def cmd_identity_check(args) -> int:
    from .lab import beam_probe, build_pair
    from .reconstruct import integral_identity_check

    cfg = _config(args)
    g = cfg.grid()
    P1, P2 = build_pair(cfg, g, _scale(cfg, args.scale))
    idc = cfg.identity
    spec = beam_probe(g, tuple(idc.get("theta", (1.0, 0.0))), float(idc.get("lambda", args.lam)),
                      half_length=float(idc.get("half_length", 0.3)),
                      width=float(idc.get("beam_width", 0.3)), taper=float(idc.get("taper", 0.3)))
    res = integral_identity_check(P1, P2, spec)
    print(f"lhs = {res.lhs:.10g}")
    print(f"rhs = {res.rhs:.10g}")
    print(f"relative gap = {res.gap:.6g}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from .lab import _validate, build_pair, reconstruct_scale, write_report

    cfg = _config(args)
    grid, ex, alpha, slices, _ = _validate(cfg)
    s = _scale(cfg, args.scale)
    P1, P2 = build_pair(cfg, grid, s)
    lam = 16.0 if cfg.lam == "auto" else float(cfg.lam)
    rep, rays = reconstruct_scale(cfg, grid, ex, alpha, slices, 0, P1, P2, lam)
    out = write_report(rep, cfg.out, meta={"scale": s, "seed": cfg.seed, "config_hash": cfg.hash,
                                           "lambda": lam}, rays=rays)
    for k, v in rep.errors.items():
        print(f"error {k}: {v:.6g} (reference {rep.references[k]:.6g})")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .lab import load_curve, run_experiment

    cfg = _config(args)
    out = run_experiment(cfg)
    curve = load_curve(out)
    for x, e in curve.points:
        print(f"dn_norm_lb {x:.6g}: " + ", ".join(f"{k} {v:.6g}" for k, v in sorted(e.items())))
    for n, v in curve.slopes.items():
        name, val = curve.predicted[n]
        fit = "n/a (fewer than 4 positive points)" if v is None else f"{v[0]:.4f} (r2 {v[2]:.3f})"
        print(f"slope {n}: {fit}; predicted {name} = {val:.6g}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_exponents(args) -> int:
    cfg = _config(args)
    ex = cfg.stability_exponents()
    for name, frac, val in ex.table():
        print(f"{name} = {frac}  ({val:.6g})")
    return EXIT_OK


def cmd_oracle_radon(args) -> int:
    from .lab import build_pair, oracle_radon

    cfg = _config(args)
    g = cfg.grid()
    P1, P2 = build_pair(cfg, g, _scale(cfg, args.scale))
    th = np.asarray(args.theta, dtype=float)
    n = float(np.linalg.norm(th))
    if n == 0:
        raise ValidationError("theta must be non-zero")
    v = oracle_radon(P2 - P1, args.kind, th / n, np.asarray(args.point), args.y)
    print(f"{v.real:.17g} {v.imag:+.17g}j")
    return EXIT_OK


COMMANDS = {
    "check-potentials": cmd_check_potentials,
    "probe-verify": cmd_probe_verify,
    "identity-check": cmd_identity_check,
    "reconstruct": cmd_reconstruct,
    "sweep": cmd_sweep,
    "exponents": cmd_exponents,
    "oracle-radon": cmd_oracle_radon,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return EXIT_USAGE
    try:
        return COMMANDS[args.cmd](args)
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValidationError as e:
        print(f"validation failure: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except DnlabError as e:
        print(f"failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
