"""``fracorder`` command line: eigensolve, simulate, synthesize, identify, transform, verify.

Exit codes: 0 success, 1 failed verification, 2 bad configuration or input
file, 3 solver failure, 4 no candidate order could be fitted.  Failures also
print one JSON line ``{"error": ..., "exit": ..., "message": ...}`` to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import AllFitsFailed, ConfigError, FracOrderError
from .forward import read_trace, solve_trace_delta, solve_trace_l2, write_trace
from .inverse import identify, synthesize, write_result
from .laplace import numerical_laplace
from .spectral import weyl_check, write_eigensystem_csv
from .verify import SUITES, run_suite

EXIT_VERIFY, EXIT_INPUT, EXIT_SOLVER, EXIT_NOFIT = 1, 2, 3, 4


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out) if args.out else Path(cfg["output.dir"] if cfg else ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _forward(cfg: RunConfig, eigs, estimate_error: bool = False):
    fcfg = cfg.forward_config()
    if estimate_error:
        fcfg = replace(fcfg, estimate_error=True, ode_levels=max(fcfg.ode_levels, 2))
    model = cfg.model()
    if cfg["data.kind"] == "delta":
        return solve_trace_delta(eigs, model, fcfg)
    return solve_trace_l2(eigs, cfg.weights(eigs), model, fcfg, x0=cfg.x0(), initial_data=cfg.initial_data(eigs))


def cmd_eig(args, cfg: RunConfig) -> int:
    eigs = cfg.eigensystem()
    values, funcs = write_eigensystem_csv(eigs, _out_dir(args, cfg))
    print(f"wrote {values} and {funcs} ({eigs.count} modes)")
    if eigs.count >= 20:
        print(weyl_check(eigs, eigs.dim))
    else:
        print("weyl fit skipped: fewer than 20 modes")
    return 0


def cmd_forward(args, cfg: RunConfig) -> int:
    trace = _forward(cfg, cfg.eigensystem())
    path = _out_dir(args, cfg) / "trace.csv"
    write_trace(trace, path)
    print(f"wrote {path} ({len(trace)} samples, {trace.meta['modes']} modes, tail {trace.meta['tail_estimate']!r})")
    return 0


def cmd_synth(args, cfg: RunConfig) -> int:
    seed = cfg["synth.seed"] if args.seed is None else args.seed
    eigs = cfg.eigensystem()
    weights = None if cfg["data.kind"] == "delta" else cfg.weights(eigs)
    trace = synthesize(cfg.model(), eigs, weights, cfg["synth.noise_level"], seed, cfg.forward_config())
    trace.x0 = cfg.x0() if cfg["data.kind"] == "l2" else 0.0
    path = _out_dir(args, cfg) / "synth.csv"
    write_trace(trace, path)
    print(f"wrote {path} (noise level {cfg['synth.noise_level']!r}, seed {seed})")
    return 0


def _load_trace(args):
    if not args.data:
        raise ConfigError("this command needs --data <trace.csv>")
    try:
        return read_trace(args.data)
    except OSError as exc:
        raise ConfigError(f"{args.data}: {exc.strerror or exc}") from None


def cmd_identify(args, cfg: RunConfig) -> int:
    trace = _load_trace(args)
    eigs = cfg.eigensystem()
    weights = cfg.weights(eigs)
    icfg = cfg.identification_config()
    result = identify(trace, weights, eigs, icfg)
    path = _out_dir(args, cfg) / "result.toml"
    write_result(result, path, icfg, echo=cfg.to_dict())
    orders = ", ".join(f"{a:.6g}" for a in result.orders)
    print(f"wrote {path}: n={result.n} orders=({orders}) residual={result.residual:.3g}")
    return 0


def cmd_laplace(args, cfg: RunConfig) -> int:
    trace = _load_trace(args) if args.data else _forward(cfg, cfg.eigensystem(), estimate_error=True)
    est = numerical_laplace(trace, cfg.laplace_etas(trace.window))
    path = _out_dir(args, cfg) / "laplace.csv"
    lines = ["eta,value,bias"] + [f"{float(e)!r},{float(v)!r},{float(b)!r}" for e, v, b in zip(est.etas, est.values, est.bias)]
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} ({est.etas.size} points, max relative bias {float(np.max(est.bias / np.abs(est.values))):.3g})")
    return 0


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    if args.suite != "all" and args.suite not in SUITES:
        raise ConfigError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)} or all")
    failed = 0
    for name in names:
        checks = run_suite(name)
        bad = [c for c in checks if not c.passed]
        for check in checks:
            print(f"[{name}] {check.line()}")
        print(f"[{name}] {'pass' if not bad else 'FAIL'}: {len(checks) - len(bad)}/{len(checks)} checks")
        failed += len(bad)
    return EXIT_VERIFY if failed else 0


COMMANDS = {"eig": cmd_eig, "forward": cmd_forward, "synth": cmd_synth, "identify": cmd_identify, "laplace": cmd_laplace}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracorder", description="Multi-term time-fractional diffusion: forward solves and order identification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="run configuration (TOML)")
        cmd.add_argument("--data", help="trace CSV input")
        cmd.add_argument("--out", help="output directory (default: output.dir of the config)")
        cmd.add_argument("--seed", type=int, help="noise seed (synth)")
    verify = sub.add_parser("verify")
    verify.add_argument("suite", help=f"one of {', '.join(SUITES)} or all")
    return parser


def _fail(code: int, kind: str, message: str) -> int:
    print(json.dumps({"error": kind, "exit": code, "message": message}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "verify":
            return cmd_verify(args)
        cfg = RunConfig.load(args.config)
        return COMMANDS[args.command](args, cfg)
    except AllFitsFailed as exc:
        return _fail(EXIT_NOFIT, type(exc).__name__, str(exc))
    except (ConfigError, ValueError) as exc:
        return _fail(EXIT_INPUT, type(exc).__name__, str(exc))
    except FracOrderError as exc:
        return _fail(EXIT_SOLVER, type(exc).__name__, str(exc))


if __name__ == "__main__":
    sys.exit(main())
