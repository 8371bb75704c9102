"""Command-line entry point.

Exit codes: 0 success or all verdicts pass, 1 a verdict failed, 2 usage or
config error. Every command writes ``summary.json`` into ``--out``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, transfer
from .config import default_config, load_config
from .errors import ConfigError, SpinChainError
from .estimators import mc_mean
from .experiments import REGISTRY, run_experiment
from .matching import Backend, sigma_of_m
from .reporting import load_report, write_atomic
from .samplers import CE, GCE, SamplerConfig, run_chain

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
VALIDATE_NS = (8, 64, 512)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p):
    p.add_argument("--config", type=Path, help="model config file (INI); default: built-in family")
    p.add_argument("--out", type=Path, default=Path("spinchain-out"), help="output directory")
    p.add_argument("--seed", type=int, default=0, help="64-bit RNG seed")
    p.add_argument("--threads", type=int, default=1, help="concurrent N-sweep points")
    p.add_argument("--verbose", action="store_true", help="debug logging and per-xi diagnostics")


def build_parser():
    p = _Parser(prog="spinchain", description="Canonical vs grand canonical ensembles on 1D unbounded-spin chains.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    v = sub.add_parser("validate", help="parse a config and check the model assumptions")
    _common(v)
    v.add_argument("--N", type=int, help="lattice size (default: config N, else 8, 64, 512)")

    s = sub.add_parser("sample", help="run one Metropolis chain")
    _common(s)
    s.add_argument("--N", type=int)
    s.add_argument("--ensemble", choices=[GCE, CE], default=GCE)
    s.add_argument("--sweeps", type=int, default=100_000, help="total sweeps including burn-in")
    s.add_argument("--burn-in", type=int, default=None)
    s.add_argument("--sigma", type=float, default=None, help="gce field (default: config)")
    s.add_argument("--m", type=float, default=None, help="ce mean spin (default: config)")
    s.add_argument("--trace", action="store_true", help="write a binary trace of kept configurations")
    s.add_argument("--chain-id", type=int, default=0)

    mt = sub.add_parser("match-sigma", help="find sigma with gce mean spin m")
    _common(mt)
    mt.add_argument("--N", type=int)
    mt.add_argument("--m", type=float, default=None)
    mt.add_argument("--backend", choices=[b.value for b in Backend], default=None)
    mt.add_argument("--sweeps", type=int, default=200_000, help="per-iterate budget for the stochastic backend")

    for eid, fn in REGISTRY.items():
        name = eid if eid == "oracle-check" else f"exp-{eid}"
        e = sub.add_parser(name, help=(fn.__doc__ or "").strip().splitlines()[0])
        _common(e)
        e.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override an experiment parameter (JSON value)")

    r = sub.add_parser("report", help="summarize the JSON reports in --out")
    _common(r)
    return p


def _load(args):
    return load_config(args.config) if args.config else default_config()


def _overrides(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            val = json.loads(v)
        except json.JSONDecodeError:
            val = v
        out[k.strip().replace("-", "_")] = tuple(val) if isinstance(val, list) else val
    return out


def _summary(args, payload):
    payload = dict(payload, command=args.command, version=__version__)
    write_atomic(Path(args.out) / "summary.json", json.dumps(payload, indent=2, default=str) + "\n")


def cmd_validate(args):
    cfg = _load(args)
    Ns = [args.N] if args.N else ([cfg.N] if cfg.N else list(VALIDATE_NS))
    rows = []
    for N in Ns:
        spec = cfg.build(N)
        rows.append({"N": N, "R": spec.R, "delta": spec.delta, "sup_norms": list(spec.potential.sup_norms()), "digest": spec.digest()})
        print(f"N={N} R={spec.R} delta={spec.delta:.6g} potential={spec.potential.kind} ok")
    _summary(args, {"ok": True, "models": rows})
    return EXIT_OK


def cmd_sample(args):
    cfg = _load(args)
    spec = cfg.build(args.N, sigma=args.sigma)
    m = args.m if args.m is not None else cfg.m
    if args.ensemble == CE and m is None:
        raise ConfigError("ce sampling needs --m or [ensemble] m")
    sc = SamplerConfig(n_sweeps=args.sweeps, burn_in_sweeps=args.burn_in, seed=args.seed, chain_id=args.chain_id)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace = out / f"trace-{args.ensemble}-N{spec.N}-seed{args.seed}.bin" if args.trace else None
    t0 = time.perf_counter()
    res = run_chain(spec, args.ensemble, sc, m=m, observe=lambda X: X.mean(axis=1), trace_path=trace)
    est = mc_mean(res.samples)
    payload = {
        "ensemble": args.ensemble,
        "N": spec.N,
        "model_digest": spec.digest(),
        "sweeps": args.sweeps,
        "burn_in": sc.burn_in_sweeps,
        "kept": res.sweeps_kept,
        "acceptance": res.acceptance,
        "step_sizes": res.step_sizes.tolist(),
        "mean_spin": est.value,
        "mean_spin_se": est.std_error,
        "mean_spin_ess": est.ess,
        "max_reprojection_shift": res.state.max_displacement,
        "trace": trace.name if trace else None,
        "seed": args.seed,
        "wall_time_s": time.perf_counter() - t0,
    }
    print(f"{args.ensemble} N={spec.N}: mean spin {est.value:.6g} +- {est.std_error:.2g}, acceptance {res.acceptance:.3f}")
    _summary(args, payload)
    return EXIT_OK


def cmd_match(args):
    cfg = _load(args)
    spec = cfg.build(args.N)
    m = args.m if args.m is not None else cfg.m
    if m is None:
        raise ConfigError("match-sigma needs --m or [ensemble] m")
    res = sigma_of_m(spec, m, args.backend, sampler=SamplerConfig(n_sweeps=args.sweeps, seed=args.seed))
    payload = {
        "sigma": res.sigma,
        "m": res.m,
        "achieved_mean": res.achieved_mean,
        "residual": res.residual,
        "backend": res.backend.value,
        "iterations": res.iterations,
        "std_error": res.std_error,
        "N": spec.N,
        "model_digest": spec.digest(),
    }
    print(f"sigma = {res.sigma:.12g} (backend {res.backend.value}, residual {res.residual:.3g})")
    _summary(args, payload)
    return EXIT_OK


def cmd_experiment(args, eid):
    cfg = _load(args)
    params = _overrides(args.set)
    if args.verbose:
        transfer.set_diagnostics_dir(Path(args.out) / "xi-diagnostics")
    rep = run_experiment(eid, cfg, seed=args.seed, threads=args.threads, **params)
    path = rep.write(args.out)
    print("\n".join(rep.summary_lines()))
    _summary(args, {"experiment": eid, "report": path.name, "passed": rep.passed})
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_report(args):
    out = Path(args.out)
    reports = []
    for path in sorted(out.glob("*.json")):
        if path.name == "summary.json":
            continue
        try:
            reports.append(load_report(path))
        except (KeyError, ValueError):
            continue
    if not reports:
        print(f"no experiment reports under {out}", file=sys.stderr)
        _summary(args, {"reports": [], "passed": False})
        return EXIT_FAIL
    for rep in reports:
        print("\n".join(rep.summary_lines()))
    ok = all(r.passed for r in reports)
    _summary(args, {"reports": [{"experiment": r.experiment_id, "passed": r.passed, "wall_time_s": r.wall_time} for r in reports], "passed": ok})
    return EXIT_OK if ok else EXIT_FAIL


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.seterr(over="ignore", under="ignore")
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "sample":
            return cmd_sample(args)
        if args.command == "match-sigma":
            return cmd_match(args)
        if args.command == "report":
            return cmd_report(args)
        eid = args.command[4:] if args.command.startswith("exp-") else args.command
        return cmd_experiment(args, eid)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        try:
            _summary(args, {"ok": False, "error": str(exc), "line": exc.line})
        except OSError:
            pass
        return EXIT_USAGE
    except (SpinChainError, TypeError) as exc:
        if isinstance(exc, TypeError) and "unexpected keyword" not in str(exc):
            raise
        print(f"error: {exc}", file=sys.stderr)
        _summary(args, {"ok": False, "error": str(exc)})
        return EXIT_USAGE if isinstance(exc, TypeError) else EXIT_FAIL
    finally:
        transfer.set_diagnostics_dir(None)


if __name__ == "__main__":
    sys.exit(main())
