"""Command line: ``freqlab <subcommand> [--scenario PATH] [--seed N] [--out-dir DIR] [--tol X]``.

Exit codes: 0 all audits pass, 1 an audit failed, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from typing import Optional, Sequence

from . import __version__
from .errors import ConfigError, FreqLabError
from .experiments import run_scenario
from .scenario import EXPERIMENT_KINDS, default_scenario, load_scenario
from .verify import GROUPS, verify_suite

EXIT_PASS, EXIT_AUDIT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("freqlab")


def _globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--scenario", default=d, help="TOML scenario file (default: built-in scenario)")
    p.add_argument("--seed", type=int, default=d, help="override the scenario seed")
    p.add_argument("--out-dir", default=d, help="directory for JSON/CSV reports")
    p.add_argument("--tol", type=float, default=d,
                   help="quadrature tolerance; for verify, the threshold of quadrature-limited audits")
    p.add_argument("--quiet", action="store_true", default=d if suppress else False,
                   help="print only the summary line")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freqlab", description="Frequency-function laboratory")
    p.add_argument("--version", action="version", version=f"freqlab {__version__}")
    _globals(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "whitney": "Whitney decomposition audits and generation maps",
        "frequency": "frequency profile F(x, r) over a radius grid",
        "cascade": "good-set cascade, f_j construction and LLN harness",
        "doubling": "doubling-ratio survey h(x, 12r)/h(x, r)",
        "cauchy": "Cauchy-uniqueness experiments (alpha, flux, mass, threeball, ratio)",
        "verify": "run the invariant suite",
    }
    for kind in EXPERIMENT_KINDS:
        sp = sub.add_parser(kind, help=helps[kind])
        _globals(sp, suppress=True)
        if kind == "verify":
            sp.add_argument("--filter", action="append", default=None, metavar="GROUP",
                            help=f"audit group to run (repeatable or comma separated): {', '.join(GROUPS)}")
    return p


def _filters(values: Optional[list]) -> Optional[list]:
    if not values:
        return None
    out = []
    for v in values:
        out.extend(x.strip() for x in v.split(",") if x.strip())
    return out


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    kind = args.command
    t0 = time.perf_counter()
    try:
        scn = load_scenario(args.scenario) if args.scenario else default_scenario(kind)
        if scn.kind != kind:
            raise ConfigError(f"{scn.where('experiment', 'kind')}: scenario is a {scn.kind!r} experiment, "
                              f"not {kind!r}")
        if args.seed is not None:
            scn.seed = args.seed
        out_dir = args.out_dir or scn.output["dir"]
        if kind == "verify":
            groups = _filters(getattr(args, "filter", None)) or scn.experiment["filter"]
            rep = verify_suite(seed=scn.seed, groups=groups, tol=args.tol, scenario=scn.echo())
        else:
            if args.tol is not None:
                if args.tol <= 0:
                    raise ConfigError("--tol must be positive")
                scn.tol = args.tol
            rep = run_scenario(scn)
        rep.wall_clock = time.perf_counter() - t0
        paths = rep.write(out_dir, scn.output["prefix"])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FreqLabError as exc:
        print(f"numeric failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = rep.text_summary()
    print(text.splitlines()[0] if args.quiet else text)
    for pth in paths:
        print(f"wrote {pth}")
    return rep.exit_code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
