"""Command line interface: ``rrstates <command> [--config FILE] ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import RRStatesError
from .pipeline import DEFAULT_CONFIG_TEXT, STAGES, load_config, run

# stages each subcommand needs, upstream ones are reused when up to date
TARGETS = {
    "ingest": ("ingest",),
    "indicators": ("ingest", "indicators"),
    "distances": ("ingest", "indicators", "distances"),
    "states": ("ingest", "states"),
    "snapshots": ("ingest", "states", "snapshots"),
    "report": STAGES,
    "run": STAGES,
}


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int, help="override states.cluster.seed")
    p.add_argument("--out", help="override output directory")
    p.add_argument("--resume", action="store_true", help="skip stages whose outputs are up to date")
    p.add_argument("--threads", type=int, help="worker threads within a stage")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="rrstates", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in TARGETS:
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "run" else "run all stages")
    init = sub.add_parser("init-config", help="write the default configuration file")
    init.add_argument("path", type=Path)
    synth = sub.add_parser("synth", help="write a synthetic two-regime price and sector CSV")
    synth.add_argument("directory", type=Path)
    synth.add_argument("--assets", type=int, default=20)
    synth.add_argument("--t-ep", type=int, default=42)
    synth.add_argument("--epochs", type=int, nargs=2, default=(16, 14), metavar=("FIRST", "SECOND"))
    synth.add_argument("--rho", type=float, default=0.7)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def _overrides(args):
    tree = {}
    if args.seed is not None:
        tree.setdefault("states", {}).setdefault("cluster", {})["seed"] = args.seed
    if args.out is not None:
        tree["output"] = {"dir": str(Path(args.out).resolve())}
    if args.threads is not None:
        tree["threads"] = args.threads
    return tree


def _write_synth(args):
    from .market_data import write_price_csv, write_sector_csv
    from .synth import generate, two_regime_specs

    args.directory.mkdir(parents=True, exist_ok=True)
    specs = two_regime_specs(args.assets, args.epochs[0], args.epochs[1], rho=args.rho)
    sp = generate(specs, args.assets, args.t_ep, args.seed)
    write_price_csv(sp.prices(), args.directory / "prices.csv")
    write_sector_csv(sp.sector_map(0), args.directory / "sectors.csv")
    print(f"wrote {args.directory}/prices.csv and sectors.csv; switch at epoch {sp.switch_epochs}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "init-config":
        args.path.write_text(DEFAULT_CONFIG_TEXT, encoding="utf-8")
        return 0
    if args.command == "synth":
        _write_synth(args)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        stages = TARGETS[args.command]
        force = stages if args.command in ("run", "report") else (args.command,)
        manifest = run(cfg, stages, resume=args.resume, force=force)
    except RRStatesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"{manifest['status']} {Path(cfg.out) / 'manifest.json'} digest={manifest['outputs_digest'][:16]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
