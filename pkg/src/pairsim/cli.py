"""Command line entry point: ``pairsim <scenario> [--config PATH] [--seed N] [--gates N] [--out DIR]``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .config import SCENARIOS, ConfigError, _int, parse_config, print_config
from .rng import WORKERS_ENV


# scenarios whose per-point gate budget lives in their own block
_GATE_BLOCKS = {
    "power_sweep": "power_sweep",
    "accidental_sweep": "power_sweep",
    "g2_vs_bandwidth": "bandwidth_sweep",
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="pairsim",
        description="Fiber photon-pair source simulator: power sweeps, g2, and two-source HOM scans.",
        epilog=f"Worker threads default to the CPU count; override with ${WORKERS_ENV} or --workers.",
    )
    p.add_argument("scenario", choices=SCENARIOS + ("print-config",))
    p.add_argument("--config", type=Path, help="INI configuration file")
    p.add_argument("--seed", type=int, help="64-bit master seed")
    p.add_argument("--gates", type=_int, help="gates per measurement point (HOM scans size points by counts_per_point instead)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, help="worker threads")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    text = args.config.read_text(encoding="utf-8") if args.config else ""
    try:
        cfg = parse_config(text)
        overrides = {}
        if args.scenario != "print-config":
            overrides["scenario"] = args.scenario
        if args.seed is not None:
            overrides["master_seed"] = args.seed
        if args.gates is not None:
            overrides["gates"] = args.gates
            block = _GATE_BLOCKS.get(args.scenario)
            if block:
                overrides[block] = dataclasses.replace(getattr(cfg, block), gates=args.gates)
        if args.out is not None:
            overrides["output_dir"] = str(args.out)
        # flags re-enter through the parser so they get the same validation
        cfg = parse_config(print_config(cfg.replace(**overrides)))
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2

    if args.scenario == "print-config":
        sys.stdout.write(print_config(cfg))
        return 0

    from .scenarios import run_scenario

    try:
        manifest, _ = run_scenario(cfg, workers=args.workers)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out = Path(cfg.output_dir)
    for name in manifest.outputs:
        print(out / name)
    print(out / "manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
