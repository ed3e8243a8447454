"""Batch figure generation over a harness results directory."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .render import FIGURE_KINDS, FigureSpec, RenderError, render

# which files each figure kind consumes from a results directory
_INPUT_FILES = {
    "pvalues": ("validate.csv",),
    "detection": ("fig3.csv",),
    "blocktime": ("fig4_bch.csv", "fig4_bm.csv"),
    "kappa": ("fig5.csv",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bondedsim-figures",
        description="Render figures from experiment CSV/manifest outputs",
    )
    parser.add_argument("results", help="directory holding CSVs and manifest.json")
    parser.add_argument("--out", default=None, help="image output directory")
    parser.add_argument(
        "--kinds",
        nargs="+",
        choices=FIGURE_KINDS,
        default=None,
        help="restrict to these figure kinds (default: whatever inputs exist)",
    )
    return parser


def discover_specs(results: Path, out: Path, kinds=None) -> list[FigureSpec]:
    manifest = results / "manifest.json"
    specs = []
    wanted = kinds or FIGURE_KINDS
    for kind in wanted:
        inputs = [results / name for name in _INPUT_FILES[kind]]
        if kinds is None and not all(p.exists() for p in inputs):
            continue  # auto mode renders what is present
        specs.append(
            FigureSpec(
                kind=kind,
                inputs=inputs,
                output=out / f"{kind}.png",
                manifest=manifest,
            )
        )
    return specs


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    results = Path(args.results)
    out = Path(args.out) if args.out else results / "figures"
    try:
        specs = discover_specs(results, out, args.kinds)
        if not specs:
            raise RenderError(f"no renderable inputs found under {results}")
        for spec in specs:
            path = render(spec)
            print(f"wrote {path}")
        return 0
    except RenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
