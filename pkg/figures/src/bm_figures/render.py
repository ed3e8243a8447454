"""Figure rendering over experiment CSV outputs.

Consumes only the harness's published artifacts: headered CSVs (first line
``# schema: <name> v<version>``) plus the run's ``manifest.json``. Each
rendered image embeds the manifest's config hash in both the caption and
the PNG metadata, so a figure can always be traced back to the exact run
that produced it. Inputs are never modified; rendering the same inputs
twice produces identical files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

__all__ = ["SCHEMA_VERSION", "FIGURE_KINDS", "RenderError", "FigureSpec", "render"]

SCHEMA_VERSION = 1

TARGET_LINE_S = 600.0
DPI = 150

REQUIRED_COLUMNS = {
    "pvalues": {"height", "time_s", "short_p_value", "long_p_value", "valid"},
    "detection": {"time_s", "hash_fraction", "attack", "detection_probability"},
    "blocktime": {
        "time_s",
        "preference_fraction",
        "actual_rate_hps",
        "expected_block_time_s",
    },
    "kappa": {"kappa", "time_s", "preference_fraction", "expected_block_time_s"},
}

FIGURE_KINDS = tuple(REQUIRED_COLUMNS)


class RenderError(Exception):
    """Input data cannot be rendered; the message says why."""


@dataclass
class FigureSpec:
    """What to draw: input CSVs, the figure kind, and the output path."""

    kind: str
    inputs: list[Path]
    output: Path
    manifest: Path
    title: str | None = None
    ylim: tuple[float, float] | None = None
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise RenderError(
                f"unknown figure kind {self.kind!r}; expected one of {FIGURE_KINDS}"
            )
        self.inputs = [Path(p) for p in self.inputs]
        self.output = Path(self.output)
        self.manifest = Path(self.manifest)


def _config_hash(manifest_path: Path) -> str:
    if not manifest_path.exists():
        raise RenderError(f"manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise RenderError(f"manifest {manifest_path} is not valid JSON: {exc}") from exc
    digest = manifest.get("config_sha256")
    if not digest:
        raise RenderError(f"manifest {manifest_path} carries no config_sha256")
    return str(digest)


def load_series_csv(path: Path, kind: str) -> pd.DataFrame:
    """Read one harness CSV, checking its schema header and columns."""
    path = Path(path)
    if not path.exists():
        raise RenderError(f"input not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip()
    if not header.startswith("# schema:"):
        raise RenderError(f"{path}: missing '# schema:' header line")
    declared = header.removeprefix("# schema:").strip()
    if not declared.endswith(f"v{SCHEMA_VERSION}"):
        raise RenderError(
            f"{path}: schema {declared!r} does not match version {SCHEMA_VERSION}"
        )
    frame = pd.read_csv(path, comment="#")
    if frame.empty:
        raise RenderError(f"{path}: no data rows")
    missing = REQUIRED_COLUMNS[kind] - set(frame.columns)
    if missing:
        raise RenderError(f"{path}: missing required columns {sorted(missing)}")
    return frame


def _caption(fig, digest: str) -> None:
    fig.text(
        0.99,
        0.01,
        f"config {digest[:12]}",
        ha="right",
        va="bottom",
        fontsize=6,
        color="0.45",
    )


def _render_pvalues(spec: FigureSpec, fig) -> None:
    frame = load_series_csv(spec.inputs[0], "pvalues")
    ax = fig.subplots()
    grid = [i / 200 for i in range(201)]
    for column, style, label in (
        ("short_p_value", "-", "short window"),
        ("long_p_value", "--", "long window"),
    ):
        values = frame[column].to_numpy()
        ecdf = [(values < x).mean() for x in grid]
        ax.plot(grid, ecdf, style, label=label)
    ax.plot([0, 1], [0, 1], ":", color="0.6", label="uniform")
    ax.set_xlabel("p-value")
    ax.set_ylabel("empirical CDF")
    ax.set_title(spec.title or "Window p-value distribution")
    ax.legend()


def _render_detection(spec: FigureSpec, fig) -> None:
    frame = load_series_csv(spec.inputs[0], "detection")
    ax = fig.subplots()
    for (fraction, attack), group in frame.groupby(["hash_fraction", "attack"]):
        days = group["time_s"].to_numpy() / 86400.0
        ax.plot(
            days,
            group["detection_probability"].to_numpy(),
            label=f"{fraction:.0%} {attack}",
        )
    ax.set_xlabel("days after bootstrap")
    ax.set_ylabel("P(at least one failed window)")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(spec.title or "Attack detection over time")
    ax.legend(fontsize=7)


def _render_blocktime(spec: FigureSpec, fig) -> None:
    if len(spec.inputs) != 2:
        raise RenderError("block-time comparison needs exactly two input CSVs")
    axes = fig.subplots(2, 2, sharex="col", height_ratios=[2, 1])
    for col, (path, name) in enumerate(zip(spec.inputs, ("reactive", "commitment"))):
        frame = load_series_csv(path, "blocktime")
        days = frame["time_s"].to_numpy() / 86400.0
        top, bottom = axes[0][col], axes[1][col]
        top.plot(days, frame["expected_block_time_s"].to_numpy(), lw=0.8)
        top.axhline(TARGET_LINE_S, color="0.6", ls=":", lw=0.8)
        top.set_title(spec.labels.get(name, name))
        top.set_ylabel("expected block time (s)")
        if spec.ylim:
            top.set_ylim(*spec.ylim)
        bottom.plot(days, frame["preference_fraction"].to_numpy(), label="preference")
        bottom.plot(days, frame["actual_rate_hps"].to_numpy(), "--", label="actual")
        bottom.set_xlabel("day")
        bottom.set_ylabel("hash rate")
        bottom.legend(fontsize=6)
    fig.suptitle(spec.title or "Expected block time under the shared schedule")


def _render_kappa(spec: FigureSpec, fig) -> None:
    frame = load_series_csv(spec.inputs[0], "kappa")
    ax = fig.subplots()
    for kappa, group in frame.groupby("kappa"):
        days = group["time_s"].to_numpy() / 86400.0
        ax.plot(
            days,
            group["expected_block_time_s"].to_numpy(),
            lw=0.8,
            label=f"tolerance {kappa}",
        )
    ax.axhline(TARGET_LINE_S, color="0.6", ls=":", lw=0.8)
    ax.set_xlabel("day")
    ax.set_ylabel("expected block time (s)")
    ax.set_title(spec.title or "Cost tolerance sweep")
    ax.legend()


_RENDERERS = {
    "pvalues": _render_pvalues,
    "detection": _render_detection,
    "blocktime": _render_blocktime,
    "kappa": _render_kappa,
}


def render(spec: FigureSpec) -> Path:
    """Draw one figure; returns the written image path."""
    digest = _config_hash(spec.manifest)
    size = (9.0, 5.5) if spec.kind == "blocktime" else (6.0, 4.0)
    fig = plt.figure(figsize=size)
    try:
        _RENDERERS[spec.kind](spec, fig)
        _caption(fig, digest)
        spec.output.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(
            spec.output,
            dpi=DPI,
            format="png",
            metadata={"Software": "bm-figures", "ConfigHash": digest},
        )
    finally:
        plt.close(fig)
    return spec.output
