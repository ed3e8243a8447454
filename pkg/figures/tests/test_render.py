"""Tests for figure rendering over golden experiment CSVs."""

import json
import math
from pathlib import Path

import pytest
from PIL import Image

from bm_figures import FIGURE_KINDS, FigureSpec, RenderError, render
from bm_figures.cli import discover_specs, main

HASH = "a" * 64


def write_csv(path: Path, schema: str, header, rows):
    lines = [f"# schema: {schema} v1", ",".join(header)]
    lines += [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


@pytest.fixture
def results_dir(tmp_path):
    """A miniature but schema-complete harness output directory."""
    d = tmp_path / "results"
    d.mkdir()
    (d / "manifest.json").write_text(
        json.dumps({"schema_version": 1, "config_sha256": HASH, "seed": 1})
    )
    write_csv(
        d / "validate.csv",
        "validate",
        ("height", "time_s", "short_p_value", "long_p_value", "valid"),
        [(i, 600.0 * i, (i % 97) / 97.0, (i % 89) / 89.0, 1) for i in range(1, 120)],
    )
    write_csv(
        d / "fig3.csv",
        "fig3",
        ("time_s", "hash_fraction", "attack", "detection_probability"),
        [
            (86400.0 * t, q, attack, min(1.0, 0.05 * t * (1 if attack == "long" else 2)))
            for q in (0.01, 0.5)
            for attack in ("short", "long")
            for t in range(20)
        ],
    )
    blocktime_header = (
        "time_s",
        "preference_fraction",
        "actual_rate_hps",
        "difficulty_hashes",
        "expected_block_time_s",
    )
    for name in ("fig4_bch.csv", "fig4_bm.csv"):
        write_csv(
            d / name,
            "expected_time",
            blocktime_header,
            [
                (600.0 * i, 0.1, 0.1, 60.0, 600.0 + 50 * math.sin(i / 9))
                for i in range(200)
            ],
        )
    write_csv(
        d / "fig5.csv",
        "expected_time_kappa_sweep",
        ("kappa",) + blocktime_header,
        [
            (k, 600.0 * i, 0.1, 0.1, 60.0, 600.0 + 100 * k * math.sin(i / 9))
            for k in (0.1, 0.25, 1.0)
            for i in range(150)
        ],
    )
    return d


def spec_for(results, kind, out=None):
    inputs = {
        "pvalues": [results / "validate.csv"],
        "detection": [results / "fig3.csv"],
        "blocktime": [results / "fig4_bch.csv", results / "fig4_bm.csv"],
        "kappa": [results / "fig5.csv"],
    }[kind]
    return FigureSpec(
        kind=kind,
        inputs=inputs,
        output=(out or results / "figures") / f"{kind}.png",
        manifest=results / "manifest.json",
    )


@pytest.mark.parametrize("kind", FIGURE_KINDS)
def test_renders_every_kind_with_hash_embedded(results_dir, kind):
    path = render(spec_for(results_dir, kind))
    assert path.exists() and path.stat().st_size > 0
    with Image.open(path) as img:
        assert img.text.get("ConfigHash") == HASH


def test_rendering_is_idempotent_and_nonmutating(results_dir):
    csv_before = (results_dir / "fig5.csv").read_bytes()
    a = render(spec_for(results_dir, "kappa")).read_bytes()
    b = render(spec_for(results_dir, "kappa")).read_bytes()
    assert a == b
    assert (results_dir / "fig5.csv").read_bytes() == csv_before


def test_missing_column_fails_loudly(results_dir):
    path = results_dir / "fig3.csv"
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    drop = header.index("detection_probability")
    fixed = [lines[0], ",".join(h for h in header if h != "detection_probability")]
    for line in lines[2:]:
        parts = line.split(",")
        fixed.append(",".join(p for i, p in enumerate(parts) if i != drop))
    path.write_text("\n".join(fixed) + "\n")
    with pytest.raises(RenderError, match="detection_probability"):
        render(spec_for(results_dir, "detection"))


def test_empty_csv_is_an_error_not_a_blank_image(results_dir):
    path = results_dir / "validate.csv"
    lines = path.read_text().splitlines()[:2]
    path.write_text("\n".join(lines) + "\n")
    spec = spec_for(results_dir, "pvalues")
    with pytest.raises(RenderError, match="no data rows"):
        render(spec)
    assert not spec.output.exists()


def test_schema_version_mismatch_rejected(results_dir):
    path = results_dir / "fig5.csv"
    body = path.read_text().splitlines()
    body[0] = "# schema: expected_time_kappa_sweep v99"
    path.write_text("\n".join(body) + "\n")
    with pytest.raises(RenderError, match="schema"):
        render(spec_for(results_dir, "kappa"))


def test_missing_manifest_rejected(results_dir):
    (results_dir / "manifest.json").unlink()
    with pytest.raises(RenderError, match="manifest"):
        render(spec_for(results_dir, "kappa"))


def test_unknown_kind_rejected(results_dir):
    with pytest.raises(RenderError, match="unknown figure kind"):
        FigureSpec(
            kind="scatter",
            inputs=[],
            output=results_dir / "x.png",
            manifest=results_dir / "manifest.json",
        )


class TestCli:
    def test_auto_discovery_renders_everything(self, results_dir, tmp_path):
        out = tmp_path / "imgs"
        assert main([str(results_dir), "--out", str(out)]) == 0
        assert sorted(p.name for p in out.glob("*.png")) == sorted(
            f"{k}.png" for k in FIGURE_KINDS
        )

    def test_auto_discovery_skips_absent_inputs(self, results_dir, tmp_path):
        (results_dir / "fig3.csv").unlink()
        out = tmp_path / "imgs"
        assert main([str(results_dir), "--out", str(out)]) == 0
        assert not (out / "detection.png").exists()
        assert (out / "kappa.png").exists()

    def test_explicit_kind_with_missing_input_fails(self, results_dir, tmp_path):
        (results_dir / "fig3.csv").unlink()
        code = main([str(results_dir), "--out", str(tmp_path), "--kinds", "detection"])
        assert code == 1

    def test_empty_results_dir_fails(self, tmp_path):
        empty = tmp_path / "nothing"
        empty.mkdir()
        assert main([str(empty)]) == 1

    def test_discover_specs_targets_results_manifest(self, results_dir, tmp_path):
        specs = discover_specs(results_dir, tmp_path)
        assert {s.kind for s in specs} == set(FIGURE_KINDS)
        assert all(s.manifest == results_dir / "manifest.json" for s in specs)
