"""Command-line experiment runner.

Each subcommand loads a YAML config (every field has a default, so the
config may be omitted entirely), runs its experiment, and writes one CSV
per output series plus a JSON manifest recording the resolved config,
its hash, the seed, the git revision, and wall time. Reruns with the
same config and seed produce byte-identical CSVs.

Exit codes: 0 success, 1 config error, 2 data error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .daa import DAA_KEYS
from .errors import ConfigError, DataError, InsufficientDataError
from .protocol import NetworkParams
from .sim import (
    DEFAULT_PREFERENCE_SCHEDULE,
    BehaviorKind,
    BehaviorModel,
    DetectionConfig,
    detection_curve,
    run_detection_batch,
    run_expected_time_sim,
)
from .stats import exp_quantile, ks_pvalue, ks_statistic
from .validity import params_for

SCHEMA_VERSION = 1

EXPERIMENT_KINDS = (
    "table2",
    "fig3",
    "fig4",
    "fig5",
    "typeI",
    "validate",
    "abandon-check",
)

YEAR_S = 365.25 * 86400.0

# Desk-scale trial count; full-scale runs go through --full or --trials.
DESK_TRIALS = 200
FULL_TRIALS = 1000

DEFAULTS = {
    "common": {
        "seed": 20190917,
        "target_block_time_s": 600.0,
        "out_dir": "results",
        "workers": 1,
    },
    "table2": {
        "trials": DESK_TRIALS,
        "fractions": [0.01, 0.10, 0.25, 0.50],
        "walk_sd": 0.01,
        "drop_factor": 0.2,
    },
    "fig3": {
        "trials": DESK_TRIALS,
        "fractions": [0.01, 0.10, 0.25, 0.50],
        "attacks": ["short", "long"],
        "duration_s": YEAR_S,
        "grid_step_s": 86400.0,
        "walk_sd": 0.01,
        "drop_factor": 0.2,
    },
    "typeI": {
        "trials": DESK_TRIALS,
        "fractions": [0.01, 0.10, 0.25, 0.50],
        "duration_s": YEAR_S,
        "walk_sd": 0.01,
    },
    "fig4": {
        "duration_s": 14 * 86400.0,
        "kappa": 0.25,
        "mu": 2.0,
        "n_miners": 10,
        "commitment_window": 1000,
        "preference_schedule": [list(x) for x in DEFAULT_PREFERENCE_SCHEDULE],
    },
    "fig5": {
        "duration_s": 14 * 86400.0,
        "kappas": [0.1, 0.25, 1.0],
        "mu": 2.0,
        "n_miners": 10,
        "commitment_window": 1000,
        "preference_schedule": [list(x) for x in DEFAULT_PREFERENCE_SCHEDULE],
    },
    "validate": {
        "blocks_csv": None,
        "fraction": None,
    },
    "abandon-check": {
        "fractions": [0.01, 0.10, 0.25, 0.50],
        "abandon_p": 0.99999,
    },
}

VALIDATE_COLUMNS = (
    "height",
    "timestamp_s",
    "inter_arrival_s",
    "reported_rate_hps",
    "avg_difficulty_hashes",
)


def _load_config(kind: str, path: str | None) -> dict:
    cfg = dict(DEFAULTS["common"])
    cfg.update(DEFAULTS[kind])
    cfg["experiment"] = kind
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        declared = loaded.get("experiment", kind)
        if declared != kind:
            raise ConfigError(
                f"config {path} declares experiment {declared!r}, expected {kind!r}"
            )
        unknown = set(loaded) - set(cfg) - {"experiment"}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg.update(loaded)
    return cfg


def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        cfg["trials"] = args.trials
    if getattr(args, "full", False):
        cfg["trials"] = FULL_TRIALS
    if args.out is not None:
        cfg["out_dir"] = args.out
    if getattr(args, "workers", None) is not None:
        cfg["workers"] = args.workers
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def _git_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            capture_output=True,
            text=True,
            timeout=10,
            check=False,
        )
        rev = out.stdout.strip()
        return rev if out.returncode == 0 and rev else "unknown"
    except OSError:
        return "unknown"


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, schema: str, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {schema} v{SCHEMA_VERSION}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_manifest(out_dir: Path, cfg: dict, outputs, wall_s: float) -> Path:
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "config": cfg,
        "config_sha256": _config_hash(cfg),
        "seed": cfg.get("seed"),
        "git_revision": _git_revision(),
        "wall_time_s": round(wall_s, 3),
        "outputs": [str(p.name) for p in outputs],
    }
    path = out_dir / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _behavior(kind: str, cfg: dict) -> BehaviorModel:
    mapping = {
        "honest": BehaviorKind.HONEST_RANDOM_WALK,
        "short": BehaviorKind.SHORT_RANGE_DISHONEST,
        "long": BehaviorKind.LONG_RANGE_DISHONEST,
    }
    if kind not in mapping:
        raise ConfigError(f"unknown attack kind {kind!r}")
    return BehaviorModel(
        kind=mapping[kind],
        walk_sd=float(cfg.get("walk_sd", 0.01)),
        drop_factor=float(cfg.get("drop_factor", 0.2)),
    )


def _detection_config(cfg, fraction, behavior, duration_s) -> DetectionConfig:
    return DetectionConfig(
        attacker_fraction=float(fraction),
        behavior=behavior,
        duration_s=float(duration_s),
        trials=int(cfg["trials"]),
        seed=int(cfg["seed"]),
        target_time_s=float(cfg["target_block_time_s"]),
    )


def cmd_table2(cfg: dict) -> list[Path]:
    """Detection rates at the end of the bootstrapping window."""
    out_dir = Path(cfg["out_dir"])
    workers = int(cfg["workers"])
    rows = []
    for fraction in cfg["fractions"]:
        rates = {}
        for attack in ("short", "long"):
            dconf = _detection_config(cfg, fraction, _behavior(attack, cfg), 0.0)
            results = run_detection_batch(dconf, workers)
            rates[attack] = float(np.mean([r.detected for r in results]))
        rows.append((fraction, rates["short"], rates["long"]))
    path = out_dir / "table2.csv"
    write_csv(
        path,
        "table2",
        ("hash_fraction", "short_detection_rate", "long_detection_rate"),
        rows,
    )
    return [path]


def cmd_fig3(cfg: dict) -> list[Path]:
    """Year-long sliding-window detection curves per fraction and attack."""
    out_dir = Path(cfg["out_dir"])
    workers = int(cfg["workers"])
    grid = np.arange(0.0, float(cfg["duration_s"]) + 1.0, float(cfg["grid_step_s"]))
    rows = []
    for fraction in cfg["fractions"]:
        for attack in cfg["attacks"]:
            dconf = _detection_config(
                cfg, fraction, _behavior(attack, cfg), cfg["duration_s"]
            )
            results = run_detection_batch(dconf, workers)
            curve = detection_curve(results, grid)
            for t, p in zip(grid, curve):
                rows.append((t, fraction, attack, p))
    path = out_dir / "fig3.csv"
    write_csv(
        path,
        "fig3",
        ("time_s", "hash_fraction", "attack", "detection_probability"),
        rows,
    )
    return [path]


def cmd_typeI(cfg: dict) -> list[Path]:
    """Honest miners over a year: count validity failures (expect none)."""
    out_dir = Path(cfg["out_dir"])
    workers = int(cfg["workers"])
    rows = []
    for fraction in cfg["fractions"]:
        dconf = _detection_config(
            cfg, fraction, _behavior("honest", cfg), cfg["duration_s"]
        )
        results = run_detection_batch(dconf, workers)
        windows = int(sum(r.n_windows for r in results))
        failures = int(sum(r.n_failures for r in results))
        rows.append((fraction, dconf.trials, windows, failures))
    path = out_dir / "typeI.csv"
    write_csv(
        path,
        "typeI",
        ("hash_fraction", "trials", "windows_tested", "failures"),
        rows,
    )
    return [path]


def _expected_time_rows(series):
    for i in range(series.time_s.size):
        yield (
            series.time_s[i],
            series.preference_fraction[i],
            series.actual_rate_hps[i],
            series.difficulty_hashes[i],
            series.expected_block_time_s[i],
        )


_EXPECTED_TIME_HEADER = (
    "time_s",
    "preference_fraction",
    "actual_rate_hps",
    "difficulty_hashes",
    "expected_block_time_s",
)


def cmd_fig4(cfg: dict) -> list[Path]:
    """Baseline-vs-commitment expected block time under the shared schedule."""
    out_dir = Path(cfg["out_dir"])
    net = NetworkParams(target_time_s=float(cfg["target_block_time_s"]), mu=float(cfg["mu"]))
    schedule = tuple((float(d), float(f)) for d, f in cfg["preference_schedule"])
    behavior = BehaviorModel(
        kind=BehaviorKind.PREFERENCE_FOLLOWER,
        preference_schedule=schedule,
        kappa=float(cfg["kappa"]),
    )
    paths = []
    for key, name in (("bch-cw144", "fig4_bch.csv"), ("bm", "fig4_bm.csv")):
        series = run_expected_time_sim(
            key,
            behavior,
            net,
            float(cfg["duration_s"]),
            n_miners=int(cfg["n_miners"]),
            commitment_window=int(cfg["commitment_window"]),
        )
        path = out_dir / name
        write_csv(path, f"expected_time_{key}", _EXPECTED_TIME_HEADER, _expected_time_rows(series))
        paths.append(path)
    return paths


def cmd_fig5(cfg: dict) -> list[Path]:
    """Commitment-rule expected block time across cost tolerances."""
    out_dir = Path(cfg["out_dir"])
    net = NetworkParams(target_time_s=float(cfg["target_block_time_s"]), mu=float(cfg["mu"]))
    schedule = tuple((float(d), float(f)) for d, f in cfg["preference_schedule"])
    rows = []
    for kappa in cfg["kappas"]:
        behavior = BehaviorModel(
            kind=BehaviorKind.PREFERENCE_FOLLOWER,
            preference_schedule=schedule,
            kappa=float(kappa),
        )
        series = run_expected_time_sim(
            "bm",
            behavior,
            net,
            float(cfg["duration_s"]),
            n_miners=int(cfg["n_miners"]),
            commitment_window=int(cfg["commitment_window"]),
        )
        for row in _expected_time_rows(series):
            rows.append((kappa,) + row)
    path = out_dir / "fig5.csv"
    write_csv(path, "expected_time_kappa_sweep", ("kappa",) + _EXPECTED_TIME_HEADER, rows)
    return [path]


def trial_to_blocks_csv(result, path, target_time_s: float = 600.0) -> Path:
    """Write a trial's block series in the schema `validate` consumes.

    Requires a trial run with keep_series; the constant normalized network
    difficulty of the detection engine is target_time_s * 1.0.
    """
    if result.x_values is None:
        raise ValueError("trial was run without keep_series=True")
    difficulty = target_time_s * 1.0
    rows = []
    for i in range(result.n_blocks):
        gap = float(result.inter_arrival_s[i])
        rate = float(result.x_values[i]) * difficulty / gap
        rows.append((i + 1, float(result.block_times_s[i]), gap, rate, difficulty))
    path = Path(path)
    write_csv(path, "blocks", VALIDATE_COLUMNS, rows)
    return path


def read_blocks_csv(path) -> list[dict]:
    """Parse a block history CSV, reporting the offending row on failure."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"blocks CSV not found: {path}")
    out = []
    with open(p, newline="") as fh:
        plain = (line for line in fh if not line.startswith("#"))
        reader = csv.DictReader(plain)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty CSV")
        missing = set(VALIDATE_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for i, row in enumerate(reader, start=2):
            try:
                out.append({k: float(row[k]) for k in VALIDATE_COLUMNS})
            except (TypeError, ValueError) as exc:
                raise DataError(f"{path}: row {i} is malformed: {exc}") from exc
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def cmd_validate(cfg: dict) -> list[Path]:
    """Apply the composite validity test to an external block history."""
    if not cfg.get("blocks_csv"):
        raise ConfigError("validate requires blocks_csv (or --blocks)")
    if cfg.get("fraction") is None:
        raise ConfigError("validate requires the miner's committed fraction")
    blocks = read_blocks_csv(cfg["blocks_csv"])
    params = params_for(float(cfg["fraction"]))
    if len(blocks) < params.n_l:
        raise DataError(
            f"history has {len(blocks)} blocks; the long window needs {params.n_l}"
        )
    x = np.array(
        [
            b["inter_arrival_s"] * b["reported_rate_hps"] / b["avg_difficulty_hashes"]
            for b in blocks
        ]
    )
    rows = []
    all_pass = True
    for i in range(params.n_l - 1, len(blocks)):
        short = ks_statistic(x[i - params.n_s + 1 : i + 1])
        long_ = ks_statistic(x[i - params.n_l + 1 : i + 1])
        p_s = ks_pvalue(short.delta, short.n)
        p_l = ks_pvalue(long_.delta, long_.n)
        ok = int(p_s > params.tau_s and p_l > params.tau_l)
        all_pass = all_pass and bool(ok)
        rows.append(
            (int(blocks[i]["height"]), blocks[i]["timestamp_s"], p_s, p_l, ok)
        )
    out_dir = Path(cfg["out_dir"])
    path = out_dir / "validate.csv"
    write_csv(
        path,
        "validate",
        ("height", "time_s", "short_p_value", "long_p_value", "valid"),
        rows,
    )
    print(f"verdict: {'PASS' if all_pass else 'FAIL'} over {len(rows)} windows")
    return [path]


def cmd_abandon_check(cfg: dict) -> list[Path]:
    """Abandonment deadlines per committed fraction at the configured quantile."""
    T = float(cfg["target_block_time_s"])
    p = float(cfg["abandon_p"])
    rows = []
    for fraction in cfg["fractions"]:
        mean = T / float(fraction)
        rows.append((fraction, mean, exp_quantile(p, mean)))
    out_dir = Path(cfg["out_dir"])
    path = out_dir / "abandon_check.csv"
    write_csv(
        path,
        "abandon_check",
        ("hash_fraction", "expected_interval_s", "threshold_s"),
        rows,
    )
    return [path]


_COMMANDS = {
    "table2": cmd_table2,
    "fig3": cmd_fig3,
    "fig4": cmd_fig4,
    "fig5": cmd_fig5,
    "typeI": cmd_typeI,
    "validate": cmd_validate,
    "abandon-check": cmd_abandon_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bondedsim",
        description="Experiment harness for bonded hash-rate commitment mining",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in EXPERIMENT_KINDS:
        sp = sub.add_parser(kind, help=(_COMMANDS[kind].__doc__ or "").strip())
        sp.add_argument("--config", default=None, help="YAML config path")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="output directory")
        if kind in ("table2", "fig3", "typeI"):
            sp.add_argument("--trials", type=int, default=None)
            sp.add_argument(
                "--full",
                action="store_true",
                help=f"run the full {FULL_TRIALS}-trial experiment",
            )
            sp.add_argument("--workers", type=int, default=None)
        if kind == "validate":
            sp.add_argument("--blocks", default=None, help="block history CSV")
            sp.add_argument("--fraction", type=float, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.monotonic()
    try:
        cfg = _load_config(args.command, args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "validate":
            if args.blocks is not None:
                cfg["blocks_csv"] = args.blocks
            if args.fraction is not None:
                cfg["fraction"] = args.fraction
        outputs = _COMMANDS[args.command](cfg)
        manifest = write_manifest(Path(cfg["out_dir"]), cfg, outputs, time.monotonic() - t0)
        for p in outputs + [manifest]:
            print(f"wrote {p}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, InsufficientDataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # anything else is an internal bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
