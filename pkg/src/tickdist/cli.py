"""Command-line driver for tick-distribution experiments.

Subcommands:

* ``ingest``  parse tick files and report per-stock counts and histograms
* ``synth``   write synthetic tick files for later ingestion
* ``run``     execute the full (stock, model) experiment batch
* ``report``  rebuild summary tables from an existing run directory

The output root comes from ``--out``, else the ``TICKDIST_OUT`` environment
variable, else ``./out``.  Run outputs land in ``out/run-<confighash>/``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from tickdist import runner, synth
from tickdist.data import TickFileError


def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    env = os.environ.get(runner.OUT_ENV_VAR)
    return Path(env) if env else Path(runner.DEFAULT_OUT)


def _format_price(ticks: int) -> str:
    return f"{ticks // 100}.{ticks % 100:02d}"


def cmd_ingest(args) -> int:
    try:
        manifest = runner.ingest_manifest(args.paths, window=args.window, ratio=args.ratio)
    except runner.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    out_dir = _out_root(args) / "ingest"
    runner.write_ingest_outputs(manifest, out_dir)
    for entry in manifest["stocks"]:
        if "excluded" in entry:
            print(f"{entry['file']}: excluded ({entry['excluded']})")
        else:
            share = entry["histogram"][2] / max(sum(entry["histogram"]), 1)
            print(
                f"{entry['file']}: stock {entry['stock']}, {entry['records']} records, "
                f"{entry['skipped_rows']} skipped, class-2 share {share:.3f}, "
                f"{entry['train_samples']}/{entry['test_samples']} train/test samples"
            )
    print(f"manifest written to {out_dir}")
    return 0


def cmd_synth(args) -> int:
    out_dir = _out_root(args) / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = runner.ExperimentConfig.from_raw(
        {
            "stocks": args.stocks,
            "ticks": args.ticks,
            "generator": args.generator,
            "noise": args.noise,
            "seed": args.seed,
        }
    )
    spec = runner.generator_spec(cfg)
    for i in range(cfg.stocks):
        sid = f"synth{i:02d}"
        series = synth.generate_synthetic_ticks(spec, seed=[cfg.seed, i], stock_id=sid)
        path = out_dir / f"{sid}.csv"
        lines = ["stock,price"] + [f"{sid},{_format_price(int(t))}" for t in series.prices_ticks]
        path.write_text("\n".join(lines) + "\n")
        print(f"wrote {path} ({len(series)} ticks)")
    return 0


def cmd_run(args) -> int:
    raw = {}
    try:
        if args.config:
            raw.update(runner.parse_config_file(args.config))
        for item in args.set or []:
            key, sep, value = item.partition("=")
            if not sep:
                raise runner.ConfigError(f"--set expects key=value, got {item!r}")
            raw[key.strip()] = value.strip()
        if args.seed is not None:
            raw["seed"] = str(args.seed)
        cfg = runner.ExperimentConfig.from_raw(raw)
        out_root = _out_root(args)
        code = runner.run_experiment(cfg, out_root, jobs=args.jobs)
    except (runner.ConfigError, TickFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    run_dir = out_root / f"run-{cfg.config_hash}"
    manifest = json.loads((run_dir / "manifest.json").read_text())
    for jid, info in sorted(manifest["jobs"].items()):
        suffix = "" if info["status"] == "ok" else f" ({info['reason']})"
        print(f"{jid}: {info['status']}{suffix}")
    print(f"run directory: {run_dir}")
    if code != 0:
        print("one or more jobs failed", file=sys.stderr)
    return code


def cmd_report(args) -> int:
    try:
        runner.rebuild_report(args.run_dir)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    table1 = Path(args.run_dir) / "tables" / "table1.csv"
    sys.stdout.write(table1.read_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tickdist",
        description="Train and evaluate price-change distribution models on tick data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse tick files and report histograms")
    p_ingest.add_argument("paths", nargs="+", help="tick CSV files")
    p_ingest.add_argument("--window", type=int, default=64)
    p_ingest.add_argument("--ratio", type=float, default=0.7)
    p_ingest.add_argument("--out", help="output root directory")
    p_ingest.set_defaults(func=cmd_ingest)

    p_synth = sub.add_parser("synth", help="write synthetic tick files")
    p_synth.add_argument("--stocks", type=int, default=2)
    p_synth.add_argument("--ticks", type=int, default=4000)
    p_synth.add_argument("--generator", choices=("markov", "rule", "garch"), default="rule")
    p_synth.add_argument("--noise", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=42)
    p_synth.add_argument("--out", help="output root directory")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="run the experiment batch")
    p_run.add_argument("--config", help="key=value configuration file")
    p_run.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p_run.add_argument("--seed", type=int, help="override the seed")
    p_run.add_argument("--jobs", type=int, default=1, help="parallel job count")
    p_run.add_argument("--out", help="output root directory")
    p_run.set_defaults(func=cmd_run)

    p_report = sub.add_parser("report", help="rebuild tables from a run directory")
    p_report.add_argument("run_dir", help="an existing run-<hash> directory")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
