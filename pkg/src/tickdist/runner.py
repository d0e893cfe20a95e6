"""Batch experiment runner: (stock, model) jobs with resume and aggregation.

A run is fully determined by its configuration dictionary (plain key=value
strings).  The output directory is content-addressed by a hash of that
dictionary, every job writes exactly one metrics JSON (atomically), and a
re-run skips jobs whose output already exists.  Job failures - a GARCH fit
that does not converge, a crashed training loop - are recorded as results
and never abort the batch.  Metric files contain no paths or timestamps,
so identical configurations produce byte-identical output.
"""

from __future__ import annotations

import glob
import hashlib
import json
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from tickdist import checkpoint, evaluate, garch, models, synth
from tickdist.data import (
    N_CLASSES,
    StockDataset,
    TickFileError,
    TickSeries,
    coarsen_labels,
    compute_price_changes,
    label_changes,
    make_stock_dataset,
    parse_tick_file,
)

OUT_ENV_VAR = "TICKDIST_OUT"
DEFAULT_OUT = "out"

DEEP_TOKENS = ("TCN", "TCN_attention", "LSTM")
GARCH_TOKENS = tuple(s.label for s in garch.all_specs())
ALL_TOKENS = DEEP_TOKENS + GARCH_TOKENS

CONFIG_DEFAULTS = {
    "data": "",
    "stocks": "2",
    "ticks": "4000",
    "generator": "rule",
    "noise": "0.1",
    "models": "TCN,SGARCH-norm",
    "window": "64",
    "blocks": "4",
    "kernel": "3",
    "channels": "64",
    "dropout": "0.1",
    "hidden": "64",
    "layers": "1",
    "epochs": "10",
    "batch": "256",
    "lr": "0.001",
    "ratio": "0.7",
    "seed": "42",
    "min_obs": "1000",
    "predictions": "1",
}

THREE_NAMES = ("A", "B", "C")


class ConfigError(ValueError):
    """Raised for malformed configuration files or values."""


def parse_config_file(path: str | Path) -> dict:
    """key=value lines; blank lines and #-comments ignored."""
    raw = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        raw[key.strip()] = value.strip()
    return raw


def canonical_model_tokens(spec_text: str) -> tuple:
    """Normalize a comma-separated model list; 'all' means every model."""
    tokens = []
    for part in spec_text.split(","):
        part = part.strip()
        if not part:
            continue
        if part.lower() == "all":
            tokens.extend(t for t in ALL_TOKENS if t not in tokens)
            continue
        try:
            kind = models.ModelKind.parse(part)
            token = DEEP_TOKENS[(models.ModelKind.TCN, models.ModelKind.TCN_ATTENTION, models.ModelKind.LSTM).index(kind)]
        except ValueError:
            try:
                token = garch.GarchSpec.parse(part).label
            except ValueError:
                raise ConfigError(f"unknown model {part!r}") from None
        if token not in tokens:
            tokens.append(token)
    if not tokens:
        raise ConfigError("configuration requests no models")
    return tuple(tokens)


@dataclass(frozen=True)
class ExperimentConfig:
    raw: tuple  # sorted (key, value) pairs, the hashed identity of the run
    data: str
    stocks: int
    ticks: int
    generator: str
    noise: float
    models: tuple
    window: int
    blocks: int
    kernel: int
    channels: int
    dropout: float
    hidden: int
    layers: int
    epochs: int
    batch: int
    lr: float
    ratio: float
    seed: int
    min_obs: int
    predictions: bool

    @classmethod
    def from_raw(cls, overrides: dict) -> "ExperimentConfig":
        unknown = set(overrides) - set(CONFIG_DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        raw = {**CONFIG_DEFAULTS, **{k: str(v) for k, v in overrides.items()}}
        try:
            return cls(
                raw=tuple(sorted(raw.items())),
                data=raw["data"],
                stocks=int(raw["stocks"]),
                ticks=int(raw["ticks"]),
                generator=raw["generator"],
                noise=float(raw["noise"]),
                models=canonical_model_tokens(raw["models"]),
                window=int(raw["window"]),
                blocks=int(raw["blocks"]),
                kernel=int(raw["kernel"]),
                channels=int(raw["channels"]),
                dropout=float(raw["dropout"]),
                hidden=int(raw["hidden"]),
                layers=int(raw["layers"]),
                epochs=int(raw["epochs"]),
                batch=int(raw["batch"]),
                lr=float(raw["lr"]),
                ratio=float(raw["ratio"]),
                seed=int(raw["seed"]),
                min_obs=int(raw["min_obs"]),
                predictions=raw["predictions"] not in ("0", "false", "no", ""),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad config value: {exc}") from None

    @property
    def config_hash(self) -> str:
        blob = json.dumps(dict(self.raw), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def model_config(self, token: str) -> models.ModelConfig:
        return models.ModelConfig(
            kind=models.ModelKind.parse(token),
            blocks=self.blocks,
            kernel_size=self.kernel,
            channels=self.channels,
            dropout=self.dropout,
            window=self.window,
            hidden=self.hidden,
            layers=self.layers,
        )


def generator_spec(cfg: ExperimentConfig):
    if cfg.generator == "markov":
        return synth.MarkovSpec(transition=synth.DEFAULT_MARKOV_TRANSITION, n=cfg.ticks - 1)
    if cfg.generator == "rule":
        return synth.RuleSpec(n=cfg.ticks - 1, noise_prob=cfg.noise)
    if cfg.generator == "garch":
        return synth.GarchSeriesSpec(n=cfg.ticks - 1)
    raise ConfigError(f"unknown generator {cfg.generator!r}")


def load_stock_series(cfg: ExperimentConfig) -> list:
    """Tick series for the run: parsed from the data glob, else synthesized."""
    if cfg.data:
        paths = sorted(glob.glob(cfg.data))
        if not paths:
            raise ConfigError(f"data glob {cfg.data!r} matches no files")
        series = []
        for p in paths:
            with open(p) as fh:
                series.append(parse_tick_file(fh, name=os.path.basename(p)))
        return series
    spec = generator_spec(cfg)
    return [
        synth.generate_synthetic_ticks(spec, seed=[cfg.seed, i], stock_id=f"synth{i:02d}")
        for i in range(cfg.stocks)
    ]


def _job_id(stock_id: str, token: str) -> str:
    return f"{stock_id}__{token}"


def _job_seed(base_seed: int, stock_index: int, model_index: int) -> int:
    return int(np.random.SeedSequence([base_seed, stock_index, model_index]).generate_state(1)[0])


def _metrics_block(cm: evaluate.ConfusionMatrix) -> dict:
    rep = evaluate.metrics(cm)
    return {
        "confusion": cm.counts.tolist(),
        "recall": list(rep.recall),
        "precision": list(rep.precision),
        "accuracy": rep.accuracy,
    }


def _write_probs_csv(path: Path, probs: np.ndarray, header: tuple) -> None:
    lines = ["index," + ",".join(header)]
    for i, row in enumerate(probs):
        lines.append(f"{i}," + ",".join(f"{v:.10g}" for v in row))
    path.write_text("\n".join(lines) + "\n")


def execute_job(
    cfg: ExperimentConfig,
    prices_ticks: np.ndarray,
    stock_id: str,
    token: str,
    seed: int,
    checkpoint_path: Optional[str] = None,
    predictions_path: Optional[str] = None,
) -> dict:
    """One (stock, model) experiment; returns the result record.

    Any exception is caught and folded into a failed result so one job can
    never take down the batch.
    """
    base = {"stock": stock_id, "model": token, "job": _job_id(stock_id, token), "seed": seed}
    try:
        series = TickSeries(stock_id, prices_ticks)
        dataset = make_stock_dataset(series, window=cfg.window, ratio=cfg.ratio)
        if token in DEEP_TOKENS:
            return {**base, **_run_deep_job(cfg, dataset, token, seed, checkpoint_path, predictions_path)}
        return {**base, **_run_garch_job(cfg, dataset, token, seed, predictions_path)}
    except Exception as exc:  # noqa: BLE001 - crash isolation is the contract
        return {
            **base,
            "status": "failed",
            "reason": f"{type(exc).__name__}: {exc}",
            "trace": traceback.format_exc().splitlines()[-3:],
        }


def _run_deep_job(
    cfg: ExperimentConfig,
    dataset: StockDataset,
    token: str,
    seed: int,
    checkpoint_path: Optional[str],
    predictions_path: Optional[str],
) -> dict:
    model_config = cfg.model_config(token)
    train_config = models.TrainConfig(
        epochs=cfg.epochs, batch_size=cfg.batch, learning_rate=cfg.lr, seed=seed
    )
    model = models.build(model_config, seed=seed)
    models.train(model, dataset, train_config)
    probs = models.predict_proba(model, dataset.test_samples)
    true5 = dataset.test_samples.targets
    pred5 = evaluate.classify(probs)
    cm5 = evaluate.confusion(true5, pred5, N_CLASSES)
    cm3 = evaluate.confusion(coarsen_labels(true5), evaluate.coarsen_predictions(pred5), 3)
    if checkpoint_path:
        models.save_model(model, checkpoint_path, train_config)
        checkpoint.write_loss_history(
            Path(checkpoint_path).with_suffix(".loss.csv"), model.loss_history
        )
    if predictions_path:
        _write_probs_csv(Path(predictions_path), probs, ("p0", "p1", "p2", "p3", "p4"))
    return {
        "status": "ok",
        "five_class": _metrics_block(cm5),
        "three_class": _metrics_block(cm3),
        "final_loss": model.loss_history[-1][2] if model.loss_history else None,
    }


def _run_garch_job(
    cfg: ExperimentConfig,
    dataset: StockDataset,
    token: str,
    seed: int,
    predictions_path: Optional[str],
) -> dict:
    spec = garch.GarchSpec.parse(token)
    train_returns = dataset.returns[: dataset.train_return_count]
    fit = garch.fit_mle(spec, train_returns, seed=seed, min_obs=cfg.min_obs)
    fit_info = {
        "spec": spec.label,
        "status": fit.status.value,
        "loglik": fit.loglik if np.isfinite(fit.loglik) else None,
        "n_obs": fit.n_obs,
    }
    if not fit.ok:
        return {"status": "failed", "reason": f"fit failed: {fit.reason}", "fit": fit_info}
    p = fit.params
    fit_info["params"] = {
        "mu": p.mu, "omega": p.omega, "alpha": p.alpha, "beta": p.beta,
        "gamma": p.gamma, "nu": p.nu, "xi": p.xi,
    }
    probs = garch.forecast_test_probs(fit, dataset)
    pred3 = evaluate.classify(probs)
    cm3 = evaluate.confusion(coarsen_labels(dataset.test_samples.targets), pred3, 3)
    if predictions_path:
        _write_probs_csv(Path(predictions_path), probs, ("pA", "pB", "pC"))
    return {"status": "ok", "three_class": _metrics_block(cm3), "fit": fit_info}


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _pool_job(args: tuple) -> dict:
    return execute_job(*args)


def run_experiment(cfg: ExperimentConfig, out_root: str | Path, jobs: int = 1) -> int:
    """Execute every (stock, model) job, aggregate, and write the bundle.

    Returns a process exit code: nonzero iff any requested job failed.
    """
    run_dir = Path(out_root) / f"run-{cfg.config_hash}"
    metrics_dir = run_dir / "metrics"
    tables_dir = run_dir / "tables"
    ckpt_dir = run_dir / "checkpoints"
    pred_dir = run_dir / "predictions"
    for d in (metrics_dir, tables_dir, ckpt_dir, pred_dir):
        d.mkdir(parents=True, exist_ok=True)

    series_list = load_stock_series(cfg)
    stock_ids = [s.stock_id for s in series_list]
    if len(set(stock_ids)) != len(stock_ids):
        raise ConfigError(f"duplicate stock ids: {stock_ids}")

    pending = []
    for si, series in enumerate(series_list):
        for mi, token in enumerate(cfg.models):
            jid = _job_id(series.stock_id, token)
            if (metrics_dir / f"{jid}.json").exists():
                continue
            ckpt = str(ckpt_dir / f"{jid}.ckpt") if token in DEEP_TOKENS else None
            preds = str(pred_dir / f"{jid}.csv") if cfg.predictions else None
            pending.append(
                (cfg, series.prices_ticks, series.stock_id, token, _job_seed(cfg.seed, si, mi), ckpt, preds)
            )

    if jobs > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_pool_job, pending))
    else:
        results = [execute_job(*args) for args in pending]
    for result in results:
        _atomic_write(metrics_dir / f"{result['job']}.json", _dump_json(result))

    all_results = {}
    for sid in stock_ids:
        for token in cfg.models:
            jid = _job_id(sid, token)
            all_results[jid] = json.loads((metrics_dir / f"{jid}.json").read_text())

    summary = build_summary(cfg.models, stock_ids, all_results)
    _atomic_write(metrics_dir / "summary.json", _dump_json(summary))
    write_tables(tables_dir, cfg.models, summary)

    manifest = {
        "config": dict(cfg.raw),
        "config_hash": cfg.config_hash,
        "stocks": stock_ids,
        "models": list(cfg.models),
        "jobs": {
            jid: {"status": r["status"], "reason": r.get("reason")}
            for jid, r in sorted(all_results.items())
        },
    }
    _atomic_write(run_dir / "manifest.json", _dump_json(manifest))

    return 1 if any(r["status"] != "ok" for r in all_results.values()) else 0


def _report_from_block(block: dict) -> evaluate.MetricsReport:
    return evaluate.MetricsReport(
        recall=tuple(block["recall"]), precision=tuple(block["precision"]), accuracy=block["accuracy"]
    )


def _aggregate(blocks: list) -> Optional[dict]:
    if not blocks:
        return None
    reports = [_report_from_block(b) for b in blocks]
    macro = evaluate.macro_average(reports)
    pooled = evaluate.pooled_metrics([evaluate.ConfusionMatrix(np.asarray(b["confusion"])) for b in blocks])
    return {
        "n_stocks": len(blocks),
        "macro": {"recall": list(macro.recall), "precision": list(macro.precision), "accuracy": macro.accuracy},
        "pooled": {"recall": list(pooled.recall), "precision": list(pooled.precision), "accuracy": pooled.accuracy},
    }


def build_summary(model_tokens, stock_ids, all_results: dict) -> dict:
    """Cross-stock aggregates per model plus the best-precision count table.

    Emits both aggregation schemes (mean of per-stock metrics and metrics
    of the pooled matrix).  Models with zero successful stocks appear with
    null aggregates.
    """
    per_model = {}
    precision_rows = {}
    for token in model_tokens:
        ok = [
            all_results[_job_id(sid, token)]
            for sid in stock_ids
            if all_results[_job_id(sid, token)]["status"] == "ok"
        ]
        per_model[token] = {
            "n_failed": sum(
                1 for sid in stock_ids if all_results[_job_id(sid, token)]["status"] != "ok"
            ),
            "three_class": _aggregate([r["three_class"] for r in ok if "three_class" in r]),
            "five_class": _aggregate([r["five_class"] for r in ok if "five_class" in r]),
        }
        rows = []
        for sid in stock_ids:
            r = all_results[_job_id(sid, token)]
            if r["status"] == "ok" and "three_class" in r:
                rows.append(list(r["three_class"]["precision"]))
            else:
                rows.append([None, None, None])
        precision_rows[token] = rows
    counts = evaluate.best_precision_counts(precision_rows)
    return {
        "stocks": list(stock_ids),
        "models": per_model,
        "best_precision_counts": {t: counts[t].tolist() for t in model_tokens},
    }


def _fmt(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6f}"


def write_tables(tables_dir: Path, model_tokens, summary: dict) -> None:
    """The three report tables as CSV, "-" marking undefined entries."""
    lines1 = ["model," + ",".join(f"{m}_{c}" for c in THREE_NAMES for m in ("recall", "precision")) + ",accuracy"]
    for token in model_tokens:
        agg = summary["models"][token]["three_class"]
        if agg is None:
            lines1.append(token + "," + ",".join(["-"] * 7))
            continue
        macro = agg["macro"]
        cells = []
        for c in range(3):
            cells.append(_fmt(macro["recall"][c]))
            cells.append(_fmt(macro["precision"][c]))
        lines1.append(f"{token}," + ",".join(cells) + f",{_fmt(macro['accuracy'])}")
    _atomic_write(tables_dir / "table1.csv", "\n".join(lines1) + "\n")

    lines2 = ["model," + ",".join(f"best_precision_{c}" for c in THREE_NAMES)]
    for token in model_tokens:
        counts = summary["best_precision_counts"][token]
        lines2.append(f"{token}," + ",".join(str(int(c)) for c in counts))
    _atomic_write(tables_dir / "table2.csv", "\n".join(lines2) + "\n")

    header3 = ["model"]
    for c in range(N_CLASSES):
        header3 += [f"recall_{c}", f"precision_{c}"]
    lines3 = [",".join(header3 + ["accuracy"])]
    for token in model_tokens:
        agg = summary["models"][token]["five_class"]
        if agg is None:
            continue
        macro = agg["macro"]
        cells = []
        for c in range(N_CLASSES):
            cells.append(_fmt(macro["recall"][c]))
            cells.append(_fmt(macro["precision"][c]))
        lines3.append(f"{token}," + ",".join(cells) + f",{_fmt(macro['accuracy'])}")
    _atomic_write(tables_dir / "table3.csv", "\n".join(lines3) + "\n")


def rebuild_report(run_dir: str | Path) -> dict:
    """Recompute summary and tables from the per-job metrics already on disk."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    model_tokens = manifest["models"]
    stock_ids = manifest["stocks"]
    metrics_dir = run_dir / "metrics"
    all_results = {
        jid: json.loads((metrics_dir / f"{jid}.json").read_text())
        for jid in (_job_id(s, t) for s in stock_ids for t in model_tokens)
    }
    summary = build_summary(model_tokens, stock_ids, all_results)
    _atomic_write(metrics_dir / "summary.json", _dump_json(summary))
    write_tables(run_dir / "tables", model_tokens, summary)
    return summary


def ingest_manifest(paths: list, window: int = 64, ratio: float = 0.7) -> dict:
    """Parse tick files into a per-stock manifest with label histograms.

    Files that cannot form a single price change are recorded as excluded
    with the reason; raises ConfigError when no file yields a valid stock.
    """
    entries = []
    any_ok = False
    for path in paths:
        name = os.path.basename(str(path))
        try:
            with open(path) as fh:
                series = parse_tick_file(fh, name=name)
            if len(series) < 2:
                raise TickFileError(f"{name}: only {len(series)} valid record(s), no price change")
            labels = label_changes(compute_price_changes(series))
            hist = np.bincount(labels, minlength=N_CLASSES)
            n_samples = max(len(labels) - window, 0)
            cut = int(np.floor(ratio * n_samples)) if n_samples >= 2 else 0
            entries.append(
                {
                    "file": name,
                    "stock": series.stock_id,
                    "records": len(series),
                    "skipped_rows": series.skipped_rows,
                    "histogram": hist.tolist(),
                    "majority_share": float(hist.max() / hist.sum()),
                    "window_samples": n_samples,
                    "train_samples": cut,
                    "test_samples": n_samples - cut if n_samples >= 2 else 0,
                }
            )
            any_ok = True
        except (TickFileError, OSError) as exc:
            entries.append({"file": name, "excluded": str(exc)})
    if not any_ok:
        raise ConfigError("no valid tick files")
    return {"stocks": entries, "window": window, "ratio": ratio}


def write_ingest_outputs(manifest: dict, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _atomic_write(out_dir / "manifest.json", _dump_json(manifest))
    lines = ["stock," + ",".join(f"class_{c}" for c in range(N_CLASSES))]
    for entry in manifest["stocks"]:
        if "histogram" in entry:
            lines.append(entry["stock"] + "," + ",".join(str(c) for c in entry["histogram"]))
    _atomic_write(out_dir / "histograms.csv", "\n".join(lines) + "\n")
