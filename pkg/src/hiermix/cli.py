"""Command-line experiment harness.

Subcommands: ``gen-data``, ``train``, ``eval``, ``ablate``, ``sweep``,
``sparse``, ``rank-labels``. Every command writes only inside its output
directory and leaves a ``manifest.json`` recording the resolved
configuration, seeds, artifact hashes, and wall timings: enough to re-run
it bit-identically (timings aside). Report commands write CSV/JSON tables
plus rendered PNG companions.

A run is described by a JSON config mirroring :class:`RunConfig`; flags
override config values. Without a config the built-in synthetic corpus
spec is used, so ``hiermix train --out runs/demo`` works as-is.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import (
    CorpusError,
    DatasetSplit,
    SyntheticSpec,
    build_vocabulary,
    downsample,
    generate_synthetic,
    load_corpus,
    split_to_jsonl,
)
from .evaluation import (
    build_report,
    mean_std,
    rank_similar_labels,
    welch_t_test,
)
from .objective import close_predictions
from .taxonomy import Taxonomy, TaxonomyError, label_frequency_buckets, load_taxonomy
from .trainer import (
    DivergenceError,
    EncoderConfig,
    FitResult,
    TrainConfig,
    evaluate_model,
    fit,
    load_checkpoint,
    predict_instance,
    prepare_instances,
    save_checkpoint,
)
from .mixup import MixupConfig

logger = logging.getLogger(__name__)

PAPER_AXES_ALPHAS = [0.1, 0.3, 0.6, 1.0, 2.0, 5.0, 10.0]
PAPER_AXES_BETAS = [0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]
MODES = ("off", "vanilla", "lh")


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


@dataclass(frozen=True)
class DataPaths:
    taxonomy: Path
    train: Path
    dev: Path
    test: Path | None


@dataclass(frozen=True)
class RunConfig:
    run_name: str
    data: DataPaths | None
    synthetic: SyntheticSpec | None
    min_freq: int
    bucket_edges: tuple[int, ...]
    enc: EncoderConfig
    train: TrainConfig

    def to_obj(self) -> dict:
        from .trainer import train_config_to_obj

        obj: dict = {
            "run_name": self.run_name,
            "min_freq": self.min_freq,
            "bucket_edges": list(self.bucket_edges),
            "encoder": {
                "d_model": self.enc.d_model,
                "n_layers": self.enc.n_layers,
                "max_len": self.enc.max_len,
                "init_std": self.enc.init_std,
            },
            "train": train_config_to_obj(self.train),
        }
        if self.data is not None:
            obj["data"] = {
                "taxonomy": str(self.data.taxonomy),
                "train": str(self.data.train),
                "dev": str(self.data.dev),
                "test": str(self.data.test) if self.data.test else None,
            }
        if self.synthetic is not None:
            obj["synthetic"] = {
                "depth": self.synthetic.depth,
                "branching": self.synthetic.branching,
                "n_train": self.synthetic.n_train,
                "n_dev": self.synthetic.n_dev,
                "n_test": self.synthetic.n_test,
                "noise_rate": self.synthetic.noise_rate,
                "multi_path_rate": self.synthetic.multi_path_rate,
                "seed": self.synthetic.seed,
                "signature_words": self.synthetic.signature_words,
                "tokens_per_instance": self.synthetic.tokens_per_instance,
            }
        return obj


def resolve_config(config_path: Path | None, args: argparse.Namespace) -> RunConfig:
    """Merge the JSON config (if any), built-in defaults, and flag overrides."""
    obj: dict = {}
    if config_path is not None:
        try:
            obj = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from exc
    if obj.get("data") and obj.get("synthetic"):
        raise ConfigError("config must give exactly one of data paths or synthetic spec")

    data = None
    synthetic = None
    if obj.get("data"):
        d = obj["data"]
        for key in ("taxonomy", "train", "dev"):
            if not d.get(key):
                raise ConfigError(f"data config is missing the {key!r} path")
        data = DataPaths(
            taxonomy=Path(d["taxonomy"]),
            train=Path(d["train"]),
            dev=Path(d["dev"]),
            test=Path(d["test"]) if d.get("test") else None,
        )
    else:
        try:
            synthetic = SyntheticSpec(**obj.get("synthetic", {}))
        except TypeError as exc:
            raise ConfigError(f"bad synthetic spec: {exc}") from exc

    try:
        enc = EncoderConfig(**obj.get("encoder", {}))
    except TypeError as exc:
        raise ConfigError(f"bad encoder config: {exc}") from exc
    train_obj = dict(obj.get("train", {}))
    mix_obj = dict(train_obj.pop("mixup", {}))
    if getattr(args, "mode", None):
        mix_obj["mode"] = args.mode
    if getattr(args, "alpha", None) is not None:
        mix_obj["alpha"] = args.alpha
    if getattr(args, "beta", None) is not None:
        mix_obj["beta_cap"] = args.beta
    if getattr(args, "seed", None) is not None:
        train_obj["seed"] = args.seed
    try:
        train = TrainConfig(**train_obj, mixup=MixupConfig(**mix_obj))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc
    return RunConfig(
        run_name=obj.get("run_name", "run"),
        data=data,
        synthetic=synthetic,
        min_freq=int(obj.get("min_freq", 1)),
        bucket_edges=tuple(obj.get("bucket_edges", [10, 100])),
        enc=enc,
        train=train,
    )


def taxonomy_to_entries(tax: Taxonomy) -> list[dict]:
    ordered = sorted(tax.nodes, key=lambda lid: tax.order[lid])
    return [
        {"id": lid, "name": tax.nodes[lid].name, "parent": tax.nodes[lid].parent}
        for lid in ordered
    ]


def load_run_data(
    cfg: RunConfig,
) -> tuple[Taxonomy, DatasetSplit, DatasetSplit, DatasetSplit | None]:
    if cfg.synthetic is not None:
        tax, train, dev, test = generate_synthetic(cfg.synthetic)
        return tax, train, dev, test
    assert cfg.data is not None
    tax = load_taxonomy(cfg.data.taxonomy.read_text(encoding="utf-8"))
    train = load_corpus(cfg.data.train.read_text(encoding="utf-8"), tax, "train")
    dev = load_corpus(cfg.data.dev.read_text(encoding="utf-8"), tax, "dev")
    test = None
    if cfg.data.test is not None:
        test = load_corpus(cfg.data.test.read_text(encoding="utf-8"), tax, "test")
    return tax, train, dev, test


# ---------------------------------------------------------------------------
# Artifact helpers
# ---------------------------------------------------------------------------


def _write_csv(path: Path, fieldnames: list[str], rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames}
            )


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    out_dir: Path,
    command: str,
    config_obj: dict,
    seed: int | None,
    artifacts: list[Path],
    timings: dict | None = None,
) -> None:
    manifest = {
        "command": command,
        "config": config_obj,
        "seed": seed,
        "artifacts": {
            str(p.relative_to(out_dir)): _sha256(p) for p in artifacts if p.exists()
        },
        "timings": timings or {},
    }
    _write_json(out_dir / "manifest.json", manifest)


def _log_rows(result: FitResult) -> list[dict]:
    return [
        {
            "epoch": r.epoch,
            "train_loss": repr(r.train_loss),
            "mixed_loss": repr(r.mixed_loss),
            "dev_micro_f1": None if r.dev_micro_f1 is None else repr(r.dev_micro_f1),
            "dev_macro_f1": None if r.dev_macro_f1 is None else repr(r.dev_macro_f1),
        }
        for r in result.log
    ]


def _pair_rows(result: FitResult) -> list[dict]:
    return [
        {
            "epoch": p.epoch,
            "batch": p.batch,
            "index_i": p.index_i,
            "index_j": p.index_j,
            "s": None if p.s is None else repr(p.s),
            "lambda": repr(p.lam),
        }
        for p in result.pair_log
    ]


def write_run_artifacts(out_dir: Path, result: FitResult) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "training_log.csv"
    _write_csv(
        log_path,
        ["epoch", "train_loss", "mixed_loss", "dev_micro_f1", "dev_macro_f1"],
        _log_rows(result),
    )
    pairs_path = out_dir / "pairs.csv"
    _write_csv(
        pairs_path,
        ["epoch", "batch", "index_i", "index_j", "s", "lambda"],
        _pair_rows(result),
    )
    return [log_path, pairs_path]


def train_and_score(
    cfg: RunConfig,
    tax: Taxonomy,
    train_split: DatasetSplit,
    dev_split: DatasetSplit,
    test_split: DatasetSplit | None,
    out_dir: Path,
):
    """Fit one run, write its log artifacts, and score the test split."""
    vocab = build_vocabulary(train_split, cfg.min_freq, tax.max_depth)
    prepared_train = prepare_instances(train_split, tax, vocab, cfg.enc.max_len)
    prepared_dev = prepare_instances(dev_split, tax, vocab, cfg.enc.max_len)
    result = fit(prepared_train, prepared_dev, tax, vocab, cfg.train, cfg.enc)
    artifacts = write_run_artifacts(out_dir, result)
    test_report = None
    if test_split is not None:
        prepared_test = prepare_instances(test_split, tax, vocab, cfg.enc.max_len)
        test_report = evaluate_model(result.best_model, prepared_test, tax)
        metrics_path = out_dir / "metrics.json"
        _write_json(
            metrics_path,
            {
                "split": "test",
                "best_epoch": result.best_epoch,
                "report": test_report.to_json_obj(),
            },
        )
        artifacts.append(metrics_path)
    return result, test_report, vocab, artifacts


def _score_only(cfg, tax, train_split, dev_split, test_split, out_dir):
    """Worker-friendly wrapper returning only picklable summaries."""
    _, report, _, artifacts = train_and_score(
        cfg, tax, train_split, dev_split, test_split, out_dir
    )
    return report, artifacts


def run_grid(jobs, parallel: int):
    """Run (cfg, tax, train, dev, test, out_dir) jobs, preserving order.

    ``parallel`` of 1 runs in-process; more uses a process pool. Each job
    writes only inside its own output directory, so results are identical
    either way.
    """
    if parallel <= 1:
        return [_score_only(*job) for job in jobs]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=parallel) as pool:
        futures = [pool.submit(_score_only, *job) for job in jobs]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(
        depth=args.depth,
        branching=args.branching,
        n_train=args.n_train,
        n_dev=args.n_dev,
        n_test=args.n_test,
        noise_rate=args.noise_rate,
        multi_path_rate=args.multi_path_rate,
        seed=args.seed if args.seed is not None else 0,
    )
    spec.validate()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tax, train, dev, test = generate_synthetic(spec)
    artifacts = []
    tax_path = out_dir / "taxonomy.json"
    tax_path.write_text(
        json.dumps(taxonomy_to_entries(tax), indent=1) + "\n", encoding="utf-8"
    )
    artifacts.append(tax_path)
    for split in (train, dev, test):
        path = out_dir / f"{split.name}.jsonl"
        path.write_text(split_to_jsonl(split), encoding="utf-8")
        artifacts.append(path)
    cfg_obj = {
        "synthetic": {
            "depth": spec.depth,
            "branching": spec.branching,
            "n_train": spec.n_train,
            "n_dev": spec.n_dev,
            "n_test": spec.n_test,
            "noise_rate": spec.noise_rate,
            "multi_path_rate": spec.multi_path_rate,
            "seed": spec.seed,
            "signature_words": spec.signature_words,
            "tokens_per_instance": spec.tokens_per_instance,
        }
    }
    write_manifest(out_dir, "gen-data", cfg_obj, spec.seed, artifacts)
    print(f"wrote {tax.size} labels and {train.size}/{dev.size}/{test.size} instances to {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args.config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    tax, train_split, dev_split, test_split = load_run_data(cfg)
    artifacts: list[Path] = []
    if cfg.synthetic is not None:
        data_dir = out_dir / "data"
        data_dir.mkdir(exist_ok=True)
        tax_path = data_dir / "taxonomy.json"
        tax_path.write_text(
            json.dumps(taxonomy_to_entries(tax), indent=1) + "\n", encoding="utf-8"
        )
        artifacts.append(tax_path)
        for split in (train_split, dev_split, test_split):
            if split is None:
                continue
            path = data_dir / f"{split.name}.jsonl"
            path.write_text(split_to_jsonl(split), encoding="utf-8")
            artifacts.append(path)

    vocab = build_vocabulary(train_split, cfg.min_freq, tax.max_depth)
    prepared_train = prepare_instances(train_split, tax, vocab, cfg.enc.max_len)
    prepared_dev = prepare_instances(dev_split, tax, vocab, cfg.enc.max_len)
    result = fit(prepared_train, prepared_dev, tax, vocab, cfg.train, cfg.enc)
    artifacts.extend(write_run_artifacts(out_dir, result))

    ckpt_path = out_dir / "checkpoint.json"
    save_checkpoint(
        ckpt_path, result.best_model, vocab, taxonomy_to_entries(tax), cfg.train, cfg.enc
    )
    artifacts.append(ckpt_path)

    dev_report = (
        result.best_dev
        if result.best_dev is not None
        else evaluate_model(result.best_model, prepared_dev, tax)
    )
    metrics_path = out_dir / "metrics.json"
    _write_json(
        metrics_path,
        {
            "split": "dev",
            "best_epoch": result.best_epoch,
            "epochs_run": result.epochs_run,
            "stopped": result.stopped,
            "report": dev_report.to_json_obj(),
        },
    )
    artifacts.append(metrics_path)

    from .reports import save_training_curves

    fig_path = out_dir / "training_curves.png"
    save_training_curves(
        [
            {
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "mixed_loss": r.mixed_loss,
                "dev_macro_f1": r.dev_macro_f1,
            }
            for r in result.log
        ],
        fig_path,
    )

    write_manifest(
        out_dir,
        "train",
        cfg.to_obj(),
        cfg.train.seed,
        artifacts,
        timings={
            "wall_seconds": time.perf_counter() - started,
            "epoch_seconds": result.epoch_seconds,
        },
    )
    print(
        f"run {cfg.run_name}: best epoch {result.best_epoch}, "
        f"dev macro_f1 {dev_report.macro_f1:.4f}, stopped by {result.stopped}"
    )
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tax = load_taxonomy(json.dumps(ckpt.taxonomy_entries))
    split = load_corpus(
        Path(args.data).read_text(encoding="utf-8"), tax, args.split_name
    )
    prepared = prepare_instances(split, tax, ckpt.vocab, ckpt.enc.max_len)
    model = ckpt.model
    buckets = label_frequency_buckets(tax, split, list(args.bucket_edges))

    preds = [predict_instance(model, inst, tax) for inst in prepared]
    golds = [set(inst.gold) for inst in prepared]
    raw = build_report(preds, golds, tax, buckets)
    blocks = {"raw": raw.to_json_obj()}
    reports = {"raw": raw}
    if args.closure:
        closed_preds = [close_predictions(p, tax) for p in preds]
        closed = build_report(closed_preds, golds, tax, buckets)
        blocks["closed"] = closed.to_json_obj()
        reports["closed"] = closed

    artifacts = []
    metrics_path = out_dir / "metrics.json"
    _write_json(metrics_path, {"split": split.name, **blocks})
    artifacts.append(metrics_path)

    summary_rows = [
        {
            "scope": scope,
            "micro_f1": repr(rep.micro_f1),
            "macro_f1": repr(rep.macro_f1),
            "n_instances": rep.n_instances,
        }
        for scope, rep in reports.items()
    ]
    metrics_csv = out_dir / "metrics.csv"
    _write_csv(metrics_csv, ["scope", "micro_f1", "macro_f1", "n_instances"], summary_rows)
    artifacts.append(metrics_csv)

    depth_rows = [
        {"scope": scope, "depth": d + 1, "micro_f1": repr(m), "macro_f1": repr(M)}
        for scope, rep in reports.items()
        for d, (m, M) in enumerate(rep.per_depth)
    ]
    depth_csv = out_dir / "breakdown_depth.csv"
    _write_csv(depth_csv, ["scope", "depth", "micro_f1", "macro_f1"], depth_rows)
    artifacts.append(depth_csv)

    bucket_rows = [
        {"scope": scope, "bucket": b, "macro_f1": repr(m), "n_labels": n}
        for scope, rep in reports.items()
        for b, (m, n) in enumerate(rep.per_bucket)
    ]
    bucket_csv = out_dir / "breakdown_bucket.csv"
    _write_csv(bucket_csv, ["scope", "bucket", "macro_f1", "n_labels"], bucket_rows)
    artifacts.append(bucket_csv)

    from .reports import save_breakdown_figure

    save_breakdown_figure(
        [
            {"depth": d + 1, "micro_f1": m, "macro_f1": M}
            for d, (m, M) in enumerate(raw.per_depth)
        ],
        [
            {"bucket": b, "macro_f1": m, "n_labels": n}
            for b, (m, n) in enumerate(raw.per_bucket)
        ],
        out_dir / "breakdown.png",
    )

    write_manifest(
        out_dir,
        "eval",
        {"checkpoint": str(args.checkpoint), "data": str(args.data), "closure": args.closure},
        None,
        artifacts,
    )
    print(f"{split.name}: micro_f1 {raw.micro_f1:.4f}, macro_f1 {raw.macro_f1:.4f}")
    return 0


def _mode_config(cfg: RunConfig, mode: str, seed: int) -> RunConfig:
    train = replace(cfg.train, seed=seed, mixup=replace(cfg.train.mixup, mode=mode))
    return replace(cfg, train=train)


def cmd_ablate(args) -> int:
    cfg = resolve_config(args.config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    tax, train_split, dev_split, test_split = load_run_data(cfg)
    if test_split is None:
        raise ConfigError("ablation needs a test split")
    seeds = [cfg.train.seed + k for k in range(args.seeds)]

    jobs = [
        (
            _mode_config(cfg, mode, seed),
            tax,
            train_split,
            dev_split,
            test_split,
            out_dir / f"{mode}_seed{seed}",
        )
        for mode in MODES
        for seed in seeds
    ]
    results = run_grid(jobs, args.parallel)

    rows = []
    artifacts: list[Path] = []
    scores: dict[str, dict[str, list[float]]] = {
        m: {"micro": [], "macro": []} for m in MODES
    }
    for (run_cfg, *_), (report, run_artifacts) in zip(jobs, results):
        mode, seed = run_cfg.train.mixup.mode, run_cfg.train.seed
        artifacts.extend(run_artifacts)
        rows.append(
            {
                "mode": mode,
                "seed": seed,
                "micro_f1": repr(report.micro_f1),
                "macro_f1": repr(report.macro_f1),
            }
        )
        scores[mode]["micro"].append(report.micro_f1)
        scores[mode]["macro"].append(report.macro_f1)

    ablation_csv = out_dir / "ablation.csv"
    _write_csv(ablation_csv, ["mode", "seed", "micro_f1", "macro_f1"], rows)
    artifacts.append(ablation_csv)

    summary_rows = []
    for mode in MODES:
        micro_mean, micro_std = mean_std(scores[mode]["micro"])
        macro_mean, macro_std = mean_std(scores[mode]["macro"])
        summary_rows.append(
            {
                "mode": mode,
                "micro_mean": repr(micro_mean),
                "micro_std": repr(micro_std),
                "macro_mean": repr(macro_mean),
                "macro_std": repr(macro_std),
                "n_seeds": len(seeds),
            }
        )
    summary_csv = out_dir / "ablation_summary.csv"
    _write_csv(
        summary_csv,
        ["mode", "micro_mean", "micro_std", "macro_mean", "macro_std", "n_seeds"],
        summary_rows,
    )
    artifacts.append(summary_csv)

    if len(seeds) >= 2:
        welch_rows = []
        for a, b in (("lh", "off"), ("lh", "vanilla"), ("vanilla", "off")):
            for metric in ("micro", "macro"):
                p = welch_t_test(scores[a][metric], scores[b][metric])
                welch_rows.append(
                    {"comparison": f"{a}_vs_{b}", "metric": f"{metric}_f1", "p_value": repr(p)}
                )
        welch_csv = out_dir / "welch.csv"
        _write_csv(welch_csv, ["comparison", "metric", "p_value"], welch_rows)
        artifacts.append(welch_csv)

    from .reports import save_ablation_figure

    save_ablation_figure(
        [
            {
                "mode": r["mode"],
                "micro_mean": float(r["micro_mean"]),
                "micro_std": float(r["micro_std"]),
                "macro_mean": float(r["macro_mean"]),
                "macro_std": float(r["macro_std"]),
            }
            for r in summary_rows
        ],
        out_dir / "ablation.png",
    )

    write_manifest(
        out_dir,
        "ablate",
        {**cfg.to_obj(), "seeds": seeds, "modes": list(MODES)},
        cfg.train.seed,
        artifacts,
        timings={"wall_seconds": time.perf_counter() - started},
    )
    for row in summary_rows:
        print(
            f"{row['mode']}: micro {float(row['micro_mean']):.4f}±{float(row['micro_std']):.4f} "
            f"macro {float(row['macro_mean']):.4f}±{float(row['macro_std']):.4f}"
        )
    return 0


def cmd_sweep(args) -> int:
    cfg = resolve_config(args.config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    alphas = args.alphas or PAPER_AXES_ALPHAS
    betas = args.betas or PAPER_AXES_BETAS
    tax, train_split, dev_split, test_split = load_run_data(cfg)
    if test_split is None:
        raise ConfigError("sweep needs a test split")

    if args.paper_axes:
        points = [("alpha", a, 1.0) for a in alphas] + [("beta", 1.0, b) for b in betas]
    else:
        points = [("grid", a, b) for a in alphas for b in betas]

    jobs = []
    for axis, alpha, beta in points:
        train_cfg = replace(
            cfg.train,
            mixup=replace(cfg.train.mixup, mode="lh", alpha=alpha, beta_cap=beta),
        )
        jobs.append(
            (
                replace(cfg, train=train_cfg),
                tax,
                train_split,
                dev_split,
                test_split,
                out_dir / f"{axis}_a{alpha:g}_b{beta:g}",
            )
        )
    results = run_grid(jobs, args.parallel)

    rows = []
    artifacts: list[Path] = []
    for (axis, alpha, beta), (report, run_artifacts) in zip(points, results):
        artifacts.extend(run_artifacts)
        rows.append(
            {
                "axis": axis,
                "alpha": alpha,
                "beta": beta,
                "micro_f1": repr(report.micro_f1),
                "macro_f1": repr(report.macro_f1),
            }
        )

    sweep_csv = out_dir / "sweep.csv"
    _write_csv(sweep_csv, ["axis", "alpha", "beta", "micro_f1", "macro_f1"], rows)
    artifacts.append(sweep_csv)

    from .reports import save_ratio_curves, save_sweep_figure

    save_sweep_figure(
        [
            {
                "axis": r["axis"],
                "alpha": r["alpha"],
                "beta": r["beta"],
                "micro_f1": float(r["micro_f1"]),
                "macro_f1": float(r["macro_f1"]),
            }
            for r in rows
        ],
        out_dir / "sweep.png",
    )
    save_ratio_curves(alphas, betas, out_dir / "ratio_curves.png")

    write_manifest(
        out_dir,
        "sweep",
        {**cfg.to_obj(), "alphas": alphas, "betas": betas, "paper_axes": args.paper_axes},
        cfg.train.seed,
        artifacts,
        timings={"wall_seconds": time.perf_counter() - started},
    )
    print(f"swept {len(points)} configurations")
    return 0


def cmd_sparse(args) -> int:
    cfg = resolve_config(args.config, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    ratios = args.ratios or [0.5, 0.25, 0.1]
    for ratio in ratios:
        if not 0.0 < ratio <= 1.0:
            raise ConfigError(f"ratio {ratio} outside (0, 1]")
    tax, train_split, dev_split, test_split = load_run_data(cfg)
    if test_split is None:
        raise ConfigError("sparse comparison needs a test split")

    jobs = []
    job_meta = []
    for ratio in ratios:
        sampled = downsample(train_split, ratio, cfg.train.seed)
        for mode in MODES:
            jobs.append(
                (
                    _mode_config(cfg, mode, cfg.train.seed),
                    tax,
                    sampled,
                    dev_split,
                    test_split,
                    out_dir / f"ratio{ratio:g}_{mode}",
                )
            )
            job_meta.append((ratio, mode, sampled.size))
    results = run_grid(jobs, args.parallel)

    rows = []
    artifacts: list[Path] = []
    for (ratio, mode, train_size), (report, run_artifacts) in zip(job_meta, results):
        artifacts.extend(run_artifacts)
        rows.append(
            {
                "ratio": ratio,
                "mode": mode,
                "train_size": train_size,
                "micro_f1": repr(report.micro_f1),
                "macro_f1": repr(report.macro_f1),
            }
        )

    sparse_csv = out_dir / "sparse.csv"
    _write_csv(
        sparse_csv, ["ratio", "mode", "train_size", "micro_f1", "macro_f1"], rows
    )
    artifacts.append(sparse_csv)

    from .reports import save_sparse_figure

    save_sparse_figure(
        [
            {
                "ratio": r["ratio"],
                "mode": r["mode"],
                "micro_f1": float(r["micro_f1"]),
                "macro_f1": float(r["macro_f1"]),
            }
            for r in rows
        ],
        out_dir / "sparse.png",
    )

    write_manifest(
        out_dir,
        "sparse",
        {**cfg.to_obj(), "ratios": ratios, "modes": list(MODES)},
        cfg.train.seed,
        artifacts,
        timings={"wall_seconds": time.perf_counter() - started},
    )
    print(f"ran {len(rows)} sparse-data trainings")
    return 0


def cmd_rank_labels(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tax = load_taxonomy(json.dumps(ckpt.taxonomy_entries))
    ranked = rank_similar_labels(args.target, args.k, ckpt.model.encoder, tax, ckpt.vocab)
    rows = [
        {"rank": i + 1, "label": label, "similarity": repr(sim)}
        for i, (label, sim) in enumerate(ranked)
    ]
    ranked_csv = out_dir / "ranked.csv"
    _write_csv(ranked_csv, ["rank", "label", "similarity"], rows)
    write_manifest(
        out_dir,
        "rank-labels",
        {"checkpoint": str(args.checkpoint), "target": args.target, "k": args.k},
        None,
        [ranked_csv],
    )
    for row in rows[:10]:
        print(f"{row['rank']:>3}  {row['label']}  {float(row['similarity']):.4f}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hiermix",
        description="Hierarchical text classification with prompt-depth mixing",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--branching", type=int, default=3)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-dev", type=int, default=500)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--noise-rate", type=float, default=0.3)
    p.add_argument("--multi-path-rate", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    def add_run_flags(p, grid=False):
        p.add_argument("--config", type=Path, default=None)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--beta", type=float, default=None)
        if grid:
            p.add_argument(
                "--parallel",
                type=int,
                default=1,
                help="worker processes for independent runs (1 = sequential)",
            )

    p = sub.add_parser("train", help="train one run")
    add_run_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--split-name", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--closure", action="store_true")
    p.add_argument("--bucket-edges", type=int, nargs="+", default=[10, 100])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train off/vanilla/lh with shared seeds")
    add_run_flags(p, grid=True)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds per mode")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="grid-sweep the ratio-law parameters")
    add_run_flags(p, grid=True)
    p.add_argument("--alphas", type=float, nargs="*", default=None)
    p.add_argument("--betas", type=float, nargs="*", default=None)
    p.add_argument(
        "--paper-axes",
        action="store_true",
        help="sweep one axis at a time: beta fixed to 1 for the alpha sweep, alpha fixed to 1 for the beta sweep",
    )
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("sparse", help="downsampled-training comparison per mode")
    add_run_flags(p, grid=True)
    p.add_argument(
        "--ratio",
        dest="ratios",
        type=float,
        action="append",
        default=None,
        help="training downsample ratio, repeatable",
    )
    p.set_defaults(func=cmd_sparse)

    p = sub.add_parser("rank-labels", help="nearest labels by hierarchy similarity")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--target", required=True)
    p.add_argument("-k", type=int, default=30)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank_labels)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ConfigError,
        CorpusError,
        TaxonomyError,
        DivergenceError,
        ValueError,
        OSError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
