"""End-to-end orchestration: corpus -> graphs -> features -> signatures -> metrics.

The expensive intermediate (per-run, per-epoch statistic blocks) is cached as
one CSV per run, keyed by the graph/feature options that produced it; budget
sweeps and signature-mode changes reuse the cache for free.  All randomness
flows from the experiment seed, and report files contain nothing
nondeterministic, so a rerun of the same config is byte-identical.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import predict as predict_mod
from .centrality import compute_feature
from .checkpoints import CheckpointError, read_run
from .graphs import build_graph, subgraph_for
from .predict import RunSnapshots
from .signatures import STAT_NAMES, compose_blocks, write_signature_matrix

REPRESENTATIONS = ("fc", "rolled", "unrolled")
SIGNED_PARTS = ("base", "pos", "neg", "pos_neg_concat")
FEATURES = ("degree", "eigenvector")
MODES = ("concat", "linear_weighted", "exponential")
TASKS = ("classify", "regress")
PREDICTORS = ("linear_svm", "mlp", "ols_regression")


class PipelineError(Exception):
    """Configuration or stage failure; the message names the stage."""


@dataclass
class ExperimentConfig:
    """Declarative description of one experiment (strictly parsed)."""

    corpus: str
    representation: str = "rolled"
    signed_part: str = "base"
    feature: str = "degree"
    mode: str = "concat"
    alpha: float = 0.5
    budget: object = 5                 # int, or [lo, hi] for a sweep
    task: str = "classify"
    threshold: object = "median"       # float, or "median"
    predictor: str = "linear_svm"
    predictor_params: dict = field(default_factory=dict)
    regression_window: list | None = None   # [epoch_a, epoch_b] -> window mode
    norm: str = "l2"
    seed: int = 0
    folds: int = 5
    output: str = "out"
    workers: int = 1
    corpus_config: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.representation not in REPRESENTATIONS:
            raise PipelineError(f"config: unknown representation {self.representation!r}")
        if self.signed_part not in SIGNED_PARTS:
            raise PipelineError(f"config: unknown signed_part {self.signed_part!r}")
        if self.signed_part != "base" and self.representation != "unrolled":
            raise PipelineError(
                "config: signed parts are only defined for the unrolled representation")
        if self.feature not in FEATURES:
            raise PipelineError(f"config: unknown feature {self.feature!r}")
        if self.mode not in MODES:
            raise PipelineError(f"config: unknown mode {self.mode!r}")
        if self.task not in TASKS:
            raise PipelineError(f"config: unknown task {self.task!r}")
        if self.predictor not in PREDICTORS:
            raise PipelineError(f"config: unknown predictor {self.predictor!r}")
        if self.task == "regress" and self.predictor != "ols_regression":
            raise PipelineError("config: regression task requires the ols_regression predictor")
        if self.task == "classify" and self.predictor == "ols_regression":
            raise PipelineError("config: classification task needs linear_svm or mlp")
        if self.norm not in ("l1", "l2"):
            raise PipelineError(f"config: unknown norm {self.norm!r}")
        lo, hi = self.budget_range()
        if lo < 1 or hi < lo:
            raise PipelineError(f"config: bad budget {self.budget!r}")

    def budget_range(self) -> tuple[int, int]:
        if isinstance(self.budget, int):
            return self.budget, self.budget
        if (isinstance(self.budget, (list, tuple)) and len(self.budget) == 2
                and all(isinstance(b, int) for b in self.budget)):
            return int(self.budget[0]), int(self.budget[1])
        raise PipelineError(f"config: budget must be an int or [lo, hi], got {self.budget!r}")

    def cache_key(self) -> str:
        return f"{self.representation}_{self.signed_part}_{self.feature}_{self.norm}"

    def to_json(self) -> dict:
        return {
            "corpus": self.corpus, "representation": self.representation,
            "signed_part": self.signed_part, "feature": self.feature,
            "mode": self.mode, "alpha": self.alpha, "budget": self.budget,
            "task": self.task, "threshold": self.threshold,
            "predictor": self.predictor, "predictor_params": self.predictor_params,
            "regression_window": self.regression_window, "norm": self.norm,
            "seed": self.seed, "folds": self.folds, "output": self.output,
            "workers": self.workers, "corpus_config": self.corpus_config,
        }


_CONFIG_KEYS = set(ExperimentConfig(corpus="x").to_json())


def config_from_dict(d: dict) -> ExperimentConfig:
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise PipelineError(f"config: unknown keys {sorted(unknown)}")
    if "corpus" not in d:
        raise PipelineError("config: missing required key 'corpus'")
    return ExperimentConfig(**d)


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise PipelineError(f"config: cannot load {path}: {e}") from e
    if not isinstance(d, dict):
        raise PipelineError("config: top level must be a JSON object")
    if overrides:
        d.update(overrides)
    return config_from_dict(d)


# ---------------------------------------------------------------------------
# corpus generation (S0, so to speak)


def generate_corpus(config: ExperimentConfig, progress=None) -> dict:
    cc = dict(config.corpus_config)
    task_keys = {"classes", "image_shape", "train_size", "test_size", "noise", "seed"}
    task_args = {k: cc.pop(k) for k in list(cc) if k in task_keys}
    if "image_shape" in task_args:
        task_args["image_shape"] = tuple(task_args["image_shape"])
    trainer_keys = {"learning_rates", "dropouts", "seeds_per_cell", "max_epochs",
                    "batch_size", "patience", "base_seed"}
    trainer_args = {k: cc.pop(k) for k in list(cc) if k in trainer_keys}
    for k in ("learning_rates", "dropouts"):
        if k in trainer_args:
            trainer_args[k] = tuple(trainer_args[k])
    if cc:
        raise PipelineError(f"config: unknown corpus_config keys {sorted(cc)}")
    task_spec = corpus_mod.SyntheticTask(**task_args)
    trainer = corpus_mod.TrainerConfig(**trainer_args)
    arch = corpus_mod.default_arch(task_spec.classes, task_spec.image_shape)
    return corpus_mod.run_grid(task_spec, arch, trainer, config.corpus,
                               progress=progress, workers=config.workers)


# ---------------------------------------------------------------------------
# S1-S3 with caching


def _block_columns(signed_part: str) -> list[str]:
    if signed_part == "pos_neg_concat":
        return [f"pos_{s}" for s in STAT_NAMES] + [f"neg_{s}" for s in STAT_NAMES]
    return list(STAT_NAMES)


def compute_run_blocks(run_dir: str, representation: str, signed_part: str,
                       feature: str, norm: str, t_max: int):
    """Stats blocks for one run's first ``t_max`` epochs (worker-safe)."""
    from .signatures import snapshot_stats  # local import keeps workers lean

    series = read_run(run_dir)
    blocks = []
    for ckpt in series.epochs[:t_max]:
        g = build_graph(ckpt, series.arch, representation, norm=norm)
        parts = (["pos", "neg"] if signed_part == "pos_neg_concat" else [signed_part])
        stats = []
        for part in parts:
            sub = subgraph_for(g, part)
            feat = compute_feature(sub, feature)
            stats.append(snapshot_stats(feat.values))
        blocks.append(np.concatenate(stats))
    return series.run_id, float(series.final_accuracy), np.array(blocks)


def _cache_path(cache_dir: Path, run_id: str) -> Path:
    return cache_dir / f"{run_id}.csv"


def _read_cached_blocks(path: Path, columns: list[str]):
    if not path.is_file():
        return None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "final_accuracy"] + columns:
            return None  # stale layout; rebuild
        rows = list(reader)
    if not rows:
        return None
    acc = float(rows[0][1])
    blocks = np.array([[float(x) for x in r[2:]] for r in rows])
    epochs = [int(r[0]) for r in rows]
    if epochs != list(range(1, len(epochs) + 1)):
        return None
    return acc, blocks


def _write_cached_blocks(path: Path, columns: list[str], acc: float, blocks: np.ndarray):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "final_accuracy"] + columns)
        for i, row in enumerate(blocks):
            writer.writerow([i + 1, repr(acc)] + [repr(float(x)) for x in row])


def load_corpus_manifest(corpus_dir: str | Path) -> dict:
    path = Path(corpus_dir) / "corpus.json"
    if not path.is_file():
        raise PipelineError(f"corpus: missing manifest {path}")
    return json.loads(path.read_text())


def collect_snapshots(config: ExperimentConfig, t_max: int, log=None) -> tuple[list[RunSnapshots], list[str]]:
    """Per-run stats blocks for the first ``t_max`` epochs, cache-backed.

    Returns (runs sorted by run_id, notes).  Runs that errored during
    training or hold fewer than ``t_max`` epochs are excluded with a note.
    """
    manifest = load_corpus_manifest(config.corpus)
    corpus_dir = Path(config.corpus)
    cache_dir = Path(config.output) / "cache" / config.cache_key()
    cache_dir.mkdir(parents=True, exist_ok=True)
    columns = _block_columns(config.signed_part)

    notes = []
    usable, stale = [], []
    for rec in sorted(manifest["runs"], key=lambda r: r["run_id"]):
        if "error" in rec:
            notes.append(f"excluded {rec['run_id']}: training error")
            continue
        if rec["epochs"] < t_max:
            notes.append(f"excluded {rec['run_id']}: {rec['epochs']} epochs < {t_max}")
            continue
        usable.append(rec)

    cached: dict[str, RunSnapshots] = {}
    for rec in usable:
        hit = _read_cached_blocks(_cache_path(cache_dir, rec["run_id"]), columns)
        if hit is not None and hit[1].shape[0] >= t_max:
            cached[rec["run_id"]] = RunSnapshots(rec["run_id"], hit[0], hit[1][:t_max])
        else:
            if hit is not None:
                notes.append(f"cache for {rec['run_id']} too short, rebuilding")
            stale.append(rec)

    if stale:
        jobs = [(str(corpus_dir / r["path"]), config.representation, config.signed_part,
                 config.feature, config.norm, t_max) for r in stale]
        if config.workers > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                results = list(pool.map(_compute_run_blocks_star, jobs, chunksize=1))
        else:
            results = [_compute_run_blocks_star(j) for j in jobs]
        for (run_id, acc, blocks), rec in zip(results, stale):
            _write_cached_blocks(_cache_path(cache_dir, run_id), columns, acc, blocks)
            cached[run_id] = RunSnapshots(run_id, acc, blocks)
            if log is not None:
                log(f"stats ready: {run_id}")

    runs = [cached[r["run_id"]] for r in usable]
    return runs, notes


def _compute_run_blocks_star(args):
    try:
        return compute_run_blocks(*args)
    except (CheckpointError, Exception) as e:
        raise PipelineError(f"feature stage failed for {args[0]}: {e}") from e


# ---------------------------------------------------------------------------
# S4 and artifacts


def resolve_threshold(config: ExperimentConfig, accuracies) -> float:
    if config.threshold == "median":
        return predict_mod.median_threshold(accuracies)
    if isinstance(config.threshold, (int, float)):
        return float(config.threshold)
    raise PipelineError(f"config: threshold must be a number or 'median', got {config.threshold!r}")


def run_pipeline(config: ExperimentConfig, log=None) -> predict_mod.EvalReport:
    """Execute S1-S4 for one config and write report files under ``output``."""
    out_dir = Path(config.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    lo, hi = config.budget_range()
    window = None
    if config.regression_window is not None:
        if config.task != "regress":
            raise PipelineError("config: regression_window only applies to the regress task")
        window = tuple(int(e) for e in config.regression_window)
        if len(window) != 2 or window[0] < 1 or window[1] <= window[0]:
            raise PipelineError(f"config: bad regression_window {config.regression_window!r}")
    t_needed = max(hi, window[1] if window else 1)

    runs, notes = collect_snapshots(config, t_needed, log=log)
    if len(runs) < 2 * config.folds:
        raise PipelineError(
            f"dataset stage: only {len(runs)} usable runs for {config.folds} folds")
    accs = [r.final_accuracy for r in runs]
    threshold = resolve_threshold(config, accs)
    hp = dict(config.predictor_params)

    if window is not None:
        vectors = predict_mod.window_vectors(runs, window)
        data = _dataset(runs, vectors, threshold)
        report = predict_mod.cross_validate(data, config.predictor, folds=config.folds,
                                            seed=config.seed, **hp)
        _write_matrix(out_dir / f"signatures_window_{window[0]}_{window[1]}.csv", data)
    elif lo == hi:
        vectors = predict_mod.prefix_vectors(runs, hi, mode=config.mode, alpha=config.alpha)
        data = _dataset(runs, vectors, threshold)
        report = predict_mod.cross_validate(data, config.predictor, folds=config.folds,
                                            seed=config.seed, **hp)
        _write_matrix(out_dir / f"signatures_t{hi}.csv", data)
    else:
        report = predict_mod.epoch_budget_curve(
            runs, threshold, config.predictor, hi, mode=config.mode, alpha=config.alpha,
            folds=config.folds, seed=config.seed, **hp)
        report.budget_curve = [row for row in report.budget_curve if row["t"] >= lo]
        vectors = predict_mod.prefix_vectors(runs, hi, mode=config.mode, alpha=config.alpha)
        data = _dataset(runs, vectors, threshold)
        _write_matrix(out_dir / f"signatures_t{hi}.csv", data)

    report.notes = notes + report.notes
    payload = {"config": config.to_json(), "threshold": threshold,
               "class_counts": data.class_counts, "n_runs": len(runs),
               "report": report.to_json()}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, sort_keys=True))
    _write_report_csv(out_dir / "report.csv", report)
    if report.budget_curve:
        _write_budget_csv(out_dir / "budget_curve.csv", report)
    if log is not None:
        log(f"report written to {out_dir}")
    return report


def _dataset(runs, vectors, threshold) -> predict_mod.LabeledDataset:
    pairs = [(predict_mod._Vec(r.run_id, v), r.final_accuracy)
             for r, v in zip(runs, vectors)]
    return predict_mod.label_dataset(pairs, threshold)


def _write_matrix(path: Path, data: predict_mod.LabeledDataset) -> None:
    rows = [(rid, lab, acc, vec) for rid, lab, acc, vec
            in zip(data.run_ids, data.labels, data.accuracy, data.X)]
    write_signature_matrix(path, rows)


def _write_report_csv(path: Path, report: predict_mod.EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if report.task == "classify":
            writer.writerow(["fold", "n_test", "accuracy"])
            for f in report.per_fold:
                writer.writerow([f["fold"], f["n_test"], repr(f["accuracy"])])
            writer.writerow(["mean", "", repr(report.mean_metrics["accuracy"])])
        else:
            writer.writerow(["fold", "n_test", "mae", "r2"])
            for f in report.per_fold:
                writer.writerow([f["fold"], f["n_test"], repr(f["mae"]), repr(f["r2"])])
            writer.writerow(["mean", "", repr(report.mean_metrics["mae"]),
                             repr(report.mean_metrics["r2"])])


def _write_budget_csv(path: Path, report: predict_mod.EvalReport) -> None:
    keys = [k for k in report.budget_curve[0] if k != "t"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + keys)
        for row in report.budget_curve:
            writer.writerow([row["t"]] + [repr(row[k]) for k in keys])


def run_report(config: ExperimentConfig) -> dict:
    """Re-derive the analysis bundle (trajectories, rankings, curve) from outputs."""
    out_dir = Path(config.output)
    report_path = out_dir / "report.json"
    if not report_path.is_file():
        raise PipelineError(f"report stage: missing pipeline output {report_path}")
    payload = json.loads(report_path.read_text())
    threshold = payload["threshold"]

    lo, hi = config.budget_range()
    window = tuple(config.regression_window) if config.regression_window else None
    t_needed = max(hi, window[1] if window else 1)
    runs, _ = collect_snapshots(config, t_needed)
    labels = np.array([predict_mod.LABEL_HIGH if r.final_accuracy > threshold
                       else predict_mod.LABEL_LOW for r in runs])

    weights = payload["report"]["feature_weights"]
    weight_vec = None
    if weights:
        weight_vec = np.zeros(len(weights))
        for pos, w in weights:
            weight_vec[pos] = w
    tables = predict_mod.feature_report(weight_vec, runs, labels)

    _write_table(out_dir / "trajectories.csv", tables["trajectories"])
    if tables["weights"] is not None:
        _write_table(out_dir / "weights.csv", tables["weights"])
    _write_group_means(out_dir / "group_means.csv", runs, labels)
    return tables


def _write_table(path: Path, table: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(table["header"])
        writer.writerows(table["rows"])


def _write_group_means(path: Path, runs, labels) -> None:
    t_max = min(r.num_epochs for r in runs)
    block = runs[0].blocks.shape[1]
    cols = _block_columns("pos_neg_concat" if block == 10 else "base")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "epoch"] + [f"mean_{c}" for c in cols])
        for label in (predict_mod.LABEL_HIGH, predict_mod.LABEL_LOW):
            members = [r for r, l in zip(runs, labels) if l == label]
            if not members:
                continue
            for e in range(t_max):
                stack = np.vstack([r.blocks[e] for r in members])
                writer.writerow([label, e + 1] + [repr(float(x)) for x in stack.mean(axis=0)])


def inspect_graph(run_dir: str | Path, epoch: int, representation: str,
                  norm: str = "l2") -> dict:
    """Partition sizes and edge count for one stored checkpoint."""
    series = read_run(run_dir)
    match = [c for c in series.epochs if c.epoch == epoch]
    if not match:
        raise PipelineError(f"inspect: run has no epoch {epoch}")
    g = build_graph(match[0], series.arch, representation, norm=norm)
    return {
        "run_id": series.run_id,
        "epoch": epoch,
        "representation": representation,
        "partitions": list(g.partitions),
        "num_nodes": g.num_nodes,
        "num_edges": g.num_edges,
    }
