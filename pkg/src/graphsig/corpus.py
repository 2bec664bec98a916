"""Synthetic training corpus: a toy image task, an SGD trainer, and grid runs.

Stands in for large-scale image-classification farms: a deterministic
pattern-vs-noise task small enough that a two-conv/two-fc network trains in
seconds, swept over a learning-rate x dropout x seed grid with early
stopping, so the resulting runs span a wide band of final accuracies.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nnet
from .checkpoints import (ArchitectureSpec, CheckpointSeries, EpochCheckpoint,
                          LayerSpec, write_run)


class CorpusError(Exception):
    """Bad task/grid configuration."""


@dataclass(frozen=True)
class SyntheticTask:
    """Fixed geometric class templates plus Gaussian pixel noise."""

    classes: int = 4
    image_shape: tuple[int, int, int] = (1, 8, 8)
    train_size: int = 1024
    test_size: int = 512
    noise: float = 2.4
    seed: int = 7

    def __post_init__(self):
        if self.classes < 2:
            raise CorpusError("need at least two classes")
        if self.train_size % self.classes or self.test_size % self.classes:
            raise CorpusError("train/test sizes must be divisible by the class count")


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameter grid and training-loop settings."""

    learning_rates: tuple[float, ...] = (0.001, 0.003, 0.008, 0.02, 0.05, 0.1, 0.2, 0.4)
    dropouts: tuple[float, ...] = (0.0, 0.15, 0.3, 0.5, 0.7)
    seeds_per_cell: int = 3
    max_epochs: int = 20
    batch_size: int = 64
    patience: int = 5
    base_seed: int = 0

    def __post_init__(self):
        if not self.learning_rates or not self.dropouts or self.seeds_per_cell < 1:
            raise CorpusError("grids must be nonempty")
        if self.patience > self.max_epochs:
            raise CorpusError("patience cannot exceed max_epochs")

    @property
    def num_runs(self) -> int:
        return len(self.learning_rates) * len(self.dropouts) * self.seeds_per_cell


def class_templates(classes: int, shape: tuple[int, int, int]) -> np.ndarray:
    """One deterministic +/-1-ish pattern per class (stripes, checks, blobs)."""
    c, h, w = shape
    y, x = np.mgrid[0:h, 0:w]
    bank = [
        np.where(y % 2 == 0, 1.0, -1.0),                       # horizontal stripes
        np.where(x % 2 == 0, 1.0, -1.0),                       # vertical stripes
        np.where((x + y) % 2 == 0, 1.0, -1.0),                 # checkerboard
        np.where((np.abs(y - (h - 1) / 2) < h / 4)
                 & (np.abs(x - (w - 1) / 2) < w / 4), 1.0, -1.0),  # center block
        np.where((y + x) < (h + w) / 2, 1.0, -1.0),            # diagonal split
        np.where((y * w + x) % 3 == 0, 1.0, -1.0),             # diagonal grating
        np.where(np.abs(x - y) <= 1, 1.0, -1.0),               # main diagonal band
        np.where((y % 4) < 2, 1.0, -1.0),                      # wide stripes
    ]
    if classes > len(bank):
        raise CorpusError(f"at most {len(bank)} template classes supported")
    return np.stack([np.broadcast_to(t, (c, h, w)) for t in bank[:classes]])


def generate_task(spec: SyntheticTask):
    """Deterministic train/test splits: {x_train, y_train, x_test, y_test}."""
    rng = np.random.default_rng(spec.seed)
    templates = class_templates(spec.classes, spec.image_shape)

    def make_split(size):
        labels = np.tile(np.arange(spec.classes), size // spec.classes)
        images = templates[labels] + rng.normal(0.0, spec.noise,
                                                size=(size, *spec.image_shape))
        order = rng.permutation(size)
        return images[order], labels[order]

    x_train, y_train = make_split(spec.train_size)
    x_test, y_test = make_split(spec.test_size)
    return {"x_train": x_train, "y_train": y_train,
            "x_test": x_test, "y_test": y_test}


def default_arch(classes: int = 4,
                 input_shape: tuple[int, int, int] = (1, 8, 8)) -> ArchitectureSpec:
    """Two conv + two fc layers: exercises every graph-builder boundary."""
    return ArchitectureSpec(
        layers=(
            LayerSpec(kind="conv", filters=8, kernel=(3, 3)),
            LayerSpec(kind="pool", window=2),
            LayerSpec(kind="conv", filters=16, kernel=(3, 3)),
            LayerSpec(kind="fc", out_dim=32),
            LayerSpec(kind="fc", out_dim=classes),
        ),
        input_shape=input_shape,
    )


def _with_dropout(arch: ArchitectureSpec, rate: float) -> ArchitectureSpec:
    """Apply a dropout rate to every fc layer except the output layer."""
    fc_indices = [i for i, l in enumerate(arch.layers) if l.kind == "fc"]
    hidden_fc = set(fc_indices[:-1])
    layers = tuple(replace(l, dropout_rate=rate) if i in hidden_fc else l
                   for i, l in enumerate(arch.layers))
    return ArchitectureSpec(layers=layers, input_shape=arch.input_shape)


def _to_checkpoint(params, epoch: int, acc: float) -> EpochCheckpoint:
    tensors = tuple(np.asarray(p, dtype=np.float32) for p in params)
    return EpochCheckpoint(epoch=epoch, tensors=tensors, test_accuracy=acc)


def should_stop(accuracies, patience: int) -> bool:
    """True once the last ``patience`` accuracies failed to beat the prior best."""
    if len(accuracies) <= patience:
        return False
    best_before_window = max(accuracies[:-patience])
    return all(a <= best_before_window for a in accuracies[-patience:])


def stop_epoch(accuracies, patience: int) -> int:
    """Epoch at which training halts on this accuracy trace (trace oracle)."""
    for e in range(1, len(accuracies) + 1):
        if should_stop(accuracies[:e], patience):
            return e
    return len(accuracies)


def train_run(task, arch: ArchitectureSpec, lr: float, dropout: float, seed: int,
              run_id: str = "", max_epochs: int = 20, batch_size: int = 64,
              patience: int = 5) -> CheckpointSeries:
    """Minibatch SGD with per-epoch checkpoints and early stopping.

    Training halts once test accuracy has failed to improve for ``patience``
    consecutive epochs, or at ``max_epochs``.  A run whose loss or weights
    go non-finite is truncated at its last finite epoch and flagged; it
    stays in the corpus as a legitimately bad run.
    """
    arch = _with_dropout(arch, dropout)
    rng = np.random.default_rng(seed)
    params = nnet.init_params(arch, rng)
    x_train, y_train = task["x_train"], task["y_train"]
    n = x_train.shape[0]

    checkpoints = []
    acc_history = []
    diverged = False
    f32_max = float(np.finfo(np.float32).max)
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is handled, not noisy
        for epoch in range(1, max_epochs + 1):
            order = rng.permutation(n)
            ok = True
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                loss, grads = nnet.loss_and_grads(arch, params, x_train[idx], y_train[idx],
                                                  train=True, rng=rng)
                if not np.isfinite(loss):
                    ok = False
                    break
                for p, g in zip(params, grads):
                    p -= lr * g
            # weights must survive the float32 checkpoint cast as finite values
            if ok and not all(np.all(np.isfinite(p)) and np.abs(p).max() <= f32_max
                              for p in params):
                ok = False
            if not ok:
                diverged = True
                break
            acc = nnet.accuracy(arch, params, task["x_test"], task["y_test"])
            checkpoints.append(_to_checkpoint(params, epoch, acc))
            acc_history.append(acc)
            if should_stop(acc_history, patience):
                break

    if not checkpoints:
        raise CorpusError(f"run {run_id!r} diverged before completing one epoch (lr={lr})")
    final_acc = max(c.test_accuracy for c in checkpoints)
    return CheckpointSeries(
        run_id=run_id or f"run_lr{lr:g}_do{dropout:g}_s{seed}",
        arch=arch,
        hyperparams={"learning_rate": lr, "dropout": dropout, "seed": seed,
                     "batch_size": batch_size, "max_epochs": max_epochs,
                     "patience": patience, "diverged": diverged},
        epochs=tuple(checkpoints),
        final_accuracy=final_acc,
        early_stop_epoch=checkpoints[-1].epoch,
    )


def cell_seed(base_seed: int, cell_index: int) -> int:
    """Deterministic per-cell RNG seed derived from (base seed, cell index)."""
    return int(np.random.SeedSequence([base_seed, cell_index]).generate_state(1)[0])


_TASK_CACHE: dict = {}


def _cached_task(task_spec: SyntheticTask):
    if task_spec not in _TASK_CACHE:
        _TASK_CACHE.clear()
        _TASK_CACHE[task_spec] = generate_task(task_spec)
    return _TASK_CACHE[task_spec]


def _grid_cell(job) -> dict:
    """Train and persist one grid cell (top-level so worker pools can run it)."""
    task_spec, arch, config, out_dir, cell_index, lr, dropout, s = job
    seed = cell_seed(config.base_seed, cell_index)
    run_id = f"run{cell_index:04d}_lr{lr:g}_do{dropout:g}_s{s}"
    record = {"run_id": run_id, "lr": lr, "dropout": dropout, "seed": seed,
              "path": run_id}
    try:
        series = train_run(_cached_task(task_spec), arch, lr, dropout, seed,
                           run_id=run_id, max_epochs=config.max_epochs,
                           batch_size=config.batch_size, patience=config.patience)
        write_run(series, Path(out_dir) / run_id)
        record.update(final_accuracy=series.final_accuracy,
                      early_stop_epoch=series.early_stop_epoch,
                      epochs=len(series.epochs),
                      diverged=series.hyperparams["diverged"])
    except Exception as e:  # keep sweeping; a dead cell is data too
        record.update(error=str(e))
    return record


def run_grid(task_spec: SyntheticTask, arch: ArchitectureSpec, config: TrainerConfig,
             out_dir: str | Path, progress=None, workers: int = 1) -> dict:
    """Train the full grid, write every run directory plus a corpus manifest.

    Cells are independent (each owns an RNG stream derived from the base seed
    and its index) so ``workers > 1`` changes nothing but wall time.  Per-cell
    failures are recorded with an ``error`` field and the sweep continues.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = []
    cell_index = 0
    for lr in config.learning_rates:
        for dropout in config.dropouts:
            for s in range(config.seeds_per_cell):
                jobs.append((task_spec, arch, config, str(out_dir), cell_index,
                             lr, dropout, s))
                cell_index += 1

    runs = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for record in pool.map(_grid_cell, jobs, chunksize=1):
                runs.append(record)
                if progress is not None:
                    progress(record)
    else:
        for job in jobs:
            record = _grid_cell(job)
            runs.append(record)
            if progress is not None:
                progress(record)

    manifest = {
        "task": {"classes": task_spec.classes, "image_shape": list(task_spec.image_shape),
                 "train_size": task_spec.train_size, "test_size": task_spec.test_size,
                 "noise": task_spec.noise, "seed": task_spec.seed},
        "config": {"learning_rates": list(config.learning_rates),
                   "dropouts": list(config.dropouts),
                   "seeds_per_cell": config.seeds_per_cell,
                   "max_epochs": config.max_epochs, "batch_size": config.batch_size,
                   "patience": config.patience, "base_seed": config.base_seed},
        "arch": arch.to_json(),
        "runs": runs,
    }
    (out_dir / "corpus.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def balanced_subsample(records: list[dict], size: int, threshold: float,
                       seed: int = 0) -> list[dict]:
    """Even high/low subsample by final accuracy (selection rule is ours)."""
    if size % 2:
        raise CorpusError("balanced subsample size must be even")
    rng = np.random.default_rng(seed)
    high = [r for r in records if r.get("final_accuracy", 0.0) > threshold]
    low = [r for r in records if r.get("final_accuracy", 0.0) <= threshold
           and "final_accuracy" in r]
    half = size // 2
    if len(high) < half or len(low) < half:
        raise CorpusError(f"cannot draw {half}+{half} from {len(high)} high / {len(low)} low")
    pick_high = rng.choice(len(high), size=half, replace=False)
    pick_low = rng.choice(len(low), size=half, replace=False)
    chosen = [high[i] for i in sorted(pick_high)] + [low[i] for i in sorted(pick_low)]
    return chosen
