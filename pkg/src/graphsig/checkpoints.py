"""Architecture / checkpoint data model and its on-disk format.

A training run is stored as one directory:

    <run_id>/manifest.json      metadata + tensor index (byte offsets)
    <run_id>/epoch_0001.bin     all layer tensors of epoch 1, concatenated
    <run_id>/epoch_0002.bin     ...

Tensors are row-major 32-bit little-endian floats, written in layer order.
Everything else in the package consumes checkpoints only through
:func:`read_run` / :class:`CheckpointSeries`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class CheckpointError(Exception):
    """Invalid checkpoint data or a malformed run directory."""


@dataclass(frozen=True)
class LayerSpec:
    """One layer of the static architecture skeleton.

    kind is one of "conv", "pool", "fc".  Conv layers carry ``filters`` and
    ``kernel=(kh, kw)``; pool layers carry ``window`` (square, average mode);
    fc layers carry ``out_dim``.  ``dropout_rate`` only affects training.
    """

    kind: str
    filters: int = 0
    kernel: tuple[int, int] = (0, 0)
    window: int = 0
    out_dim: int = 0
    dropout_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("conv", "pool", "fc"):
            raise CheckpointError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.filters < 1 or min(self.kernel) < 1):
            raise CheckpointError("conv layer needs filters >= 1 and kernel dims >= 1")
        if self.kind == "pool" and self.window < 1:
            raise CheckpointError("pool layer needs window >= 1")
        if self.kind == "fc" and self.out_dim < 1:
            raise CheckpointError("fc layer needs out_dim >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise CheckpointError("dropout_rate must lie in [0, 1)")

    @property
    def learnable(self) -> bool:
        return self.kind in ("conv", "fc")

    def to_json(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv":
            d["filters"] = self.filters
            d["kernel"] = list(self.kernel)
        elif self.kind == "pool":
            d["window"] = self.window
        else:
            d["out_dim"] = self.out_dim
        if self.dropout_rate:
            d["dropout_rate"] = self.dropout_rate
        return d

    @staticmethod
    def from_json(d: dict) -> "LayerSpec":
        kind = d.get("kind")
        if kind == "conv":
            return LayerSpec(kind="conv", filters=int(d["filters"]),
                             kernel=tuple(d["kernel"]),
                             dropout_rate=float(d.get("dropout_rate", 0.0)))
        if kind == "pool":
            return LayerSpec(kind="pool", window=int(d["window"]))
        if kind == "fc":
            return LayerSpec(kind="fc", out_dim=int(d["out_dim"]),
                             dropout_rate=float(d.get("dropout_rate", 0.0)))
        raise CheckpointError(f"unknown layer kind in manifest: {kind!r}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Ordered layer list plus the input shape (channels, height, width).

    Shape propagation uses valid stride-1 convolutions
    (``h_out = h - h_ker + 1``) and exact-division average pooling; the
    constructor rejects any architecture whose shapes do not chain.
    """

    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, int, int]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise CheckpointError(f"bad input_shape {self.input_shape}")
        self.layer_shapes()  # validates

    def layer_shapes(self) -> list[tuple]:
        """Output shape of every layer; (c, h, w) until flatten, then (d,)."""
        shapes = []
        cur: tuple = self.input_shape
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                if len(cur) != 3:
                    raise CheckpointError(f"layer {i}: conv after flatten")
                c, h, w = cur
                kh, kw = layer.kernel
                if kh > h or kw > w:
                    raise CheckpointError(f"layer {i}: kernel {layer.kernel} larger than input {h}x{w}")
                cur = (layer.filters, h - kh + 1, w - kw + 1)
            elif layer.kind == "pool":
                if len(cur) != 3:
                    raise CheckpointError(f"layer {i}: pool after flatten")
                c, h, w = cur
                if h % layer.window or w % layer.window:
                    raise CheckpointError(
                        f"layer {i}: pool window {layer.window} does not divide {h}x{w}")
                cur = (c, h // layer.window, w // layer.window)
            else:
                cur = (layer.out_dim,)
            shapes.append(cur)
        return shapes

    def weight_shapes(self) -> list[tuple[int, ...]]:
        """Weight tensor shape per learnable layer, in layer order."""
        shapes = []
        cur: tuple = self.input_shape
        for layer in self.layers:
            if layer.kind == "conv":
                c, h, w = cur
                kh, kw = layer.kernel
                shapes.append((layer.filters, c, kh, kw))
                cur = (layer.filters, h - kh + 1, w - kw + 1)
            elif layer.kind == "pool":
                c, h, w = cur
                cur = (c, h // layer.window, w // layer.window)
            else:
                shapes.append((math.prod(cur), layer.out_dim))
                cur = (layer.out_dim,)
        return shapes

    @property
    def learnable_indices(self) -> list[int]:
        return [i for i, l in enumerate(self.layers) if l.learnable]

    def to_json(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [l.to_json() for l in self.layers]}

    @staticmethod
    def from_json(d: dict) -> "ArchitectureSpec":
        return ArchitectureSpec(
            layers=tuple(LayerSpec.from_json(l) for l in d["layers"]),
            input_shape=tuple(d["input_shape"]))


@dataclass(frozen=True)
class EpochCheckpoint:
    """Weights of every learnable layer at the end of one epoch."""

    epoch: int
    tensors: tuple[np.ndarray, ...]
    test_accuracy: float

    def __post_init__(self):
        object.__setattr__(self, "tensors", tuple(self.tensors))
        for t in self.tensors:
            if not np.all(np.isfinite(t)):
                raise CheckpointError(f"epoch {self.epoch}: non-finite tensor entries")
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise CheckpointError(f"epoch {self.epoch}: accuracy outside [0, 1]")


@dataclass(frozen=True)
class CheckpointSeries:
    """One training run: architecture, hyperparameters, per-epoch weights."""

    run_id: str
    arch: ArchitectureSpec
    hyperparams: dict
    epochs: tuple[EpochCheckpoint, ...]
    final_accuracy: float
    early_stop_epoch: int

    def __post_init__(self):
        object.__setattr__(self, "epochs", tuple(self.epochs))
        validate_series(self)


def validate_series(series: CheckpointSeries) -> None:
    """Raise CheckpointError unless the series satisfies all invariants."""
    if not series.run_id:
        raise CheckpointError("empty run_id")
    expected = series.arch.weight_shapes()
    prev_epoch = 0
    for ckpt in series.epochs:
        if ckpt.epoch <= prev_epoch or (prev_epoch == 0 and ckpt.epoch != 1):
            raise CheckpointError(
                f"epoch indices must increase strictly from 1, got {ckpt.epoch} after {prev_epoch}")
        prev_epoch = ckpt.epoch
        if len(ckpt.tensors) != len(expected):
            raise CheckpointError(
                f"epoch {ckpt.epoch}: {len(ckpt.tensors)} tensors, arch has {len(expected)} learnable layers")
        for li, (t, shape) in enumerate(zip(ckpt.tensors, expected)):
            if tuple(t.shape) != shape:
                raise CheckpointError(
                    f"epoch {ckpt.epoch} layer {li}: tensor shape {tuple(t.shape)} != {shape}")
    if not 0.0 <= series.final_accuracy <= 1.0:
        raise CheckpointError("final_accuracy outside [0, 1]")


def _epoch_filename(epoch: int) -> str:
    return f"epoch_{epoch:04d}.bin"


def write_run(series: CheckpointSeries, directory: str | Path) -> None:
    """Write a validated series to ``directory`` (manifest + per-epoch binaries)."""
    validate_series(series)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)

    learnable = series.arch.learnable_indices
    tensor_index = []
    for ckpt in series.epochs:
        offset = 0
        entries = []
        payload = bytearray()
        for layer_index, tensor in zip(learnable, ckpt.tensors):
            data = np.ascontiguousarray(tensor, dtype="<f4").tobytes()
            entries.append({
                "layer_index": layer_index,
                "shape": list(tensor.shape),
                "byte_offset": offset,
                "byte_length": len(data),
            })
            payload.extend(data)
            offset += len(data)
        (directory / _epoch_filename(ckpt.epoch)).write_bytes(bytes(payload))
        tensor_index.append({"epoch": ckpt.epoch, "tensors": entries})

    manifest = {
        "schema_version": SCHEMA_VERSION,
        "run_id": series.run_id,
        "arch": series.arch.to_json(),
        "hyperparams": series.hyperparams,
        "per_epoch_accuracy": [c.test_accuracy for c in series.epochs],
        "final_accuracy": series.final_accuracy,
        "early_stop_epoch": series.early_stop_epoch,
        "tensor_index": tensor_index,
    }
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True))


def read_run(directory: str | Path) -> CheckpointSeries:
    """Read and fully validate a run directory written by :func:`write_run`."""
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.is_file():
        raise CheckpointError(f"missing manifest: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as e:
        raise CheckpointError(f"malformed manifest {manifest_path}: {e}") from e

    try:
        arch = ArchitectureSpec.from_json(manifest["arch"])
        run_id = manifest["run_id"]
        accuracies = manifest["per_epoch_accuracy"]
        tensor_index = manifest["tensor_index"]
        final_accuracy = manifest["final_accuracy"]
        early_stop_epoch = manifest["early_stop_epoch"]
        hyperparams = manifest.get("hyperparams", {})
    except KeyError as e:
        raise CheckpointError(f"manifest missing field {e}") from e
    if len(accuracies) != len(tensor_index):
        raise CheckpointError(
            f"manifest lists {len(accuracies)} accuracies but {len(tensor_index)} epochs")

    expected = arch.weight_shapes()
    learnable = arch.learnable_indices
    epochs = []
    for acc, entry in zip(accuracies, tensor_index):
        epoch = int(entry["epoch"])
        path = directory / _epoch_filename(epoch)
        if not path.is_file():
            raise CheckpointError(f"missing epoch file: {path}")
        blob = path.read_bytes()
        entries = entry["tensors"]
        if [e["layer_index"] for e in entries] != learnable:
            raise CheckpointError(f"epoch {epoch}: tensor index does not match architecture")
        tensors = []
        for e, shape in zip(entries, expected):
            if tuple(e["shape"]) != shape:
                raise CheckpointError(
                    f"epoch {epoch} layer {e['layer_index']}: manifest shape "
                    f"{tuple(e['shape'])} != architecture shape {shape}")
            n = math.prod(shape)
            if e["byte_length"] != 4 * n:
                raise CheckpointError(
                    f"epoch {epoch} layer {e['layer_index']}: byte_length {e['byte_length']} != {4 * n}")
            end = e["byte_offset"] + e["byte_length"]
            if end > len(blob):
                raise CheckpointError(
                    f"epoch {epoch} layer {e['layer_index']}: file truncated "
                    f"({len(blob)} bytes, need {end})")
            flat = np.frombuffer(blob, dtype="<f4", count=n, offset=e["byte_offset"])
            tensors.append(flat.reshape(shape).copy())
        if len(blob) != sum(e["byte_length"] for e in entries):
            raise CheckpointError(f"epoch {epoch}: trailing bytes in {path.name}")
        for li, t in zip(learnable, tensors):
            if not np.all(np.isfinite(t)):
                raise CheckpointError(f"epoch {epoch} layer {li}: non-finite values")
        epochs.append(EpochCheckpoint(epoch=epoch, tensors=tuple(tensors),
                                      test_accuracy=float(acc)))

    return CheckpointSeries(
        run_id=run_id, arch=arch, hyperparams=hyperparams, epochs=tuple(epochs),
        final_accuracy=float(final_accuracy), early_stop_epoch=int(early_stop_epoch))


def lenet5(input_shape: tuple[int, int, int] = (3, 32, 32)) -> ArchitectureSpec:
    """The classic LeNet-5 layout used for structural oracles."""
    return ArchitectureSpec(
        layers=(
            LayerSpec(kind="conv", filters=6, kernel=(5, 5)),
            LayerSpec(kind="pool", window=2),
            LayerSpec(kind="conv", filters=16, kernel=(5, 5)),
            LayerSpec(kind="pool", window=2),
            LayerSpec(kind="fc", out_dim=120),
            LayerSpec(kind="fc", out_dim=84),
            LayerSpec(kind="fc", out_dim=10),
        ),
        input_shape=input_shape,
    )


def random_checkpoint(arch: ArchitectureSpec, epoch: int = 1, seed: int = 0,
                      scale: float = 0.1) -> EpochCheckpoint:
    """Gaussian-weight checkpoint with shapes matching ``arch`` (for tests/tools)."""
    rng = np.random.default_rng(seed)
    tensors = tuple(
        rng.normal(0.0, scale, size=shape).astype(np.float32)
        for shape in arch.weight_shapes())
    return EpochCheckpoint(epoch=epoch, tensors=tensors, test_accuracy=0.0)
