"""Checkpoint data model and on-disk round-trip."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsig.checkpoints import (ArchitectureSpec, CheckpointError, CheckpointSeries,
                                  EpochCheckpoint, LayerSpec, lenet5,
                                  random_checkpoint, read_run, write_run)


def fc_arch(dims, input_dim):
    return ArchitectureSpec(
        layers=tuple(LayerSpec(kind="fc", out_dim=d) for d in dims),
        input_shape=(input_dim, 1, 1))


def make_series(arch, n_epochs, seed=0, run_id="run"):
    rng = np.random.default_rng(seed)
    epochs = []
    for e in range(1, n_epochs + 1):
        tensors = tuple(rng.normal(size=s).astype(np.float32)
                        for s in arch.weight_shapes())
        epochs.append(EpochCheckpoint(epoch=e, tensors=tensors,
                                      test_accuracy=float(rng.uniform())))
    return CheckpointSeries(run_id=run_id, arch=arch,
                            hyperparams={"learning_rate": 0.1, "dropout": 0.0, "seed": seed},
                            epochs=tuple(epochs), final_accuracy=0.5,
                            early_stop_epoch=n_epochs)


class TestShapeAlgebra:
    def test_lenet_shapes(self):
        arch = lenet5()
        assert arch.weight_shapes() == [(6, 3, 5, 5), (16, 6, 5, 5),
                                        (400, 120), (120, 84), (84, 10)]
        assert arch.layer_shapes()[-1] == (10,)

    def test_lenet_layer_summary(self):
        # conv(6,5x5), conv(16,5x5), fc(120), fc(84), fc(10)
        arch = lenet5()
        learnable = [l for l in arch.layers if l.learnable]
        assert [(l.kind, l.filters or l.out_dim) for l in learnable] == [
            ("conv", 6), ("conv", 16), ("fc", 120), ("fc", 84), ("fc", 10)]
        assert all(l.kernel == (5, 5) for l in learnable if l.kind == "conv")

    def test_pool_must_divide(self):
        with pytest.raises(CheckpointError):
            ArchitectureSpec(layers=(LayerSpec(kind="conv", filters=2, kernel=(2, 2)),
                                     LayerSpec(kind="pool", window=2)),
                             input_shape=(1, 4, 4))  # conv output 3x3, pool 2 fails

    def test_kernel_too_large(self):
        with pytest.raises(CheckpointError):
            ArchitectureSpec(layers=(LayerSpec(kind="conv", filters=1, kernel=(5, 5)),),
                             input_shape=(1, 4, 4))


class TestRoundTrip:
    def test_two_layer_fc_three_epochs(self, tmp_path):
        series = make_series(fc_arch([4, 2], 3), 3)
        write_run(series, tmp_path / "r")
        back = read_run(tmp_path / "r")
        assert back.run_id == series.run_id
        assert back.arch == series.arch
        for a, b in zip(series.epochs, back.epochs):
            assert a.epoch == b.epoch
            for ta, tb in zip(a.tensors, b.tensors):
                assert ta.tobytes() == tb.tobytes()

    def test_nan_tensor_rejected(self):
        arch = fc_arch([2], 3)
        bad = np.ones((3, 2), dtype=np.float32)
        bad[0, 0] = np.nan
        with pytest.raises(CheckpointError):
            EpochCheckpoint(epoch=1, tensors=(bad,), test_accuracy=0.5)

    def test_manifest_offsets_are_cumulative_sizes(self, tmp_path):
        arch = lenet5()
        series = CheckpointSeries(
            run_id="lenet", arch=arch, hyperparams={},
            epochs=(random_checkpoint(arch, epoch=1, seed=3),),
            final_accuracy=0.0, early_stop_epoch=1)
        write_run(series, tmp_path / "r")
        manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
        entries = manifest["tensor_index"][0]["tensors"]
        running = 0
        for entry, shape in zip(entries, arch.weight_shapes()):
            assert entry["byte_offset"] == running
            assert entry["byte_length"] == 4 * math.prod(shape)
            running += entry["byte_length"]

    def test_epoch_indices_must_start_at_one(self):
        arch = fc_arch([2], 3)
        ck = random_checkpoint(arch, epoch=2)
        with pytest.raises(CheckpointError):
            CheckpointSeries(run_id="r", arch=arch, hyperparams={}, epochs=(ck,),
                             final_accuracy=0.0, early_stop_epoch=2)


class TestCorruption:
    def test_truncated_epoch_file_names_layer(self, tmp_path):
        series = make_series(fc_arch([4, 2], 3), 2)
        write_run(series, tmp_path / "r")
        target = tmp_path / "r" / "epoch_0002.bin"
        target.write_bytes(target.read_bytes()[:-8])
        with pytest.raises(CheckpointError, match="layer 1"):
            read_run(tmp_path / "r")

    def test_missing_epoch_file(self, tmp_path):
        series = make_series(fc_arch([4, 2], 3), 5)
        write_run(series, tmp_path / "r")
        (tmp_path / "r" / "epoch_0005.bin").unlink()
        with pytest.raises(CheckpointError, match="missing epoch file"):
            read_run(tmp_path / "r")

    def test_manifest_shape_mismatch(self, tmp_path):
        series = make_series(fc_arch([4, 2], 3), 1)
        write_run(series, tmp_path / "r")
        manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
        manifest["tensor_index"][0]["tensors"][0]["shape"] = [3, 5]
        (tmp_path / "r" / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError, match="shape"):
            read_run(tmp_path / "r")

    def test_malformed_manifest(self, tmp_path):
        d = tmp_path / "r"
        d.mkdir()
        (d / "manifest.json").write_text("{not json")
        with pytest.raises(CheckpointError, match="malformed"):
            read_run(d)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(CheckpointError, match="missing manifest"):
            read_run(tmp_path / "nope")


# random small architectures: conv/pool prefix + fc suffix on tiny inputs
@st.composite
def arch_and_series(draw):
    c = draw(st.integers(1, 3))
    size = draw(st.sampled_from([4, 6, 8]))
    h = w = size
    layers = []
    for _ in range(draw(st.integers(0, 2))):
        k = draw(st.integers(1, min(3, h, w)))
        layers.append(LayerSpec(kind="conv", filters=draw(st.integers(1, 4)),
                                kernel=(k, k)))
        h, w = h - k + 1, w - k + 1
        if h % 2 == 0 and w % 2 == 0 and h >= 2 and draw(st.booleans()):
            layers.append(LayerSpec(kind="pool", window=2))
            h, w = h // 2, w // 2
    for _ in range(draw(st.integers(1, 3))):
        layers.append(LayerSpec(kind="fc", out_dim=draw(st.integers(1, 6))))
    arch = ArchitectureSpec(layers=tuple(layers), input_shape=(c, size, size))
    seed = draw(st.integers(0, 2**31))
    n_epochs = draw(st.integers(1, 3))
    return make_series(arch, n_epochs, seed=seed)


@settings(max_examples=30, deadline=None)
@given(arch_and_series())
def test_round_trip_random_series(tmp_path_factory, series):
    d = tmp_path_factory.mktemp("rt")
    write_run(series, d / "r")
    back = read_run(d / "r")
    assert back.arch == series.arch
    assert len(back.epochs) == len(series.epochs)
    for a, b in zip(series.epochs, back.epochs):
        assert a.epoch == b.epoch
        assert a.test_accuracy == b.test_accuracy
        for ta, tb in zip(a.tensors, b.tensors):
            assert np.array_equal(ta, tb)
            assert ta.tobytes() == tb.tobytes()
