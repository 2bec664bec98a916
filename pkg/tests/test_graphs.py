"""Graph builders: structural counts, weight semantics, signed splits."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsig.checkpoints import (ArchitectureSpec, EpochCheckpoint, LayerSpec,
                                  lenet5, random_checkpoint)
from graphsig.graphs import (GraphBuildError, build_fc_graph, build_rolled_graph,
                             build_unrolled_graph, split_signed, subgraph_for,
                             write_edge_list)


def fc_arch(dims, input_dim):
    return ArchitectureSpec(
        layers=tuple(LayerSpec(kind="fc", out_dim=d) for d in dims),
        input_shape=(input_dim, 1, 1))


def ckpt_for(arch, seed=0, scale=0.5):
    return random_checkpoint(arch, seed=seed, scale=scale)


def assert_k_partite(g):
    offsets = g.partition_offsets()
    part_of = np.searchsorted(offsets, np.arange(g.num_nodes), side="right") - 1
    assert np.all(part_of[g.v] == part_of[g.u] + 1)
    assert np.all(g.u != g.v)
    pairs = set(zip(g.u.tolist(), g.v.tolist()))
    assert len(pairs) == g.num_edges  # no duplicates


class TestFcGraph:
    def test_3_2_1_counts(self):
        arch = fc_arch([2, 1], 3)
        g = build_fc_graph(ckpt_for(arch), arch)
        assert g.partitions == (3, 2, 1)
        assert g.num_edges == 3 * 2 + 2 * 1
        assert_k_partite(g)

    def test_all_zero_weights_edges_retained(self):
        arch = fc_arch([2], 3)
        ck = EpochCheckpoint(epoch=1, tensors=(np.zeros((3, 2), dtype=np.float32),),
                             test_accuracy=0.0)
        g = build_fc_graph(ck, arch)
        assert g.num_edges == 6
        assert np.all(g.weight == 0.0)

    def test_adjacency_matches_weight_matrix(self):
        # dense-embedding oracle: W appears verbatim as the bipartite block
        arch = fc_arch([4], 4)
        ck = ckpt_for(arch, seed=9)
        g = build_fc_graph(ck, arch)
        W = np.zeros((8, 8))
        W[g.u, g.v] = g.weight
        W[g.v, g.u] = g.weight
        assert np.allclose(W[:4, 4:], ck.tensors[0])
        assert np.allclose(W[4:, :4], np.asarray(ck.tensors[0]).T)

    def test_conv_layer_rejected(self):
        arch = lenet5()
        with pytest.raises(GraphBuildError):
            build_fc_graph(ckpt_for(arch), arch)


class TestRolledGraph:
    def test_lenet_table_counts(self):
        arch = lenet5()
        g = build_rolled_graph(ckpt_for(arch), arch)
        assert g.num_nodes == 239
        assert g.num_edges == 12954
        assert g.partitions == (3, 6, 16, 120, 84, 10)
        assert_k_partite(g)
        assert np.all(g.weight >= 0.0)

    def test_single_conv_zero_weights(self):
        arch = ArchitectureSpec(layers=(LayerSpec(kind="conv", filters=2, kernel=(2, 2)),),
                                input_shape=(1, 4, 4))
        ck = EpochCheckpoint(epoch=1, tensors=(np.zeros((2, 1, 2, 2), dtype=np.float32),),
                             test_accuracy=0.0)
        g = build_rolled_graph(ck, arch)
        assert g.num_nodes == 3
        assert g.num_edges == 2
        assert np.all(g.weight == 0.0)

    def test_unit_entry_norm_one_both_norms(self):
        arch = ArchitectureSpec(layers=(LayerSpec(kind="conv", filters=1, kernel=(3, 3)),),
                                input_shape=(1, 5, 5))
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        k[0, 0, 1, 2] = 1.0
        ck = EpochCheckpoint(epoch=1, tensors=(k,), test_accuracy=0.0)
        for norm in ("l1", "l2"):
            g = build_rolled_graph(ck, arch, norm=norm)
            assert g.num_edges == 1
            assert g.weight[0] == 1.0

    @pytest.mark.parametrize("norm,np_ord", [("l1", 1), ("l2", 2)])
    def test_conv_edges_match_bruteforce_channel_norms(self, norm, np_ord):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=3, kernel=(3, 3)),
                    LayerSpec(kind="conv", filters=4, kernel=(2, 2)),
                    LayerSpec(kind="fc", out_dim=5)),
            input_shape=(2, 6, 6))
        ck = ckpt_for(arch, seed=11)
        g = build_rolled_graph(ck, arch, norm=norm)
        lookup = {(int(u), int(v)): w for u, v, w in
                  zip(g.u, g.v, g.weight)}
        k1, k2, fc = (np.asarray(t, dtype=np.float64) for t in ck.tensors)
        # input channel k -> conv1 filter l
        for k in range(2):
            for l in range(3):
                expect = np.linalg.norm(k1[l, k].ravel(), ord=np_ord)
                assert lookup[(k, 2 + l)] == pytest.approx(expect, rel=1e-12)
        # conv1 filter k -> conv2 filter l
        for k in range(3):
            for l in range(4):
                expect = np.linalg.norm(k2[l, k].ravel(), ord=np_ord)
                assert lookup[(2 + k, 5 + l)] == pytest.approx(expect, rel=1e-12)
        # conv2 filter k -> fc neuron n: rows of this channel's positions
        positions = 3 * 3  # 6x6 -> conv3x3 -> 4x4 -> conv2x2 -> 3x3
        for k in range(4):
            for n in range(5):
                rows = fc[k * positions:(k + 1) * positions, n]
                expect = np.linalg.norm(rows, ord=np_ord)
                assert lookup[(5 + k, 9 + n)] == pytest.approx(expect, rel=1e-12)

    def test_fc_fc_edges_are_magnitudes(self):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=2, kernel=(3, 3)),
                    LayerSpec(kind="fc", out_dim=3),
                    LayerSpec(kind="fc", out_dim=2)),
            input_shape=(1, 4, 4))
        ck = ckpt_for(arch, seed=4)
        g = build_rolled_graph(ck, arch)
        lookup = {(int(u), int(v)): w for u, v, w in zip(g.u, g.v, g.weight)}
        w2 = np.asarray(ck.tensors[2])
        base_fc1, base_fc2 = 3, 6  # partitions (1, 2, 3, 2)
        for i in range(3):
            for j in range(2):
                assert lookup[(base_fc1 + i, base_fc2 + j)] == pytest.approx(abs(w2[i, j]))

    def test_filter_permutation_preserves_weight_multiset(self):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=4, kernel=(3, 3)),
                    LayerSpec(kind="conv", filters=3, kernel=(2, 2)),
                    LayerSpec(kind="fc", out_dim=4)),
            input_shape=(2, 6, 6))
        ck = ckpt_for(arch, seed=5)
        perm = np.array([2, 0, 3, 1])
        k1, k2, fc = (np.asarray(t).copy() for t in ck.tensors)
        k1p = k1[perm]              # permute conv1 filters
        k2p = k2[:, perm]           # their channel slices in conv2 follow
        ck_p = EpochCheckpoint(epoch=1, tensors=(k1p, k2p, fc), test_accuracy=0.0)
        g = build_rolled_graph(ck, arch)
        gp = build_rolled_graph(ck_p, arch)
        assert np.allclose(np.sort(g.weight), np.sort(gp.weight))

    def test_flatten_boundary_mismatch_raises(self):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=2, kernel=(3, 3)),
                    LayerSpec(kind="fc", out_dim=3)),
            input_shape=(1, 4, 4))
        good = ckpt_for(arch)
        bad = EpochCheckpoint(epoch=1, tensors=(good.tensors[0],
                                                np.zeros((7, 3), dtype=np.float32)),
                              test_accuracy=0.0)
        with pytest.raises(GraphBuildError, match="flatten boundary"):
            build_rolled_graph(bad, arch)


class TestUnrolledGraph:
    def test_lenet_table_counts(self):
        arch = lenet5()
        g = build_unrolled_graph(ckpt_for(arch), arch)
        assert g.num_nodes == 11166
        assert g.num_edges == 658024
        assert_k_partite(g)

    def test_fig2_toy_geometry(self):
        # 1x4x4 input, one 2x2 filter, stride 1: 16 + 9 nodes, 9*4 conv edges
        arch = ArchitectureSpec(layers=(LayerSpec(kind="conv", filters=1, kernel=(2, 2)),),
                                input_shape=(1, 4, 4))
        g = build_unrolled_graph(ckpt_for(arch), arch)
        assert g.partitions == (16, 9)
        assert g.num_edges == 36

    def test_conv_edge_weights_match_index_oracle(self):
        # independent index arithmetic for every (output, input) pair
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=2, kernel=(2, 3)),),
            input_shape=(3, 4, 5))
        ck = ckpt_for(arch, seed=21)
        g = build_unrolled_graph(ck, arch)
        K = np.asarray(ck.tensors[0], dtype=np.float64)
        lookup = {(int(u), int(v)): w for u, v, w in zip(g.u, g.v, g.weight)}
        c, h, w = 3, 4, 5
        oh, ow = 3, 3
        n_in = c * h * w
        count = 0
        for l in range(2):
            for y in range(oh):
                for x in range(ow):
                    v = n_in + l * (oh * ow) + y * ow + x
                    for ch in range(c):
                        for dy in range(2):
                            for dx in range(3):
                                u = ch * (h * w) + (y + dy) * w + (x + dx)
                                assert lookup[(u, v)] == K[l, ch, dy, dx]
                                count += 1
        assert count == g.num_edges

    def test_pool_edges_uniform_weight(self):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=2, kernel=(3, 3)),
                    LayerSpec(kind="pool", window=2)),
            input_shape=(1, 6, 6))
        g = build_unrolled_graph(ckpt_for(arch), arch)
        # partitions: 36, 2*16, 2*4
        assert g.partitions == (36, 32, 8)
        pool_edges = g.weight[g.u >= 36]
        assert len(pool_edges) == 8 * 4
        assert np.all(pool_edges == 0.25)

    def test_fc_edges_signed_verbatim(self):
        arch = ArchitectureSpec(
            layers=(LayerSpec(kind="conv", filters=2, kernel=(3, 3)),
                    LayerSpec(kind="fc", out_dim=3)),
            input_shape=(1, 4, 4))
        ck = ckpt_for(arch, seed=2)
        g = build_unrolled_graph(ck, arch)
        W = np.asarray(ck.tensors[1], dtype=np.float64)  # (8, 3)
        fc_mask = g.v >= 16 + 8
        u, v, wgt = g.u[fc_mask], g.v[fc_mask], g.weight[fc_mask]
        for ui, vi, wi in zip(u, v, wgt):
            assert wi == W[ui - 16, vi - 24]

    def test_node_ceiling(self):
        arch = lenet5()
        with pytest.raises(GraphBuildError, match="ceiling"):
            build_unrolled_graph(ckpt_for(arch), arch, node_ceiling=10_000)

    def test_determinism(self):
        arch = lenet5()
        a = build_unrolled_graph(ckpt_for(arch, seed=3), arch)
        b = build_unrolled_graph(ckpt_for(arch, seed=3), arch)
        assert np.array_equal(a.u, b.u)
        assert np.array_equal(a.v, b.v)
        assert np.array_equal(a.weight, b.weight)


class TestSignedSplit:
    def test_basic_sign_partition(self):
        arch = fc_arch([3], 1)
        ck = EpochCheckpoint(
            epoch=1, tensors=(np.array([[2.0, -3.0, 0.0]], dtype=np.float32),),
            test_accuracy=0.0)
        g = build_fc_graph(ck, arch)
        split = split_signed(g)
        assert split.positive.num_edges == 1 and split.positive.weight[0] == 2.0
        assert split.negative.num_edges == 1 and split.negative.weight[0] == 3.0

    def test_rolled_negative_split_is_edgeless(self):
        arch = lenet5()
        g = build_rolled_graph(ckpt_for(arch, seed=8), arch)
        assert split_signed(g).negative.num_edges == 0

    def test_remerge_reconstructs_edge_multiset(self):
        arch = fc_arch([6, 4], 5)
        g = build_fc_graph(ckpt_for(arch, seed=14), arch)
        split = split_signed(g)
        merged = sorted(
            list(zip(split.positive.u, split.positive.v, split.positive.weight))
            + [(u, v, -w) for u, v, w in
               zip(split.negative.u, split.negative.v, split.negative.weight)])
        original = sorted((u, v, w) for u, v, w in zip(g.u, g.v, g.weight)
                          if w != 0.0)
        assert merged == original

    def test_subgraph_selector(self):
        arch = fc_arch([3], 2)
        g = build_fc_graph(ckpt_for(arch, seed=1), arch)
        assert subgraph_for(g, "base") is g
        assert (subgraph_for(g, "pos").num_edges
                + subgraph_for(g, "neg").num_edges) <= g.num_edges
        with pytest.raises(GraphBuildError):
            subgraph_for(g, "sideways")


def test_edge_list_export(tmp_path):
    arch = fc_arch([2], 2)
    g = build_fc_graph(ckpt_for(arch, seed=0), arch)
    path = tmp_path / "edges.txt"
    write_edge_list(g, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "# partitions: 2,2"
    assert len(lines) == 1 + g.num_edges
    u, v, w = lines[1].split()
    assert int(u) == g.u[0] and int(v) == g.v[0] and float(w) == g.weight[0]


# property: count formulas hold for arbitrary generated architectures
@st.composite
def conv_arch(draw):
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
    for _ in range(draw(st.integers(1, 2))):
        layers.append(LayerSpec(kind="fc", out_dim=draw(st.integers(1, 5))))
    return ArchitectureSpec(layers=tuple(layers), input_shape=(c, size, size))


@settings(max_examples=40, deadline=None)
@given(conv_arch(), st.integers(0, 2**31))
def test_count_formulas_property(arch, seed):
    ck = random_checkpoint(arch, seed=seed)
    shapes = [arch.input_shape] + arch.layer_shapes()

    rolled = build_rolled_graph(ck, arch)
    conv_filters = [l.filters for l in arch.layers if l.kind == "conv"]
    fc_dims = [l.out_dim for l in arch.layers if l.kind == "fc"]
    assert rolled.num_nodes == arch.input_shape[0] + sum(conv_filters) + sum(fc_dims)
    widths = [arch.input_shape[0]] + conv_filters + fc_dims
    assert rolled.num_edges == sum(a * b for a, b in zip(widths, widths[1:]))
    assert_k_partite(rolled)

    unrolled = build_unrolled_graph(ck, arch)
    expected_nodes = sum(int(np.prod(s)) for s in shapes)
    assert unrolled.num_nodes == expected_nodes
    # conv blocks contribute f*oh*ow*(c*kh*kw) edges each
    expect_edges = 0
    cur = arch.input_shape
    for layer in arch.layers:
        if layer.kind == "conv":
            oh, ow = cur[1] - layer.kernel[0] + 1, cur[2] - layer.kernel[1] + 1
            expect_edges += layer.filters * oh * ow * cur[0] * layer.kernel[0] * layer.kernel[1]
            cur = (layer.filters, oh, ow)
        elif layer.kind == "pool":
            nh, nw = cur[1] // layer.window, cur[2] // layer.window
            expect_edges += cur[0] * nh * nw * layer.window ** 2
            cur = (cur[0], nh, nw)
        else:
            d_in = int(np.prod(cur))
            expect_edges += d_in * layer.out_dim
            cur = (layer.out_dim,)
    assert unrolled.num_edges == expect_edges
    assert_k_partite(unrolled)
