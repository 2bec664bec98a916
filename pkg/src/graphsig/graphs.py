"""Weighted k-partite graph builders for network checkpoints.

Three representations of one epoch checkpoint:

* ``fc``       -- neurons as nodes, raw signed weights as edges (fc-only nets).
* ``rolled``   -- one node per input channel / conv filter / fc neuron; edges
  between consecutive conv partitions carry the norm of the matching kernel
  channel slice, so the graph stays tiny and all weights are nonnegative.
* ``unrolled`` -- one node per activation position (input pixels, conv and
  pool outputs, fc neurons); conv edges carry the kernel entry applied at each
  sliding-window position, pool edges carry 1/(window area).

Node ids are contiguous and partition-major; every edge connects consecutive
partitions (u in partition p, v in partition p+1).  Builders are pure and
deterministic: identical checkpoint bytes give identical edge arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checkpoints import ArchitectureSpec, CheckpointError, EpochCheckpoint

DEFAULT_NODE_CEILING = 5_000_000


class GraphBuildError(Exception):
    """Architecture/representation combination that cannot be built."""


@dataclass(frozen=True)
class LayeredGraph:
    """Edge-list graph whose nodes split into consecutive layer partitions."""

    partitions: tuple[int, ...]
    u: np.ndarray          # int64, source node ids (partition p)
    v: np.ndarray          # int64, target node ids (partition p+1)
    weight: np.ndarray     # float64, signed except for rolled graphs
    representation_tag: str

    @property
    def num_nodes(self) -> int:
        return int(sum(self.partitions))

    @property
    def num_edges(self) -> int:
        return int(self.u.shape[0])

    def partition_offsets(self) -> np.ndarray:
        """Start node id of each partition, plus the total as a sentinel."""
        return np.concatenate(([0], np.cumsum(self.partitions)))

    def partition_of(self) -> np.ndarray:
        """Partition index of every node id."""
        offsets = self.partition_offsets()
        return np.repeat(np.arange(len(self.partitions)), np.diff(offsets))

    def edges(self):
        """Iterate (u, v, weight) tuples (small graphs / tests only)."""
        for a, b, w in zip(self.u, self.v, self.weight):
            yield int(a), int(b), float(w)


@dataclass(frozen=True)
class SignedSplit:
    """Positive / negative edge subgraphs; negative weights stored as magnitudes."""

    positive: LayeredGraph
    negative: LayeredGraph


def _graph(partitions, us, vs, ws, tag) -> LayeredGraph:
    if us:
        u = np.concatenate(us)
        v = np.concatenate(vs)
        w = np.concatenate(ws)
    else:
        u = v = np.empty(0, dtype=np.int64)
        w = np.empty(0, dtype=np.float64)
    return LayeredGraph(partitions=tuple(int(p) for p in partitions),
                        u=u.astype(np.int64, copy=False),
                        v=v.astype(np.int64, copy=False),
                        weight=w.astype(np.float64, copy=False),
                        representation_tag=tag)


def _bipartite_block(base_u: int, base_v: int, weights: np.ndarray):
    """Complete bipartite edges with weights[i, j] between node i and node j."""
    n, m = weights.shape
    u = base_u + np.repeat(np.arange(n, dtype=np.int64), m)
    v = base_v + np.tile(np.arange(m, dtype=np.int64), n)
    return u, v, weights.reshape(-1).astype(np.float64)


def _norm(block: np.ndarray, axis, norm: str) -> np.ndarray:
    if norm == "l1":
        return np.abs(block).sum(axis=axis)
    if norm == "l2":
        return np.sqrt((block.astype(np.float64) ** 2).sum(axis=axis))
    raise GraphBuildError(f"unknown norm {norm!r} (expected 'l1' or 'l2')")


def build_fc_graph(ckpt: EpochCheckpoint, arch: ArchitectureSpec) -> LayeredGraph:
    """Neuron graph of an fc-only network; edge (i, j) carries W[i, j] verbatim."""
    if any(l.kind != "fc" for l in arch.layers):
        raise GraphBuildError("fc representation supports fully-connected layers only")
    d_in = math.prod(arch.input_shape)
    partitions = [d_in] + [l.out_dim for l in arch.layers]
    offsets = np.concatenate(([0], np.cumsum(partitions)))
    us, vs, ws = [], [], []
    for i, w_mat in enumerate(ckpt.tensors):
        w_mat = np.asarray(w_mat)
        if w_mat.shape != (partitions[i], partitions[i + 1]):
            raise GraphBuildError(
                f"layer {i}: weight shape {w_mat.shape} != "
                f"({partitions[i]}, {partitions[i + 1]})")
        u, v, w = _bipartite_block(offsets[i], offsets[i + 1], w_mat)
        us.append(u), vs.append(v), ws.append(w)
    return _graph(partitions, us, vs, ws, "fc")


def _split_arch(arch: ArchitectureSpec):
    """Layers grouped as (conv/pool prefix, fc suffix); reject interleavings."""
    kinds = [l.kind for l in arch.layers]
    try:
        first_fc = kinds.index("fc")
    except ValueError:
        first_fc = len(kinds)
    if any(k != "fc" for k in kinds[first_fc:]):
        raise GraphBuildError("conv/pool layers after the first fc layer are unsupported")
    return arch.layers[:first_fc], arch.layers[first_fc:]


def build_rolled_graph(ckpt: EpochCheckpoint, arch: ArchitectureSpec,
                       norm: str = "l2") -> LayeredGraph:
    """Filter-level graph: channel slices of each kernel collapse to one norm edge.

    Partitions: input channels, one per conv layer (filter count), one per fc
    layer (out_dim).  Pool layers contribute nothing.  At the conv-to-fc
    boundary each conv filter connects to each fc neuron with the norm of the
    fc weight rows that read that filter's spatial positions.
    """
    conv_part, fc_part = _split_arch(arch)
    weight_iter = iter(ckpt.tensors)

    partitions = [arch.input_shape[0]]
    us, vs, ws = [], [], []
    base = 0
    spatial = arch.input_shape  # (c, h, w) entering the next layer

    for layer in conv_part:
        if layer.kind == "pool":
            spatial = (spatial[0], spatial[1] // layer.window, spatial[2] // layer.window)
            continue
        kernel = np.asarray(next(weight_iter), dtype=np.float64)  # (f, c, kh, kw)
        if kernel.shape[1] != partitions[-1]:
            raise GraphBuildError(
                f"kernel expects {kernel.shape[1]} channels, previous partition "
                f"has {partitions[-1]} nodes")
        # weights[k, l] = norm(K[l, k, :, :]) for previous node k, filter node l
        block = _norm(kernel, axis=(2, 3), norm=norm).T
        prev_base = base
        base += partitions[-1]
        u, v, w = _bipartite_block(prev_base, base, block)
        us.append(u), vs.append(v), ws.append(w)
        partitions.append(kernel.shape[0])
        spatial = (kernel.shape[0],
                   spatial[1] - layer.kernel[0] + 1, spatial[2] - layer.kernel[1] + 1)

    flat_channels = spatial[0]
    positions = spatial[1] * spatial[2]
    for j, layer in enumerate(fc_part):
        w_mat = np.asarray(next(weight_iter), dtype=np.float64)  # (D_in, D_out)
        prev_base = base
        base += partitions[-1]
        if j == 0:
            # flatten boundary: one edge per (channel, neuron), norm over the
            # rows that read this channel's spatial positions
            if w_mat.shape[0] != flat_channels * positions:
                raise GraphBuildError(
                    f"flatten boundary mismatch: fc expects {w_mat.shape[0]} inputs, "
                    f"preceding stack yields {flat_channels}x{positions}")
            block = _norm(w_mat.reshape(flat_channels, positions, -1), axis=1, norm=norm)
        else:
            # scalar "channel" per neuron pair; its norm is the magnitude,
            # keeping every rolled edge weight nonnegative
            block = np.abs(w_mat)
        u, v, w = _bipartite_block(prev_base, base, block)
        us.append(u), vs.append(v), ws.append(w)
        partitions.append(layer.out_dim)

    return _graph(partitions, us, vs, ws, "rolled")


def build_unrolled_graph(ckpt: EpochCheckpoint, arch: ArchitectureSpec,
                         node_ceiling: int = DEFAULT_NODE_CEILING) -> LayeredGraph:
    """Activation-position graph: one node per pixel/feature/neuron.

    Spatial nodes are indexed channel-major: (ch, y, x) -> ch*h*w + y*w + x,
    which is also the flatten order assumed at the conv-to-fc boundary.
    Construction aborts once the node count would exceed ``node_ceiling``.
    """
    conv_part, fc_part = _split_arch(arch)
    partitions = [math.prod(arch.input_shape)]
    sizes = [arch.input_shape]
    cur = arch.input_shape
    for layer in conv_part:
        if layer.kind == "pool":
            cur = (cur[0], cur[1] // layer.window, cur[2] // layer.window)
        else:
            cur = (layer.filters, cur[1] - layer.kernel[0] + 1, cur[2] - layer.kernel[1] + 1)
        sizes.append(cur)
        partitions.append(math.prod(cur))
    for layer in fc_part:
        partitions.append(layer.out_dim)
    total = sum(partitions)
    if total > node_ceiling:
        raise GraphBuildError(
            f"unrolled graph would have {total} nodes, above the ceiling {node_ceiling}")

    weight_iter = iter(ckpt.tensors)
    us, vs, ws = [], [], []
    base = 0
    part = 0

    def spatial_ids(base, shape):
        c, h, w = shape
        return base + (np.arange(c)[:, None, None] * (h * w)
                       + np.arange(h)[None, :, None] * w
                       + np.arange(w)[None, None, :])

    for layer in conv_part:
        c, h, w = sizes[part]
        out = sizes[part + 1]
        prev_base, cur_base = base, base + partitions[part]
        if layer.kind == "pool":
            p = layer.window
            oh, ow = out[1], out[2]
            # u[(ch,y,x),(dy,dx)], v broadcast alongside
            ch_off = np.arange(c)[:, None, None, None, None] * (h * w)
            yy = (np.arange(oh)[:, None] * p + np.arange(p)[None, :]) * w
            xx = np.arange(ow)[:, None] * p + np.arange(p)[None, :]
            u = (prev_base + ch_off
                 + yy[None, :, None, :, None] + xx[None, None, :, None, :])
            v_ids = spatial_ids(cur_base, out)
            v = np.broadcast_to(v_ids[:, :, :, None, None], u.shape)
            wgt = np.full(u.shape, 1.0 / (p * p))
        else:
            kernel = np.asarray(next(weight_iter), dtype=np.float64)  # (f, c, kh, kw)
            f, _, kh, kw = kernel.shape
            oh, ow = out[1], out[2]
            ch_off = np.arange(c)[None, None, None, :, None, None] * (h * w)
            yy = (np.arange(oh)[:, None] + np.arange(kh)[None, :]) * w
            xx = np.arange(ow)[:, None] + np.arange(kw)[None, :]
            # axes: (l, y, x, ch, dy, dx)
            u = (prev_base + ch_off
                 + yy[None, :, None, None, :, None] + xx[None, None, :, None, None, :])
            u = np.broadcast_to(u, (f, oh, ow, c, kh, kw))
            v_ids = spatial_ids(cur_base, out)
            v = np.broadcast_to(v_ids[:, :, :, None, None, None], u.shape)
            wgt = np.broadcast_to(kernel[:, None, None, :, :, :], u.shape)
        us.append(u.reshape(-1))
        vs.append(v.reshape(-1))
        ws.append(wgt.reshape(-1))
        base = cur_base
        part += 1

    for layer in fc_part:
        w_mat = np.asarray(next(weight_iter), dtype=np.float64)
        prev_base, cur_base = base, base + partitions[part]
        if w_mat.shape[0] != partitions[part]:
            raise GraphBuildError(
                f"flatten boundary mismatch: fc expects {w_mat.shape[0]} inputs, "
                f"previous partition has {partitions[part]} nodes")
        u, v, w = _bipartite_block(prev_base, cur_base, w_mat)
        us.append(u), vs.append(v), ws.append(w)
        base = cur_base
        part += 1

    return _graph(partitions, us, vs, ws, "unrolled")


def build_graph(ckpt: EpochCheckpoint, arch: ArchitectureSpec, representation: str,
                norm: str = "l2") -> LayeredGraph:
    """Dispatch on representation name ('fc' | 'rolled' | 'unrolled')."""
    if representation == "fc":
        return build_fc_graph(ckpt, arch)
    if representation == "rolled":
        return build_rolled_graph(ckpt, arch, norm=norm)
    if representation == "unrolled":
        return build_unrolled_graph(ckpt, arch)
    raise GraphBuildError(f"unknown representation {representation!r}")


def split_signed(g: LayeredGraph) -> SignedSplit:
    """Partition edges by sign; zero-weight edges are dropped from both sides."""
    pos = g.weight > 0
    neg = g.weight < 0
    positive = LayeredGraph(partitions=g.partitions, u=g.u[pos], v=g.v[pos],
                            weight=g.weight[pos], representation_tag=g.representation_tag)
    negative = LayeredGraph(partitions=g.partitions, u=g.u[neg], v=g.v[neg],
                            weight=-g.weight[neg], representation_tag=g.representation_tag)
    return SignedSplit(positive=positive, negative=negative)


def subgraph_for(g: LayeredGraph, signed_part: str) -> LayeredGraph:
    """Select 'base', 'pos' or 'neg' view of a graph ('pos_neg_concat' is two calls)."""
    if signed_part == "base":
        return g
    split = split_signed(g)
    if signed_part == "pos":
        return split.positive
    if signed_part == "neg":
        return split.negative
    raise GraphBuildError(f"unknown signed part {signed_part!r}")


def write_edge_list(g: LayeredGraph, path) -> None:
    """Debug export: '# partitions: n1,n2,...' header then 'u v weight' lines."""
    with open(path, "w") as fh:
        fh.write("# partitions: " + ",".join(str(p) for p in g.partitions) + "\n")
        for u, v, w in zip(g.u, g.v, g.weight):
            fh.write(f"{int(u)} {int(v)} {float(w)!r}\n")
