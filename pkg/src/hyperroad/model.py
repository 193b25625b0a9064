"""Position-aware input embedding and stacked dual-channel aggregation.

Per layer, each road receives three messages: its own state (residual), the
mean of its graph neighbours' transformed states (edge channel), and the
mean over its hyperedges of each hyperedge's mean member state (hyperedge
channel).  A fusion function combines them into the next state.
"""

from __future__ import annotations

import struct
import json
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import numcore as nc
from .config import TrainConfig
from .errors import ConfigError, InputError
from .geo import project_positions
from .hypergraph import Hypergraph
from .numcore import Tensor
from .roadnet import RoadNetwork, neighborhoods

ModelParams = dict  # name -> np.ndarray, insertion-ordered

CHECKPOINT_MAGIC = b"HYRDCKPT"
CHECKPOINT_VERSION = 1


def positional_encoding(p, d: int, phi: float = 10.0, lam: float = 1000.0) -> np.ndarray:
    """Sinusoidal encoding of projected 2-D coordinates, shape (n, d).

    Columns 4k..4k+3 hold sin/cos of x and sin/cos of y at frequency
    ``1 / lam**(4k/d)`` after dividing the coordinate by ``phi``.
    """
    if d % 4:
        raise ConfigError(f"d must be divisible by 4 (got d={d})")
    p = np.asarray(p, dtype=np.float64).reshape(-1, 2)
    k = np.arange(d // 4)
    denom = lam ** (4 * k / d)
    x = (p[:, :1] / phi) / denom
    y = (p[:, 1:] / phi) / denom
    u = np.empty((len(p), d))
    u[:, 0::4] = np.sin(x)
    u[:, 1::4] = np.cos(x)
    u[:, 2::4] = np.sin(y)
    u[:, 3::4] = np.cos(y)
    return u


def attribute_onehot(net: RoadNetwork) -> np.ndarray:
    """Concatenated one-hot attribute blocks; a missing value leaves its block zero."""
    if net.schema is None:
        return np.zeros((net.n_roads, 0))
    cards = net.schema.cardinalities
    offsets = np.concatenate([[0], np.cumsum(cards)])
    f = np.zeros((net.n_roads, int(offsets[-1])))
    for i, road in enumerate(net.roads):
        for j, a in enumerate(road.attributes):
            if a is not None:
                f[i, offsets[j] + a] = 1.0
    return f


def mean_operator(groups, n_cols: int) -> sparse.csr_matrix:
    """Row-normalised 0/1 matrix: row r averages the columns listed in ``groups[r]``."""
    rows, cols, vals = [], [], []
    for r, members in enumerate(groups):
        if not members:
            continue
        w = 1.0 / len(members)
        for c in members:
            rows.append(r)
            cols.append(c)
            vals.append(w)
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(groups), n_cols))


@dataclass
class ModelInputs:
    """Everything the forward pass needs besides the parameters."""

    n_roads: int
    n_hyperedges: int
    neighbors: tuple[tuple[int, ...], ...]
    edge_mean: sparse.csr_matrix        # N x N
    road_to_edge_mean: sparse.csr_matrix  # M x N
    edge_to_road_mean: sparse.csr_matrix  # N x M
    positional: np.ndarray              # N x d
    attributes: np.ndarray              # N x sum|A|
    attr_values: np.ndarray             # N x m, -1 for missing
    attr_cards: tuple[int, ...]
    cluster_labels: np.ndarray
    road_to_hyperedges: tuple[tuple[int, ...], ...]


def prepare_inputs(net: RoadNetwork, hg: Hypergraph, config: TrainConfig) -> ModelInputs:
    if hg.n_roads != net.n_roads:
        raise InputError(f"hypergraph covers {hg.n_roads} roads, network has {net.n_roads}")
    nbrs = neighborhoods(net, directed=config.directed_neighbors)
    xy = project_positions(net.positions())
    u = positional_encoding(xy, config.d, config.phi, config.lam)
    if config.no_pe:
        u = np.zeros_like(u)
    m = net.n_attributes
    values = np.full((net.n_roads, m), -1, dtype=np.int64)
    for i, road in enumerate(net.roads):
        for j, a in enumerate(road.attributes):
            if a is not None:
                values[i, j] = a
    r2h = hg.road_to_hyperedges
    return ModelInputs(
        n_roads=net.n_roads,
        n_hyperedges=hg.n_hyperedges,
        neighbors=nbrs,
        edge_mean=mean_operator(nbrs, net.n_roads),
        road_to_edge_mean=mean_operator(hg.hyperedge_to_roads, net.n_roads),
        edge_to_road_mean=mean_operator(r2h, hg.n_hyperedges),
        positional=u,
        attributes=attribute_onehot(net) if config.mode == "attr" else np.zeros((net.n_roads, 0)),
        attr_values=values,
        attr_cards=tuple(net.schema.cardinalities) if net.schema is not None else (),
        cluster_labels=hg.cluster_labels,
        road_to_hyperedges=r2h,
    )


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(config: TrainConfig, n_roads: int, attr_cards=(), rng=None) -> ModelParams:
    """Xavier-uniform weights, zero biases, N(0, 0.1^2) road id table."""
    config.validate()
    if rng is None:
        rng = np.random.default_rng(config.seed)
    d = config.d
    p: ModelParams = {}
    p["id_table"] = rng.normal(0.0, 0.1, size=(n_roads, d))
    in_width = 2 * d + (sum(attr_cards) if config.mode == "attr" else 0)
    p["input_w"] = _xavier(rng, in_width, d)
    p["input_b"] = np.zeros((1, d))
    for layer in range(config.L):
        for w in ("w1", "w2", "w3"):
            p[f"layer{layer}.{w}"] = _xavier(rng, d, d)
        if config.fusion == "attention":
            for c in ("self", "edge", "hyper"):
                p[f"layer{layer}.att_{c}_w"] = _xavier(rng, d, 1)
                p[f"layer{layer}.att_{c}_b"] = np.zeros((1, 1))
        elif config.fusion == "mlp":
            p[f"layer{layer}.fuse_w"] = _xavier(rng, 3 * d, d)
            p[f"layer{layer}.fuse_b"] = np.zeros((1, d))
    p["hec_w"] = _xavier(rng, d, config.K)
    p["hec_b"] = np.zeros((1, config.K))
    if config.mode == "attr":
        for j, card in enumerate(attr_cards):
            p[f"attr{j}_w"] = _xavier(rng, d, card)
            p[f"attr{j}_b"] = np.zeros((1, card))
    return p


def input_embedding(P: dict[str, Tensor], inputs: ModelInputs, config: TrainConfig) -> Tensor:
    """r_i = MLP(q_i || u_i [|| f_i]) as one affine layer."""
    parts = [P["id_table"], Tensor(inputs.positional)]
    if config.mode == "attr":
        parts.append(Tensor(inputs.attributes))
    x = nc.concat_cols(*parts)
    if x.shape[1] != P["input_w"].shape[0]:
        raise ConfigError(f"input width {x.shape[1]} does not match input_w {P['input_w'].shape}")
    return x @ P["input_w"] + P["input_b"]


def edge_channel(h: Tensor, edge_mean: sparse.spmatrix, w1: Tensor) -> Tensor:
    """ReLU of the neighbour mean of W1-transformed states (zero for isolated roads)."""
    return nc.relu(nc.aggregate(edge_mean, h @ w1))


def hyperedge_channel(h: Tensor, road_to_edge_mean: sparse.spmatrix, edge_to_road_mean: sparse.spmatrix,
                      w2: Tensor, w3: Tensor) -> tuple[Tensor, Tensor]:
    """Node -> hyperedge -> node propagation; returns (hyperedge states, road messages)."""
    m = nc.relu(nc.aggregate(road_to_edge_mean, h @ w2))
    h_hyper = nc.relu(nc.aggregate(edge_to_road_mean, m @ w3))
    return m, h_hyper


def fuse(channels: list[Tensor], variant: str, P: dict[str, Tensor] | None = None,
         layer: int = 0, names=("self", "edge", "hyper")) -> Tensor:
    """Combine per-channel messages with mean, attention or MLP fusion."""
    if variant == "mean":
        acc = channels[0]
        for c in channels[1:]:
            acc = acc + c
        return acc * (1.0 / len(channels))
    if variant == "attention":
        scores = [c @ P[f"layer{layer}.att_{n}_w"] + P[f"layer{layer}.att_{n}_b"]
                  for c, n in zip(channels, names)]
        weights = nc.softmax_rows(nc.concat_cols(*scores))
        acc = None
        for k, c in enumerate(channels):
            term = nc.mul(c, nc.slice_cols(weights, k, k + 1))
            acc = term if acc is None else acc + term
        return acc
    if variant == "mlp":
        return nc.concat_cols(*channels) @ P[f"layer{layer}.fuse_w"] + P[f"layer{layer}.fuse_b"]
    raise ConfigError(f"unknown fusion variant {variant!r}")


@dataclass
class ForwardState:
    node_states: list[Tensor]       # h^(0) .. h^(L)
    hyperedge_states: list[Tensor]  # m^(1) .. m^(L)

    @property
    def h(self) -> Tensor:
        return self.node_states[-1]

    @property
    def m(self) -> Tensor:
        return self.hyperedge_states[-1]


def forward(P: dict[str, Tensor], inputs: ModelInputs, config: TrainConfig) -> ForwardState:
    if config.L < 1:
        raise ConfigError("L must be >= 1")
    h = input_embedding(P, inputs, config)
    hs, ms = [h], []
    for layer in range(config.L):
        m, h_hyper = hyperedge_channel(h, inputs.road_to_edge_mean, inputs.edge_to_road_mean,
                                       P[f"layer{layer}.w2"], P[f"layer{layer}.w3"])
        if config.no_dam:
            # hyperedge channel plus residual only
            if config.fusion == "mlp":
                channels = [h, Tensor(np.zeros(h.shape)), h_hyper]
                h = fuse(channels, "mlp", P, layer)
            else:
                h = fuse([h, h_hyper], config.fusion, P, layer, names=("self", "hyper"))
        else:
            h_edge = edge_channel(h, inputs.edge_mean, P[f"layer{layer}.w1"])
            h = fuse([h, h_edge, h_hyper], config.fusion, P, layer)
        hs.append(h)
        ms.append(m)
    return ForwardState(hs, ms)


def as_tensors(params: ModelParams, tape: nc.Tape | None = None) -> dict[str, Tensor]:
    if tape is None:
        return {k: Tensor(v, name=k) for k, v in params.items()}
    return {k: tape.watch(v, k) for k, v in params.items()}


def embed(params: ModelParams, inputs: ModelInputs, config: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Final road and hyperedge representations as plain arrays."""
    state = forward(as_tensors(params), inputs, config)
    return state.h.data.copy(), state.m.data.copy()


def save_checkpoint(path, params: ModelParams, config: TrainConfig) -> None:
    """Binary layout: magic, version, JSON metadata, then named float64 tensors.

    Each tensor is ``name_len:u32 name rows:u32 cols:u32 data:<f8[rows*cols]>``,
    all little-endian.
    """
    meta = json.dumps({"config": config.to_dict()}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<I", len(params)))
        for name, arr in params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path) -> tuple[ModelParams, TrainConfig]:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        if blob[:8] != CHECKPOINT_MAGIC:
            raise InputError(f"{path}: not a checkpoint file")
        pos = 8
        version, meta_len = struct.unpack_from("<II", blob, pos)
        pos += 8
        if version != CHECKPOINT_VERSION:
            raise InputError(f"{path}: unsupported checkpoint version {version}")
        meta = json.loads(blob[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len
        (count,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        params: ModelParams = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            nbytes = rows * cols * 8
            if pos + nbytes > len(blob):
                raise InputError(f"{path}: truncated tensor {name!r}")
            params[name] = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos) \
                .reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise InputError(f"{path}: corrupt checkpoint ({exc})") from exc
    return params, TrainConfig.from_dict(meta["config"])
