"""Graph and hypergraph pretext losses and negative samplers.

Reconstruction losses are literal sums of raw dot products over the batch:

    L_GR = -sum_(i,j) ( h_i.h_j - sum_n h_i.h_n )
    L_HR = -sum_(i,j) ( h_i.m_j - sum_n h_i.m_n )

Both are unbounded below.  ``logsigmoid=True`` swaps in the bounded
skip-gram form ``-log s(h_i.h_j) - sum_n log s(-h_i.h_n)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph

from . import numcore as nc
from .config import TrainConfig
from .errors import ConfigError
from .model import ForwardState, ModelInputs
from .numcore import Tensor

log = logging.getLogger(__name__)


def build_dbs_tables(neighbors, road_to_edges, hyperedges, n_roads: int):
    """All-pairs hop distances between roads and mean road-to-hyperedge distances.

    Unreachable pairs are ``inf``.
    """
    from .model import mean_operator

    adj = mean_operator(neighbors, n_roads)
    adj.data[:] = 1.0
    dg = csgraph.shortest_path(adj, method="D", directed=True, unweighted=True)
    if len(hyperedges):
        dh = np.column_stack([dg[:, list(roads)].mean(axis=1) for roads in hyperedges])
    else:
        dh = np.zeros((n_roads, 0))
    return dg, dh


def _kth_outside(excluded: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Map ranks ``k`` within the complement of sorted ``excluded`` to values."""
    shifted = excluded - np.arange(len(excluded))
    return k + np.searchsorted(shifted, k, side="right")


class NegativeSampler:
    """Draws negatives for anchor roads, uniformly or proportional to hop distance.

    Node negatives come from V minus the anchor and its neighbours; hyperedge
    negatives from the hyperedges not containing the anchor.
    """

    def __init__(self, variant: str, n_g: int, n_h: int, neighbors, road_to_edges, hyperedges,
                 n_roads: int, seed: int = 0, node_cap: int = 50_000):
        if variant not in ("random", "dbs"):
            raise ConfigError(f"unknown sampler {variant!r}")
        self.variant = variant
        self.n_g = n_g
        self.n_h = n_h
        self.n_roads = n_roads
        self.n_edges = len(hyperedges)
        self.rng = np.random.default_rng(seed)
        self._node_excl = [np.array(sorted(set(nb) | {i}), dtype=np.int64) for i, nb in enumerate(neighbors)]
        self._edge_excl = [np.array(sorted(he), dtype=np.int64) for he in road_to_edges]
        self.dist_g = self.dist_h = None
        if variant == "dbs":
            if n_roads > node_cap:
                raise ConfigError(f"distance-based sampling refused: {n_roads} roads exceeds cap {node_cap}")
            self.dist_g, self.dist_h = build_dbs_tables(neighbors, road_to_edges, hyperedges, n_roads)
        self._node_w: dict[int, np.ndarray] = {}
        self._edge_w: dict[int, np.ndarray] = {}

    @classmethod
    def from_inputs(cls, inputs: ModelInputs, config: TrainConfig, seed: int) -> "NegativeSampler":
        hyperedges = [() for _ in range(inputs.n_hyperedges)]
        for i, hes in enumerate(inputs.road_to_hyperedges):
            for j in hes:
                hyperedges[j] += (i,)
        return cls(config.sampler, config.N_G, config.N_H, inputs.neighbors, inputs.road_to_hyperedges,
                   hyperedges, inputs.n_roads, seed, config.dbs_node_cap)

    def node_support(self, i: int) -> np.ndarray:
        mask = np.ones(self.n_roads, dtype=bool)
        mask[self._node_excl[i]] = False
        if self.variant == "dbs":
            mask &= np.isfinite(self.dist_g[i])
        return np.flatnonzero(mask)

    def edge_support(self, i: int) -> np.ndarray:
        mask = np.ones(self.n_edges, dtype=bool)
        mask[self._edge_excl[i]] = False
        if self.variant == "dbs":
            mask &= np.isfinite(self.dist_h[i])
        return np.flatnonzero(mask)

    def _dbs_probs(self, cache, i, dist_row, support_fn):
        if i not in cache:
            support = support_fn(i)
            w = dist_row[support]
            cache[i] = (support, w / w.sum() if len(support) else w)
        return cache[i]

    def draw_nodes(self, i: int, n: int | None = None) -> np.ndarray | None:
        """``n`` negative roads for anchor ``i``; None when the support is empty."""
        n = self.n_g if n is None else n
        if self.variant == "random":
            excl = self._node_excl[i]
            size = self.n_roads - len(excl)
            if size <= 0:
                return None
            return _kth_outside(excl, self.rng.integers(0, size, size=n))
        support, p = self._dbs_probs(self._node_w, i, self.dist_g[i], self.node_support)
        if not len(support):
            return None
        return support[self.rng.choice(len(support), size=n, p=p)]

    def draw_hyperedges(self, i: int, n: int | None = None) -> np.ndarray | None:
        n = self.n_h if n is None else n
        if self.variant == "random":
            excl = self._edge_excl[i]
            size = self.n_edges - len(excl)
            if size <= 0:
                return None
            return _kth_outside(excl, self.rng.integers(0, size, size=n))
        support, p = self._dbs_probs(self._edge_w, i, self.dist_h[i], self.edge_support)
        if not len(support):
            return None
        return support[self.rng.choice(len(support), size=n, p=p)]


@dataclass
class Batch:
    """Positive pairs with their negatives, frozen for one loss evaluation."""

    gr_pairs: np.ndarray  # B x 2 (road, road)
    gr_neg: np.ndarray    # B x N_G
    hr_pairs: np.ndarray  # B' x 2 (road, hyperedge)
    hr_neg: np.ndarray    # B' x N_H


def make_batch(sampler: NegativeSampler, gr_pairs, hr_pairs) -> Batch:
    """Attach negatives; pairs whose anchor has no admissible negative are skipped."""
    gr_pairs = np.asarray(gr_pairs, dtype=np.int64).reshape(-1, 2)
    hr_pairs = np.asarray(hr_pairs, dtype=np.int64).reshape(-1, 2)
    keep, negs = [], []
    for k, (i, _) in enumerate(gr_pairs):
        if sampler.n_g == 0:
            keep.append(k)
            negs.append(np.zeros(0, dtype=np.int64))
            continue
        s = sampler.draw_nodes(int(i))
        if s is None:
            log.warning("road %d has no non-neighbour to sample; pair skipped", i)
            continue
        keep.append(k)
        negs.append(s)
    gr = gr_pairs[keep]
    gr_neg = np.array(negs, dtype=np.int64).reshape(len(gr), sampler.n_g)
    keep, negs = [], []
    for k, (i, _) in enumerate(hr_pairs):
        if sampler.n_h == 0:
            keep.append(k)
            negs.append(np.zeros(0, dtype=np.int64))
            continue
        s = sampler.draw_hyperedges(int(i))
        if s is None:
            log.warning("road %d belongs to every hyperedge; pair skipped", i)
            continue
        keep.append(k)
        negs.append(s)
    hr = hr_pairs[keep]
    hr_neg = np.array(negs, dtype=np.int64).reshape(len(hr), sampler.n_h)
    return Batch(gr, gr_neg, hr, hr_neg)


def _pair_scores(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise dot products as a column."""
    return nc.mul(a, b) @ Tensor(np.ones((a.shape[1], 1)))


def _reconstruction(h: Tensor, targets: Tensor, pairs: np.ndarray, neg: np.ndarray,
                    logsigmoid: bool) -> Tensor:
    if len(pairs) == 0:
        return nc.scale(nc.sum_all(h), 0.0)
    anchors = nc.gather_rows(h, pairs[:, 0])
    pos = nc.gather_rows(targets, pairs[:, 1])
    n_neg = neg.shape[1]
    if n_neg:
        rep = nc.gather_rows(h, np.repeat(pairs[:, 0], n_neg))
        negs = nc.gather_rows(targets, neg.reshape(-1))
    if not logsigmoid:
        loss = -nc.sum_all(nc.mul(anchors, pos))
        if n_neg:
            loss = loss + nc.sum_all(nc.mul(rep, negs))
        return loss
    loss = -nc.sum_all(nc.log_sigmoid(_pair_scores(anchors, pos)))
    if n_neg:
        loss = loss - nc.sum_all(nc.log_sigmoid(-_pair_scores(rep, negs)))
    return loss


def loss_graph_reconstruction(h: Tensor, batch: Batch, logsigmoid: bool = False) -> Tensor:
    return _reconstruction(h, h, batch.gr_pairs, batch.gr_neg, logsigmoid)


def loss_hypergraph_reconstruction(h: Tensor, m: Tensor, batch: Batch, logsigmoid: bool = False) -> Tensor:
    return _reconstruction(h, m, batch.hr_pairs, batch.hr_neg, logsigmoid)


def loss_hyperedge_classification(m: Tensor, labels, w: Tensor, b: Tensor) -> Tensor:
    """Summed cross-entropy of the classifier on each hyperedge's cluster label."""
    labels = np.asarray(labels, dtype=np.int64)
    if w.shape[1] != b.shape[1]:
        raise ConfigError("classifier weight and bias widths differ")
    if len(labels) and labels.max() >= w.shape[1]:
        raise ConfigError(f"cluster label {labels.max()} exceeds classifier width {w.shape[1]}")
    if m.shape[0] == 0:
        return nc.scale(nc.sum_all(w), 0.0)
    return nc.softmax_cross_entropy(m @ w + b, labels)


def loss_attribute_reconstruction(h: Tensor, attr_values: np.ndarray, decoders) -> Tensor:
    """Summed cross-entropy over present attribute values; ``-1`` marks missing.

    ``decoders`` is a list of (weight, bias) pairs, one per attribute.
    """
    total = nc.scale(nc.sum_all(h), 0.0)
    for j, (w, b) in enumerate(decoders):
        rows = np.flatnonzero(attr_values[:, j] >= 0)
        if not len(rows):
            continue
        vals = attr_values[rows, j]
        if vals.max() >= w.shape[1]:
            raise ConfigError(f"attribute {j}: decoder width {w.shape[1]} below value {vals.max()}")
        total = total + nc.softmax_cross_entropy(nc.gather_rows(h, rows) @ w + b, vals)
    return total


@dataclass
class LossBreakdown:
    l_gr: float
    l_hr: float
    l_hc: float
    l_ar: float
    total: float
    n_gr_pairs: int
    n_hr_pairs: int
    alpha: float
    total_tensor: Tensor | None = None

    def row(self) -> tuple[float, float, float, float, float]:
        return (self.l_gr, self.l_hr, self.l_hc, self.l_ar, self.total)


def total_loss(state: ForwardState, P: dict[str, Tensor], inputs: ModelInputs, batch: Batch,
               config: TrainConfig) -> LossBreakdown:
    """Joint objective L_GR + alpha (L_HR + L_HC) [+ w_AR L_AR] with ablation switches."""
    if config.alpha < 0:
        raise ConfigError("alpha must be >= 0")
    h, m = state.h, state.m
    zero = nc.scale(nc.sum_all(h), 0.0)
    l_gr = zero if config.no_gpt else loss_graph_reconstruction(h, batch, config.logsigmoid)
    if config.no_hpt:
        l_hr = l_hc = zero
    else:
        l_hr = loss_hypergraph_reconstruction(h, m, batch, config.logsigmoid)
        l_hc = zero if config.no_hec else loss_hyperedge_classification(
            m, inputs.cluster_labels, P["hec_w"], P["hec_b"])
    total = l_gr + nc.scale(l_hr + l_hc, config.alpha)
    l_ar = zero
    if config.mode == "attr" and inputs.attr_cards:
        decoders = [(P[f"attr{j}_w"], P[f"attr{j}_b"]) for j in range(len(inputs.attr_cards))]
        l_ar = loss_attribute_reconstruction(h, inputs.attr_values, decoders)
        total = total + nc.scale(l_ar, config.attr_weight)
    return LossBreakdown(l_gr.item(), l_hr.item(), l_hc.item(), l_ar.item(), total.item(),
                         len(batch.gr_pairs), len(batch.hr_pairs), config.alpha, total)
