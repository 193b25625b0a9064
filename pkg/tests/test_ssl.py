import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import spearmanr

from hyperroad import numcore as nc
from hyperroad.config import TrainConfig
from hyperroad.errors import ConfigError
from hyperroad.model import as_tensors, forward, init_params
from hyperroad.numcore import Tensor
from hyperroad.ssl import (
    Batch, NegativeSampler, build_dbs_tables, loss_attribute_reconstruction, loss_graph_reconstruction,
    loss_hyperedge_classification, loss_hypergraph_reconstruction, make_batch, total_loss,
)

from conftest import analytic_grads, frozen_batch, grid_setup, loss_value


def path_nbrs(n):
    return [tuple(j for j in (i - 1, i + 1) if 0 <= j < n) for i in range(n)]


def recon_oracle(h, t, pairs, neg, logsig=False):
    ls = lambda z: -math.log1p(math.exp(-z)) if z > -30 else z  # noqa: E731
    total = 0.0
    for (i, j), ns in zip(pairs, neg):
        if logsig:
            total -= ls(float(h[i] @ t[j])) + sum(ls(-float(h[i] @ t[n])) for n in ns)
        else:
            total -= float(h[i] @ t[j]) - sum(float(h[i] @ t[n]) for n in ns)
    return total


def ce_oracle(logits, labels):
    total = 0.0
    for row, y in zip(logits, labels):
        mx = max(row)
        total -= row[y] - mx - math.log(sum(math.exp(v - mx) for v in row))
    return total


def test_reconstruction_trivial_cases():
    h = Tensor(np.zeros((4, 3)))
    batch = Batch(np.array([[0, 1], [2, 3]]), np.array([[2], [0]]), np.zeros((0, 2), int), np.zeros((0, 1), int))
    assert loss_graph_reconstruction(h, batch).item() == 0.0
    x = np.random.default_rng(0).normal(size=(4, 3))
    b0 = Batch(np.array([[0, 1], [2, 3]]), np.zeros((2, 0), int), np.zeros((0, 2), int), np.zeros((0, 0), int))
    expect = -(x[0] @ x[1] + x[2] @ x[3])
    assert loss_graph_reconstruction(Tensor(x), b0).item() == pytest.approx(expect, rel=1e-14)
    m = Tensor(np.zeros((2, 3)))
    hb = Batch(np.zeros((0, 2), int), np.zeros((0, 0), int), np.array([[0, 1]]), np.array([[0]]))
    assert loss_hypergraph_reconstruction(Tensor(x), m, hb).item() == 0.0
    m2 = np.vstack([np.zeros(3), np.ones(3)])
    assert loss_hypergraph_reconstruction(Tensor(x), Tensor(m2), hb).item() == pytest.approx(-x[0].sum())


@pytest.mark.parametrize("logsig", [False, True])
def test_reconstruction_matches_loop_oracle(logsig):
    _, net, hg, config, inputs = grid_setup(3, 3, k=2, d=8)
    sampler = NegativeSampler.from_inputs(inputs, config, seed=3)
    h = np.random.default_rng(1).normal(size=(net.n_roads, 8))
    m = np.random.default_rng(2).normal(size=(hg.n_hyperedges, 8))
    gr = np.array([[0, 1], [5, 6]])
    hr = np.array([[i, hg.road_to_hyperedges[i][0]] for i in (4, 5, 6)])
    batch = make_batch(sampler, gr, hr)
    got = loss_graph_reconstruction(Tensor(h), batch, logsig).item()
    assert got == pytest.approx(recon_oracle(h, h, batch.gr_pairs, batch.gr_neg, logsig), rel=1e-12)
    got = loss_hypergraph_reconstruction(Tensor(h), Tensor(m), batch, logsig).item()
    assert got == pytest.approx(recon_oracle(h, m, batch.hr_pairs, batch.hr_neg, logsig), rel=1e-12)


def test_hyperedge_classification():
    m = Tensor(np.random.default_rng(0).normal(size=(5, 4)))
    assert loss_hyperedge_classification(m, [0] * 5, Tensor(np.ones((4, 1))), Tensor([[0.0]])).item() == 0.0
    z = loss_hyperedge_classification(m, [0, 1, 2, 1, 0], Tensor(np.zeros((4, 3))), Tensor(np.zeros((1, 3))))
    assert z.item() == pytest.approx(5 * math.log(3), rel=1e-14)
    rng = np.random.default_rng(1)
    w, b = rng.normal(size=(4, 3)), rng.normal(size=(1, 3))
    labels = [2, 0, 1, 1, 2]
    got = loss_hyperedge_classification(m, labels, Tensor(w), Tensor(b)).item()
    assert got == pytest.approx(ce_oracle((m.data @ w + b).tolist(), labels), rel=1e-12)
    with pytest.raises(ConfigError):
        loss_hyperedge_classification(m, [3, 0, 0, 0, 0], Tensor(w), Tensor(b))


def test_attribute_reconstruction():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(4, 3))
    vals = np.array([[1, -1], [0, 2], [-1, 1], [2, 0]])
    none = np.full((4, 2), -1)
    zero = [(Tensor(np.zeros((3, 3))), Tensor(np.zeros((1, 3)))), (Tensor(np.zeros((3, 4))), Tensor(np.zeros((1, 4))))]
    assert loss_attribute_reconstruction(Tensor(h), none, zero).item() == 0.0
    got = loss_attribute_reconstruction(Tensor(h), vals, zero).item()
    assert got == pytest.approx(3 * math.log(3) + 3 * math.log(4), rel=1e-14)
    dec = [(rng.normal(size=(3, 3)), rng.normal(size=(1, 3))), (rng.normal(size=(3, 4)), rng.normal(size=(1, 4)))]
    expect = 0.0
    for j, (w, b) in enumerate(dec):
        rows = [i for i in range(4) if vals[i, j] >= 0]
        expect += ce_oracle((h[rows] @ w + b).tolist(), vals[rows, j])
    got = loss_attribute_reconstruction(Tensor(h), vals, [(Tensor(w), Tensor(b)) for w, b in dec]).item()
    assert got == pytest.approx(expect, rel=1e-12)


def test_zero_state_total_is_alpha_m_ln_k():
    _, net, hg, config, inputs = grid_setup(3, 3, k=2, d=8, alpha=0.3)
    params = {k: np.zeros_like(v) for k, v in init_params(config, net.n_roads).items()}
    lb = loss_value(params, inputs, config, frozen_batch(inputs, config))
    assert lb.total == pytest.approx(0.3 * hg.n_hyperedges * math.log(2), rel=1e-14)


def test_alpha_zero_reduces_to_no_hpt(small, init):
    _, net, hg, config, inputs = small
    batch = frozen_batch(inputs, config)
    a0 = loss_value(init, inputs, TrainConfig(K=2, d=8, L=2, alpha=0.0), batch)
    off = loss_value(init, inputs, TrainConfig(K=2, d=8, L=2, no_hpt=True), batch)
    assert a0.total == a0.l_gr == off.total


def test_default_alpha_composition(small, init):
    _, _, _, config, inputs = small
    lb = loss_value(init, inputs, config, frozen_batch(inputs, config))
    assert abs(lb.total - (lb.l_gr + 0.1 * (lb.l_hr + lb.l_hc))) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(a1=st.floats(0, 10), a2=st.floats(0, 10))
def test_loss_linear_in_alpha(a1, a2):
    _, net, _, _, inputs = grid_setup(3, 3, k=2, d=8)
    c1, c2 = TrainConfig(K=2, d=8, alpha=a1), TrainConfig(K=2, d=8, alpha=a2)
    params = init_params(c1, net.n_roads, rng=np.random.default_rng(0))
    batch = frozen_batch(inputs, c1)
    l1, l2 = loss_value(params, inputs, c1, batch), loss_value(params, inputs, c2, batch)
    assert l2.total - l1.total == pytest.approx((a2 - a1) * (l1.l_hr + l1.l_hc), rel=1e-9, abs=1e-9)


def test_ablation_switches(small, init):
    _, _, _, config, inputs = small
    batch = frozen_batch(inputs, config)
    assert loss_value(init, inputs, TrainConfig(K=2, d=8, no_gpt=True), batch).l_gr == 0.0
    lb = loss_value(init, inputs, TrainConfig(K=2, d=8, no_hec=True), batch)
    assert lb.l_hc == 0.0 and lb.l_hr != 0.0


def test_gradient_reaches_every_paired_road(small, init):
    _, _, _, config, inputs = small
    batch = frozen_batch(inputs, config)
    g = analytic_grads(init, inputs, config, batch)["id_table"]
    for i in set(batch.gr_pairs.ravel()):
        assert np.abs(g[i]).sum() > 0


def test_same_seed_same_breakdown(small, init):
    _, _, _, config, inputs = small
    a = loss_value(init, inputs, config, frozen_batch(inputs, config, seed=9))
    b = loss_value(init, inputs, config, frozen_batch(inputs, config, seed=9))
    assert a.row() == b.row()


def test_dbs_distances():
    dg, dh = build_dbs_tables(path_nbrs(3), [(), (0,), (0,)], [(1, 2)], 3)
    assert dg[0, 2] == 2 and dg[1, 1] == 0
    assert dh[0, 0] == 1.5


def test_dbs_node_cap():
    with pytest.raises(ConfigError, match="cap"):
        NegativeSampler("dbs", 1, 1, path_nbrs(5), [()] * 5, [], 5, node_cap=4)


@pytest.mark.parametrize("variant", ["random", "dbs"])
def test_sampler_support(variant):
    _, net, hg, config, inputs = grid_setup(5, 5, k=2, d=8, city_kw={"perturbation": 0.2})
    s = NegativeSampler.from_inputs(inputs, TrainConfig(K=2, d=8, sampler=variant), seed=1)
    rng = np.random.default_rng(2)
    for i in rng.integers(0, net.n_roads, size=20):
        i = int(i)
        bad_nodes = set(inputs.neighbors[i]) | {i}
        nodes = s.draw_nodes(i, 500)
        assert not bad_nodes & set(nodes.tolist())
        edges = s.draw_hyperedges(i, 500)
        assert not set(hg.road_to_hyperedges[i]) & set(edges.tolist())
        assert set(nodes.tolist()) <= set(s.node_support(i).tolist())


def test_random_sampler_is_uniform_over_support():
    nbrs = path_nbrs(8)
    s = NegativeSampler("random", 1, 1, nbrs, [()] * 8, [], 8, seed=0)
    draws = s.draw_nodes(3, 40_000)
    counts = np.bincount(draws, minlength=8)
    assert counts[[2, 3, 4]].sum() == 0
    support = counts[[0, 1, 5, 6, 7]]
    assert np.all(np.abs(support / 40_000 - 0.2) < 0.01)


def test_dbs_frequency_monotone_on_path():
    n = 20
    s = NegativeSampler("dbs", 1, 1, path_nbrs(n), [()] * n, [], n, seed=0)
    draws = s.draw_nodes(0, 10_000)
    counts = np.bincount(draws, minlength=n)[2:]
    rho = spearmanr(np.arange(2, n), counts).statistic
    assert rho > 0.9


def test_sampler_empty_support():
    s = NegativeSampler("random", 2, 1, [(1, 2), (0, 2), (0, 1)], [(0,), (0,), (0,)], [(0, 1, 2)], 3)
    assert s.draw_nodes(0) is None and s.draw_hyperedges(0) is None
    batch = make_batch(s, [[0, 1]], [[0, 0]])
    assert len(batch.gr_pairs) == 0 and len(batch.hr_pairs) == 0
