import numpy as np
import pytest

from hyperroad import numcore as nc
from hyperroad.config import TrainConfig
from hyperroad.hypergraph import build_hypergraph, extract_faces
from hyperroad.model import as_tensors, forward, init_params, prepare_inputs
from hyperroad.ssl import make_batch, NegativeSampler, total_loss
from hyperroad.synthgen import GridCitySpec, generate
from hyperroad.train import positive_pairs


def grid_city(rows=3, cols=3, **kw):
    return generate(GridCitySpec(rows=rows, cols=cols, **kw))


def grid_setup(rows=3, cols=3, k=2, seed=0, city_kw=None, **cfg):
    """Network, hypergraph, config and prepared inputs for a small grid."""
    city = grid_city(rows, cols, **(city_kw or {}))
    net = city.network
    hg = build_hypergraph(net, extract_faces(net), k, seed=seed)
    config = TrainConfig(K=k, seed=seed, **cfg).validate()
    return city, net, hg, config, prepare_inputs(net, hg, config)


def frozen_batch(inputs, config, seed=0):
    sampler = NegativeSampler.from_inputs(inputs, config, seed)
    gr, hr = positive_pairs(inputs)
    return make_batch(sampler, gr, hr)


def loss_value(params, inputs, config, batch):
    P = as_tensors(params)
    return total_loss(forward(P, inputs, config), P, inputs, batch, config)


def analytic_grads(params, inputs, config, batch):
    tape = nc.Tape()
    P = as_tensors(params, tape)
    lb = total_loss(forward(P, inputs, config), P, inputs, batch, config)
    return nc.backward(lb.total_tensor)


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_error(a, b, floor=1e-7):
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def small():
    return grid_setup(3, 3, k=2, d=8, L=2)


@pytest.fixture
def init(small):
    _, net, _, config, inputs = small
    return init_params(config, net.n_roads, inputs.attr_cards, np.random.default_rng(1))


ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
