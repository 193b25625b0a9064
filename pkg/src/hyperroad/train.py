"""Adam and the pretraining loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .config import TrainConfig
from .errors import NumericalError
from .hypergraph import Hypergraph
from .model import ModelInputs, ModelParams, as_tensors, forward, init_params, prepare_inputs
from .roadnet import RoadNetwork
from .ssl import LossBreakdown, NegativeSampler, make_batch, total_loss

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ValueError(f"adam: gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def positive_pairs(inputs: ModelInputs) -> tuple[np.ndarray, np.ndarray]:
    """(road, neighbour) pairs and (road, hyperedge) incidence pairs in index order."""
    gr = [(i, j) for i, nb in enumerate(inputs.neighbors) for j in nb]
    hr = [(i, j) for i, hes in enumerate(inputs.road_to_hyperedges) for j in hes]
    return (np.array(gr, dtype=np.int64).reshape(-1, 2), np.array(hr, dtype=np.int64).reshape(-1, 2))


@dataclass
class PretrainResult:
    params: ModelParams
    history: list[LossBreakdown]
    config: TrainConfig
    stopped_early: bool = False


def _rngs(seed: int):
    init, sampler, shuffle = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(init), int(sampler.generate_state(1)[0]), np.random.default_rng(shuffle))


def pretrain(net: RoadNetwork, hg: Hypergraph, config: TrainConfig, inputs: ModelInputs | None = None,
             progress=None) -> PretrainResult:
    """Minibatch Adam on the joint pretext loss.

    An epoch shuffles the positive road pairs into batches of ``batch_size``;
    incidence pairs are shuffled and split into the same number of batches.
    Negatives are redrawn every step.  ``max_steps`` caps the total step
    count across epochs.
    """
    config.validate()
    if hg.k != config.K:
        raise ValueError(f"hypergraph was clustered with k={hg.k}, config has K={config.K}")
    if inputs is None:
        inputs = prepare_inputs(net, hg, config)
    init_rng, sampler_seed, shuffle_rng = _rngs(config.seed)
    params = init_params(config, net.n_roads, inputs.attr_cards, rng=init_rng)
    sampler = NegativeSampler.from_inputs(inputs, config, sampler_seed)
    gr_all, hr_all = positive_pairs(inputs)
    adam = AdamState()
    history: list[LossBreakdown] = []
    n_batches = max(1, math.ceil(len(gr_all) / config.batch_size))
    best, stale, stopped = math.inf, 0, False
    step = 0
    for epoch in range(config.epochs):
        gr_order = shuffle_rng.permutation(len(gr_all))
        hr_order = shuffle_rng.permutation(len(hr_all))
        gr_chunks = [gr_order[k:k + config.batch_size] for k in range(0, max(len(gr_all), 1), config.batch_size)]
        hr_chunks = np.array_split(hr_order, n_batches)
        epoch_losses = []
        for b in range(n_batches):
            if config.max_steps is not None and step >= config.max_steps:
                break
            gr_idx = gr_chunks[b] if b < len(gr_chunks) else np.zeros(0, dtype=np.int64)
            batch = make_batch(sampler, gr_all[gr_idx], hr_all[hr_chunks[b]])
            tape = nc.Tape()
            P = as_tensors(params, tape)
            # overflow surfaces as a non-finite loss, reported just below
            with np.errstate(over="ignore", invalid="ignore"):
                state = forward(P, inputs, config)
                lb = total_loss(state, P, inputs, batch, config)
            if not math.isfinite(lb.total):
                raise NumericalError(f"non-finite loss at step {step} (epoch {epoch}): {lb.row()}")
            grads = nc.backward(lb.total_tensor)
            lb.total_tensor = None
            adam_step(params, grads, adam, config.lr)
            history.append(lb)
            epoch_losses.append(lb.total)
            step += 1
            if progress is not None:
                progress(step, lb)
        if config.max_steps is not None and step >= config.max_steps:
            break
        if config.patience and epoch_losses:
            cur = float(np.mean(epoch_losses))
            if cur < best - 1e-9 * max(1.0, abs(best)):
                best, stale = cur, 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop after epoch %d (no improvement for %d epochs)", epoch, stale)
                    stopped = True
                    break
    return PretrainResult(params, history, config, stopped)


def write_loss_history(history: list[LossBreakdown], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "l_gr", "l_hr", "l_hc", "l_ar", "total"])
        for k, lb in enumerate(history, start=1):
            w.writerow([k, *(repr(float(x)) for x in lb.row())])
