"""Adam and the reset-until-accurate fitting loop."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import AbstractTransition
from .counts import TransitionCounts
from .network import GenerativeModel, NumericalError, ParametricModel


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_batch: int = 2048
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def reset(self) -> None:
        self.step = 0
        self.m.clear()
        self.v.clear()

    def update(self, params: dict, grads: dict) -> None:
        self.step += 1
        t = self.step
        corr1 = 1 - self.beta1 ** t
        corr2 = 1 - self.beta2 ** t
        for name, g in grads.items():
            w = params[name]
            g = np.asarray(g, dtype=w.dtype)
            if name not in self.m:
                self.m[name] = np.zeros_like(w)
                self.v[name] = np.zeros_like(w)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[name] = w - (self.lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)).astype(w.dtype)


@dataclass
class FitConfig:
    min_steps: int = 2500
    max_steps: int = 20_000
    accuracy_threshold: float = 0.95
    accuracy_smoothing: float = 0.99
    plateau_smoothing: float = 0.99
    plateau_tol: float = 1e-4
    plateau_patience: int = 500
    plateau_warmup: int = 2500  # steps after a reset before plateau detection starts
    batch_size: int = 2048


@dataclass
class FitReport:
    accuracy: float
    steps: int
    resets: int = 0
    loss: float = float("nan")
    losses: list = field(default_factory=list, repr=False)


class _Plateau:
    """Flags a local minimum: smoothed change in running accuracy stays ~0."""

    def __init__(self, cfg: FitConfig):
        self.cfg = cfg
        self.prev = None
        self.delta = None
        self.flat = 0
        self.seen = 0

    def __call__(self, running: float) -> bool:
        self.seen += 1
        if self.seen <= self.cfg.plateau_warmup:
            self.prev = running
            return False
        if self.prev is not None:
            d = running - self.prev
            a = self.cfg.plateau_smoothing
            self.delta = d if self.delta is None else a * self.delta + (1 - a) * d
            self.flat = self.flat + 1 if abs(self.delta) < self.cfg.plateau_tol else 0
        self.prev = running
        return self.flat >= self.cfg.plateau_patience


def _check_finite(loss, grads, step):
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
        bad = sorted(k for k, g in grads.items() if not np.all(np.isfinite(g)))
        raise NumericalError(f"non-finite loss/gradient at step {step}: loss={loss}, tensors={bad}")


def _fit_loop(model, data, target, correct_fn, opt, cfg, rng, min_steps, max_steps):
    n = len(data)
    batch = min(n, cfg.batch_size, opt.max_batch)
    running = None
    plateau = _Plateau(cfg)
    resets = 0
    losses = []
    steps = 0
    loss = float("nan")
    while True:
        if batch < n:
            idx = rng.choice(n, size=batch, replace=False)
            xb, tb = data.take(idx), target[idx]
        else:
            xb, tb = data, target
        loss, grads, pred = model.loss_and_grad(xb, tb)
        _check_finite(loss, grads, steps)
        opt.update(model.params, grads)
        model.touch()
        steps += 1
        losses.append(loss)
        acc = float(np.mean(correct_fn(pred, tb, xb.M[xb.sidx])))
        a = cfg.accuracy_smoothing
        running = acc if running is None else a * running + (1 - a) * acc
        met = running >= cfg.accuracy_threshold
        if steps >= min_steps and met:
            break
        if steps >= max_steps:
            break
        if not met and plateau(running):
            model.reset_weights(int(rng.integers(2**31)))
            opt.reset()
            plateau = _Plateau(cfg)
            running = None
            resets += 1
    return FitReport(running, steps, resets, loss, losses)


def _binary_correct(pred, target, mask):
    return (pred > 0.5) == (target > 0.5)


def fit(model: ParametricModel, counts: TransitionCounts, opt: OptimizerState | None = None,
        min_steps: int | None = None, config: FitConfig | None = None, seed: int = 0,
        max_steps: int | None = None) -> FitReport:
    """Minimise BCE against the smoothed empirical success rates.

    Each step draws unique ``(X, b)`` keys uniformly (all of them when they fit
    in one batch). Stops once the running accuracy clears the threshold and at
    least ``min_steps`` steps ran; resets the weights on an accuracy plateau.
    """
    if len(counts) == 0:
        raise ValueError("cannot fit on an empty count table")
    cfg = config or FitConfig()
    opt = opt or OptimizerState()
    states, behaviours, rho = counts.training_set()
    data = model.batch(states, behaviours)
    rng = np.random.default_rng(seed)
    return _fit_loop(model, data, rho.astype(model.dtype), _binary_correct, opt, cfg, rng,
                     cfg.min_steps if min_steps is None else min_steps,
                     cfg.max_steps if max_steps is None else max_steps)


def reset_weights(model, seed: int) -> None:
    model.reset_weights(seed)


def generative_targets(dataset: list[AbstractTransition], n_attributes: int):
    """Unique ``(X, b)`` keys with per-slot empirical next-attribute frequencies."""
    table: dict = {}
    for t in dataset:
        key = (t.state, t.behaviour)
        freq = table.get(key)
        if freq is None:
            freq = table[key] = np.zeros((len(t.state), n_attributes))
        for slot, (_, attr) in enumerate(t.next_state.items):
            freq[slot, attr] += 1
    states = [k[0] for k in table]
    behaviours = [k[1] for k in table]
    targets = [f / f.sum(axis=1, keepdims=True) for f in table.values()]
    return states, behaviours, targets


def _slot_correct(pred, target, mask):
    # a key counts as correct when every real slot's mode matches
    ok = (pred.argmax(axis=2) == target.argmax(axis=2)) | ~mask
    return ok.all(axis=1)


def fit_generative(model: GenerativeModel, dataset: list[AbstractTransition], opt: OptimizerState | None = None,
                   min_steps: int | None = None, config: FitConfig | None = None, seed: int = 0,
                   max_steps: int | None = None) -> FitReport:
    if not dataset:
        raise ValueError("cannot fit on an empty dataset")
    cfg = config or FitConfig()
    opt = opt or OptimizerState()
    states, behaviours, targets = generative_targets(dataset, model.vocab.n_attributes)
    data = model.batch(states, behaviours)
    T = np.zeros((len(data), data.X.shape[1]) + (model.vocab.n_attributes,), dtype=model.dtype)
    for row, t in enumerate(targets):
        T[row, : len(t)] = t
    rng = np.random.default_rng(seed)
    return _fit_loop(model, data, T, _slot_correct, opt, cfg, rng,
                     cfg.min_steps if min_steps is None else min_steps,
                     cfg.max_steps if max_steps is None else max_steps)
