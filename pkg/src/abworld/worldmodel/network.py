"""Attention-pooled set networks with hand-written backpropagation.

The trunk embeds every item vector and the behaviour vector to ``hidden``
units, then pools the items with multi-head scaled dot-product attention
whose queries come from the behaviour. Several heads let different parts of
the behaviour look at different items; a single head tends to lock onto a
few items and stop seeing the rest once its softmax saturates.

``ParametricModel`` puts a binary head on the pooled vector (success
probability); ``GenerativeModel`` puts a per-slot categorical head on it.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..abmdp import enumerate_behaviours
from ..core import EMPTY, AbstractState, Behaviour, Vocabulary, VocabularyError, apply_delta

MASK_FILL = -1e30


class NumericalError(FloatingPointError):
    pass


class Encoder:
    """Turns states and behaviours into padded arrays, caching per state."""

    def __init__(self, vocab: Vocabulary, items_per_behaviour: int = 1):
        self.vocab = vocab
        self.items_per_behaviour = items_per_behaviour
        w = vocab.width
        self._ident = np.zeros((len(vocab.identities), w))
        for i in range(1, len(vocab.identities)):
            self._ident[i, i - 1] = 1.0
        self._attr = np.eye(vocab.n_attributes, w)
        self._cache: dict[AbstractState, np.ndarray] = {}

    @property
    def item_dim(self) -> int:
        return self.vocab.item_dim

    @property
    def behaviour_dim(self) -> int:
        return self.items_per_behaviour * self.vocab.item_dim

    def _check(self, ident, attr):
        if not 0 <= ident < len(self.vocab.identities):
            raise VocabularyError(f"identity id {ident} not in vocabulary")
        if not 0 <= attr < self.vocab.n_attributes:
            raise VocabularyError(f"attribute id {attr} not in vocabulary")

    def state(self, state: AbstractState) -> np.ndarray:
        enc = self._cache.get(state)
        if enc is None:
            for i, a in state.items:
                self._check(i, a)
            idx_i = np.array([i for i, _ in state.items], dtype=int)
            idx_a = np.array([a for _, a in state.items], dtype=int)
            enc = np.concatenate([self._ident[idx_i], self._attr[idx_a]], axis=1)
            if len(self._cache) > 100_000:
                self._cache.clear()
            self._cache[state] = enc
        return enc

    def states(self, states: list[AbstractState]) -> tuple[np.ndarray, np.ndarray]:
        n = max(len(s) for s in states)
        X = np.zeros((len(states), n, self.item_dim))
        M = np.zeros((len(states), n), dtype=bool)
        for row, s in enumerate(states):
            enc = self.state(s)
            X[row, : len(s)] = enc
            M[row, : len(s)] = [i != EMPTY for i, _ in s.items]
        return X, M

    def behaviours(self, behaviours: list[Behaviour]) -> np.ndarray:
        out = np.zeros((len(behaviours), self.behaviour_dim))
        d = self.item_dim
        w = self.vocab.width
        for row, b in enumerate(behaviours):
            if b.size != self.items_per_behaviour:
                raise ValueError(f"behaviour has {b.size} changes, model expects {self.items_per_behaviour}")
            for j, (i, a) in enumerate(b.changes):
                self._check(i, a)
                out[row, j * d + i - 1] = 1.0
                out[row, j * d + w + a] = 1.0
        return out


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Batch(NamedTuple):
    """Keys ``(X, b)`` stored as indices into unique states and behaviours.

    ``X`` is ``(U, N, d)``, ``M`` its slot mask, ``B`` is ``(V, I*d)``; key
    ``j`` is ``(X[sidx[j]], B[bidx[j]])``. Many keys share a state, so the
    trunk works on the ``U x V`` grid with matmuls instead of per-key copies.
    """

    X: np.ndarray
    M: np.ndarray
    B: np.ndarray
    sidx: np.ndarray
    bidx: np.ndarray

    def __len__(self):
        return len(self.sidx)

    def take(self, idx) -> "Batch":
        """Sub-batch of the given keys, compacted to the states/behaviours they use."""
        us, si = np.unique(self.sidx[idx], return_inverse=True)
        ub, bi = np.unique(self.bidx[idx], return_inverse=True)
        return Batch(self.X[us], self.M[us], self.B[ub], si, bi)


def _index(items) -> tuple[list, np.ndarray]:
    table: dict = {}
    idx = np.fromiter((table.setdefault(x, len(table)) for x in items), dtype=np.intp, count=len(items))
    return list(table), idx


class _SetNetwork:
    """Shared trunk. Subclasses add a head and its loss."""

    kind = "trunk"

    def __init__(self, vocab: Vocabulary, items_per_behaviour: int = 1, hidden: int = 128,
                 seed: int = 0, dtype=np.float32, heads: int = 4):
        if hidden % heads:
            raise ValueError("hidden must be a multiple of heads")
        self.heads = heads
        self.vocab = vocab
        self.items_per_behaviour = items_per_behaviour
        self.hidden = hidden
        self.dtype = np.dtype(dtype)
        self.encoder = Encoder(vocab, items_per_behaviour)
        self.params: dict[str, np.ndarray] = {}
        self.seed = seed
        self.version = 0
        self._memo: dict = {}
        self.reset_weights(seed)

    # -- parameters -------------------------------------------------------
    def _trunk_shapes(self):
        d, db, h = self.encoder.item_dim, self.encoder.behaviour_dim, self.hidden
        return {
            "W_in": (d, h), "b_in": (h,),
            "W_b": (db, h), "b_b": (h,),
            "W_q": (h, h), "W_k": (h, h), "W_v": (h, h),
        }

    def _head_shapes(self):
        raise NotImplementedError

    def shapes(self) -> dict:
        return {**self._trunk_shapes(), **self._head_shapes()}

    # Output-layer parameters start at zero.
    zero_init: tuple[str, ...] = ()

    def reset_weights(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.shapes().items():
            if name.startswith("b") or name in self.zero_init:
                params[name] = np.zeros(shape)
            else:
                params[name] = _uniform(rng, shape[0], shape)
        self.params = {k: v.astype(self.dtype) for k, v in params.items()}
        self.seed = seed
        self.touch()

    def touch(self) -> None:
        """Invalidate cached predictions after a weight change."""
        self.version += 1
        self._memo.clear()

    def n_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def behaviours_for(self, state: AbstractState) -> list[Behaviour]:
        return enumerate_behaviours(state, self.items_per_behaviour, self.vocab.n_attributes)

    def batch(self, states: list[AbstractState], behaviours: list[Behaviour]) -> Batch:
        if len(states) != len(behaviours):
            raise ValueError("states and behaviours differ in length")
        us, sidx = _index(states)
        ub, bidx = _index(behaviours)
        X, M = self.encoder.states(us)
        B = self.encoder.behaviours(ub)
        return Batch(X.astype(self.dtype), M, B.astype(self.dtype), sidx, bidx)

    # -- trunk ------------------------------------------------------------
    def _slices(self):
        dh = self.hidden // self.heads
        return [slice(j * dh, (j + 1) * dh) for j in range(self.heads)]

    def _trunk_forward(self, batch: Batch):
        """Per-key attended vectors ``(B, hidden)`` and the cache for backprop."""
        p = self.params
        X, M, B = batch.X, batch.M, batch.B
        scale = float(1.0 / np.sqrt(self.hidden // self.heads))
        Hpre = X @ p["W_in"] + p["b_in"]              # U,N,h
        H = np.maximum(Hpre, 0)
        Gpre = B @ p["W_b"] + p["b_b"]                # V,h
        G = np.maximum(Gpre, 0)
        Q = G @ p["W_q"]
        K = H @ p["W_k"]
        Vv = H @ p["W_v"]
        mask = M[:, :, None]
        A, P = [], []
        for sl in self._slices():
            S = K[:, :, sl] @ (Q[:, sl].T * scale)    # U,N,V
            S = np.where(mask, S, MASK_FILL)
            S = S - S.max(axis=1, keepdims=True)
            E = np.exp(S) * mask
            a = E / E.sum(axis=1, keepdims=True)
            A.append(a)
            P.append(a.transpose(0, 2, 1) @ Vv[:, :, sl])   # U,V,dh
        pooled = np.concatenate(P, axis=2)
        cache = dict(batch=batch, Hpre=Hpre, H=H, Gpre=Gpre, G=G, Q=Q, K=K, Vv=Vv, A=A, scale=scale)
        return pooled[batch.sidx, batch.bidx], cache

    def _trunk_backward(self, c, dpooled, dG, grads, dH=None):
        """``dpooled`` is per key; ``dG`` is per unique behaviour, ``dH`` per unique state."""
        p = self.params
        batch = c["batch"]
        H, K, Q, Vv = c["H"], c["K"], c["Q"], c["Vv"]
        U, n, h = H.shape
        V = len(c["G"])
        dP = _scatter_sum(dpooled, batch.sidx * V + batch.bidx, U * V).reshape(U, V, h)
        dK, dVv, dQ = np.zeros_like(K), np.zeros_like(Vv), np.zeros_like(Q)
        for a, sl in zip(c["A"], self._slices()):
            dPj = dP[:, :, sl]
            da = Vv[:, :, sl] @ dPj.transpose(0, 2, 1)     # U,N,V
            dVv[:, :, sl] = a @ dPj
            dS = a * (da - (a * da).sum(axis=1, keepdims=True)) * c["scale"]
            dK[:, :, sl] = dS @ Q[:, sl]
            dQ[:, sl] = dS.transpose(2, 0, 1).reshape(V, U * n) @ K[:, :, sl].reshape(U * n, -1)
        Hf = H.reshape(U * n, h)
        grads["W_k"] = Hf.T @ dK.reshape(U * n, h)
        grads["W_v"] = Hf.T @ dVv.reshape(U * n, h)
        grads["W_q"] = c["G"].T @ dQ
        dH_attn = dK @ p["W_k"].T + dVv @ p["W_v"].T
        dH = dH_attn if dH is None else dH + dH_attn
        dGpre = (dQ @ p["W_q"].T + dG) * (c["Gpre"] > 0)
        grads["W_b"] = batch.B.T @ dGpre
        grads["b_b"] = dGpre.sum(axis=0)
        dHpre = dH * (c["Hpre"] > 0)
        d = batch.X.shape[-1]
        grads["W_in"] = batch.X.reshape(-1, d).T @ dHpre.reshape(-1, h)
        grads["b_in"] = dHpre.sum(axis=(0, 1))
        return grads


class ParametricModel(_SetNetwork):
    """``f(X, b) -> (0, 1)``: probability that behaviour ``b`` succeeds from ``X``."""

    kind = "parametric"
    zero_init = ("w_out",)

    def _head_shapes(self):
        h = self.hidden
        return {"W_1": (2 * h, h), "b_1": (h,), "w_out": (h,), "b_out": ()}

    def logits(self, batch: Batch, keep_cache=False):
        p = self.params
        h = self.hidden
        pooled, cache = self._trunk_forward(batch)
        # concat([pooled, G]) @ W_1 with the behaviour half computed once per behaviour
        Gh = cache["G"] @ p["W_1"][h:] + p["b_1"]
        Upre = pooled @ p["W_1"][:h] + Gh[batch.bidx]
        U = np.maximum(Upre, 0)
        logit = U @ p["w_out"] + p["b_out"]
        if keep_cache:
            cache.update(pooled=pooled, Upre=Upre, U=U)
            return logit, cache
        return logit

    def loss_and_grad(self, batch: Batch, target):
        """Mean binary cross-entropy against soft targets and its gradient."""
        logit, c = self.logits(batch, keep_cache=True)
        target = np.asarray(target, dtype=logit.dtype)
        n = len(target)
        # softplus(z) - t*z, evaluated stably
        loss = float(np.mean(np.logaddexp(0, logit) - target * logit))
        prob = _sigmoid(logit)
        dlogit = (prob - target) / n
        p = self.params
        grads = {"w_out": c["U"].T @ dlogit, "b_out": np.asarray(dlogit.sum())}
        dUpre = np.outer(dlogit, p["w_out"]) * (c["Upre"] > 0)
        dUb = _scatter_sum(dUpre, batch.bidx, len(batch.B))
        h = self.hidden
        grads["W_1"] = np.concatenate([c["pooled"].T @ dUpre, c["G"].T @ dUb])
        grads["b_1"] = dUb.sum(axis=0)
        self._trunk_backward(c, dUpre @ p["W_1"][:h].T, dUb @ p["W_1"][h:].T, grads)
        return loss, grads, prob

    def predict_batch(self, states: list[AbstractState], behaviours: list[Behaviour]) -> np.ndarray:
        return _sigmoid(self.logits(self.batch(states, behaviours))).astype(np.float64)

    def predict(self, state: AbstractState, behaviour: Behaviour) -> float:
        for i, _ in behaviour.changes:
            if state.slot_of(i) is None:
                raise VocabularyError(f"identity {i} not present in state")
        return float(self.predict_batch([state], [behaviour])[0])

    def success_probs(self, state: AbstractState) -> np.ndarray:
        """Predictions for every behaviour of ``behaviours_for(state)``, memoised per weight version."""
        hit = self._memo.get(state)
        if hit is None:
            bs = self.behaviours_for(state)
            hit = self.predict_batch([state] * len(bs), bs)
            self._memo[state] = hit
        return hit


class GenerativeModel(_SetNetwork):
    """Per-slot categorical distribution over next attributes given ``(X, b)``."""

    kind = "generative"
    zero_init = ("W_2",)

    def _head_shapes(self):
        h, m = self.hidden, self.vocab.n_attributes
        return {"W_1": (3 * h, h), "b_1": (h,), "W_2": (h, m), "b_2": (m,)}

    def _forward(self, batch: Batch):
        p = self.params
        P, cache = self._trunk_forward(batch)
        G = cache["G"][batch.bidx]
        H = cache["H"][batch.sidx]
        b, n, h = H.shape
        Z = np.concatenate([H, np.broadcast_to(P[:, None], (b, n, h)), np.broadcast_to(G[:, None], (b, n, h))],
                           axis=2)
        Upre = Z @ p["W_1"] + p["b_1"]
        U = np.maximum(Upre, 0)
        logits = U @ p["W_2"] + p["b_2"]
        cache.update(Z=Z, Upre=Upre, U=U)
        return logits, cache

    def distributions(self, batch: Batch) -> np.ndarray:
        logits, _ = self._forward(batch)
        return _softmax(logits)

    def loss_and_grad(self, batch: Batch, target):
        """Cross-entropy of per-slot attribute targets, averaged over real slots."""
        logits, c = self._forward(batch)
        target = np.asarray(target, dtype=logits.dtype)
        logp = logits - _logsumexp(logits)
        probs = np.exp(logp)
        w = batch.M[batch.sidx].astype(logits.dtype)
        n = w.sum()
        loss = float(-((target * logp).sum(axis=2) * w).sum() / n)
        dlogits = (probs - target) * (w / n)[:, :, None]
        p = self.params
        h = self.hidden
        grads = {"W_2": c["U"].reshape(-1, h).T @ dlogits.reshape(-1, dlogits.shape[-1]),
                 "b_2": dlogits.sum(axis=(0, 1))}
        dUpre = (dlogits @ p["W_2"].T) * (c["Upre"] > 0)
        grads["W_1"] = c["Z"].reshape(-1, 3 * h).T @ dUpre.reshape(-1, h)
        grads["b_1"] = dUpre.sum(axis=(0, 1))
        dZ = dUpre @ p["W_1"].T
        U, n = c["H"].shape[:2]
        dH = _scatter_sum(dZ[:, :, :h].reshape(len(batch), -1), batch.sidx, U).reshape(U, n, h)
        dG = _scatter_sum(dZ[:, :, 2 * h:].sum(axis=1), batch.bidx, len(batch.B))
        dP = dZ[:, :, h:2 * h].sum(axis=1)
        self._trunk_backward(c, dP, dG, grads, dH)
        return loss, grads, probs

    def predict_distribution(self, state: AbstractState, behaviour: Behaviour) -> np.ndarray:
        return self.distributions(self.batch([state], [behaviour]))[0, : len(state)].astype(np.float64)

    def success_probs(self, state: AbstractState) -> np.ndarray:
        """Probability that every proposed change happens, treating slots as independent."""
        key = ("q", state)
        hit = self._memo.get(key)
        if hit is None:
            bs = self.behaviours_for(state)
            dist = self.distributions(self.batch([state] * len(bs), bs)).astype(np.float64)
            hit = np.array([np.prod([dist[row, state.slot_of(i), a] for i, a in b.changes])
                            for row, b in enumerate(bs)])
            self._memo[key] = hit
        return hit

    def modal_transitions(self, state: AbstractState) -> list[tuple[Behaviour, AbstractState, float]]:
        """``(b, argmax next state, its probability)`` for every behaviour, memoised."""
        hit = self._memo.get(state)
        if hit is None:
            bs = self.behaviours_for(state)
            dist = self.distributions(self.batch([state] * len(bs), bs)).astype(np.float64)[:, : len(state)]
            modes = dist.argmax(axis=2)
            probs = np.take_along_axis(dist, modes[:, :, None], axis=2)[:, :, 0]
            real = np.array([i != EMPTY for i, _ in state.items])
            hit = []
            for row, b in enumerate(bs):
                nxt = AbstractState([(i, int(modes[row, j]) if i != EMPTY else a)
                                     for j, (i, a) in enumerate(state.items)])
                hit.append((b, nxt, float(np.prod(probs[row][real]))))
            self._memo[state] = hit
        return hit


def _scatter_sum(rows, index, size):
    """``out[index[j]] += rows[j]``; a plain assignment when the index is a permutation-like set."""
    out = np.zeros((size,) + rows.shape[1:], dtype=rows.dtype)
    if len(np.unique(index)) == len(index):
        out[index] = rows
    else:
        onehot = np.zeros((len(index), size), dtype=rows.dtype)
        onehot[np.arange(len(index)), index] = 1
        out += onehot.T @ rows
    return out


def _sigmoid(z):
    return np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))


def _logsumexp(z):
    mx = z.max(axis=-1, keepdims=True)
    return mx + np.log(np.exp(z - mx).sum(axis=-1, keepdims=True))


def _softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def next_state_distribution(model, state: AbstractState, behaviour: Behaviour) -> list[tuple[AbstractState, float]]:
    """Two-outcome forward prediction: the proposed change with probability q, else no change."""
    q = model.predict(state, behaviour)
    nxt = apply_delta(state, behaviour)
    if nxt == state:
        return [(state, 1.0)]
    return [(nxt, q), (state, 1.0 - q)]
