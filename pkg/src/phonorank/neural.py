"""Reverse-mode autodiff on numpy, LSTM language model and sentence rankers.

Everything is float64. A :class:`Tensor` records the op that produced it;
``loss.backward()`` walks the graph in reverse topological order. The LSTM
layer is a single fused op over a padded ``(T, B, D)`` batch with its own
backpropagation-through-time, which keeps the tape short.
"""

from __future__ import annotations

import json
import struct
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

INIT_RANGE = 0.05


class NumericError(FloatingPointError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward: Optional[Callable] = None, requires_grad=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self._backward = backward
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        order: List[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for t in reversed(order):
            if t._backward is not None and t.grad is not None:
                t._backward(t.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Tensor(shape={self.shape})"


def param(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def const(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value, requires_grad=False)


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise and linear ops -----------------------------------------------


def add(a, b) -> Tensor:
    a, b = const(a), const(b)
    out = Tensor(a.value + b.value, (a, b))

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    out._backward = bw
    return out


def sub(a, b) -> Tensor:
    a, b = const(a), const(b)
    out = Tensor(a.value - b.value, (a, b))

    def bw(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    out._backward = bw
    return out


def mul(a, b) -> Tensor:
    a, b = const(a), const(b)
    out = Tensor(a.value * b.value, (a, b))

    def bw(g):
        a._accum(_unbroadcast(g * b.value, a.shape))
        b._accum(_unbroadcast(g * a.value, b.shape))

    out._backward = bw
    return out


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.value * k, (a,))
    out._backward = lambda g: a._accum(g * k)
    return out


def matmul(a, b) -> Tensor:
    a, b = const(a), const(b)
    out = Tensor(a.value @ b.value, (a, b))

    def bw(g):
        if a.requires_grad:
            a._accum(g @ b.value.T if b.value.ndim == 2 else np.outer(g, b.value))
        if b.requires_grad:
            b._accum(a.value.T @ g)

    out._backward = bw
    return out


def relu(a: Tensor) -> Tensor:
    on = a.value > 0
    out = Tensor(np.where(on, a.value, 0.0), (a,))
    out._backward = lambda g: a._accum(g * on)
    return out


def total(a: Tensor) -> Tensor:
    out = Tensor(a.value.sum(), (a,))
    out._backward = lambda g: a._accum(np.broadcast_to(g, a.shape))
    return out


def take(a: Tensor, index) -> Tensor:
    """Rows of ``a`` along axis 0 (fancy indexing)."""
    index = np.asarray(index, dtype=np.int64)
    out = Tensor(a.value[index], (a,))

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, index, g)
        a._accum(full)

    out._backward = bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.value.reshape(shape), (a,))
    out._backward = lambda g: a._accum(g.reshape(a.shape))
    return out


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = Tensor(np.concatenate([p.value for p in parts], axis=axis), tuple(parts))
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def bw(g):
        for p, gp in zip(parts, np.split(g, sizes, axis=axis)):
            p._accum(gp)

    out._backward = bw
    return out


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.value[ids], (table,))

    def bw(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        table._accum(full)

    out._backward = bw
    return out


def log_softmax(logits: Tensor) -> Tensor:
    x = logits.value
    shifted = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    out = Tensor(y, (logits,))

    def bw(g):
        logits._accum(g - np.exp(y) * g.sum(axis=-1, keepdims=True))

    out._backward = bw
    return out


def pick(a: Tensor, index: np.ndarray) -> Tensor:
    """``a[n, index[n]]`` for a 2-d tensor."""
    index = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])
    out = Tensor(a.value[rows, index], (a,))

    def bw(g):
        full = np.zeros_like(a.value)
        np.add.at(full, (rows, index), g)
        a._accum(full)

    out._backward = bw
    return out


def masked_sum(a: Tensor, mask: np.ndarray, axis: int = 0) -> Tensor:
    """Sum of ``a * mask`` over ``axis``; ``mask`` broadcasts against ``a``."""
    mask = np.asarray(mask, dtype=np.float64)
    while mask.ndim < a.value.ndim:
        mask = mask[..., None]
    out = Tensor((a.value * mask).sum(axis=axis), (a,))
    out._backward = lambda g: a._accum(np.expand_dims(g, axis) * mask)
    return out


def sigmoid_np(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm(
    x: Tensor,
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
    mask: np.ndarray,
    recurrent_mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Run an LSTM over a padded batch.

    ``x`` is ``(T, B, D)``, ``mask`` is ``(T, B)`` with 1 on real positions.
    Padded steps carry the previous state forward, so the last time step
    holds every sequence's final state. ``recurrent_mask`` ``(B, H)``
    multiplies the previous hidden state before the recurrent product
    (one dropout mask per sequence). Gate order: input, forget, output,
    candidate. Returns all hidden states ``(T, B, H)``.
    """
    X = x.value
    T, B, _ = X.shape
    H = wh.shape[0]
    Wx, Wh, bias = wx.value, wh.value, b.value
    m = np.asarray(mask, dtype=np.float64)[:, :, None]
    rm = np.ones((B, H)) if recurrent_mask is None else recurrent_mask
    hs = np.zeros((T + 1, B, H))
    cs = np.zeros((T + 1, B, H))
    gates = np.zeros((T, B, 4 * H))
    cnew = np.zeros((T, B, H))
    xw = X.reshape(T * B, -1) @ Wx
    xw = xw.reshape(T, B, 4 * H)
    for t in range(T):
        z = xw[t] + (hs[t] * rm) @ Wh + bias
        i = sigmoid_np(z[:, :H])
        f = sigmoid_np(z[:, H : 2 * H])
        o = sigmoid_np(z[:, 2 * H : 3 * H])
        g = np.tanh(z[:, 3 * H :])
        c = f * cs[t] + i * g
        h = o * np.tanh(c)
        gates[t] = np.concatenate([i, f, o, g], axis=1)
        cnew[t] = c
        mt = m[t]
        cs[t + 1] = mt * c + (1 - mt) * cs[t]
        hs[t + 1] = mt * h + (1 - mt) * hs[t]
    out = Tensor(hs[1:].copy(), (x, wx, wh, b))

    def bw(dH):
        dX = np.zeros((T, B, 4 * H))
        dWh = np.zeros_like(Wh)
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(T - 1, -1, -1):
            mt = m[t]
            dh = dH[t] + dh_next
            dh_new, dc_new = mt * dh, mt * dc_next
            i, f, o, g = (gates[t][:, k * H : (k + 1) * H] for k in range(4))
            tc = np.tanh(cnew[t])
            do = dh_new * tc
            dc_new = dc_new + dh_new * o * (1 - tc * tc)
            dz = np.concatenate(
                [dc_new * g * i * (1 - i), dc_new * cs[t] * f * (1 - f), do * o * (1 - o), dc_new * i * (1 - g * g)],
                axis=1,
            )
            dX[t] = dz
            dWh += (hs[t] * rm).T @ dz
            dh_next = (dz @ Wh.T) * rm + (1 - mt) * dh
            dc_next = dc_new * f + (1 - mt) * dc_next
        dz_all = dX.reshape(T * B, 4 * H)
        if x.requires_grad:
            x._accum((dz_all @ Wx.T).reshape(X.shape))
        wx._accum(X.reshape(T * B, -1).T @ dz_all)
        wh._accum(dWh)
        b._accum(dz_all.sum(axis=0))

    out._backward = bw
    return out


# -- parameters ---------------------------------------------------------------


def uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)


class Module:
    """A named collection of parameter tensors."""

    kind = "module"

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        # row masks for embedding tables: True where the row may be updated
        self.trainable_rows: Dict[str, np.ndarray] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = param(value)
        self.params[name] = t
        return t

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> Dict[str, np.ndarray]:
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in self.params.items()}

    def state(self) -> Dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            if k not in self.params:
                raise KeyError(f"unknown parameter {k!r}")
            if self.params[k].shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {self.params[k].shape} vs {v.shape}")
            self.params[k].value = np.array(v, dtype=np.float64, copy=True)

    def num_params(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def config(self) -> dict:
        raise NotImplementedError


def _add_lstm(mod: Module, prefix: str, d_in: int, hidden: int, rng) -> None:
    mod.add_param(f"{prefix}.wx", uniform(rng, (d_in, 4 * hidden)))
    mod.add_param(f"{prefix}.wh", uniform(rng, (hidden, 4 * hidden)))
    mod.add_param(f"{prefix}.b", uniform(rng, (4 * hidden,)))


def _run_lstm(mod: Module, prefix: str, x: Tensor, mask, rec_mask=None) -> Tensor:
    p = mod.params
    return lstm(x, p[f"{prefix}.wx"], p[f"{prefix}.wh"], p[f"{prefix}.b"], mask, rec_mask)


def pad(seqs: Sequence[Sequence[int]], fill: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Time-major ``(T, B)`` id matrix and mask."""
    T = max(len(s) for s in seqs)
    ids = np.full((T, len(seqs)), fill, dtype=np.int64)
    mask = np.zeros((T, len(seqs)))
    for b, s in enumerate(seqs):
        ids[: len(s), b] = s
        mask[: len(s), b] = 1.0
    return ids, mask


def _check_ids(seqs, vocab_size):
    for s in seqs:
        for i in s:
            if not 0 <= i < vocab_size:
                raise IndexError(f"token id {i} out of range for vocabulary of {vocab_size}")


# -- language model -----------------------------------------------------------


class LMModel(Module):
    """Embeddings, stacked LSTMs and a softmax over the vocabulary.

    Reserved ids: ``bos``, ``eos`` and ``placeholder`` (the word-dropout
    substitute) are passed in by the caller's vocabulary.
    """

    kind = "lm"

    def __init__(
        self,
        vocab_size: int,
        emb_dim: int = 300,
        hidden: int = 650,
        layers: int = 2,
        bos: int = 0,
        eos: int = 1,
        placeholder: int = 2,
        dropout: float = 0.35,
        word_dropout: float = 0.2,
        seed: int = 0,
    ):
        super().__init__()
        self.vocab_size, self.emb_dim, self.hidden, self.layers = vocab_size, emb_dim, hidden, layers
        self.bos, self.eos, self.placeholder = bos, eos, placeholder
        self.dropout, self.word_dropout = dropout, word_dropout
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.add_param("emb", uniform(rng, (vocab_size, emb_dim)))
        d = emb_dim
        for k in range(layers):
            _add_lstm(self, f"lstm{k}", d, hidden, rng)
            d = hidden
        self.add_param("out.w", uniform(rng, (hidden, vocab_size)))
        self.add_param("out.b", uniform(rng, (vocab_size,)))

    def config(self) -> dict:
        return dict(
            vocab_size=self.vocab_size, emb_dim=self.emb_dim, hidden=self.hidden, layers=self.layers,
            bos=self.bos, eos=self.eos, placeholder=self.placeholder,
            dropout=self.dropout, word_dropout=self.word_dropout, seed=self.seed,
        )

    def forward(self, sentences: Sequence[Sequence[int]], train: bool = False, rng: Optional[np.random.Generator] = None):
        """Log-probability of every next token.

        Returns ``(logp, mask)`` where ``logp`` is a ``(T, B)`` tensor; row t
        is the log-probability of target t (the sentence followed by EOS)
        given BOS and the preceding tokens.
        """
        _check_ids(sentences, self.vocab_size)
        inputs = [[self.bos] + list(s) for s in sentences]
        targets = [list(s) + [self.eos] for s in sentences]
        ids, mask = pad(inputs)
        tgt, _ = pad(targets)
        T, B = ids.shape
        rec_masks = [None] * self.layers
        if train:
            if rng is None:
                raise ValueError("train mode needs an rng")
            if self.word_dropout > 0:
                drop = rng.random(ids.shape) < self.word_dropout
                drop[0, :] = False  # keep BOS
                ids = np.where(drop, self.placeholder, ids)
            if self.dropout > 0:
                keep = 1.0 - self.dropout
                rec_masks = [(rng.random((B, self.hidden)) < keep) / keep for _ in range(self.layers)]
        x = embed(self.params["emb"], ids)
        for k in range(self.layers):
            x = _run_lstm(self, f"lstm{k}", x, mask, rec_masks[k])
        flat = reshape(x, (T * B, self.hidden))
        logits = add(matmul(flat, self.params["out.w"]), self.params["out.b"])
        lp = log_softmax(logits)
        chosen = pick(lp, tgt.reshape(-1))
        return reshape(chosen, (T, B)), mask

    def distributions(self, sentence: Sequence[int]) -> np.ndarray:
        """Next-token distributions ``(len+1, V)`` in eval mode."""
        _check_ids([sentence], self.vocab_size)
        ids, mask = pad([[self.bos] + list(sentence)])
        x = embed(self.params["emb"], ids)
        for k in range(self.layers):
            x = _run_lstm(self, f"lstm{k}", x, mask)
        flat = x.value.reshape(-1, self.hidden)
        logits = flat @ self.params["out.w"].value + self.params["out.b"].value
        return np.exp(log_softmax(const(logits)).value)

    def loss(self, sentences, train=False, rng=None) -> Tuple[Tensor, int]:
        """Mean negative log-likelihood per target token."""
        lp, mask = self.forward(sentences, train, rng)
        n = int(mask.sum())
        return scale(total(mul(lp, mask)), -1.0 / n), n


def lm_logprobs(model: LMModel, sentence: Sequence[int], train: bool = False, rng=None) -> np.ndarray:
    lp, _ = model.forward([sentence], train, rng)
    return lp.value[:, 0].copy()


def sentence_logprob(model: LMModel, sentence: Sequence[int]) -> float:
    """Sum of next-token log-probabilities, EOS included, no length normalisation."""
    return float(lm_logprobs(model, sentence).sum())


def sentence_logprobs(model: LMModel, sentences: Sequence[Sequence[int]], batch: int = 64) -> np.ndarray:
    out = []
    for k in range(0, len(sentences), batch):
        chunk = sentences[k : k + batch]
        lp, mask = model.forward(chunk)
        out.append((lp.value * mask).sum(axis=0))
    return np.concatenate(out) if out else np.zeros(0)


# -- discriminative ranker ----------------------------------------------------


class RankerModel(Module):
    """Scores a sentence as ``w · repr(sentence)``.

    ``repr`` is the concatenated final states of a forward and a backward
    LSTM, or with ``representation="bow"`` the mean of the word embeddings.
    """

    kind = "ranker"

    def __init__(
        self,
        vocab_size: int,
        emb_dim: int = 300,
        hidden: int = 650,
        representation: str = "bilstm",
        dropout: float = 0.0,
        word_dropout: float = 0.0,
        placeholder: int = 2,
        seed: int = 0,
    ):
        super().__init__()
        if representation not in ("bilstm", "bow"):
            raise ValueError(f"unknown representation {representation!r}")
        self.vocab_size, self.emb_dim, self.hidden = vocab_size, emb_dim, hidden
        self.representation = representation
        self.dropout, self.word_dropout, self.placeholder = dropout, word_dropout, placeholder
        self.seed = seed
        rng = np.random.default_rng(seed)
        self.add_param("emb", uniform(rng, (vocab_size, emb_dim)))
        if representation == "bilstm":
            _add_lstm(self, "fwd", emb_dim, hidden, rng)
            _add_lstm(self, "bwd", emb_dim, hidden, rng)
            self.add_param("w", uniform(rng, (2 * hidden,)))
        else:
            self.add_param("w", uniform(rng, (emb_dim,)))

    @property
    def repr_dim(self) -> int:
        return 2 * self.hidden if self.representation == "bilstm" else self.emb_dim

    def config(self) -> dict:
        return dict(
            vocab_size=self.vocab_size, emb_dim=self.emb_dim, hidden=self.hidden,
            representation=self.representation, dropout=self.dropout,
            word_dropout=self.word_dropout, placeholder=self.placeholder, seed=self.seed,
        )

    def represent(self, sentences: Sequence[Sequence[int]], train: bool = False, rng=None) -> Tensor:
        if any(len(s) == 0 for s in sentences):
            raise ValueError("cannot represent an empty sentence")
        _check_ids(sentences, self.vocab_size)
        fwd_ids, mask = pad(sentences)
        bwd_ids, _ = pad([list(reversed(s)) for s in sentences])
        B = len(sentences)
        rec = [None, None]
        if train and rng is not None:
            if self.word_dropout > 0:
                drop = rng.random(fwd_ids.shape) < self.word_dropout
                fwd_ids = np.where(drop, self.placeholder, fwd_ids)
                # same tokens dropped in both directions
                bwd_drop = np.zeros_like(drop)
                for b, s in enumerate(sentences):
                    bwd_drop[: len(s), b] = drop[: len(s), b][::-1]
                bwd_ids = np.where(bwd_drop, self.placeholder, bwd_ids)
            if self.dropout > 0 and self.representation == "bilstm":
                keep = 1.0 - self.dropout
                rec = [(rng.random((B, self.hidden)) < keep) / keep for _ in range(2)]
        if self.representation == "bow":
            e = embed(self.params["emb"], fwd_ids)
            lengths = mask.sum(axis=0)
            return masked_sum(e, mask / lengths, axis=0)
        f = _run_lstm(self, "fwd", embed(self.params["emb"], fwd_ids), mask, rec[0])
        b = _run_lstm(self, "bwd", embed(self.params["emb"], bwd_ids), mask, rec[1])
        T = f.shape[0]
        last = take(f, [T - 1])
        last_b = take(b, [T - 1])
        return reshape(concat([last, last_b], axis=-1), (B, 2 * self.hidden))

    def scores(self, sentences: Sequence[Sequence[int]], train: bool = False, rng=None) -> Tensor:
        return matmul(self.represent(sentences, train, rng), self.params["w"])


def repr_bilstm(model: RankerModel, sentence: Sequence[int]) -> np.ndarray:
    return model.represent([sentence]).value[0].copy()


def score(model: RankerModel, sentence: Sequence[int]) -> float:
    return float(model.scores([sentence]).value[0])


def batch_scores(model: RankerModel, sentences: Sequence[Sequence[int]], batch: int = 256) -> np.ndarray:
    out = [model.scores(sentences[k : k + batch]).value for k in range(0, len(sentences), batch)]
    return np.concatenate(out) if out else np.zeros(0)


# -- losses -------------------------------------------------------------------


def hinge_rank_loss(scores: Tensor, groups: Sequence[Tuple[int, Sequence[int], Sequence[float]]]) -> Tensor:
    """Sum over groups of ``sum_i max(0, wer_i - (s_gold - s_i))``.

    Each group is ``(gold index, alternative indices, alternative WERs)`` into
    the flat ``scores`` vector.
    """
    gold_idx, alt_idx, wers = [], [], []
    for g, alts, ws in groups:
        gold_idx.extend([g] * len(alts))
        alt_idx.extend(alts)
        wers.extend(ws)
    if not alt_idx:
        return Tensor(0.0)
    margin = sub(take(scores, gold_idx), take(scores, alt_idx))
    return total(relu(sub(const(np.asarray(wers, dtype=np.float64)), margin)))


# -- optimisation -------------------------------------------------------------


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def sgd_step(
    model: Module,
    lr: float,
    clip: Optional[float] = 1.0,
    weight_decay: float = 0.0,
    clip_mode: str = "norm",
) -> float:
    """One SGD update from the gradients stored on ``model``'s parameters.

    Frozen embedding rows get neither gradient nor decay. Gradients are
    clipped by global norm (or elementwise with ``clip_mode="value"``),
    parameters decay by ``(1 - weight_decay)``, then ``p -= lr * grad``.
    Returns the pre-clipping gradient norm.
    """
    grads = {}
    for name, p in model.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        rows = model.trainable_rows.get(name)
        if rows is not None:
            g = g * rows[:, None]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        grads[name] = g
    norm = global_norm(grads.values())
    if clip is not None and clip > 0:
        if clip_mode == "norm":
            if norm > clip:
                factor = clip / norm
                grads = {k: g * factor for k, g in grads.items()}
        elif clip_mode == "value":
            grads = {k: np.clip(g, -clip, clip) for k, g in grads.items()}
        else:
            raise ValueError(f"unknown clip mode {clip_mode!r}")
    for name, p in model.params.items():
        if weight_decay:
            rows = model.trainable_rows.get(name)
            factor = 1.0 - weight_decay
            if rows is None:
                p.value *= factor
            else:
                p.value[rows] *= factor
        p.value -= lr * grads[name]
    return norm


# -- checkpoints --------------------------------------------------------------

MAGIC = b"PHRKCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, model: Module, meta: Optional[dict] = None) -> None:
    """Magic, version, JSON header length and header, then raw little-endian float64 tensors."""
    entries = []
    offset = 0
    blobs = []
    for name in sorted(model.params):
        v = np.ascontiguousarray(model.params[name].value, dtype="<f8")
        entries.append({"name": name, "shape": list(v.shape), "offset": offset})
        offset += v.nbytes
        blobs.append(v.tobytes())
    header = {
        "kind": model.kind,
        "config": model.config(),
        "tensors": entries,
        "trainable_rows": {k: np.flatnonzero(~v).tolist() for k, v in model.trainable_rows.items()},
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fp:
        fp.write(MAGIC)
        fp.write(struct.pack("<IQ", FORMAT_VERSION, len(hb)))
        fp.write(hb)
        for blob in blobs:
            fp.write(blob)


class CheckpointError(ValueError):
    pass


def load_checkpoint(path) -> Tuple[Module, dict]:
    with open(path, "rb") as fp:
        data = fp.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint")
    pos = len(MAGIC)
    try:
        version, hlen = struct.unpack_from("<IQ", data, pos)
    except struct.error:
        raise CheckpointError(f"{path}: truncated header") from None
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    pos += struct.calcsize("<IQ")
    try:
        header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    except ValueError:
        raise CheckpointError(f"{path}: unreadable header") from None
    pos += hlen
    cls = {"lm": LMModel, "ranker": RankerModel}.get(header["kind"])
    if cls is None:
        raise CheckpointError(f"{path}: unknown model kind {header['kind']!r}")
    model = cls(**header["config"])
    state = {}
    for e in header["tensors"]:
        shape = tuple(e["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = pos + e["offset"]
        if start + 8 * n > len(data):
            raise CheckpointError(f"{path}: truncated tensor data for {e['name']}")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=start).reshape(shape)
        if e["name"] not in model.params or model.params[e["name"]].shape != shape:
            raise CheckpointError(f"{path}: tensor {e['name']} does not fit the model")
        state[e["name"]] = arr.astype(np.float64)
    missing = set(model.params) - set(state)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {sorted(missing)}")
    model.load_state(state)
    for k, frozen in header.get("trainable_rows", {}).items():
        rows = np.ones(model.params[k].shape[0], dtype=bool)
        rows[frozen] = False
        model.trainable_rows[k] = rows
    return model, header.get("meta", {})
