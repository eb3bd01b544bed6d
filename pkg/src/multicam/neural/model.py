"""Dual-timescale classifier: two LSTM branches, concatenation, two dense layers, softmax."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..core import N_STATES, DomainError
from ..features import FEATURE_DIM, FeatureWindowPair
from .lstm import init_lstm, lstm_backward, lstm_forward

HIDDEN = 32
FC_HIDDEN = 32


class ModelVariant(str, Enum):
    HIGH = "high"
    LOW = "low"
    MCC = "mcc"

    @property
    def branches(self) -> tuple[str, ...]:
        return {"high": ("high",), "low": ("low",), "mcc": ("high", "low")}[self.value]


@dataclass
class ClassifierParams:
    """Named float64 tensors of one classifier.

    Keys are ``high.W``/``high.U``/``high.b`` (and ``low.*``) for the LSTM branches,
    ``fc1.W`` (32 x 32*branches), ``fc1.b``, ``fc2.W`` (5 x 32) and ``fc2.b``.
    """

    variant: ModelVariant
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, key: str) -> np.ndarray:
        return self.tensors[key]

    def __setitem__(self, key: str, value: np.ndarray) -> None:
        self.tensors[key] = value

    def keys(self):
        return self.tensors.keys()

    def branch(self, name: str) -> dict[str, np.ndarray]:
        return {k: self.tensors[f"{name}.{k}"] for k in ("W", "U", "b")}

    def copy(self) -> "ClassifierParams":
        return ClassifierParams(self.variant, {k: v.copy() for k, v in self.tensors.items()})

    def zeros_like(self) -> "ClassifierParams":
        return ClassifierParams(self.variant, {k: np.zeros_like(v) for k, v in self.tensors.items()})

    def n_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def allclose(self, other: "ClassifierParams", **kw) -> bool:
        return (self.variant == other.variant and self.keys() == other.keys()
                and all(np.allclose(self[k], other[k], **kw) for k in self.keys()))

    def array_equal(self, other: "ClassifierParams") -> bool:
        return (self.variant == other.variant and self.keys() == other.keys()
                and all(np.array_equal(self[k], other[k]) for k in self.keys()))


def init_params(variant: ModelVariant | str, rng: np.random.Generator,
                input_dim: int = FEATURE_DIM, hidden: int = HIDDEN) -> ClassifierParams:
    variant = ModelVariant(variant)
    params = ClassifierParams(variant)
    for name in variant.branches:
        for k, v in init_lstm(rng, input_dim, hidden).items():
            params[f"{name}.{k}"] = v
    fan_in = hidden * len(variant.branches)
    bound = 1.0 / np.sqrt(fan_in)
    params["fc1.W"] = rng.uniform(-bound, bound, size=(FC_HIDDEN, fan_in))
    params["fc1.b"] = rng.uniform(-bound, bound, size=FC_HIDDEN)
    bound = 1.0 / np.sqrt(FC_HIDDEN)
    params["fc2.W"] = rng.uniform(-bound, bound, size=(N_STATES, FC_HIDDEN))
    params["fc2.b"] = rng.uniform(-bound, bound, size=N_STATES)
    return params


def zero_params(variant: ModelVariant | str, input_dim: int = FEATURE_DIM,
                hidden: int = HIDDEN) -> ClassifierParams:
    params = init_params(variant, np.random.default_rng(0), input_dim, hidden)
    return params.zeros_like()


def make_dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    """Inverted-dropout mask: entries are 0 or 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise DomainError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape)
    return (rng.random(shape) >= p) / (1.0 - p)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardCache:
    lstm: dict
    concat: np.ndarray
    mask: np.ndarray | None
    dropped: np.ndarray
    pre1: np.ndarray
    act1: np.ndarray


def _as_batch(windows: FeatureWindowPair) -> tuple[np.ndarray, np.ndarray, bool]:
    high, low = np.asarray(windows.high, float), np.asarray(windows.low, float)
    single = high.ndim == 2
    if single:
        high, low = high[None], low[None]
    return high, low, single


def forward_logits(params: ClassifierParams, windows: FeatureWindowPair,
                   train_mode: bool = False, dropout_mask: np.ndarray | None = None,
                   keep_cache: bool = True):
    high, low, _ = _as_batch(windows)
    inputs = {"high": high, "low": low}
    finals, caches = [], {}
    for name in params.variant.branches:
        h, cache = lstm_forward(params.branch(name), inputs[name], keep_cache=keep_cache)
        finals.append(h)
        caches[name] = cache
    concat = np.concatenate(finals, axis=1) if len(finals) > 1 else finals[0]
    mask = dropout_mask if (train_mode and dropout_mask is not None) else None
    dropped = concat * mask if mask is not None else concat
    pre1 = dropped @ params["fc1.W"].T + params["fc1.b"]
    act1 = np.maximum(pre1, 0.0)
    logits = act1 @ params["fc2.W"].T + params["fc2.b"]
    cache = ForwardCache(caches, concat, mask, dropped, pre1, act1) if keep_cache else None
    return logits, cache


def forward(params: ClassifierParams, windows: FeatureWindowPair, train_mode: bool = False,
            dropout_mask: np.ndarray | None = None):
    """Class probabilities for one window pair (shape (5,)) or a batch (shape (B, 5))."""
    _, _, single = _as_batch(windows)
    logits, cache = forward_logits(params, windows, train_mode, dropout_mask)
    probs = softmax(logits)
    return (probs[0] if single else probs), cache


def predict_proba(params: ClassifierParams, windows: FeatureWindowPair) -> np.ndarray:
    logits, _ = forward_logits(params, windows, keep_cache=False)
    return softmax(logits)


def loss_and_grad(params: ClassifierParams, windows: FeatureWindowPair, labels,
                  dropout_mask: np.ndarray | None = None,
                  class_weights: np.ndarray | None = None):
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.size == 0:
        raise DomainError("loss_and_grad needs a non-empty batch")
    logits, cache = forward_logits(params, windows, train_mode=dropout_mask is not None,
                                   dropout_mask=dropout_mask)
    B = logits.shape[0]
    probs = softmax(logits)
    rows = np.arange(B)
    log_p = logits[rows, labels] - logits.max(axis=1) - np.log(
        np.exp(logits - logits.max(axis=1, keepdims=True)).sum(axis=1))
    weights = np.ones(B) if class_weights is None else np.asarray(class_weights, float)[labels]
    norm = weights.sum()
    loss = float(-(weights * log_p).sum() / norm)

    dlogits = probs.copy()
    dlogits[rows, labels] -= 1.0
    dlogits *= (weights / norm)[:, None]

    grads = params.zeros_like()
    grads["fc2.W"] = dlogits.T @ cache.act1
    grads["fc2.b"] = dlogits.sum(axis=0)
    dpre1 = (dlogits @ params["fc2.W"]) * (cache.pre1 > 0)
    grads["fc1.W"] = dpre1.T @ cache.dropped
    grads["fc1.b"] = dpre1.sum(axis=0)
    dconcat = dpre1 @ params["fc1.W"]
    if cache.mask is not None:
        dconcat = dconcat * cache.mask
    offset = 0
    for name in params.variant.branches:
        width = params[f"{name}.U"].shape[1]
        dh = dconcat[:, offset:offset + width]
        offset += width
        for key, g in lstm_backward(params.branch(name), cache.lstm[name], dh).items():
            grads[f"{name}.{key}"] = g
    return loss, grads
