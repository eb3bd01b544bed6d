"""Mini-batch training of the classifiers and whole-session inference."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..core import N_HANDS, N_STATES, MulticamError, ValidationError
from ..features import HIGH_STEPS, LOW_STEPS, LOW_STRIDE, PAD, FeatureWindowPair, session_features
from ..ingest import SessionBundle
from .lstm import frame_projection, lstm_forward_gathered
from .model import ClassifierParams, ModelVariant, init_params, loss_and_grad, make_dropout_mask, softmax

log = logging.getLogger(__name__)


class NumericalError(MulticamError):
    def __init__(self, message: str, epoch: int):
        super().__init__(message)
        self.epoch = epoch


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 1e-4
    dropout_p: float = 0.3
    batch_size: int = 16
    seed: int = 0
    optimizer: str = "adam"
    samples_per_video_per_epoch: int = 256
    class_weighting: bool = False
    # "float32" trades bit-level agreement with float64 for speed
    dtype: str = "float64"

    def validate(self) -> "TrainConfig":
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0", field="epochs")
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive", field="learning_rate")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValidationError("dropout_p must be in [0, 1)", field="dropout_p")
        if self.batch_size <= 0:
            raise ValidationError("batch_size must be positive", field="batch_size")
        if self.samples_per_video_per_epoch <= 0:
            raise ValidationError("samples_per_video_per_epoch must be positive",
                                  field="samples_per_video_per_epoch")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError("optimizer must be 'adam' or 'sgd'", field="optimizer")
        if self.dtype not in ("float64", "float32"):
            raise ValidationError("dtype must be 'float64' or 'float32'", field="dtype")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, params: ClassifierParams, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ClassifierParams, grads: ClassifierParams) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params.keys():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, params: ClassifierParams, lr: float):
        self.lr = lr

    def step(self, params: ClassifierParams, grads: ClassifierParams) -> None:
        for k in params.keys():
            params[k] -= self.lr * grads[k]


@dataclass
class TrainResult:
    params: ClassifierParams
    loss_history: list[float] = field(default_factory=list)


class WindowSource:
    """Padded feature arrays of several sessions, for gathering training windows."""

    def __init__(self, sessions: Sequence[SessionBundle], dtype=np.float64):
        blocks, labels, offsets = [], [], []
        offset = 0
        for s in sessions:
            if s.truth is None:
                raise ValidationError(f"session {s.session_id} has no ground truth", field="truth")
            feats = session_features(s).astype(dtype)
            blocks.append(np.zeros((PAD,) + feats.shape[1:], dtype))
            blocks.append(feats)
            offsets.append(offset + PAD)
            offset += PAD + s.n_frames
            labels.append(np.asarray(s.truth.labels, np.int64))
        self.data = np.concatenate(blocks) if blocks else np.zeros((0, N_HANDS, 0), dtype)
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.labels = labels
        self.n_frames = np.asarray([s.n_frames for s in sessions], dtype=np.int64)

    def batch(self, video: np.ndarray, hand: np.ndarray, t: np.ndarray):
        base = self.offsets[video] + t
        hi = base[:, None] + np.arange(-HIGH_STEPS + 1, 1)[None, :]
        lo = base[:, None] - LOW_STRIDE * np.arange(LOW_STEPS - 1, -1, -1)[None, :]
        windows = FeatureWindowPair(self.data[hi, hand[:, None]], self.data[lo, hand[:, None]])
        y = np.array([self.labels[v][h, tt] for v, h, tt in zip(video, hand, t)], dtype=np.int64)
        return windows, y

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(N_STATES)
        for lab in self.labels:
            counts += np.bincount(lab.ravel(), minlength=N_STATES)
        return counts


def _seeded(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def train(sessions: Sequence[SessionBundle], cfg: TrainConfig,
          variant: ModelVariant | str = ModelVariant.MCC,
          init: ClassifierParams | None = None,
          on_epoch: Callable[[int, float], None] | None = None) -> TrainResult:
    """Train one classifier on ground-truth labelled sessions, sharing weights across hands.

    Each epoch draws ``samples_per_video_per_epoch`` random (hand, frame) pairs from every
    session, shuffles them and takes one optimizer step per batch.
    """
    cfg.validate()
    variant = ModelVariant(variant)
    dtype = np.dtype(cfg.dtype)
    source = WindowSource(sessions, dtype)
    params = init.copy() if init is not None else init_params(variant, _seeded(cfg.seed, 0))
    if cfg.epochs == 0:
        return TrainResult(params, [])
    if not sessions:
        raise ValidationError("training needs at least one session", field="sessions")
    work = ClassifierParams(variant, {k: v.astype(dtype) for k, v in params.tensors.items()})
    opt = Adam(work, cfg.learning_rate) if cfg.optimizer == "adam" else SGD(work, cfg.learning_rate)
    class_weights = None
    if cfg.class_weighting:
        counts = source.class_counts()
        class_weights = np.where(counts > 0, counts.sum() / (N_STATES * np.maximum(counts, 1)), 0.0)

    sample_rng = _seeded(cfg.seed, 1)
    dropout_rng = _seeded(cfg.seed, 2)
    n_videos = len(sessions)
    per = cfg.samples_per_video_per_epoch
    width = work["fc1.W"].shape[1]
    history = []
    for epoch in range(cfg.epochs):
        video = np.repeat(np.arange(n_videos), per)
        hand = sample_rng.integers(0, N_HANDS, size=video.size)
        t = (sample_rng.random(video.size) * source.n_frames[video]).astype(np.int64)
        order = sample_rng.permutation(video.size)
        video, hand, t = video[order], hand[order], t[order]
        total, count = 0.0, 0
        for start in range(0, video.size, cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            windows, y = source.batch(video[sl], hand[sl], t[sl])
            mask = None
            if cfg.dropout_p > 0:
                mask = make_dropout_mask(dropout_rng, (y.size, width), cfg.dropout_p).astype(dtype)
            # non-finite values are reported below as NumericalError, not as warnings
            with np.errstate(invalid="ignore", over="ignore"):
                loss, grads = loss_and_grad(work, windows, y, dropout_mask=mask,
                                            class_weights=class_weights)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}", epoch)
            opt.step(work, grads)
            total += loss * y.size
            count += y.size
        history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
        log.debug("epoch %d loss %.5f", epoch, history[-1])
    out = ClassifierParams(variant, {k: v.astype(np.float64) for k, v in work.tensors.items()})
    for k in out.keys():
        if not np.all(np.isfinite(out[k])):
            raise NumericalError(f"non-finite parameters in {k} after training", cfg.epochs - 1)
    return TrainResult(out, history)


def predict_proba_features(params: ClassifierParams, features: np.ndarray,
                           chunk: int = 4096) -> np.ndarray:
    """Class probabilities for every (hand, frame): shape (4, n_frames, 5)."""
    n = features.shape[0]
    out = np.zeros((N_HANDS, n, N_STATES))
    if n == 0:
        return out
    proj = {}
    for name in params.variant.branches:
        branch = params.branch(name)
        z = frame_projection(branch, features)
        pad = np.broadcast_to(frame_projection(branch, np.zeros(features.shape[-1])),
                              (PAD, N_HANDS, z.shape[-1]))
        proj[name] = np.concatenate([pad, z])
    hands = np.repeat(np.arange(N_HANDS), n)
    ts = np.tile(np.arange(n), N_HANDS)
    probs = np.empty((hands.size, N_STATES))
    for start in range(0, hands.size, chunk):
        h = hands[start:start + chunk]
        base = ts[start:start + chunk] + PAD
        finals = []
        for name in params.variant.branches:
            zp = proj[name]
            if name == "high":
                steps, stride = HIGH_STEPS, 1
            else:
                steps, stride = LOW_STEPS, LOW_STRIDE

            def at(k, zp=zp, steps=steps, stride=stride):
                return zp[base - stride * (steps - 1 - k), h]

            finals.append(lstm_forward_gathered(params.branch(name), at, steps, h.size))
        concat = np.concatenate(finals, axis=1) if len(finals) > 1 else finals[0]
        act1 = np.maximum(concat @ params["fc1.W"].T + params["fc1.b"], 0.0)
        probs[start:start + chunk] = softmax(act1 @ params["fc2.W"].T + params["fc2.b"])
    return probs.reshape(N_HANDS, n, N_STATES)


def predict_session(params: ClassifierParams, bundle: SessionBundle,
                    variant: ModelVariant | str | None = None,
                    features: np.ndarray | None = None) -> np.ndarray:
    """Argmax labels (4, n_frames); ties go to the lowest tool-state index."""
    if variant is not None and ModelVariant(variant) != params.variant:
        raise ValidationError(f"parameters are for {params.variant.value}, not {ModelVariant(variant).value}",
                              field="variant")
    feats = session_features(bundle) if features is None else features
    return predict_proba_features(params, feats).argmax(axis=2).astype(np.int8)
