"""Desk-scale contrastive distillation.

The teacher is a frozen random linear map from a speaker's clean spectral
template to a unit-norm embedding. The student only sees noisy, modulated
feature sequences of the same speaker and has to land near the teacher's
embedding after chunking and pooling.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import contrastive, encoder
from .encoder import EncoderConfig, EncoderWeights
from .refine import ChunkConfig

log = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    pass


# ---------------------------------------------------------------- synthetic data

@dataclass(frozen=True)
class SyntheticSpeaker:
    id: int
    template: np.ndarray
    pitch_jitter: float = 0.2
    noise_level: float = 1.0


def make_corpus(n_speakers, seed=0, dim=80, latent_dim=8, noise_level=1.0, pitch_jitter=0.2,
                min_distance=4.0, max_tries=10_000):
    """Speakers whose templates are random points of a fixed ``latent_dim``
    subspace, rejected until every pair is at least ``min_distance`` apart."""
    rng = np.random.default_rng(seed)
    basis = rng.standard_normal((dim, latent_dim)) / math.sqrt(latent_dim)
    templates = []
    tries = 0
    while len(templates) < n_speakers:
        tries += 1
        if tries > max_tries:
            raise RuntimeError("could not place speakers far enough apart; lower min_distance")
        t = basis @ rng.standard_normal(latent_dim)
        if all(np.linalg.norm(t - u) >= min_distance for u in templates):
            templates.append(t)
    return [SyntheticSpeaker(i, t, pitch_jitter, noise_level) for i, t in enumerate(templates)]


class TeacherOracle:
    """Frozen stand-in for a large pretrained speaker encoder."""

    def __init__(self, seed=1234, in_dim=80, embed_dim=192):
        rng = np.random.default_rng(seed)
        self.projection = rng.standard_normal((embed_dim, in_dim)) / math.sqrt(in_dim)

    def embed(self, template) -> np.ndarray:
        e = self.projection @ np.asarray(template, dtype=np.float64)
        return e / np.linalg.norm(e)

    def embed_chunk(self, features) -> np.ndarray:
        """Reference-space embedding of a feature chunk (time-averaged template)."""
        return self.embed(np.asarray(features, dtype=np.float64).mean(axis=1))

    __call__ = embed_chunk


def speaker_features(speaker: SyntheticSpeaker, n_frames, rng, frame_rate=100.0):
    """Template over time with a slow gain modulation and per-frame noise."""
    t = np.arange(n_frames) / frame_rate
    freqs = rng.uniform(0.5, 3.0, size=2)
    phases = rng.uniform(0, 2 * np.pi, size=2)
    mod = 0.5 * (np.sin(2 * np.pi * freqs[0] * t + phases[0]) + np.sin(2 * np.pi * freqs[1] * t + phases[1]))
    gain = 1.0 + speaker.pitch_jitter * mod
    noise = rng.standard_normal((len(speaker.template), n_frames))
    return speaker.template[:, None] * gain[None, :] + speaker.noise_level * noise


def generate_pair(speaker: SyntheticSpeaker, teacher: TeacherOracle, rng, n_frames=298):
    """Teacher embedding of the clean template and student features of one excerpt."""
    return teacher.embed(speaker.template), speaker_features(speaker, n_frames, rng)


def retrieval_accuracy(S) -> float:
    """Fraction of rows whose strict maximum sits on the diagonal."""
    S = np.asarray(S)
    n = S.shape[0]
    hits = 0
    for i in range(n):
        row = S[i]
        best = row.max()
        if row[i] == best and np.count_nonzero(row == best) == 1:
            hits += 1
    return hits / n


# ---------------------------------------------------------------- optimiser

class Adam:
    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.lr, self.beta1, self.beta2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros(np.shape(v)) for k, v in params.items()}
        self.v = {k: np.zeros(np.shape(v)) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict):
        """Update ``params`` in place (arrays) and return it."""
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            update = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            if self.wd:
                update = update + self.lr * self.wd * np.asarray(params[k], dtype=np.float64)
            p = params[k]
            p -= update.astype(p.dtype)
        return params


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    chunk_len: int = 100
    clip_frames: int = 298
    epochs: int = 30
    batches_per_epoch: int = 0          # 0 -> one pass over the training speakers
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.0
    bn_momentum: float = 0.1
    init_log_tau: float = 1.0
    seed: int = 0
    n_speakers: int = 32
    val_fraction: float = 0.05
    latent_dim: int = 8
    noise_level: float = 1.0
    pitch_jitter: float = 0.2
    teacher_seed: int = 1234
    probe_batches: int = 2
    val_batches: int = 4

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        ChunkConfig(self.chunk_len)
        if self.clip_frames < self.chunk_len:
            raise ValueError("clip_frames must be at least one chunk")
        if self.epochs < 0 or self.learning_rate < 0:
            raise ValueError("epochs and learning_rate must be non-negative")
        if not 0 < self.val_fraction < 1:
            raise ValueError("val_fraction must be in (0, 1)")


@dataclass
class TrainResult:
    weights: EncoderWeights
    log_tau: float
    history: list = field(default_factory=list)
    train_speakers: list = field(default_factory=list)
    val_speakers: list = field(default_factory=list)
    teacher: TeacherOracle | None = None


HISTORY_COLUMNS = ("epoch", "loss", "row_loss", "col_loss", "tau", "retrieval_accuracy")


def split_speakers(corpus, cfg: TrainConfig, rng):
    """Hold out ``val_fraction`` of speakers, but never fewer than one batch."""
    n_val = max(math.ceil(cfg.val_fraction * len(corpus)), cfg.batch_size)
    if len(corpus) - n_val < cfg.batch_size:
        raise ValueError(
            f"{len(corpus)} speakers cannot fill a batch of {cfg.batch_size} after holding out {n_val}"
        )
    order = rng.permutation(len(corpus))
    return [corpus[i] for i in order[n_val:]], [corpus[i] for i in order[:n_val]]


def chunk_batch(clips, chunk_len):
    """(N, D, T) clips -> (N*K, D, chunk_len) half-overlapping windows, K."""
    hop = chunk_len // 2
    starts = range(0, clips.shape[2] - chunk_len + 1, hop)
    windows = np.stack([clips[:, :, s:s + chunk_len] for s in starts], axis=1)
    n, k = windows.shape[:2]
    return windows.reshape(n * k, clips.shape[1], chunk_len), k


def make_batch(speakers, teacher, rng, cfg: TrainConfig):
    pairs = [generate_pair(s, teacher, rng, cfg.clip_frames) for s in speakers]
    E = np.stack([p[0] for p in pairs])
    clips = np.stack([p[1] for p in pairs])
    return E, clips


def batch_similarity(E, clips, w, cfg: TrainConfig, training, momentum=0.0, return_cache=False):
    chunks, k = chunk_batch(clips, cfg.chunk_len)
    out = encoder.forward(chunks, w, training=training, momentum=momentum, return_cache=return_cache)
    M, cache = out if return_cache else (out, None)
    M = M.astype(np.float64).reshape(len(E), k, -1)
    S = contrastive.similarity_matrix(E, M)
    return S, M, cache


def _batches(ids, n, count, rng):
    """``count`` batches of ``n`` distinct ids, cycling through permutations."""
    out = []
    while len(out) < count:
        perm = rng.permutation(ids)
        for i in range(0, len(perm) - n + 1, n):
            out.append(perm[i:i + n])
            if len(out) == count:
                break
    return out


def train_kd(cfg: TrainConfig = TrainConfig(), corpus=None, encoder_cfg: EncoderConfig = EncoderConfig(),
             teacher: TeacherOracle | None = None, dtype=np.float32, on_epoch=None) -> TrainResult:
    rng = np.random.default_rng(cfg.seed)
    if corpus is None:
        corpus = make_corpus(cfg.n_speakers, seed=cfg.seed, dim=encoder_cfg.in_dim,
                             latent_dim=cfg.latent_dim, noise_level=cfg.noise_level,
                             pitch_jitter=cfg.pitch_jitter)
    if teacher is None:
        teacher = TeacherOracle(cfg.teacher_seed, encoder_cfg.in_dim, encoder_cfg.embed_dim)
    train_spk, val_spk = split_speakers(corpus, cfg, rng)
    n = cfg.batch_size

    w = encoder.init_weights(encoder_cfg, seed=cfg.seed, dtype=dtype)
    state = dict(w.params)
    state["log_tau"] = np.array(cfg.init_log_tau)
    opt = Adam(state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)

    eval_rng = np.random.default_rng([cfg.seed, 1])
    probe = [make_batch([train_spk[i] for i in ids], teacher, eval_rng, cfg)
             for ids in _batches(np.arange(len(train_spk)), n, cfg.probe_batches, eval_rng)]
    val = [make_batch([val_spk[i] for i in ids], teacher, eval_rng, cfg)
           for ids in _batches(np.arange(len(val_spk)), n, cfg.val_batches, eval_rng)]

    def evaluate(epoch):
        tau = math.exp(float(state["log_tau"]))
        losses = []
        for E, clips in probe:
            S, _, _ = batch_similarity(E, clips, w, cfg, training=True, momentum=0.0)
            losses.append(contrastive.contrastive_loss(S, tau))
        hits = []
        for E, clips in val:
            S, _, _ = batch_similarity(E, clips, w, cfg, training=False)
            hits.append(retrieval_accuracy(S))
        loss, row, col = np.mean(losses, axis=0)
        rec = {"epoch": epoch, "loss": float(loss), "row_loss": float(row), "col_loss": float(col),
               "tau": tau, "retrieval_accuracy": float(np.mean(hits))}
        log.info("epoch %d loss %.4f tau %.3f val-acc %.3f", epoch, loss, tau, rec["retrieval_accuracy"])
        return rec

    history = [evaluate(0)]
    per_epoch = cfg.batches_per_epoch or max(1, len(train_spk) // n)
    for epoch in range(1, cfg.epochs + 1):
        for step, ids in enumerate(_batches(np.arange(len(train_spk)), n, per_epoch, rng)):
            E, clips = make_batch([train_spk[i] for i in ids], teacher, rng, cfg)
            S, M, cache = batch_similarity(E, clips, w, cfg, training=True,
                                           momentum=cfg.bn_momentum, return_cache=True)
            tau = math.exp(float(state["log_tau"]))
            loss, _, _ = contrastive.contrastive_loss(S, tau)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}, step {step}")
            dS, d_log_tau = contrastive.loss_backward(S, tau)
            _, dM = contrastive.similarity_backward(dS, E, M)
            grads = encoder.backward(cache, dM.reshape(-1, dM.shape[2]).astype(w.dtype), w)
            grads.pop("input")
            grads["log_tau"] = d_log_tau
            opt.step(state, grads)
        history.append(evaluate(epoch))
        if not np.isfinite(history[-1]["loss"]):
            raise TrainingDivergedError(f"non-finite probe loss after epoch {epoch}")
        if on_epoch is not None:
            on_epoch(history[-1])

    return TrainResult(w, float(state["log_tau"]), history, train_spk, val_spk, teacher)


def write_history_csv(history, path):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=HISTORY_COLUMNS)
        writer.writeheader()
        for rec in history:
            writer.writerow({k: rec[k] for k in HISTORY_COLUMNS})
