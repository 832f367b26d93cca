"""On-the-fly refinement of a reference speaker embedding.

The feature stream is cut into windows of ``chunk_len`` frames with a hop
of half a window. Each window is embedded, compared with the reference
embedding, scaled by ``alpha`` and clipped to [0, 1]. The per-chunk values
are held back up to frame rate and appended as one extra row under the
reference embedding repeated over time.

Step upsampling gives each frame the value of the first chunk that covers
it, so frames ``[0, chunk_len)`` take chunk 0 and frames
``[(k+1)*hop, (k+2)*hop)`` take chunk k. Frames after the last full window
repeat the last value. A frame is therefore final as soon as the chunk that
covers it has been embedded.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder
from .dsp import FeatureConfig, StreamingFeatureExtractor, TooShortError, extract_features
from .encoder import EncoderWeights

DEFAULT_ALPHA = {"light": 6.0, "oracle": 2.0}


@dataclass(frozen=True)
class ChunkConfig:
    chunk_len: int = 100

    def __post_init__(self):
        if self.chunk_len < 2 or self.chunk_len % 2:
            raise ValueError("chunk_len must be an even number of frames >= 2")

    @property
    def hop(self) -> int:
        return self.chunk_len // 2

    @classmethod
    def from_ms(cls, chunk_ms: float, feature_cfg: FeatureConfig = FeatureConfig()):
        frames = chunk_ms / feature_cfg.hop_ms
        if abs(frames - round(frames)) > 1e-9:
            raise ValueError(f"{chunk_ms} ms is not a whole number of {feature_cfg.hop_ms} ms hops")
        return cls(int(round(frames)))

    def n_chunks(self, n_frames: int) -> int:
        if n_frames < self.chunk_len:
            return 0
        return (n_frames - self.chunk_len) // self.hop + 1


@dataclass(frozen=True)
class RefinementConfig:
    alpha: float | None = None
    mode: str = "light"
    scaling: str = "clip"        # or "sigmoid"
    beta: float = 0.0            # sigmoid offset
    upsample: str = "step"       # or "linear"

    def __post_init__(self):
        if self.mode not in DEFAULT_ALPHA:
            raise ValueError(f"mode must be one of {sorted(DEFAULT_ALPHA)}")
        if self.alpha is None:
            object.__setattr__(self, "alpha", DEFAULT_ALPHA[self.mode])
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.scaling not in ("clip", "sigmoid"):
            raise ValueError("scaling must be 'clip' or 'sigmoid'")
        if self.upsample not in ("step", "linear"):
            raise ValueError("upsample must be 'step' or 'linear'")


def as_embedder(embedder):
    """Turn encoder weights into a chunk -> embedding callable."""
    if isinstance(embedder, EncoderWeights):
        w = embedder
        return lambda chunk: encoder.forward(chunk, w)
    if not callable(embedder):
        raise TypeError("embedder must be EncoderWeights or a callable")
    return embedder


def chunk_embeddings(features, embedder, cfg: ChunkConfig = ChunkConfig()) -> np.ndarray:
    """Embed every half-overlapping window; returns (K, d)."""
    features = np.asarray(features)
    T = features.shape[1]
    if T < cfg.chunk_len:
        raise TooShortError(f"{T} frames is shorter than one chunk of {cfg.chunk_len}")
    embed = as_embedder(embedder)
    starts = range(0, T - cfg.chunk_len + 1, cfg.hop)
    return np.stack([embed(features[:, s:s + cfg.chunk_len]) for s in starts])


def utterance_embedding(features, embedder, cfg: ChunkConfig = ChunkConfig()) -> np.ndarray:
    """Mean of the chunk embeddings, renormalised to unit length."""
    e = chunk_embeddings(features, embedder, cfg).astype(np.float64).mean(axis=0)
    return e / np.linalg.norm(e)


def similarity_track(reference, embeddings) -> np.ndarray:
    reference = np.asarray(reference, dtype=np.float64)
    embeddings = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if reference.ndim != 1 or embeddings.shape[1] != reference.shape[0]:
        raise ValueError(
            f"reference has dimension {reference.shape}, embeddings {embeddings.shape[1:]}"
        )
    # one dot per chunk so a value never depends on how many chunks are scored together
    return np.array([np.dot(e, reference) for e in embeddings])


def scale_clip(values, alpha: float) -> np.ndarray:
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    return np.clip(alpha * np.asarray(values, dtype=np.float64), 0.0, 1.0)


def scale_sigmoid(values, alpha: float, beta: float = 0.0) -> np.ndarray:
    z = alpha * np.asarray(values, dtype=np.float64) + beta
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def apply_scaling(values, cfg: RefinementConfig) -> np.ndarray:
    if cfg.scaling == "sigmoid":
        return scale_sigmoid(values, cfg.alpha, cfg.beta)
    return scale_clip(values, cfg.alpha)


def _frame_values(frames, values, hop, method):
    """Track values at the given frame indices from the known chunk values."""
    values = np.asarray(values, dtype=np.float64)
    K = len(values)
    if method == "step":
        return values[np.clip(frames // hop - 1, 0, K - 1)]
    # linear between window centres (k + 1) * hop, held at both ends
    pos = frames / hop - 1.0
    k = np.clip(np.floor(pos).astype(int), 0, max(K - 2, 0))
    frac = np.clip(pos - k, 0.0, 1.0)
    nxt = values[np.minimum(k + 1, K - 1)]
    return values[k] + frac * (nxt - values[k])


def _final_frames(K, hop, method):
    """Frames whose value no longer depends on chunks after the K-th."""
    return (K + 1) * hop if method == "step" else K * hop


def upsample_pad(values, n_frames: int, cfg: ChunkConfig = ChunkConfig(), method="step"):
    values = np.asarray(values)
    if values.ndim != 1 or len(values) < 1:
        raise ValueError("need at least one chunk value")
    return _frame_values(np.arange(n_frames), values, cfg.hop, method)


def assemble_conditioning(reference, track) -> np.ndarray:
    """(d + 1, T): reference repeated over time with the track as last row."""
    reference = np.asarray(reference, dtype=np.float64)
    track = np.asarray(track, dtype=np.float64)
    if reference.ndim != 1 or track.ndim != 1:
        raise ValueError("reference and track must be vectors")
    return np.vstack([np.repeat(reference[:, None], len(track), axis=1), track[None, :]])


@dataclass
class RefinementResult:
    chunk_raw: np.ndarray
    chunk_scaled: np.ndarray
    frame_raw: np.ndarray
    frame_scaled: np.ndarray
    conditioning: np.ndarray


def refine_offline(features, reference, embedder, chunk_cfg: ChunkConfig = ChunkConfig(),
                   refine_cfg: RefinementConfig = RefinementConfig()) -> RefinementResult:
    features = np.asarray(features)
    T = features.shape[1]
    raw = similarity_track(reference, chunk_embeddings(features, embedder, chunk_cfg))
    scaled = apply_scaling(raw, refine_cfg)
    frame_raw = upsample_pad(raw, T, chunk_cfg, refine_cfg.upsample)
    frame_scaled = upsample_pad(scaled, T, chunk_cfg, refine_cfg.upsample)
    return RefinementResult(raw, scaled, frame_raw, frame_scaled,
                            assemble_conditioning(reference, frame_scaled))


def refine_audio(samples, reference, embedder, feature_cfg: FeatureConfig = FeatureConfig(),
                 chunk_cfg: ChunkConfig = ChunkConfig(),
                 refine_cfg: RefinementConfig = RefinementConfig()) -> RefinementResult:
    return refine_offline(extract_features(samples, feature_cfg), reference, embedder,
                          chunk_cfg, refine_cfg)


class RefinementStream:
    """Incremental refinement for one stream.

    Feed feature columns with :meth:`push_features` (or raw audio with
    :meth:`push_audio`), then call :meth:`finish`. Each call returns the
    ``(frame_raw, frame_scaled, conditioning)`` columns that became final.
    Concatenating everything equals :func:`refine_offline` bit for bit.
    Not thread-safe; use one instance per stream.
    """

    def __init__(self, reference, embedder, chunk_cfg: ChunkConfig = ChunkConfig(),
                 refine_cfg: RefinementConfig = RefinementConfig(),
                 feature_cfg: FeatureConfig | None = None):
        self.reference = np.asarray(reference)
        self.embed = as_embedder(embedder)
        self.chunk_cfg = chunk_cfg
        self.refine_cfg = refine_cfg
        self._features = StreamingFeatureExtractor(feature_cfg) if feature_cfg else None
        self._buf = None          # feature columns from self._buf_start on
        self._buf_start = 0
        self._n_frames = 0
        self._raw = []
        self._scaled = []
        self._emitted = 0
        self._done = False

    def push_audio(self, samples):
        if self._features is None:
            raise RuntimeError("stream was created without a FeatureConfig")
        return self.push_features(self._features.push(samples))

    def push_features(self, cols):
        if self._done:
            raise RuntimeError("stream already finished")
        cols = np.asarray(cols)
        if cols.shape[1]:
            self._buf = cols if self._buf is None else np.concatenate([self._buf, cols], axis=1)
            self._n_frames += cols.shape[1]
            self._embed_ready()
        if not self._raw:
            return self._empty()
        return self._emit(_final_frames(len(self._raw), self.chunk_cfg.hop, self.refine_cfg.upsample))

    def finish(self):
        if self._done:
            return self._empty()
        out = []
        if self._features is not None:
            out.append(self.push_features(self._features.finish()))
        self._done = True
        if not self._raw:
            raise TooShortError(
                f"stream ended after {self._n_frames} frames, shorter than one chunk"
            )
        out.append(self._emit(self._n_frames))
        return tuple(np.concatenate(parts, axis=-1) for parts in zip(*out))

    def _embed_ready(self):
        L, hop = self.chunk_cfg.chunk_len, self.chunk_cfg.hop
        while True:
            start = len(self._raw) * hop
            if start + L > self._n_frames:
                break
            off = start - self._buf_start
            e = self.embed(self._buf[:, off:off + L])
            raw = similarity_track(self.reference, e[None])
            self._raw.append(raw[0])
            self._scaled.append(apply_scaling(raw, self.refine_cfg)[0])
        keep = len(self._raw) * hop
        if keep > self._buf_start:
            self._buf = self._buf[:, keep - self._buf_start:]
            self._buf_start = keep

    def _empty(self):
        d = len(self.reference)
        return np.zeros(0), np.zeros(0), np.zeros((d + 1, 0))

    def _emit(self, upto):
        upto = min(upto, self._n_frames)
        if upto <= self._emitted:
            return self._empty()
        frames = np.arange(self._emitted, upto)
        hop, method = self.chunk_cfg.hop, self.refine_cfg.upsample
        raw = _frame_values(frames, self._raw, hop, method)
        scaled = _frame_values(frames, self._scaled, hop, method)
        self._emitted = upto
        return raw, scaled, assemble_conditioning(self.reference, scaled)


def refine_stream(blocks, reference, embedder, chunk_cfg: ChunkConfig = ChunkConfig(),
                  refine_cfg: RefinementConfig = RefinementConfig(),
                  feature_cfg: FeatureConfig | None = None):
    """Generator over ``(frame_raw, frame_scaled, conditioning)`` pieces.

    ``blocks`` yields audio sample blocks when ``feature_cfg`` is given,
    feature column blocks otherwise.
    """
    stream = RefinementStream(reference, embedder, chunk_cfg, refine_cfg, feature_cfg)
    push = stream.push_audio if feature_cfg is not None else stream.push_features
    for block in blocks:
        piece = push(block)
        if len(piece[0]):
            yield piece
    piece = stream.finish()
    if len(piece[0]):
        yield piece
