"""Feature extraction: environment state -> feature vector.

The synthetic extractor encodes each block's grid position scaled to
``[0, 1]`` and adds bounded uniform noise. Noise for frame ``f`` is row
``f mod NOISE_PERIOD`` of a table drawn once from ``seed``, so a feature
vector is a pure function of (state, seed, frame counter).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .blockworld import BlockWorldState
from .exceptions import DimensionError, EmptyInputError, ExtractorKindError, ValidationError
from .trajectories import Trajectory

KINDS = ("synthetic_blockworld", "precomputed")
NOISE_PERIOD = 8192


@lru_cache(maxsize=32)
def _noise_table(seed: int, dim: int, scale: float) -> np.ndarray:
    rng = np.random.default_rng(seed)
    table = rng.uniform(-scale, scale, size=(NOISE_PERIOD, dim))
    table.setflags(write=False)
    return table


class FeatureExtractor(TransformerMixin, BaseEstimator):
    """Maps block-world states to feature vectors.

    Parameters
    ----------
    kind : {"synthetic_blockworld", "precomputed"}
        ``precomputed`` extractors only describe embedding files; asking
        them to featurize a state raises :class:`ExtractorKindError`.
    dim : int
        Output dimension, ``2 * n_blocks`` for the synthetic kind.
    noise_scale : float
        Half-width of the uniform noise added to each coordinate.
    seed : int
    """

    def __init__(self, kind="synthetic_blockworld", dim=2, noise_scale=0.0, seed=0):
        self.kind = kind
        self.dim = dim
        self.noise_scale = noise_scale
        self.seed = seed

    def _validate(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown extractor kind {self.kind!r}")
        if int(self.dim) < 1:
            raise DimensionError("extractor dim must be >= 1")
        if self.noise_scale < 0:
            raise ValidationError("noise_scale must be non-negative")

    @classmethod
    def for_task(cls, spec, noise_scale=0.0, seed=0):
        return cls("synthetic_blockworld", 2 * len(spec.blocks), noise_scale, seed)

    def fit(self, X=None, y=None):
        self._validate()
        return self

    def transform(self, X):
        """Featurize a sequence of states, frame counter = position in ``X``."""
        return featurize_trajectory(self, list(X)).frames

    def clean(self, s: BlockWorldState) -> np.ndarray:
        """Noise-free encoding of ``s``."""
        if self.kind != "synthetic_blockworld":
            raise ExtractorKindError(f"{self.kind} extractor cannot featurize environment states")
        if 2 * len(s.blocks) != self.dim:
            raise DimensionError(f"state has {len(s.blocks)} blocks; extractor dim is {self.dim}")
        sx = 1.0 / (s.width - 1) if s.width > 1 else 0.0
        sy = 1.0 / (s.height - 1) if s.height > 1 else 0.0
        v = np.empty(self.dim)
        for i, b in enumerate(s.blocks):
            v[2 * i] = b.col * sx
            v[2 * i + 1] = b.row * sy
        return v

    def noise(self, frame: int) -> np.ndarray:
        if self.noise_scale == 0:
            return np.zeros(self.dim)
        return _noise_table(int(self.seed), int(self.dim), float(self.noise_scale))[frame % NOISE_PERIOD]


def featurize_state(x: FeatureExtractor, s: BlockWorldState, frame: int = 0) -> np.ndarray:
    v = x.clean(s)
    if x.noise_scale:
        v += x.noise(frame)
    return v


def featurize_trajectory(x: FeatureExtractor, states, start_frame: int = 0, id: str = "0") -> Trajectory:
    if not states:
        raise EmptyInputError("cannot featurize an empty state list")
    return Trajectory(id, np.stack([featurize_state(x, s, start_frame + i)
                                    for i, s in enumerate(states)]))


def record_demonstration(x: FeatureExtractor, states, dwell: int = 1, transit: int = 0,
                         start_frame: int = 0, id: str = "0"):
    """Render an expert state sequence as a camera-like frame stream.

    Every state is held for ``dwell`` frames. Between consecutive states,
    ``transit`` frames show the moving block part-way along a straight line
    from pick to place. Returns the trajectory and, per frame, the index of
    the state it shows (``None`` for transit frames).
    """
    if not states:
        raise EmptyInputError("cannot record an empty demonstration")
    if dwell < 1 or transit < 0:
        raise ValidationError("dwell must be >= 1 and transit >= 0")
    frames, source = [], []
    f = start_frame
    for i, s in enumerate(states):
        clean = x.clean(s)
        for _ in range(dwell):
            frames.append(clean + x.noise(f) if x.noise_scale else clean.copy())
            source.append(i)
            f += 1
        if i + 1 < len(states) and transit:
            nxt = x.clean(states[i + 1])
            for j in range(1, transit + 1):
                lam = j / (transit + 1)
                v = (1 - lam) * clean + lam * nxt
                frames.append(v + x.noise(f) if x.noise_scale else v)
                source.append(None)
                f += 1
    return Trajectory(id, np.stack(frames)), source
