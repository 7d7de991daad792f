"""Ground-truth sources, mixing, sensor normalization, and mixing-matrix drift.

The simulated scene has two deterministic target sources (a sinusoid and a
square wave) buried among near-Gaussian distractors, observed through an
unknown square mixing matrix. Sensor mixtures are scaled once to unit
variance; that scale is then frozen so later drift of the mixing matrix
shows up in the observations, which is exactly what adaptivity has to track.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidInputError
from .stats import SampleBatch

# Frobenius-norm ratio of the drift direction to the base mixing matrix.
DRIFT_NORM_RATIO = 0.005


@dataclass(frozen=True)
class SourceSpec:
    """Marker base class for source descriptions."""


def _check_frequency(frequency: float):
    if not 0.0 < frequency < 0.5:
        raise InvalidInputError(f"frequency must lie in (0, 0.5) cycles/sample, got {frequency}")


@dataclass(frozen=True)
class Sinusoid(SourceSpec):
    """sin(2*pi*f*t + phase), f in cycles per sample."""

    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        _check_frequency(self.frequency)


@dataclass(frozen=True)
class Square(SourceSpec):
    """sign(sin(2*pi*f*t + phase)): a +/-1 square wave."""

    frequency: float
    phase: float = 0.0

    def __post_init__(self):
        _check_frequency(self.frequency)


@dataclass(frozen=True)
class MixedNoise(SourceSpec):
    """alpha * U[-0.5, 0.5] + (1 - alpha) * N(0, 1): a near-Gaussian distractor."""

    alpha: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")


def generate_sources(
    specs, n_samples: int, t0: int = 0, rng_seed: int = 0
) -> SampleBatch:
    """Sample every source over the time window [t0, t0 + N).

    Deterministic sources are exact functions of t, so consecutive windows
    are phase-continuous. Noise sources get an independent stream seeded by
    (rng_seed, source index, t0), making any window reproducible on its own.
    """
    specs = list(specs)
    if n_samples < 1:
        raise InvalidInputError(f"need at least 1 sample, got {n_samples}")
    if not specs:
        raise InvalidInputError("need at least one source spec")
    if t0 < 0:
        raise InvalidInputError(f"t0 must be non-negative, got {t0}")
    t = np.arange(t0, t0 + n_samples, dtype=np.float64)
    out = np.empty((n_samples, len(specs)))
    for idx, spec in enumerate(specs):
        if isinstance(spec, Sinusoid):
            out[:, idx] = np.sin(2.0 * np.pi * spec.frequency * t + spec.phase)
        elif isinstance(spec, Square):
            out[:, idx] = np.sign(np.sin(2.0 * np.pi * spec.frequency * t + spec.phase))
        elif isinstance(spec, MixedNoise):
            rng = np.random.default_rng(np.random.SeedSequence([rng_seed, idx, int(t0)]))
            uniform = rng.uniform(-0.5, 0.5, size=n_samples)
            normal = rng.standard_normal(n_samples)
            out[:, idx] = spec.alpha * uniform + (1.0 - spec.alpha) * normal
        else:
            raise InvalidInputError(f"unknown source spec {spec!r}")
    return SampleBatch(out)


@dataclass
class MixingModel:
    """Square mixing matrix plus the per-sensor scale frozen at calibration.

    ``normalization`` starts unset and is filled in by the first
    ``mix_and_normalize`` call so every observed channel has unit sample
    variance on that calibration batch. Drifted copies keep the same scale.
    """

    mixing: np.ndarray
    sources: tuple[SourceSpec, ...]
    normalization: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.mixing, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidInputError(f"mixing matrix must be square, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidInputError("mixing matrix contains non-finite values")
        if len(self.sources) != a.shape[0]:
            raise InvalidInputError(
                f"{len(self.sources)} sources for a {a.shape[0]}-channel mixing matrix"
            )
        self.mixing = a
        self.sources = tuple(self.sources)

    @property
    def n_channels(self) -> int:
        return self.mixing.shape[0]


def mix_and_normalize(model: MixingModel, sources: SampleBatch) -> SampleBatch:
    """Observe y(t) = diag(scale) * A * s(t), calibrating the scale on first use."""
    if sources.n_channels != model.n_channels:
        raise InvalidInputError(
            f"source batch has {sources.n_channels} channels, model expects {model.n_channels}"
        )
    mixed = sources.data @ model.mixing.T
    if model.normalization is None:
        centered = mixed - mixed.mean(axis=0)
        std = np.sqrt((centered * centered).mean(axis=0))
        if np.any(std < 1e-12):
            raise InvalidInputError("calibration batch has a (near-)constant mixture channel")
        model.normalization = 1.0 / std
    return SampleBatch(mixed * model.normalization)


@dataclass(frozen=True)
class DriftSchedule:
    """A fixed perturbation direction and the per-iteration scale profile p(i).

    The direction's Frobenius norm is pinned to ``DRIFT_NORM_RATIO`` times
    that of the mixing matrix it was built for.
    """

    delta: np.ndarray
    profile: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "delta", np.asarray(self.delta, dtype=np.float64))
        object.__setattr__(self, "profile", np.asarray(self.profile, dtype=np.float64))


def make_drift_schedule(
    model: MixingModel, profile, rng_seed: int = 0, ratio: float = DRIFT_NORM_RATIO
) -> DriftSchedule:
    """Draw a Gaussian direction and rescale it to ratio * ||A||_F exactly."""
    rng = np.random.default_rng(rng_seed)
    raw = rng.standard_normal(model.mixing.shape)
    delta = raw * (ratio * np.linalg.norm(model.mixing) / np.linalg.norm(raw))
    return DriftSchedule(delta, np.asarray(profile, dtype=np.float64))


def ramp_profile(iterations: int) -> np.ndarray:
    """Default drift profile: flat at 0, linear ramp to 1, then flat at 1 (thirds)."""
    p = np.zeros(iterations)
    if iterations == 0:
        return p
    third = iterations // 3
    ramp_len = max(third, 1)
    for i in range(iterations):
        if i < third:
            p[i] = 0.0
        elif i < 2 * third:
            p[i] = (i - third + 1) / ramp_len
        else:
            p[i] = 1.0
    return p


def drift_mixing(model: MixingModel, schedule: DriftSchedule, i: int) -> MixingModel:
    """The model observed at iteration i: base A replaced by A + delta * p(i).

    Drift is relative to the base matrix, not cumulative, and the frozen
    normalization is carried over unchanged.
    """
    if not 0 <= i < len(schedule.profile):
        raise InvalidInputError(
            f"iteration {i} outside drift profile of length {len(schedule.profile)}"
        )
    return replace(model, mixing=model.mixing + schedule.delta * schedule.profile[i])
