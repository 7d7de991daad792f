"""Deflation-based FastICA on batches, with the conventions the distributed solver needs.

The solver extracts components one at a time from whitened data with the
fixed-point update

    w <- mean_t[ z(t) F'(w' z(t)) ] - mean_t[ F''(w' z(t)) ] w,

orthogonalizes against previously found components, and stops when the
direction stabilizes. Two output conventions remove the remaining
ambiguities so that repeated solves of the same problem agree exactly:
components are ordered least Gaussian first (by a negentropy proxy), and
each raw-filter column is sign-flipped so its largest-magnitude entry is
positive.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss

from .errors import (
    DegenerateDirectionError,
    ExtractionFailureError,
    InvalidInputError,
)
from .stats import SampleBatch, sample_covariance, whitening_transform

# Norm below which an updated/deflated direction counts as collapsed.
DEGENERATE_NORM = 1e-14
# Random restarts allowed per component before extraction is declared failed.
MAX_RESTARTS = 5
# Nodes for the Gauss-Hermite rule used for E[F(nu)], nu standard normal.
GAUSS_QUAD_NODES = 201


def _gaussian_expectation(f) -> float:
    """E[f(nu)] for standard normal nu by Gauss-Hermite quadrature."""
    nodes, weights = hermgauss(GAUSS_QUAD_NODES)
    return float(weights @ f(np.sqrt(2.0) * nodes) / np.sqrt(np.pi))


class ContrastFunction:
    """A smooth even nonlinearity F with first and second derivatives.

    ``mean F(x)`` over a unit-variance signal, offset by the same mean for
    a standard Gaussian, acts as the non-Gaussianity measure the solver
    maximizes.
    """

    name: str = ""

    def f(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def df(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def d2f(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    @functools.cached_property
    def gaussian_baseline(self) -> float:
        """E[F(nu)] for standard normal nu (quadrature, computed once)."""
        return _gaussian_expectation(self.f)


class LogCosh(ContrastFunction):
    """F(x) = log cosh(x), F'(x) = tanh(x), F''(x) = 1 - tanh(x)^2."""

    name = "logcosh"

    def f(self, x):
        x = np.asarray(x, dtype=np.float64)
        # |x| + log1p(exp(-2|x|)) - log 2 equals log cosh(x) without overflow.
        ax = np.abs(x)
        return ax + np.log1p(np.exp(-2.0 * ax)) - np.log(2.0)

    def df(self, x):
        return np.tanh(x)

    def d2f(self, x):
        t = np.tanh(x)
        return 1.0 - t * t


class NegExp(ContrastFunction):
    """F(x) = -exp(-x^2/2) with its first two derivatives."""

    name = "negexp"

    def f(self, x):
        x = np.asarray(x, dtype=np.float64)
        return -np.exp(-0.5 * x * x)

    def df(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x * np.exp(-0.5 * x * x)

    def d2f(self, x):
        x = np.asarray(x, dtype=np.float64)
        return (1.0 - x * x) * np.exp(-0.5 * x * x)


_CONTRASTS = {LogCosh.name: LogCosh, NegExp.name: NegExp}


def contrast_by_name(name: str) -> ContrastFunction:
    try:
        return _CONTRASTS[name]()
    except KeyError:
        raise InvalidInputError(
            f"unknown contrast {name!r}, expected one of {sorted(_CONTRASTS)}"
        ) from None


@dataclass(frozen=True)
class SolverOptions:
    """Per-component iteration controls for the fixed-point loop.

    ``tol`` bounds |1 - |w_new' w_old|| at convergence; ``max_inner_iters``
    caps the loop so partial (inexact) solves are possible.
    """

    tol: float = 1e-9
    max_inner_iters: int = 1000
    rng_seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError(f"tol must be positive, got {self.tol}")
        if self.max_inner_iters < 1:
            raise InvalidInputError(f"max_inner_iters must be >= 1, got {self.max_inner_iters}")


@dataclass(frozen=True)
class IcaResult:
    """Extracted filters plus the bookkeeping needed for cross-run stability.

    ``demixing_orthogonal`` (W, C x Q) acts on whitened data and has
    orthonormal columns; ``demixing_raw`` (X = T W) acts on the raw batch
    and satisfies X' R_yy X = I for the covariance used in whitening.
    Columns are ordered by non-increasing ``negentropy_scores`` and
    sign-fixed on the raw filter.
    """

    demixing_orthogonal: np.ndarray
    demixing_raw: np.ndarray
    negentropy_scores: np.ndarray
    converged_flags: np.ndarray

    @property
    def n_components(self) -> int:
        return self.demixing_raw.shape[1]


def _check_unit(w: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).ravel()
    if abs(np.linalg.norm(w) - 1.0) > tol:
        raise InvalidInputError(f"expected a unit vector, got norm {np.linalg.norm(w)}")
    return w


def fixed_point_step(
    w: np.ndarray, whitened: SampleBatch, contrast: ContrastFunction
) -> np.ndarray:
    """One fixed-point update of a unit direction on whitened samples.

    Expectations are replaced by sample means over the batch; the result is
    re-normalized. Raises ``DegenerateDirectionError`` when the update
    collapses, which callers handle by restarting from a fresh direction.
    """
    w = _check_unit(w)
    z = whitened.data
    u = z @ w
    update = z.T @ contrast.df(u) / z.shape[0] - contrast.d2f(u).mean() * w
    norm = np.linalg.norm(update)
    if norm < DEGENERATE_NORM:
        raise DegenerateDirectionError("fixed-point update collapsed to zero")
    return update / norm


def deflate(w: np.ndarray, extracted: np.ndarray) -> np.ndarray:
    """Project out previously extracted orthonormal columns; caller re-normalizes."""
    w = np.asarray(w, dtype=np.float64).ravel()
    if extracted.size == 0:
        return w.copy()
    out = w - extracted @ (extracted.T @ w)
    if np.linalg.norm(out) < DEGENERATE_NORM:
        raise DegenerateDirectionError("direction lies in the span of extracted components")
    return out


def fix_signs(x: np.ndarray) -> np.ndarray:
    """Flip columns so each column's largest-magnitude entry is positive.

    Idempotent; all-zero columns pass through unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    out = x.copy()
    idx = np.argmax(np.abs(out), axis=0)
    pivots = out[idx, np.arange(out.shape[1])]
    out[:, pivots < 0] *= -1.0
    return out


def negentropy_score(
    w: np.ndarray, whitened: SampleBatch, contrast: ContrastFunction
) -> float:
    """|mean_t F(w' z(t)) - E[F(nu)]|: zero for Gaussian data, larger otherwise."""
    w = _check_unit(w)
    u = whitened.data @ w
    return float(abs(contrast.f(u).mean() - contrast.gaussian_baseline))


def run_fastica(
    batch: SampleBatch,
    n_components: int,
    contrast: ContrastFunction,
    opts: SolverOptions,
    center: bool = True,
) -> IcaResult:
    """Whiten a batch and extract ``n_components`` components by deflation.

    Each component's inner loop runs until |1 - |w_new' w_old|| < ``opts.tol``
    or ``opts.max_inner_iters`` steps (recorded per component in
    ``converged_flags``). The result is deterministic for a fixed batch and
    ``opts.rng_seed``.
    """
    q = int(n_components)
    c = batch.n_channels
    if not 1 <= q <= c:
        raise InvalidInputError(f"need 1 <= n_components <= {c}, got {q}")

    cov = sample_covariance(batch, center=center)
    transform = whitening_transform(cov)
    z = SampleBatch(batch.data @ transform.matrix)

    rng = np.random.default_rng(opts.rng_seed)

    def random_unit() -> np.ndarray:
        while True:
            v = rng.standard_normal(c)
            norm = np.linalg.norm(v)
            if norm > DEGENERATE_NORM:
                return v / norm

    w_cols = np.empty((c, 0))
    converged = np.zeros(q, dtype=bool)
    for m in range(q):
        restarts = 0
        while True:
            w = random_unit()
            if m > 0:
                # A fresh draw inside span(W) is measure-zero; deflating the
                # start point keeps the first step well-conditioned.
                try:
                    w0 = deflate(w, w_cols)
                except DegenerateDirectionError:
                    restarts += 1
                    if restarts > MAX_RESTARTS:
                        raise ExtractionFailureError(
                            f"component {m}: too many degenerate restarts"
                        ) from None
                    continue
                w = w0 / np.linalg.norm(w0)
            try:
                for _ in range(opts.max_inner_iters):
                    v = fixed_point_step(w, z, contrast)
                    if m > 0:
                        v = deflate(v, w_cols)
                        norm = np.linalg.norm(v)
                        if norm < DEGENERATE_NORM:
                            raise DegenerateDirectionError("deflated update collapsed")
                        v = v / norm
                    delta = abs(1.0 - abs(v @ w))
                    w = v
                    if delta < opts.tol:
                        converged[m] = True
                        break
            except DegenerateDirectionError:
                restarts += 1
                if restarts > MAX_RESTARTS:
                    raise ExtractionFailureError(
                        f"component {m}: too many degenerate restarts"
                    ) from None
                converged[m] = False
                continue
            break
        if converged[m]:
            # One polish step: the stopping rule bounds the last consecutive
            # angle by ~sqrt(2 tol); the map's local contraction then puts
            # the polished iterate within a few tol of the true fixed point.
            try:
                v = fixed_point_step(w, z, contrast)
                if m > 0:
                    v = deflate(v, w_cols)
                    norm = np.linalg.norm(v)
                    if norm < DEGENERATE_NORM:
                        raise DegenerateDirectionError("deflated update collapsed")
                    v = v / norm
                w = v
            except DegenerateDirectionError:
                pass
        w_cols = np.column_stack([w_cols, w])

    scores = np.array([negentropy_score(w_cols[:, m], z, contrast) for m in range(q)])
    # Least Gaussian first; stable so equal scores keep extraction order.
    order = np.argsort(-scores, kind="stable")
    w_cols = w_cols[:, order]
    scores = scores[order]
    converged = converged[order]

    x_cols = transform.matrix @ w_cols
    idx = np.argmax(np.abs(x_cols), axis=0)
    pivots = x_cols[idx, np.arange(q)]
    signs = np.where(pivots < 0, -1.0, 1.0)
    x_cols = x_cols * signs
    w_cols = w_cols * signs

    return IcaResult(w_cols, x_cols, scores, converged)
