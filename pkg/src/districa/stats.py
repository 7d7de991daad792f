"""Second-order statistics: sample covariance, symmetric eigendecomposition, whitening.

All routines are pure functions over immutable value types. Matrices are
dense float64; the channel counts in this package are at most a few tens,
so no sparse or incremental paths are provided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalFailureError, RankDeficiencyError

# Eigenvalue ratio below which a covariance is treated as rank deficient.
DEFAULT_COND_LIMIT = 1e-10

ChannelLayout = tuple[tuple[int, int], ...]


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise InvalidInputError(f"expected a 2-D array, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SampleBatch:
    """A block of N time samples of a C-channel signal (rows are samples).

    ``channel_layout`` maps column ranges to network nodes as an ordered
    tuple of ``(node_id, channel_count)`` pairs; it defaults to a single
    anonymous block for data with no network structure.
    """

    data: np.ndarray
    channel_layout: ChannelLayout = field(default=())

    def __post_init__(self):
        arr = _as_matrix(self.data)
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidInputError(f"batch must be at least 1x1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("batch contains non-finite values")
        object.__setattr__(self, "data", arr)
        layout = tuple((int(n), int(c)) for n, c in self.channel_layout)
        if not layout:
            layout = ((0, arr.shape[1]),)
        if any(c < 1 for _, c in layout):
            raise InvalidInputError("channel_layout counts must be positive")
        if sum(c for _, c in layout) != arr.shape[1]:
            raise InvalidInputError(
                f"channel_layout covers {sum(c for _, c in layout)} channels, batch has {arr.shape[1]}"
            )
        object.__setattr__(self, "channel_layout", layout)

    @property
    def n_samples(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def with_layout(self, channels_per_node) -> "SampleBatch":
        """Re-label columns as consecutive per-node blocks of the given sizes."""
        layout = tuple((k, int(c)) for k, c in enumerate(channels_per_node))
        return SampleBatch(self.data, layout)

    def node_block(self, node_id: int) -> "SampleBatch":
        """Extract the columns belonging to one node as a single-node batch."""
        start = 0
        for nid, count in self.channel_layout:
            if nid == node_id:
                return SampleBatch(self.data[:, start : start + count], ((nid, count),))
            start += count
        raise InvalidInputError(f"node {node_id} not present in channel layout")


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetric C x C second-moment matrix with the sample count it came from.

    The stored matrix is explicitly symmetrized on construction.
    """

    values: np.ndarray
    sample_count: int

    def __post_init__(self):
        arr = _as_matrix(self.values)
        if arr.shape[0] != arr.shape[1]:
            raise InvalidInputError(f"covariance must be square, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("covariance contains non-finite values")
        object.__setattr__(self, "values", (arr + arr.T) / 2.0)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class EigenDecomposition:
    """Full symmetric eigendecomposition, eigenvalues sorted non-increasing.

    Columns of ``eigenvectors`` are unit eigenvectors; each column's
    largest-magnitude entry is positive, which makes the decomposition
    deterministic for a fixed input.
    """

    eigenvectors: np.ndarray
    eigenvalues: np.ndarray

    def reconstruct(self) -> np.ndarray:
        e, d = self.eigenvectors, self.eigenvalues
        return (e * d) @ e.T


@dataclass(frozen=True)
class WhiteningTransform:
    """Symmetric whitening matrix T = E D^{-1/2} E^T for a given covariance."""

    matrix: np.ndarray

    def apply(self, batch: SampleBatch) -> SampleBatch:
        # Whitening mixes channels across nodes, so the output loses any
        # per-node layout.
        return SampleBatch(batch.data @ self.matrix)


def sample_covariance(batch: SampleBatch, center: bool = True) -> CovarianceMatrix:
    """Estimate the covariance of a batch by temporal averaging.

    Uses the 1/N convention (expectation-operator form). With ``center``
    the per-channel sample mean is subtracted first; this is the default
    for all ICA statistics in this package.
    """
    n = batch.n_samples
    if n < 2:
        raise InvalidInputError(f"covariance needs at least 2 samples, got {n}")
    x = batch.data
    if center:
        x = x - x.mean(axis=0)
    cov = x.T @ x / n
    return CovarianceMatrix(cov, n)


def _fix_column_signs(matrix: np.ndarray) -> np.ndarray:
    """Flip each column so its largest-magnitude entry is positive (zero columns pass)."""
    out = matrix.copy()
    idx = np.argmax(np.abs(out), axis=0)
    pivots = out[idx, np.arange(out.shape[1])]
    flip = pivots < 0
    out[:, flip] *= -1.0
    return out


def sym_eig(cov: CovarianceMatrix) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix, deterministic per input.

    Eigenvalues come back in non-increasing order and every eigenvector is
    sign-fixed so its largest-magnitude entry is positive.
    """
    try:
        eigvals, eigvecs = np.linalg.eigh(cov.values)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"symmetric eigendecomposition did not converge: {exc}") from exc
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = _fix_column_signs(eigvecs[:, order])
    return EigenDecomposition(eigvecs, eigvals)


def whitening_transform(
    cov: CovarianceMatrix, cond_limit: float = DEFAULT_COND_LIMIT
) -> WhiteningTransform:
    """Build T = E D^{-1/2} E^T such that T' R T = I for the given covariance.

    Raises ``RankDeficiencyError`` when the eigenvalue spread exceeds
    ``1 / cond_limit``: whitening assumes a full-rank covariance.
    """
    dec = sym_eig(cov)
    d_max = dec.eigenvalues[0]
    d_min = dec.eigenvalues[-1]
    if d_max <= 0.0 or d_min <= cond_limit * d_max:
        raise RankDeficiencyError(
            f"covariance numerically rank deficient: eigenvalue range [{d_min:.3e}, {d_max:.3e}]"
        )
    e = dec.eigenvectors
    t = (e / np.sqrt(dec.eigenvalues)) @ e.T
    return WhiteningTransform((t + t.T) / 2.0)
