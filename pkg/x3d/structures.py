"""
Explicit local structures ES_i computed directly in input space.

Three descriptors are provided:

- PH  (PointHop): octant partition of the neighborhood, centroid per octant,
      concatenated in octant order 0..7 -> 24 values.
- PCA: eigen-decomposition of the neighborhood covariance plus the
      linear / planar / scatter shape ratios -> 15 values.
- LR  (LLE): linear reconstruction weights of the center from its
      neighbors -> k values (order sensitive by construction).

All functions take center-relative offsets (M x k x 3) and optional
valid_counts; padded slots never contribute.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, ShapeError

logger = logging.getLogger(__name__)

STRUCTURE_KINDS = ('ph', 'pca', 'lr')
PH_DIM = 24
PCA_DIM = 15
LLE_REGULARIZER = 1e-3


@dataclass(frozen=True, eq=False)
class ExplicitStructure:
    """One descriptor row per center; degenerate flags PCA regions with lambda_1 == 0."""
    kind: str
    data: np.ndarray
    degenerate: np.ndarray | None = None

    @property
    def dim(self):
        return self.data.shape[-1]


def _as_regions(offsets, valid_counts):
    offsets = np.asarray(offsets, dtype=np.float64)
    single = offsets.ndim == 2
    if single:
        offsets = offsets[None]
    if offsets.ndim != 3 or offsets.shape[2] != 3:
        raise ShapeError(f"offsets must be M x k x 3, got {offsets.shape}")
    m, k, _ = offsets.shape
    if valid_counts is None:
        valid_counts = np.full(m, k, dtype=np.int64)
    valid_counts = np.asarray(valid_counts, dtype=np.int64).reshape(-1)
    mask = np.arange(k)[None, :] < valid_counts[:, None]
    return offsets, mask, single


# =====================================================
# POINTHOP
# =====================================================

def octant_assign(offsets):
    """Octant id 4*[x>0] + 2*[y>0] + [z>0]; exact zeros take the 'not > 0' branch."""
    offsets = np.asarray(offsets)
    return (
        (offsets[..., 0] > 0).astype(np.int64) * 4
        + (offsets[..., 1] > 0).astype(np.int64) * 2
        + (offsets[..., 2] > 0).astype(np.int64)
    )


def pointhop_descriptor(offsets, valid_counts=None):
    """Concatenated octant centroids; empty octants contribute the zero vector."""
    offsets, mask, single = _as_regions(offsets, valid_counts)
    octants = octant_assign(offsets)
    m = offsets.shape[0]
    centroids = np.zeros((m, 8, 3))
    for c in range(8):
        members = (octants == c) & mask
        counts = members.sum(axis=1)
        sums = np.where(members[..., None], offsets, 0.0).sum(axis=1)
        filled = counts > 0
        centroids[filled, c] = sums[filled] / counts[filled, None]
    data = centroids.reshape(m, PH_DIM)
    return ExplicitStructure('ph', data[0] if single else data)


# =====================================================
# NEIGHBORHOOD PCA
# =====================================================

def _fix_sign(vectors):
    # columns are eigenvectors; make the largest-magnitude entry of each positive
    idx = np.argmax(np.abs(vectors), axis=-2)
    picked = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    signs = np.where(picked < 0, -1.0, 1.0)
    return vectors * signs


def pca_descriptor(offsets, valid_counts=None, about='mean'):
    """
    [l1, l2, l3, e1, e2, e3, linear, planar, scatter] per region.

    Covariance is the population covariance of the valid offsets about their
    own mean; about='center' uses the second moment about the center instead.
    """
    if about not in ('mean', 'center'):
        raise ConfigError(f"unknown PCA frame '{about}'")
    offsets, mask, single = _as_regions(offsets, valid_counts)
    weights = mask.astype(np.float64)
    counts = weights.sum(axis=1)

    if about == 'mean':
        mean = (offsets * weights[..., None]).sum(axis=1) / counts[:, None]
        centered = (offsets - mean[:, None, :]) * weights[..., None]
    else:
        centered = offsets * weights[..., None]
    cov = np.einsum('mki,mkj->mij', centered, centered) / counts[:, None, None]
    cov = 0.5 * (cov + np.transpose(cov, (0, 2, 1)))

    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    eigenvalues = np.maximum(eigenvalues[:, ::-1], 0.0)
    eigenvectors = _fix_sign(eigenvectors[:, :, ::-1])

    lam1, lam2, lam3 = eigenvalues[:, 0], eigenvalues[:, 1], eigenvalues[:, 2]
    degenerate = lam1 <= 0.0
    safe = np.where(degenerate, 1.0, lam1)
    linear = np.where(degenerate, 0.0, (lam1 - lam2) / safe)
    planar = np.where(degenerate, 0.0, (lam2 - lam3) / safe)
    scatter = np.where(degenerate, 0.0, lam3 / safe)
    if np.any(degenerate):
        logger.debug("PCA descriptor: %d degenerate regions", int(degenerate.sum()))

    data = np.concatenate([
        eigenvalues,
        np.transpose(eigenvectors, (0, 2, 1)).reshape(-1, 9),
        np.stack([linear, planar, scatter], axis=1),
    ], axis=1)
    if single:
        return ExplicitStructure('pca', data[0], degenerate[0:1])
    return ExplicitStructure('pca', data, degenerate)


def shape_ratios(descriptor):
    """(linear, planar, scatter) slice of a PCA descriptor."""
    return np.asarray(descriptor.data)[..., 12:15]


# =====================================================
# LLE RECONSTRUCTION WEIGHTS
# =====================================================

def lle_weights(offsets, valid=None, reg=LLE_REGULARIZER):
    """
    Weights minimizing ||sum_j w_j x_j||^2 + r ||w||^2 subject to sum_j w_j = 1.

    x_j are the center-relative offsets of one region. The ridge r is
    reg * trace(G) / n on the local Gram matrix G (or reg when the trace
    vanishes). Padded slots get weight 0.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    k = offsets.shape[0]
    n = k if valid is None else int(valid)
    x = offsets[:n]
    gram = x @ x.T
    trace = np.trace(gram)
    ridge = reg * trace / n if trace > 0 else reg
    gram = gram + ridge * np.eye(n)
    w = np.linalg.solve(gram, np.ones(n))
    w = w / w.sum()
    weights = np.zeros(k)
    weights[:n] = w
    return ExplicitStructure('lr', weights)


def lle_objective(weights, offsets, reg=LLE_REGULARIZER, valid=None):
    """Regularized reconstruction objective the LLE weights minimize."""
    n = offsets.shape[0] if valid is None else int(valid)
    x = np.asarray(offsets, dtype=np.float64)[:n]
    w = np.asarray(weights, dtype=np.float64)[:n]
    trace = float(np.sum(x * x))
    ridge = reg * trace / n if trace > 0 else reg
    residual = w @ x
    return float(residual @ residual + ridge * (w @ w))


def lle_descriptor(offsets, valid_counts=None, reg=LLE_REGULARIZER):
    offsets, mask, single = _as_regions(offsets, valid_counts)
    counts = mask.sum(axis=1)
    data = np.stack([lle_weights(offsets[i], counts[i], reg).data for i in range(offsets.shape[0])])
    return ExplicitStructure('lr', data[0] if single else data)


# =====================================================
# DISPATCH
# =====================================================

def structure_dim(kind, k):
    if kind == 'ph':
        return PH_DIM
    if kind == 'pca':
        return PCA_DIM
    if kind == 'lr':
        return k
    raise ConfigError(f"unknown explicit structure '{kind}'")


def structure_flops(kind, k):
    """Arithmetic count charged to the cost model for computing one ES row."""
    if kind == 'ph':
        return 3 * k + PH_DIM
    if kind == 'pca':
        return 2 * 9 * k + 6 * k + 27 * 3
    if kind == 'lr':
        return 2 * 3 * k * k + k ** 3 // 3 + 2 * k * k
    return 0


def compute_structure(kind, offsets, valid_counts=None, reg=LLE_REGULARIZER, pca_about='mean'):
    if kind == 'ph':
        return pointhop_descriptor(offsets, valid_counts)
    if kind == 'pca':
        return pca_descriptor(offsets, valid_counts, about=pca_about)
    if kind == 'lr':
        return lle_descriptor(offsets, valid_counts, reg)
    raise ConfigError(f"unknown explicit structure '{kind}'")
