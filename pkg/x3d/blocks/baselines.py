"""
Implicit high-dimensional structure modeling (IHSM) blocks.

Each neighbor gets a relation vector V_ij; the block embeds (V_ij, f_ij)
neighbor by neighbor, with a kernel that differs per neighbor, and pools.
Kinds: shared_mlp, rsconv, kpconv, vector_attention, scalar_attention.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..autodiff import LayerSpec, declare_mlp, mlp_forward
from ..exceptions import ConfigError, ShapeError
from ..geometry import farthest_point_sample

logger = logging.getLogger(__name__)

RELATION_DIMS = {'pnpp': 3, 'randla': 10, 'gam': 2}


# =====================================================
# RELATION VECTORS
# =====================================================

def relation_vector(kind, regions):
    """
    Per-neighbor relation vectors, M x k x dim.

    pnpp:   p_i - p_ij
    randla: (p_i - p_ij, p_i, p_ij, ||p_i - p_ij||^2)
    gam:    (z / ||d||^2 * (x + y) / sqrt(x^2 + y^2), ||d||^2) with d = p_i - p_ij;
            the first term is 0 wherever either denominator vanishes
    """
    d = -regions.offsets
    if kind == 'pnpp':
        return d
    sq = np.sum(d * d, axis=-1, keepdims=True)
    if kind == 'randla':
        centers = np.broadcast_to(regions.center_coords[:, None, :], d.shape)
        neighbors = regions.coords[regions.nbr.neighbors]
        return np.concatenate([d, centers, neighbors, sq], axis=-1)
    if kind == 'gam':
        x, y, z = d[..., 0], d[..., 1], d[..., 2]
        planar = np.sqrt(x * x + y * y)
        norm2 = sq[..., 0]
        singular = (planar == 0) | (norm2 == 0)
        safe_planar = np.where(singular, 1.0, planar)
        safe_norm2 = np.where(singular, 1.0, norm2)
        gradient = np.where(singular, 0.0, z / safe_norm2 * (x + y) / safe_planar)
        return np.stack([gradient, norm2], axis=-1)
    raise ConfigError(f"unknown relation vector '{kind}'")


# =====================================================
# KPCONV KERNEL POINTS
# =====================================================

@dataclass(frozen=True, eq=False)
class KernelPointSet:
    points: np.ndarray
    sigma: float

    def __post_init__(self):
        if len(self.points) < 1:
            raise ConfigError("KPConv needs at least one kernel point")
        if self.sigma <= 0:
            raise ConfigError("KPConv influence radius must be positive")

    @property
    def r(self):
        return self.points.shape[0]


def kernel_point_set(r, sigma, seed=0):
    """r points on the sphere of radius 0.75*sigma, spread by FPS over a seeded random set."""
    rng = np.random.default_rng(seed)
    candidates = rng.standard_normal((max(32 * r, 64), 3))
    candidates *= 0.75 * sigma / np.linalg.norm(candidates, axis=1, keepdims=True)
    picked = farthest_point_sample(candidates, r, start=0)
    return KernelPointSet(points=candidates[picked], sigma=float(sigma))


def kernel_correlation(offsets, kps):
    """Linear influence h = max(0, 1 - ||p_ij - p~_k|| / sigma), shape M x k x r."""
    diff = np.asarray(offsets)[:, :, None, :] - kps.points[None, None, :, :]
    return np.maximum(0.0, 1.0 - np.linalg.norm(diff, axis=-1) / kps.sigma)


# =====================================================
# LAYER WIDTHS
# =====================================================

def _chain(cfg, dims):
    return LayerSpec.chain(dims, normalize=cfg.normalize)


def relation_spec(cfg):
    dim = RELATION_DIMS[cfg.relation]
    if cfg.shared_mlp_mode == 'implicit':
        return _chain(cfg, [dim + cfg.in_channels, cfg.hidden, cfg.channels])
    return _chain(cfg, [dim, cfg.hidden, cfg.channels])


def feature_spec(cfg):
    return LayerSpec.chain([cfg.in_channels, cfg.channels])


def rsconv_kernel_spec(cfg):
    return _chain(cfg, [RELATION_DIMS[cfg.relation], cfg.hidden, cfg.in_channels])


def position_spec(cfg):
    return _chain(cfg, [3, cfg.hidden, cfg.channels])


def attention_spec(cfg):
    return _chain(cfg, [cfg.in_channels, cfg.hidden, cfg.channels])


# =====================================================
# EMBEDDINGS
# =====================================================

def shared_mlp_embed(tape, relation, nbr_features, cfg, prefix):
    """MLP(V) + MLP(f) (explicit) or MLP([V, f]) (implicit)."""
    if cfg.shared_mlp_mode == 'implicit':
        joined = tape.concat([tape.constant(relation), nbr_features], axis=-1)
        return mlp_forward(relation_spec(cfg), tape.params, joined, tape, prefix=f"{prefix}.relation_mlp")
    position = mlp_forward(relation_spec(cfg), tape.params, relation, tape, prefix=f"{prefix}.relation_mlp")
    content = mlp_forward(feature_spec(cfg), tape.params, nbr_features, tape, prefix=f"{prefix}.feature_mlp")
    return tape.add(position, content)


def rsconv_embed(tape, relation, nbr_features, cfg, prefix):
    """W_ij = MLP(V_ij) per neighbor; output MLP(W_ij * f_ij). Returns (embedding, W)."""
    kernel = mlp_forward(rsconv_kernel_spec(cfg), tape.params, relation, tape, prefix=f"{prefix}.kernel_mlp")
    if kernel.value.shape != nbr_features.value.shape:
        raise ShapeError("RSConv kernel width must equal the input channels")
    weighted = tape.mul(kernel, nbr_features)
    out = mlp_forward(feature_spec(cfg), tape.params, weighted, tape, prefix=f"{prefix}.feature_mlp")
    return out, kernel


def kpconv_embed(tape, offsets, nbr_features, kps, prefix):
    """sum_k h(p_ij, p~_k) G_k f_ij per neighbor. Returns (embedding, h)."""
    h = kernel_correlation(offsets, kps)
    weights = tape.param(f"{prefix}.kp_weights")
    if weights.value.shape[0] != kps.r:
        raise ShapeError(f"{prefix}: {weights.value.shape[0]} weight matrices for {kps.r} kernel points")
    spread = tape.einsum('mkr,mkc->mkrc', h, nbr_features)
    return tape.einsum('mkrc,rcd->mkd', spread, weights), h


def vector_attention_embed(tape, features, regions, cfg, prefix):
    """
    Per-channel attention.

        M_ij = MLP(f_i - f_ij) + delta_ij,   delta_ij = MLP(p_i - p_ij)
        w_ij = softmax_j(M_ij) per channel over valid neighbors
        LS_i = sum_j w_ij * (W_v f_ij + delta_ij)

    Returns (LS, weights).
    """
    nbr = regions.nbr
    own = tape.gather(features, nbr.centers[:, None])
    others = tape.gather(features, nbr.neighbors)
    delta = mlp_forward(position_spec(cfg), tape.params, -regions.offsets, tape, prefix=f"{prefix}.position_mlp")
    relation = mlp_forward(attention_spec(cfg), tape.params, tape.sub(own, others), tape, prefix=f"{prefix}.attention_mlp")
    weights = tape.softmax(tape.add(relation, delta), axis=1, mask=regions.mask[:, :, None])
    values = tape.add(
        mlp_forward(feature_spec(cfg), tape.params, others, tape, prefix=f"{prefix}.value_mlp"),
        delta,
    )
    return tape.einsum('mkc,mkc->mc', weights, values), weights


def scalar_attention_embed(tape, features, regions, cfg, prefix):
    """
    Dot-product attention of the center query against position-shifted keys.

    Returns (LS, weights) with one weight per neighbor.
    """
    nbr = regions.nbr
    own = tape.gather(features, nbr.centers)
    others = tape.gather(features, nbr.neighbors)
    delta = mlp_forward(position_spec(cfg), tape.params, -regions.offsets, tape, prefix=f"{prefix}.position_mlp")
    query = mlp_forward(feature_spec(cfg), tape.params, own, tape, prefix=f"{prefix}.query_mlp")
    keys = tape.add(mlp_forward(feature_spec(cfg), tape.params, others, tape, prefix=f"{prefix}.key_mlp"), delta)
    values = tape.add(mlp_forward(feature_spec(cfg), tape.params, others, tape, prefix=f"{prefix}.value_mlp"), delta)
    logits = tape.scale(tape.einsum('mc,mkc->mk', query, keys), 1.0 / np.sqrt(cfg.channels))
    weights = tape.softmax(logits, axis=1, mask=regions.mask)
    return tape.einsum('mk,mkc->mc', weights, values), weights


# =====================================================
# BLOCK
# =====================================================

class IHSMBlock:
    def __init__(self, cfg):
        self.cfg = cfg
        self.kernel_points = None
        if cfg.kind == 'kpconv':
            self.kernel_points = kernel_point_set(cfg.kpconv_points, cfg.kpconv_sigma, cfg.seed)

    def declare(self, builder, prefix):
        cfg = self.cfg
        if cfg.kind == 'shared_mlp':
            declare_mlp(builder, f"{prefix}.relation_mlp", relation_spec(cfg))
            if cfg.shared_mlp_mode == 'explicit':
                declare_mlp(builder, f"{prefix}.feature_mlp", feature_spec(cfg))
        elif cfg.kind == 'rsconv':
            declare_mlp(builder, f"{prefix}.kernel_mlp", rsconv_kernel_spec(cfg))
            declare_mlp(builder, f"{prefix}.feature_mlp", feature_spec(cfg))
        elif cfg.kind == 'kpconv':
            builder.declare(f"{prefix}.kp_weights", (cfg.kpconv_points, cfg.in_channels, cfg.channels))
        elif cfg.kind == 'vector_attention':
            declare_mlp(builder, f"{prefix}.position_mlp", position_spec(cfg))
            declare_mlp(builder, f"{prefix}.attention_mlp", attention_spec(cfg))
            declare_mlp(builder, f"{prefix}.value_mlp", feature_spec(cfg))
        elif cfg.kind == 'scalar_attention':
            declare_mlp(builder, f"{prefix}.position_mlp", position_spec(cfg))
            for name in ('query_mlp', 'key_mlp', 'value_mlp'):
                declare_mlp(builder, f"{prefix}.{name}", feature_spec(cfg))

    def forward(self, tape, features, regions, prefix, trace=None):
        return ihsm_block_forward(
            tape, features, regions, self.cfg, prefix, trace, kernel_points=self.kernel_points,
        )


def ihsm_block_forward(tape, features, regions, cfg, prefix, trace=None, kernel_points=None):
    """Embed every neighbor with the configured IHSM kind, then pool (attention pools itself)."""
    features = tape.lift(features)
    if features.value.shape[-1] != cfg.in_channels:
        raise ShapeError(f"{prefix}: expected {cfg.in_channels} input channels, got {features.value.shape[-1]}")
    mask = regions.mask

    if cfg.kind in ('vector_attention', 'scalar_attention'):
        embed = vector_attention_embed if cfg.kind == 'vector_attention' else scalar_attention_embed
        out, weights = embed(tape, features, regions, cfg, prefix)
        if trace is not None:
            trace.update(kernel=weights.value)
        return out

    nbr_features = tape.gather(features, regions.nbr.neighbors)
    kernel = None
    if cfg.kind == 'shared_mlp':
        updated = shared_mlp_embed(tape, relation_vector(cfg.relation, regions), nbr_features, cfg, prefix)
    elif cfg.kind == 'rsconv':
        updated, w = rsconv_embed(tape, relation_vector(cfg.relation, regions), nbr_features, cfg, prefix)
        kernel = w.value
    elif cfg.kind == 'kpconv':
        kps = kernel_points or kernel_point_set(cfg.kpconv_points, cfg.kpconv_sigma, cfg.seed)
        updated, h = kpconv_embed(tape, regions.offsets, nbr_features, kps, prefix)
        if trace is not None:
            kernel = np.einsum('mkr,rcd->mkcd', h, tape.params.view(f"{prefix}.kp_weights"))
    else:
        raise ConfigError(f"'{cfg.kind}' is not an IHSM block")

    if trace is not None:
        trace.update(updated=updated.value, kernel=kernel)
    if cfg.agg == 'mean':
        return tape.meanpool(updated, mask)
    return tape.maxpool(updated, mask)
