"""
The X-3D block.

    ES_i  -> F_i = MLP(ES_i)                        structure feature
    F_i   -> F_i + sum_j s_ij emb(p_ij)             denoising, s = softmax_j(emb(p_ij) . F_i)
    F_i   -> W_i = MLP(F_i) reshaped C x 3          one kernel per region
    f_ij  -> W_i (p_i - p_ij) + MLP(f_ij)           neighbor update
    LS_i  =  MaxPool_j(...)  or NCP                 aggregation

Offsets are stored neighbor-minus-center, so the kernel is applied to the
negated offsets here.
"""

from __future__ import annotations

import logging

import numpy as np

from ..autodiff import LayerSpec, declare_mlp, mlp_forward
from ..exceptions import ShapeError
from ..structures import structure_flops
from . import ncp

logger = logging.getLogger(__name__)


# =====================================================
# LAYER WIDTHS
# =====================================================

def es_spec(cfg):
    return LayerSpec.chain([cfg.es_dim(), cfg.hidden, cfg.structure_dim], normalize=cfg.normalize)


def implicit_spec(cfg):
    return LayerSpec.chain([3, cfg.hidden, cfg.hidden], normalize=cfg.normalize)


def point_embed_spec(cfg):
    return LayerSpec.chain([3, cfg.structure_dim])


def kernel_spec(cfg):
    width = 2 * cfg.structure_dim if cfg.es_usage == 'vector_kernel' else cfg.structure_dim
    return LayerSpec.chain([width, cfg.hidden, 3 * cfg.channels], normalize=cfg.normalize)


def concat_spec(cfg):
    return LayerSpec.chain([3 + cfg.structure_dim, cfg.hidden, cfg.channels], normalize=cfg.normalize)


def feature_spec(cfg):
    return LayerSpec.chain([cfg.in_channels, cfg.channels])


def _needs_point_embedding(cfg):
    return cfg.denoise or cfg.es_usage == 'vector_kernel'


# =====================================================
# OPERATIONS
# =====================================================

def implicit_structure(tape, offsets, mask, spec, prefix):
    """Learned stand-in for ES: max-pooled MLP over each region's offsets."""
    per_point = mlp_forward(spec, tape.params, offsets, tape, prefix=f"{prefix}.is_mlp")
    return tape.maxpool(per_point, mask)


def extract_structure_feature(tape, es, spec, prefix):
    return mlp_forward(spec, tape.params, es, tape, prefix=f"{prefix}.es_mlp")


def embed_points(tape, offsets, spec, prefix):
    return mlp_forward(spec, tape.params, offsets, tape, prefix=f"{prefix}.point_embed")


def denoise(tape, feature, offsets, mask, spec, prefix, embedding=None):
    """
    Attention of each neighbor's embedding against F_i, then F_i += sum_j s_ij emb(p_ij).

    Returns (updated F, scores Var, embedding Var). Padded slots get score 0.
    """
    if embedding is None:
        embedding = embed_points(tape, offsets, spec, prefix)
    if embedding.value.shape[-1] != feature.value.shape[-1]:
        raise ShapeError("point embedding width must equal the structure feature width")
    logits = tape.einsum('mkd,md->mk', embedding, feature)
    scores = tape.softmax(logits, axis=1, mask=mask)
    correction = tape.einsum('mk,mkd->md', scores, embedding)
    return tape.add(feature, correction), scores, embedding


def make_structure_kernel(tape, feature, spec, channels, prefix):
    """MLP(F_i) reshaped row-major to (C, 3); one kernel per region."""
    flat = mlp_forward(spec, tape.params, feature, tape, prefix=f"{prefix}.kernel_mlp")
    if flat.value.shape[-1] != 3 * channels:
        raise ShapeError(f"kernel MLP must emit 3*C={3 * channels} values")
    return tape.reshape(flat, flat.value.shape[:-1] + (channels, 3))


def apply_structure_kernel(tape, kernel, offsets, nbr_features, spec, prefix):
    """W_i (p_i - p_ij) + MLP(f_ij) for every neighbor j of region i."""
    towards_center = -np.asarray(offsets, dtype=np.float64)
    if kernel.value.ndim == 3:
        position = tape.einsum('mcd,mkd->mkc', kernel, towards_center)
    else:
        position = tape.einsum('mkcd,mkd->mkc', kernel, towards_center)
    content = mlp_forward(spec, tape.params, nbr_features, tape, prefix=f"{prefix}.feature_mlp")
    return tape.add(position, content)


# =====================================================
# BLOCK
# =====================================================

class X3DBlock:
    def __init__(self, cfg):
        self.cfg = cfg

    def declare(self, builder, prefix):
        cfg = self.cfg
        if cfg.es_kind == 'is':
            declare_mlp(builder, f"{prefix}.is_mlp", implicit_spec(cfg))
        declare_mlp(builder, f"{prefix}.es_mlp", es_spec(cfg))
        if _needs_point_embedding(cfg):
            declare_mlp(builder, f"{prefix}.point_embed", point_embed_spec(cfg))
        if cfg.es_usage == 'concat':
            declare_mlp(builder, f"{prefix}.concat_mlp", concat_spec(cfg))
        else:
            declare_mlp(builder, f"{prefix}.kernel_mlp", kernel_spec(cfg))
        declare_mlp(builder, f"{prefix}.feature_mlp", feature_spec(cfg))
        if cfg.ncp:
            ncp.declare_ncp(builder, prefix, cfg.channels, cfg.hidden)

    def forward(self, tape, features, regions, prefix, trace=None):
        return x3d_block_forward(tape, features, regions, self.cfg, prefix, trace)


def x3d_block_forward(tape, features, regions, cfg, prefix, trace=None):
    """
    One X-3D block over the regions of one level.

    features are the level's per-point features (Var or array, N x C_in).
    When trace is a dict it receives es, es_feature (before denoising), F,
    scores, kernel and updated.
    """
    features = tape.lift(features)
    if features.value.shape[-1] != cfg.in_channels:
        raise ShapeError(f"{prefix}: expected {cfg.in_channels} input channels, got {features.value.shape[-1]}")
    mask = regions.mask
    offsets = regions.offsets
    m, k = regions.m, regions.k
    nbr_features = tape.gather(features, regions.nbr.neighbors)

    if cfg.es_kind == 'is':
        es = implicit_structure(tape, offsets, mask, implicit_spec(cfg), prefix)
    else:
        if regions.es is None:
            raise ShapeError(f"{prefix}: regions carry no '{cfg.es_kind}' descriptors")
        es = tape.constant(regions.es)
        tape.add_flops(m * structure_flops(cfg.es_kind, k))
    structure_feature = extract_structure_feature(tape, es, es_spec(cfg), prefix)
    feature = structure_feature

    embedding = None
    scores = None
    if cfg.denoise:
        feature, scores, embedding = denoise(tape, feature, offsets, mask, point_embed_spec(cfg), prefix)
    elif cfg.es_usage == 'vector_kernel':
        embedding = embed_points(tape, offsets, point_embed_spec(cfg), prefix)

    kernel = None
    if cfg.es_usage == 'structure_kernel':
        kernel = make_structure_kernel(tape, feature, kernel_spec(cfg), cfg.channels, prefix)
        updated = apply_structure_kernel(tape, kernel, offsets, nbr_features, feature_spec(cfg), prefix)
    elif cfg.es_usage == 'vector_kernel':
        spread = tape.gather(feature, np.repeat(np.arange(m)[:, None], k, axis=1))
        joined = tape.concat([spread, embedding], axis=-1)
        kernel = make_structure_kernel(tape, joined, kernel_spec(cfg), cfg.channels, prefix)
        updated = apply_structure_kernel(tape, kernel, offsets, nbr_features, feature_spec(cfg), prefix)
    else:
        spread = tape.gather(feature, np.repeat(np.arange(m)[:, None], k, axis=1))
        relation = tape.concat([tape.constant(-offsets), spread], axis=-1)
        position = mlp_forward(concat_spec(cfg), tape.params, relation, tape, prefix=f"{prefix}.concat_mlp")
        content = mlp_forward(feature_spec(cfg), tape.params, nbr_features, tape, prefix=f"{prefix}.feature_mlp")
        updated = tape.add(position, content)

    if trace is not None:
        trace.update(
            es=es.value, es_feature=structure_feature.value, F=feature.value, updated=updated.value,
            scores=None if scores is None else scores.value,
            kernel=None if kernel is None else kernel.value,
        )

    if cfg.ncp:
        return ncp.propagate(tape, updated, regions, cfg, prefix, trace)
    return ncp.center_pool(tape, updated, mask, cfg.agg)
