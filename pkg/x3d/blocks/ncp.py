"""
Neighborhood context propagation.

After the per-neighbor update every region holds k updated vectors. A point
that sits in several regions therefore has several updated versions; their
mean is its context, which is fused with the point's own pooled feature.
Only regions whose neighbor list contains the point contribute.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..autodiff import LayerSpec, declare_mlp, mlp_forward

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OverlapSet:
    """members[i] lists the regions j with point i among their valid neighbors (region order)."""
    members: list
    counts: np.ndarray

    @classmethod
    def build(cls, nbr, n_points):
        members = [[] for _ in range(n_points)]
        mask = nbr.valid_mask()
        for region in range(nbr.m):
            for slot in range(nbr.k):
                if mask[region, slot]:
                    members[nbr.neighbors[region, slot]].append(region)
        counts = np.array([len(m) for m in members], dtype=np.int64)
        return cls(members=[np.array(m, dtype=np.int64) for m in members], counts=counts)


def fuse_spec(channels, hidden):
    return LayerSpec.chain([2 * channels, hidden, channels])


def declare_ncp(builder, prefix, channels, hidden):
    declare_mlp(builder, f"{prefix}.context_fuse", fuse_spec(channels, hidden))


def center_pool(tape, updated, mask, agg='max'):
    """Valid-masked columnwise pooling of each region's updated rows."""
    if agg == 'mean':
        return tape.meanpool(updated, mask)
    return tape.maxpool(updated, mask)


def overlap_context(tape, updated, nbr, targets=None, n_points=None):
    """
    Mean of every updated occurrence of each target point across regions.

    Returns (context Var rows aligned with targets, occurrence counts). Targets
    that never occur as a valid neighbor get the zero vector.
    """
    targets = nbr.centers if targets is None else np.asarray(targets, dtype=np.int64)
    if n_points is None:
        n_points = int(max(nbr.neighbors.max(), targets.max())) + 1
    per_point = tape.scatter_mean(updated, nbr.neighbors, nbr.valid_mask(), n_points)
    counts = per_point.counts[targets]
    empty = int(np.sum(counts == 0))
    if empty:
        logger.debug("NCP: %d target points have no overlapping region", empty)
    return tape.gather(per_point, targets), counts


def context_fuse(tape, pooled, context, spec, prefix):
    """MLP over [context, pooled]."""
    joined = tape.concat([context, pooled], axis=-1)
    return mlp_forward(spec, tape.params, joined, tape, prefix=f"{prefix}.context_fuse")


def propagate(tape, updated, regions, cfg, prefix, trace=None):
    pooled = center_pool(tape, updated, regions.mask, cfg.agg)
    context, counts = overlap_context(tape, updated, regions.nbr, n_points=regions.n_points)
    fused = context_fuse(tape, pooled, context, fuse_spec(cfg.channels, cfg.hidden), prefix)
    if trace is not None:
        trace.update(pooled=pooled.value, context=context.value, overlap_counts=counts)
    return fused
