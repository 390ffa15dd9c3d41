"""
Stacked classifier: blocks -> global max-pool per cloud -> linear head.

Level 0 is the input cloud with its coordinates as features. Block l samples
its centers from the level-l points by FPS and groups their neighbors; the
centers become the level-(l+1) points carrying the block output.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..autodiff import Layer, LayerSpec, ParamBuilder, declare_mlp, mlp_forward
from ..exceptions import ConfigError
from ..geometry import ball_query, farthest_point_sample, knn_query
from . import BlockConfig, LocalRegions, build_block

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkConfig:
    block: BlockConfig = field(default_factory=BlockConfig)
    n_blocks: int = 2
    centers: int = 64
    center_decay: int = 2
    neighborhood: str = 'knn'
    radius: float = 0.2
    n_classes: int = 2

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError("a network needs at least one block")
        if self.centers < 1 or self.center_decay < 1:
            raise ConfigError("centers and center_decay must be at least 1")
        if self.n_classes < 2:
            raise ConfigError("classification needs at least two classes")
        if self.neighborhood not in ('knn', 'ball'):
            raise ConfigError(f"unknown neighborhood method '{self.neighborhood}'")

    def block_config(self, level):
        in_channels = 3 if level == 0 else self.block.channels
        return self.block.with_input(in_channels)

    def centers_at(self, level, n_points):
        return max(1, min(n_points, self.centers // (self.center_decay ** level)))


@dataclass(frozen=True, eq=False)
class CloudGeometry:
    """Regions of every level of one cloud; sources[l] indexes the level-(l+1) points in the input."""
    levels: list
    sources: list


@dataclass(frozen=True, eq=False)
class PreparedBatch:
    """Per-level regions of one or more clouds, stacked; cloud_of_point maps final-level points to clouds."""
    input_coords: np.ndarray
    levels: list
    sources: list
    cloud_of_point: np.ndarray
    n_clouds: int


class PointNetwork:
    def __init__(self, cfg):
        self.cfg = cfg
        self.blocks = [build_block(cfg.block_config(level)) for level in range(cfg.n_blocks)]
        self.head = LayerSpec((Layer(cfg.block.channels, cfg.n_classes, 'none'),))

    def init_params(self, seed):
        builder = ParamBuilder(seed)
        for level, block in enumerate(self.blocks):
            block.declare(builder, f"block{level}")
        declare_mlp(builder, 'head', self.head)
        return builder.build()

    # ---- geometry ----

    def prepare_cloud(self, coords):
        cfg = self.cfg
        block = cfg.block
        es_kind = block.es_kind if block.uses_es else None
        levels, sources = [], []
        level_coords = np.asarray(coords, dtype=np.float64)
        source = np.arange(level_coords.shape[0])
        for level in range(cfg.n_blocks):
            n = level_coords.shape[0]
            centers = farthest_point_sample(level_coords, cfg.centers_at(level, n), start=0)
            if cfg.neighborhood == 'ball':
                nbr = ball_query(level_coords, centers, cfg.radius, block.k)
            else:
                nbr = knn_query(level_coords, centers, min(block.k, n))
            levels.append(LocalRegions.build(level_coords, nbr, es_kind=es_kind))
            level_coords = level_coords[centers]
            source = source[centers]
            sources.append(source)
        return CloudGeometry(levels=levels, sources=sources)

    def stack(self, geometries):
        """Stack prepared clouds into one batch; indices shift per cloud and level."""
        levels = [LocalRegions.concatenate([g.levels[l] for g in geometries]) for l in range(self.cfg.n_blocks)]
        input_sizes = [g.levels[0].n_points for g in geometries]
        starts = np.concatenate([[0], np.cumsum(input_sizes)[:-1]]).astype(np.int64)
        sources = [
            np.concatenate([g.sources[l] + start for g, start in zip(geometries, starts)])
            for l in range(self.cfg.n_blocks)
        ]
        final_counts = [g.levels[-1].m for g in geometries]
        return PreparedBatch(
            input_coords=np.concatenate([g.levels[0].coords for g in geometries]),
            levels=levels,
            sources=sources,
            cloud_of_point=np.repeat(np.arange(len(geometries)), final_counts),
            n_clouds=len(geometries),
        )

    def prepare(self, clouds):
        return self.stack([self.prepare_cloud(c.coords if hasattr(c, 'coords') else c) for c in clouds])

    # ---- forward ----

    def embed(self, tape, batch, traces=None):
        """Run every block; returns the final-level features Var."""
        features = tape.constant(batch.input_coords)
        for level, (block, regions) in enumerate(zip(self.blocks, batch.levels)):
            trace = None if traces is None else {}
            out = block.forward(tape, features, regions, f"block{level}", trace)
            features = tape.relu(out)
            if trace is not None:
                trace.update(
                    level=level, coords=regions.center_coords,
                    source=batch.sources[level], features=features.value,
                )
                traces.append(trace)
        return features

    def global_pool(self, tape, features, batch):
        counts = np.bincount(batch.cloud_of_point, minlength=batch.n_clouds)
        width = int(counts.max())
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        slots = np.arange(width)[None, :]
        mask = slots < counts[:, None]
        index = np.where(mask, starts[:, None] + slots, starts[:, None])
        return tape.maxpool(tape.gather(features, index), mask)

    def forward(self, tape, batch, traces=None):
        pooled = self.global_pool(tape, self.embed(tape, batch, traces), batch)
        return mlp_forward(self.head, tape.params, pooled, tape, prefix='head')
