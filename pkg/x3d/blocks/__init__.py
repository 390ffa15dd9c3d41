"""
Local-structure blocks: the X-3D block, the implicit (IHSM) baselines and
neighborhood context propagation, plus the stacked classifier that chains them.

Every block consumes a LocalRegions bundle (the precomputed geometry of one
level) and the level's per-point features, and emits one C-vector per center.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from django.conf import settings

from ..exceptions import ConfigError
from ..geometry import NeighborhoodIndex, relative_offsets
from ..structures import LLE_REGULARIZER, compute_structure, structure_dim

X3D_KIND = 'x3d'
IHSM_KINDS = ('shared_mlp', 'rsconv', 'kpconv', 'vector_attention', 'scalar_attention')
BLOCK_KINDS = (X3D_KIND,) + IHSM_KINDS
ES_KINDS = ('ph', 'pca', 'lr', 'is')
ES_USAGES = ('structure_kernel', 'concat', 'vector_kernel')
RELATION_KINDS = ('pnpp', 'randla', 'gam')


def _default(key, fallback):
    return getattr(settings, 'X3D_SETTINGS', {}).get(key, fallback)


@dataclass(frozen=True)
class BlockConfig:
    kind: str = X3D_KIND
    in_channels: int = 3
    channels: int = 64
    hidden: int = 64
    structure_dim: int = 32
    k: int = 16
    es_kind: str = 'ph'
    es_usage: str = 'structure_kernel'
    denoise: bool = True
    ncp: bool = True
    agg: str = 'max'
    normalize: bool = False
    relation: str = 'pnpp'
    shared_mlp_mode: str = 'explicit'
    kpconv_points: int = 15
    kpconv_sigma: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in BLOCK_KINDS:
            raise ConfigError(f"unknown block kind '{self.kind}'")
        if self.es_kind not in ES_KINDS:
            raise ConfigError(f"unknown explicit structure '{self.es_kind}'")
        if self.es_usage not in ES_USAGES:
            raise ConfigError(f"unknown structure usage '{self.es_usage}'")
        if self.agg not in ('max', 'mean'):
            raise ConfigError(f"unknown aggregation '{self.agg}'")
        if self.relation not in RELATION_KINDS:
            raise ConfigError(f"unknown relation vector '{self.relation}'")
        if self.shared_mlp_mode not in ('explicit', 'implicit'):
            raise ConfigError(f"unknown shared-MLP mode '{self.shared_mlp_mode}'")
        for name in ('in_channels', 'channels', 'hidden', 'structure_dim', 'k', 'kpconv_points'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.kpconv_sigma <= 0:
            raise ConfigError("kpconv_sigma must be positive")

    @classmethod
    def from_settings(cls, **overrides):
        base = dict(
            channels=_default('CHANNELS', 64),
            hidden=_default('HIDDEN', 64),
            structure_dim=_default('STRUCTURE_DIM', 32),
            k=_default('K', 16),
            kpconv_points=_default('KPCONV_POINTS', 15),
            kpconv_sigma=_default('BALL_RADIUS', 0.2),
        )
        base.update(overrides)
        return cls(**base)

    def with_input(self, in_channels):
        return replace(self, in_channels=in_channels)

    def es_dim(self):
        """Width of the descriptor fed to the structure MLP."""
        if self.es_kind == 'is':
            return self.hidden
        return structure_dim(self.es_kind, self.k)

    @property
    def uses_es(self):
        return self.kind == X3D_KIND and self.es_kind != 'is'


@dataclass(frozen=True, eq=False)
class LocalRegions:
    """Geometry of one level: point coords, neighborhoods, offsets and (optionally) ES rows."""
    coords: np.ndarray
    nbr: NeighborhoodIndex
    offsets: np.ndarray
    es: np.ndarray | None = None

    @classmethod
    def build(cls, coords, nbr, es_kind=None, reg=None):
        coords = np.asarray(coords, dtype=np.float64)
        if reg is None:
            reg = _default('LLE_REGULARIZER', LLE_REGULARIZER)
        offsets = relative_offsets(coords, nbr)
        es = None
        if es_kind in ('ph', 'pca', 'lr'):
            es = compute_structure(es_kind, offsets, nbr.valid_counts, reg=reg).data
        return cls(coords=coords, nbr=nbr, offsets=offsets, es=es)

    @staticmethod
    def concatenate(regions):
        sizes = [r.n_points for r in regions]
        es = None if regions[0].es is None else np.concatenate([r.es for r in regions])
        return LocalRegions(
            coords=np.concatenate([r.coords for r in regions]),
            nbr=NeighborhoodIndex.concatenate([r.nbr for r in regions], sizes),
            offsets=np.concatenate([r.offsets for r in regions]),
            es=es,
        )

    @property
    def n_points(self):
        return self.coords.shape[0]

    @property
    def m(self):
        return self.nbr.m

    @property
    def k(self):
        return self.nbr.k

    @property
    def mask(self):
        return self.nbr.valid_mask()

    @property
    def center_coords(self):
        return self.coords[self.nbr.centers]


def build_block(cfg):
    from .baselines import IHSMBlock
    from .x3d_layer import X3DBlock

    return X3DBlock(cfg) if cfg.kind == X3D_KIND else IHSMBlock(cfg)
