"""
Synthetic shape classification data and the robustness transforms.

Each class samples its surface uniformly at a canonical size centered on the
origin, adds Gaussian jitter, is re-centered on its centroid, scaled into the
unit ball and (unless disabled) randomly rotated. Cloud i of a split has label i % n_classes and
draws from its own seeded stream.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .exceptions import ConfigError
from .geometry import PointCloud

logger = logging.getLogger(__name__)

SHAPE_ALIASES = {
    'sphere': 'sphere',
    'plane': 'plane', 'plane-patch': 'plane',
    'line': 'line', 'line-segment': 'line',
    'cube': 'cube', 'cube-surface': 'cube',
    'torus': 'torus',
    'cylinder': 'cylinder',
}
SPLITS = {'train': 0, 'test': 1}

TORUS_MAJOR = 1.0
TORUS_MINOR = 0.35
CYLINDER_RADIUS = 0.5


# =====================================================
# SURFACE SAMPLERS
# =====================================================

def _unit_rows(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_sphere(rng, n):
    normals = _unit_rows(rng.standard_normal((n, 3)))
    return normals.copy(), normals


def sample_plane(rng, n):
    xy = rng.uniform(-1.0, 1.0, size=(n, 2))
    points = np.column_stack([xy, np.zeros(n)])
    return points, np.tile([0.0, 0.0, 1.0], (n, 1))


def sample_line(rng, n):
    points = np.column_stack([rng.uniform(-1.0, 1.0, size=n), np.zeros(n), np.zeros(n)])
    return points, np.tile([0.0, 0.0, 1.0], (n, 1))


def sample_cube(rng, n):
    face = rng.integers(0, 6, size=n)
    axis, side = face // 2, np.where(face % 2 == 0, 1.0, -1.0)
    points = rng.uniform(-1.0, 1.0, size=(n, 3))
    rows = np.arange(n)
    points[rows, axis] = side
    normals = np.zeros((n, 3))
    normals[rows, axis] = side
    return points, normals


def sample_torus(rng, n):
    # area element is proportional to R + r cos(phi); rejection keeps it uniform
    theta = np.empty(0)
    phi = np.empty(0)
    while theta.size < n:
        t = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        p = rng.uniform(0.0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(0.0, 1.0, size=2 * n) < (TORUS_MAJOR + TORUS_MINOR * np.cos(p)) / (TORUS_MAJOR + TORUS_MINOR)
        theta = np.concatenate([theta, t[keep]])
        phi = np.concatenate([phi, p[keep]])
    theta, phi = theta[:n], phi[:n]
    ring = TORUS_MAJOR + TORUS_MINOR * np.cos(phi)
    points = np.column_stack([ring * np.cos(theta), ring * np.sin(theta), TORUS_MINOR * np.sin(phi)])
    normals = np.column_stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)])
    return points, normals


def sample_cylinder(rng, n):
    theta = rng.uniform(0.0, 2 * np.pi, size=n)
    z = rng.uniform(-1.0, 1.0, size=n)
    points = np.column_stack([CYLINDER_RADIUS * np.cos(theta), CYLINDER_RADIUS * np.sin(theta), z])
    normals = np.column_stack([np.cos(theta), np.sin(theta), np.zeros(n)])
    return points, normals


SAMPLERS = {
    'sphere': sample_sphere,
    'plane': sample_plane,
    'line': sample_line,
    'cube': sample_cube,
    'torus': sample_torus,
    'cylinder': sample_cylinder,
}


def canonical_class(name):
    key = str(name).strip().lower()
    if key not in SHAPE_ALIASES:
        raise ConfigError(f"unknown shape class '{name}'")
    return SHAPE_ALIASES[key]


# =====================================================
# DATASET
# =====================================================

@dataclass(frozen=True, eq=False)
class ShapeDataset:
    clouds: list
    labels: np.ndarray
    class_names: tuple

    def __len__(self):
        return len(self.clouds)

    @property
    def n_classes(self):
        return len(self.class_names)

    def subset(self, index):
        index = list(index)
        return ShapeDataset([self.clouds[i] for i in index], self.labels[index], self.class_names)

    def transformed(self, transform):
        clouds = [augment(c, transform, index=i) for i, c in enumerate(self.clouds)]
        return ShapeDataset(clouds, self.labels, self.class_names)


def make_shape(name, n_points, rng, noise=0.0, rotate=True):
    points, normals = SAMPLERS[canonical_class(name)](rng, n_points)
    if noise > 0:
        points = points + rng.normal(0.0, noise, size=points.shape)
    points = points - points.mean(axis=0)
    scale = np.max(np.linalg.norm(points, axis=1))
    if scale > 0:
        points = points / scale
    if rotate:
        matrix = Rotation.random(random_state=rng).as_matrix()
        points = points @ matrix.T
        normals = normals @ matrix.T
    return points, normals


def gen_shapes(cfg, split='train'):
    """Labeled clouds for one split ('train' uses cfg.count clouds, 'test' cfg.test_count)."""
    classes = tuple(canonical_class(c) for c in cfg.classes)
    if len(classes) < 2:
        raise ConfigError("the dataset needs at least two shape classes")
    if split not in SPLITS:
        raise ConfigError(f"unknown split '{split}'")
    count = cfg.count if split == 'train' else cfg.test_count

    clouds = []
    labels = np.arange(count) % len(classes)
    for i, label in enumerate(labels):
        rng = np.random.default_rng([cfg.seed, SPLITS[split], i])
        points, normals = make_shape(classes[label], cfg.points, rng, cfg.noise, cfg.rotate)
        clouds.append(PointCloud(coords=points, normals=normals, labels=np.full(cfg.points, label)))
    logger.info("Generated %d %s clouds over classes %s", count, split, ', '.join(classes))
    return ShapeDataset(clouds=clouds, labels=labels, class_names=classes)


# =====================================================
# TRANSFORMS
# =====================================================

@dataclass(frozen=True)
class Transform:
    kind: str
    axis: str = 'z'
    degrees: float = 0.0
    factor: float = 1.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ('rotate', 'scale', 'jitter'):
            raise ConfigError(f"unknown transform '{self.kind}'")
        if self.axis not in ('x', 'y', 'z'):
            raise ConfigError(f"unknown rotation axis '{self.axis}'")

    @property
    def label(self):
        if self.kind == 'rotate':
            return f"rotate:{self.axis}:{self.degrees:g}"
        if self.kind == 'scale':
            return f"scale:{self.factor:g}"
        return f"jitter:{self.sigma:g}"

    @classmethod
    def parse(cls, text):
        """'rotate:z:30', 'scale:0.9' or 'jitter:0.01'."""
        parts = text.strip().split(':')
        try:
            if parts[0] == 'rotate':
                axis, degrees = (parts[1], parts[2]) if len(parts) == 3 else ('z', parts[1])
                return cls('rotate', axis=axis, degrees=float(degrees))
            if parts[0] == 'scale':
                return cls('scale', factor=float(parts[1]))
            if parts[0] == 'jitter':
                return cls('jitter', sigma=float(parts[1]), seed=int(parts[2]) if len(parts) > 2 else 0)
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"malformed transform '{text}'") from exc
        raise ConfigError(f"unknown transform '{text}'")


ROBUSTNESS_TRANSFORMS = (
    Transform('rotate', axis='z', degrees=30.0),
    Transform('rotate', axis='z', degrees=60.0),
    Transform('rotate', axis='z', degrees=90.0),
    Transform('scale', factor=0.9),
    Transform('scale', factor=1.1),
)


def axis_rotation(axis, degrees):
    """Rotation matrix about one coordinate axis; quarter turns are exact."""
    matrix = Rotation.from_euler(axis, degrees, degrees=True).as_matrix()
    if float(degrees) % 90.0 == 0.0:
        matrix = np.round(matrix)
    return matrix


def augment(cloud, transform, index=0):
    """Apply one transform; jitter draws from its own stream per (transform seed, cloud index)."""
    if transform.kind == 'rotate':
        matrix = axis_rotation(transform.axis, transform.degrees)
        normals = None if cloud.normals is None else cloud.normals @ matrix.T
        return cloud.with_coords(cloud.coords @ matrix.T, normals=normals)
    if transform.kind == 'scale':
        return cloud.with_coords(cloud.coords * transform.factor)
    rng = np.random.default_rng([transform.seed, index])
    return cloud.with_coords(cloud.coords + rng.normal(0.0, transform.sigma, size=cloud.coords.shape))
