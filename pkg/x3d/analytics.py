"""
Analysis instruments for trained and untrained blocks.

GAP compares neighborhood distance profiles in input space and embedding
space, the geodesic oracle runs Dijkstra over a kNN graph, the cost model
gives closed-form FLOP counts that match the tape's operation counter, and
the probes train a small head to read geometry back out of features.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, dijkstra

from .autodiff import LayerSpec, ParamBuilder, Tape, backward, declare_mlp, mlp_forward, sgd_step
from .blocks import BLOCK_KINDS, BlockConfig, LocalRegions, build_block
from .blocks import baselines, ncp, x3d_layer
from .exceptions import ConfigError, ShapeError
from .geometry import farthest_point_sample, knn_query, squared_distances
from .structures import PCA_DIM, PH_DIM

logger = logging.getLogger(__name__)

COST_METHODS = BLOCK_KINDS
PROBE_TASKS = ('relative_coordinate_bins', 'normal_regression', 'geodesic_regression')
GAP_MODES = ('euclidean', 'geodesic')


@dataclass
class GapReport:
    """Mean GAP per layer; per_layer rows carry region and skip counts."""
    mode: str
    per_layer: list = field(default_factory=list)

    @property
    def values(self):
        return [row['gap'] for row in self.per_layer]

    def to_dict(self):
        return {'metric': 'gap', 'config': {'mode': self.mode}, 'per_layer': self.per_layer}


@dataclass(frozen=True)
class CostEstimate:
    method: str
    N: int
    C: int
    K: int
    flops: int
    per_region: int
    per_neighbor: int

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class GeodesicResult:
    distances: np.ndarray
    n_components: int
    components: np.ndarray

    @property
    def connected(self):
        return self.n_components == 1


# =====================================================
# GEODESIC ANALYTICS
# =====================================================

class GeodesicAnalytics:
    """Shortest paths along the sampled surface"""

    @staticmethod
    def knn_graph(coords, graph_k):
        """
        Dense weight matrix of the symmetrized kNN graph (self excluded).
        Non-edges are inf so coincident points keep their zero-length edge.
        """
        coords = np.asarray(coords, dtype=np.float64)
        n = coords.shape[0]
        if graph_k < 2:
            raise ConfigError("graph_k must be at least 2")
        d2 = squared_distances(coords, coords)
        np.fill_diagonal(d2, np.inf)
        k = min(graph_k, n - 1)
        order = np.argsort(d2, axis=1, kind='stable')[:, :k]
        weights = np.full((n, n), np.inf)
        rows = np.repeat(np.arange(n), k)
        cols = order.reshape(-1)
        weights[rows, cols] = np.sqrt(d2[rows, cols])
        return np.minimum(weights, weights.T)

    @staticmethod
    def geodesic_matrix(coords, graph_k=8):
        """
        All-pairs Dijkstra on the kNN graph.
        Returns: GeodesicResult; pairs in different components stay inf.
        """
        coords = np.asarray(coords, dtype=np.float64)
        if coords.shape[0] == 1:
            return GeodesicResult(np.zeros((1, 1)), 1, np.zeros(1, dtype=np.int64))
        graph = csgraph_from_dense(GeodesicAnalytics.knn_graph(coords, graph_k), null_value=np.inf)
        n_components, labels = connected_components(graph, directed=False)
        if n_components > 1:
            logger.warning("Geodesic graph is disconnected: %d components", n_components)
        distances = dijkstra(graph, directed=False)
        return GeodesicResult(distances=distances, n_components=int(n_components), components=labels)


# =====================================================
# GAP ANALYTICS
# =====================================================

class GapAnalytics:
    """Distance-profile discrepancy between input space and embedding space"""

    @staticmethod
    def region_gaps(coords, nbr, embeddings, mode='euclidean', geodesic=None, graph_k=8):
        """
        Per-region GAP_i = || a/|a| - b/|b| || with a, b the center-to-neighbor
        distances in input space and embedding space over valid slots.
        Returns: (gaps of kept regions, number of skipped regions)
        """
        if mode not in GAP_MODES:
            raise ConfigError(f"unknown GAP mode '{mode}'")
        coords = np.asarray(coords, dtype=np.float64)
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape[0] != coords.shape[0]:
            raise ShapeError("embeddings must have one row per point")
        if mode == 'geodesic' and geodesic is None:
            geodesic = GeodesicAnalytics.geodesic_matrix(coords, graph_k).distances

        mask = nbr.valid_mask()
        if mode == 'euclidean':
            a = np.linalg.norm(coords[nbr.neighbors] - coords[nbr.centers][:, None, :], axis=-1)
        else:
            a = geodesic[nbr.centers[:, None], nbr.neighbors]
        b = np.linalg.norm(embeddings[nbr.neighbors] - embeddings[nbr.centers][:, None, :], axis=-1)
        a = np.where(mask, a, 0.0)
        b = np.where(mask, b, 0.0)

        a_norm = np.sqrt(np.sum(a * a, axis=1))
        b_norm = np.sqrt(np.sum(b * b, axis=1))
        keep = (a_norm > 0) & (b_norm > 0) & np.all(np.isfinite(a), axis=1)
        skipped = int(np.sum(~keep))
        if skipped:
            logger.debug("GAP: skipped %d of %d regions with a degenerate distance profile", skipped, nbr.m)
        a_hat = a[keep] / a_norm[keep, None]
        b_hat = b[keep] / b_norm[keep, None]
        return np.linalg.norm(a_hat - b_hat, axis=1), skipped

    @staticmethod
    def gap_metric(coords, nbr, embeddings, mode='euclidean', geodesic=None, graph_k=8, layer=0):
        """
        Mean GAP over regions.
        Returns: GapReport with a single layer row
        """
        gaps, skipped = GapAnalytics.region_gaps(coords, nbr, embeddings, mode, geodesic, graph_k)
        report = GapReport(mode=mode)
        report.per_layer.append({
            'layer': layer,
            'gap': float(gaps.mean()) if gaps.size else float('nan'),
            'regions': int(gaps.size),
            'skipped': skipped,
        })
        return report

    @staticmethod
    def layer_gap(coords, embeddings, gap_k=8, mode='euclidean', graph_k=8):
        """GAP over kNN regions centered at every point of one level."""
        coords = np.asarray(coords, dtype=np.float64)
        nbr = knn_query(coords, np.arange(coords.shape[0]), min(gap_k, coords.shape[0]))
        return GapAnalytics.region_gaps(coords, nbr, embeddings, mode, graph_k=graph_k)

    @staticmethod
    def stack_gaps(traces_per_cloud, gap_k=8, mode='euclidean', graph_k=8):
        """
        Per-layer GAP over several clouds; each cloud contributes a list of
        block traces with 'coords' and 'features'.
        Returns: GapReport
        """
        report = GapReport(mode=mode)
        if not traces_per_cloud:
            return report
        for layer in range(len(traces_per_cloud[0])):
            collected, skipped = [], 0
            for traces in traces_per_cloud:
                gaps, miss = GapAnalytics.layer_gap(
                    traces[layer]['coords'], traces[layer]['features'], gap_k, mode, graph_k,
                )
                collected.append(gaps)
                skipped += miss
            gaps = np.concatenate(collected)
            report.per_layer.append({
                'layer': layer,
                'gap': float(gaps.mean()) if gaps.size else float('nan'),
                'regions': int(gaps.size),
                'skipped': skipped,
            })
        return report


# =====================================================
# COST ANALYTICS
# =====================================================

def _mlp_flops(spec):
    return sum(2 * layer.in_dim * layer.out_dim for layer in spec.layers)


def _structure_split(kind, k):
    # (per region, per neighbor) arithmetic of the ES computation
    if kind == 'ph':
        return PH_DIM, 3
    if kind == 'pca':
        return 27 * 3, 2 * 9 + 6
    return 2 * 3 * k * k + k ** 3 // 3 + 2 * k * k, 0


class CostAnalytics:
    """Closed-form FLOP counts; a multiply-accumulate counts 2, a softmax element 3"""

    @staticmethod
    def block_config(method, C, K, dims=None):
        if method not in COST_METHODS:
            raise ConfigError(f"unknown cost method '{method}'")
        if dims is None:
            dims = BlockConfig(in_channels=C, hidden=C, structure_dim=C, ncp=False)
        return replace(dims, kind=method, channels=C, k=K)

    @staticmethod
    def flops_estimate(method, N, C, K, dims=None):
        """
        FLOPs of one block over N regions of K neighbors with C output channels.
        dims supplies the remaining widths and X-3D options (a BlockConfig).
        Returns: CostEstimate
        """
        cfg = CostAnalytics.block_config(method, C, K, dims)
        region, neighbor = 0, 0
        C_in, H, D = cfg.in_channels, cfg.hidden, cfg.structure_dim

        if method == 'x3d':
            if cfg.es_kind == 'is':
                neighbor += _mlp_flops(x3d_layer.implicit_spec(cfg))
            else:
                r, n = _structure_split(cfg.es_kind, K)
                region += r
                neighbor += n
            region += _mlp_flops(x3d_layer.es_spec(cfg))
            if cfg.denoise or cfg.es_usage == 'vector_kernel':
                neighbor += _mlp_flops(x3d_layer.point_embed_spec(cfg))
            if cfg.denoise:
                neighbor += 2 * D + 3 + 2 * D
            if cfg.es_usage == 'structure_kernel':
                region += _mlp_flops(x3d_layer.kernel_spec(cfg))
                neighbor += 2 * C * 3
            elif cfg.es_usage == 'vector_kernel':
                neighbor += _mlp_flops(x3d_layer.kernel_spec(cfg)) + 2 * C * 3
            else:
                neighbor += _mlp_flops(x3d_layer.concat_spec(cfg))
            neighbor += _mlp_flops(x3d_layer.feature_spec(cfg))
            if cfg.ncp:
                region += _mlp_flops(ncp.fuse_spec(C, H))
        elif method == 'shared_mlp':
            neighbor += _mlp_flops(baselines.relation_spec(cfg))
            if cfg.shared_mlp_mode == 'explicit':
                neighbor += _mlp_flops(baselines.feature_spec(cfg))
        elif method == 'rsconv':
            neighbor += _mlp_flops(baselines.rsconv_kernel_spec(cfg)) + _mlp_flops(baselines.feature_spec(cfg))
        elif method == 'kpconv':
            r = cfg.kpconv_points
            neighbor += 2 * r * C_in + 2 * r * C_in * C
        elif method == 'vector_attention':
            neighbor += _mlp_flops(baselines.position_spec(cfg))
            neighbor += _mlp_flops(baselines.attention_spec(cfg))
            neighbor += 3 * C + _mlp_flops(baselines.feature_spec(cfg)) + 2 * C
        else:
            region += _mlp_flops(baselines.feature_spec(cfg))
            neighbor += _mlp_flops(baselines.position_spec(cfg)) + 2 * _mlp_flops(baselines.feature_spec(cfg))
            neighbor += 2 * C + 3 + 2 * C

        per_region = N * region
        per_neighbor = N * K * neighbor
        return CostEstimate(
            method=method, N=int(N), C=int(C), K=int(K),
            flops=int(per_region + per_neighbor),
            per_region=int(per_region), per_neighbor=int(per_neighbor),
        )

    @staticmethod
    def instrumented_flops(method, N, C, K, dims=None, seed=0):
        """Run one block on a random instance of the same size and read the tape's counter."""
        cfg = CostAnalytics.block_config(method, C, K, dims)
        rng = np.random.default_rng(seed)
        n_points = max(N, K) + 4
        coords = rng.uniform(-1.0, 1.0, size=(n_points, 3))
        centers = farthest_point_sample(coords, N, start=0)
        es_kind = cfg.es_kind if cfg.uses_es else None
        regions = LocalRegions.build(coords, knn_query(coords, centers, K), es_kind=es_kind)
        block = build_block(cfg)
        builder = ParamBuilder(seed)
        block.declare(builder, 'block')
        tape = Tape(builder.build())
        block.forward(tape, rng.standard_normal((n_points, cfg.in_channels)), regions, 'block')
        return tape.flops

    @staticmethod
    def compare_methods(N, C, K, methods=('x3d', 'scalar_attention', 'vector_attention'), dims=None):
        """
        Cost table for several methods at one (N, C, K).
        Returns: list of dicts ordered as methods
        """
        return [CostAnalytics.flops_estimate(m, N, C, K, dims).to_dict() for m in methods]


# =====================================================
# PROBE ANALYTICS
# =====================================================

@dataclass(frozen=True)
class ProbeData:
    inputs: np.ndarray
    targets: np.ndarray


class ProbeAnalytics:
    """Small supervised heads that read geometry out of frozen features"""

    @staticmethod
    def probe_pairs(features, coords, nbr, task, center_features=None, normals=None, geodesic=None, graph_k=8):
        """
        One sample per valid (center, neighbor) slot: input [f_center, f_neighbor],
        raw target the neighbor offset, the neighbor normal or the geodesic distance.
        """
        if task not in PROBE_TASKS:
            raise ConfigError(f"unknown probe task '{task}'")
        features = np.asarray(features, dtype=np.float64)
        coords = np.asarray(coords, dtype=np.float64)
        center_features = features[nbr.centers] if center_features is None else np.asarray(center_features)
        mask = nbr.valid_mask()
        region, slot = np.nonzero(mask)
        point = nbr.neighbors[region, slot]
        center = nbr.centers[region]
        inputs = np.concatenate([center_features[region], features[point]], axis=1)

        if task == 'relative_coordinate_bins':
            targets = coords[point] - coords[center]
        elif task == 'normal_regression':
            if normals is None:
                raise ConfigError("normal_regression needs point normals")
            targets = np.asarray(normals)[point]
        else:
            if geodesic is None:
                geodesic = GeodesicAnalytics.geodesic_matrix(coords, graph_k).distances
            targets = geodesic[center, point][:, None]
            finite = np.isfinite(targets[:, 0])
            inputs, targets = inputs[finite], targets[finite]
        return ProbeData(inputs=inputs, targets=targets)

    @staticmethod
    def bin_targets(offsets, bins):
        """
        Equal-width bins per axis over the observed [min, max].
        Returns: (labels for kept axes, kept axis ids, skipped axis ids)
        """
        labels, kept, skipped = [], [], []
        for axis in range(offsets.shape[1]):
            values = offsets[:, axis]
            if np.unique(values).size < 2:
                skipped.append(axis)
                continue
            lo, hi = values.min(), values.max()
            idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
            labels.append(np.clip(idx, 0, bins - 1))
            kept.append(axis)
        if not kept:
            return np.zeros((offsets.shape[0], 0), dtype=np.int64), kept, skipped
        return np.stack(labels, axis=1), kept, skipped

    @staticmethod
    def fit_probe(data, task, bins=8, hidden=64, epochs=200, lr=0.05, momentum=0.9, seed=0):
        """
        Train a 2-layer head on a seeded 70/30 split with full-batch momentum SGD.
        Returns: dict with the test score ('accuracy' for bins, 'mse' otherwise)
        """
        inputs, raw = data.inputs, data.targets
        skipped = []
        if task == 'relative_coordinate_bins':
            labels, kept, skipped = ProbeAnalytics.bin_targets(raw, bins)
            n_out = bins * len(kept)
        else:
            labels = raw
            n_out = raw.shape[1]
        n = inputs.shape[0]
        result = {'task': task, 'metric': 'accuracy' if task == 'relative_coordinate_bins' else 'mse',
                  'skipped_axes': skipped, 'train_size': 0, 'test_size': 0, 'value': float('nan')}
        if n < 2 or n_out == 0:
            logger.warning("Probe %s has nothing to fit (%d samples)", task, n)
            return result

        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        n_train = min(n - 1, max(1, int(round(0.7 * n))))
        train, test = order[:n_train], order[n_train:]
        mean = inputs[train].mean(axis=0)
        std = inputs[train].std(axis=0)
        std[std == 0] = 1.0
        x = (inputs - mean) / std

        spec = LayerSpec.chain([x.shape[1], hidden, n_out])
        builder = ParamBuilder(seed)
        declare_mlp(builder, 'probe', spec)
        params = builder.build()
        velocity = None

        def loss_of(tape, rows):
            out = mlp_forward(spec, params, x[rows], tape, prefix='probe')
            if task == 'relative_coordinate_bins':
                flat = tape.reshape(out, (rows.size * len(kept), bins))
                return out, tape.cross_entropy(flat, labels[rows].reshape(-1))
            return out, tape.mse(out, labels[rows])

        for _ in range(epochs):
            tape = Tape(params, training=True)
            _, loss = loss_of(tape, train)
            grads = backward(tape, loss)
            params, velocity = sgd_step(params, grads, lr, momentum, velocity)

        out, _ = loss_of(Tape(params), test)
        if task == 'relative_coordinate_bins':
            predicted = out.value.reshape(test.size, len(kept), bins).argmax(axis=2)
            value = float(np.mean(predicted == labels[test]))
        else:
            value = float(np.mean((out.value - labels[test]) ** 2))
        result.update(train_size=int(train.size), test_size=int(test.size), value=value)
        return result

    @staticmethod
    def probe_geometry(features, cloud, task, nbr=None, k=8, bins=8, **fit_options):
        """
        Probe per-point features of one cloud over kNN regions centered at
        every point (or over the given neighborhoods).
        Returns: dict score as fit_probe
        """
        coords = cloud.coords
        if nbr is None:
            nbr = knn_query(coords, np.arange(coords.shape[0]), min(k, coords.shape[0]))
        data = ProbeAnalytics.probe_pairs(features, coords, nbr, task, normals=cloud.normals)
        return ProbeAnalytics.fit_probe(data, task, bins=bins, **fit_options)


# Operation-level aliases
geodesic_matrix = GeodesicAnalytics.geodesic_matrix
gap_metric = GapAnalytics.gap_metric
flops_estimate = CostAnalytics.flops_estimate
probe_geometry = ProbeAnalytics.probe_geometry
