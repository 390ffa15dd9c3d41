"""
Training and evaluation loops for the stacked point classifier.

train() fits a PointNetwork on the generated train split with momentum SGD;
evaluate() scores a parameter store on a dataset and optionally adds GAP,
probe and robustness sections. Both return a RunReport whose numbers depend
only on the config seeds (wall_clock excepted).
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .analytics import GapAnalytics, ProbeAnalytics, ProbeData
from .autodiff import Tape, backward, sgd_step
from .blocks.network import PointNetwork
from .datasets import ROBUSTNESS_TRANSFORMS, Transform, gen_shapes
from .exceptions import ConfigError, NumericalAbort
from .geometry import knn_query

logger = logging.getLogger(__name__)

ABLATION_FLAGS = ('denoise', 'ncp')

NOTES = {
    'is': "IS descriptor: per-neighborhood max-pooled MLP over relative offsets.",
    'vector_attention': "Vector attention: per-channel softmax over valid neighbors (normalized).",
    'gap': "GAP: distances to each center normalized to unit L2 norm before comparison; input-space mode '{mode}'.",
    'placement': "Blocks are stacked standalone (FPS + grouping per block), not embedded in a backbone.",
}


@dataclass
class RunReport:
    config: dict
    seed: int
    epochs: list = field(default_factory=list)
    accuracy: float = float('nan')
    per_class_accuracy: dict = field(default_factory=dict)
    mean_class_accuracy: float = float('nan')
    gap: dict = None
    probes: list = None
    robustness: dict = None
    ablation: dict = None
    notes: list = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self):
        return asdict(self)

    def deterministic_dict(self):
        data = self.to_dict()
        data.pop('wall_clock')
        return data


# =====================================================
# HELPERS
# =====================================================

def cosine_lr(base, epoch, epochs, enabled=True):
    if not enabled or epochs <= 1:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * epoch / epochs))


def classification_scores(predicted, labels, class_names):
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    per_class = {}
    for index, name in enumerate(class_names):
        rows = labels == index
        if rows.any():
            per_class[name] = float(np.mean(predicted[rows] == index))
    accuracy = float(np.mean(predicted == labels)) if labels.size else float('nan')
    mean_class = float(np.mean(list(per_class.values()))) if per_class else float('nan')
    return accuracy, per_class, mean_class


def forward_cloud(network, params, coords, with_traces=False):
    """Logits (n_classes,) and, optionally, the per-block traces of one cloud."""
    traces = [] if with_traces else None
    batch = network.prepare([coords])
    logits = network.forward(Tape(params), batch, traces)
    return logits.value[0], traces


def _forward_many(network, params, clouds, with_traces, jobs):
    results = Parallel(n_jobs=jobs)(
        delayed(forward_cloud)(network, params, cloud.coords, with_traces) for cloud in clouds
    )
    logits = np.stack([r[0] for r in results]) if results else np.zeros((0, network.cfg.n_classes))
    return logits, [r[1] for r in results]


def probe_data_from_traces(traces_per_cloud, clouds, task, k=8, graph_k=8, layer=0):
    """
    Probe samples over kNN regions of one block's output points, pooled over
    clouds. Normals come from the input cloud through the trace source index.
    """
    inputs, targets = [], []
    for traces, cloud in zip(traces_per_cloud, clouds):
        trace = traces[layer]
        coords = np.asarray(trace['coords'])
        nbr = knn_query(coords, np.arange(coords.shape[0]), min(k, coords.shape[0]))
        normals = None if cloud.normals is None else cloud.normals[trace['source']]
        data = ProbeAnalytics.probe_pairs(
            trace['features'], coords, nbr, task, normals=normals, graph_k=graph_k,
        )
        inputs.append(data.inputs)
        targets.append(data.targets)
    return ProbeData(inputs=np.concatenate(inputs), targets=np.concatenate(targets))


# =====================================================
# TRAIN
# =====================================================

def train(config, dataset=None):
    """
    Fit a classifier on the train split (or the given dataset).
    Returns: (ParamStore, RunReport)
    """
    started = time.perf_counter()
    tc = config.training
    if dataset is None:
        dataset = gen_shapes(config.dataset, 'train')
    network = PointNetwork(config.network_config(dataset.n_classes))
    params = network.init_params(tc.seed)
    geometries = [network.prepare_cloud(cloud.coords) for cloud in dataset.clouds]
    labels = np.asarray(dataset.labels)
    report = RunReport(config=config.to_dict(), seed=tc.seed)

    velocity = None
    n = len(dataset)
    for epoch in range(tc.epochs):
        lr = cosine_lr(tc.lr, epoch, tc.epochs, tc.cosine)
        order = np.random.default_rng([tc.seed, epoch]).permutation(n)
        losses, correct = [], 0
        for start in range(0, n, tc.batch_size):
            rows = order[start:start + tc.batch_size]
            tape = Tape(params, training=True)
            logits = network.forward(tape, network.stack([geometries[i] for i in rows]))
            loss = tape.cross_entropy(logits, labels[rows])
            if not np.isfinite(loss.value):
                report.wall_clock = time.perf_counter() - started
                logger.error("Non-finite loss at epoch %d", epoch)
                raise NumericalAbort(
                    f"non-finite loss at epoch {epoch}",
                    diagnostics={'epoch': epoch, 'report': report.to_dict()},
                )
            grads = backward(tape, loss)
            params, velocity = sgd_step(params, grads, lr, tc.momentum, velocity)
            losses.append(float(loss.value) * rows.size)
            correct += int(np.sum(logits.value.argmax(axis=1) == labels[rows]))

        row = {'epoch': epoch, 'lr': lr, 'loss': sum(losses) / n, 'train_accuracy': correct / n}
        report.epochs.append(row)
        logger.info(
            "Epoch %d/%d loss=%.5f lr=%.5f train_acc=%.4f",
            epoch + 1, tc.epochs, row['loss'], lr, row['train_accuracy'],
        )

    report.wall_clock = time.perf_counter() - started
    return params, report


# =====================================================
# EVALUATE
# =====================================================

def _robustness_transforms(eval_config):
    if eval_config.transforms:
        return [Transform.parse(t) for t in eval_config.transforms]
    if 'robustness' in eval_config.metrics:
        return list(ROBUSTNESS_TRANSFORMS)
    return []


def evaluate(params, dataset, config, jobs=None, report=None):
    """
    Accuracy and per-class accuracy, plus the GAP / probe / robustness
    sections requested by config.eval. Cloud forwards run on `jobs` workers
    and are reduced in dataset order.
    Returns: RunReport (the given one updated, or a new one)
    """
    started = time.perf_counter()
    ec = config.eval
    jobs = ec.jobs if jobs is None else jobs
    network = PointNetwork(config.network_config(dataset.n_classes))
    if report is None:
        report = RunReport(config=config.to_dict(), seed=config.training.seed)

    want_traces = 'gap' in ec.metrics or 'probe' in ec.metrics
    logits, traces = _forward_many(network, params, dataset.clouds, want_traces, jobs)
    predicted = logits.argmax(axis=1)
    report.accuracy, report.per_class_accuracy, report.mean_class_accuracy = classification_scores(
        predicted, dataset.labels, dataset.class_names,
    )
    logger.info("Evaluated %d clouds: accuracy=%.4f mAcc=%.4f", len(dataset), report.accuracy,
                report.mean_class_accuracy)

    notes = [NOTES['placement']]
    block = network.cfg.block
    if block.kind == 'x3d' and block.es_kind == 'is':
        notes.append(NOTES['is'])
    if block.kind == 'vector_attention':
        notes.append(NOTES['vector_attention'])

    if 'gap' in ec.metrics:
        gap = GapAnalytics.stack_gaps(traces, gap_k=ec.gap_k, mode=ec.gap_mode, graph_k=ec.graph_k)
        report.gap = gap.to_dict()
        notes.append(NOTES['gap'].format(mode=ec.gap_mode))

    if 'probe' in ec.metrics:
        report.probes = []
        for task in ec.probe_tasks:
            data = probe_data_from_traces(traces, dataset.clouds, task, k=ec.gap_k, graph_k=ec.graph_k)
            result = ProbeAnalytics.fit_probe(
                data, task, bins=ec.probe_bins, epochs=ec.probe_epochs, seed=config.training.seed,
            )
            result['layer'] = 0
            report.probes.append(result)

    transforms = _robustness_transforms(ec)
    if transforms:
        rows = {}
        for transform in transforms:
            moved = dataset.transformed(transform)
            moved_logits, _ = _forward_many(network, params, moved.clouds, False, jobs)
            accuracy = float(np.mean(moved_logits.argmax(axis=1) == moved.labels))
            rows[transform.label] = {'accuracy': accuracy, 'drop': report.accuracy - accuracy}
            logger.info("Robustness %s: accuracy=%.4f", transform.label, accuracy)
        report.robustness = {
            'vanilla': report.accuracy,
            'transforms': rows,
            'max_drop': max(row['drop'] for row in rows.values()),
        }

    report.notes = list(dict.fromkeys(report.notes + notes))
    report.wall_clock += time.perf_counter() - started
    return report


def run_experiment(config, jobs=None):
    """Train on the train split, then evaluate on the test split."""
    params, report = train(config)
    test = gen_shapes(config.dataset, 'test')
    return params, evaluate(params, test, config, jobs=jobs, report=report)


def ablation_study(config, flags=ABLATION_FLAGS, jobs=None):
    """
    Run the full model, then rerun it once per flag with that flag disabled.

    The full run's report gets an 'ablation' section with, per flag, the
    accuracy without it and delta = full accuracy - that accuracy.
    Returns: (ParamStore of the full run, RunReport)
    """
    if config.model.block != 'x3d':
        raise ConfigError(f"ablation needs the x3d block, not '{config.model.block}'")
    unknown = [flag for flag in flags if flag not in ABLATION_FLAGS]
    if unknown:
        raise ConfigError(f"cannot ablate {', '.join(unknown)} (choose from {', '.join(ABLATION_FLAGS)})")

    params, report = run_experiment(config, jobs=jobs)
    disabled = {}
    for flag in flags:
        variant = replace(config, model=replace(config.model, **{flag: False}))
        _, other = run_experiment(variant, jobs=jobs)
        delta = report.accuracy - other.accuracy
        disabled[flag] = {'accuracy': other.accuracy, 'delta': delta}
        logger.info("Ablation without %s: accuracy=%.4f delta=%+.4f", flag, other.accuracy, delta)
    report.ablation = {'accuracy': report.accuracy, 'disabled': disabled}
    return params, report
