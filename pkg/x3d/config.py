"""
Experiment configuration.

Files are key=value with [dataset], [model], [training] and [eval] sections:

    [dataset]
    classes = sphere, line, plane
    seed = 7

    [model]
    block = x3d
    es_kind = ph

Each section is validated by its serializer; missing keys fall back to
settings.X3D_SETTINGS. Any failure raises ConfigError.
"""

from __future__ import annotations

import configparser
import logging
from dataclasses import asdict, dataclass, field, replace

from .blocks import BlockConfig
from .blocks.network import NetworkConfig
from .exceptions import ConfigError

logger = logging.getLogger(__name__)

SECTIONS = ('dataset', 'model', 'training', 'eval')


@dataclass(frozen=True)
class DatasetConfig:
    classes: tuple = ('sphere', 'plane', 'line', 'cube', 'torus')
    points: int = 1024
    noise: float = 0.0
    count: int = 400
    test_count: int = 100
    seed: int = 0
    rotate: bool = True


@dataclass(frozen=True)
class ModelConfig:
    block: str = 'x3d'
    es_kind: str = 'ph'
    es_usage: str = 'structure_kernel'
    structure_dim: int = 32
    channels: int = 64
    hidden: int = 64
    blocks: int = 2
    k: int = 16
    centers: int = 64
    center_decay: int = 2
    neighborhood: str = 'knn'
    radius: float = 0.2
    denoise: bool = True
    ncp: bool = True
    agg: str = 'max'
    normalize: bool = True
    relation: str = 'pnpp'
    shared_mlp_mode: str = 'explicit'
    kpconv_points: int = 15


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 100
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 16
    seed: int = 0
    cosine: bool = True


@dataclass(frozen=True)
class EvalConfig:
    transforms: tuple = ()
    metrics: tuple = ()
    gap_mode: str = 'euclidean'
    gap_k: int = 8
    graph_k: int = 8
    probe_tasks: tuple = ('relative_coordinate_bins', 'geodesic_regression')
    probe_bins: int = 8
    probe_epochs: int = 200
    jobs: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def network_config(self, n_classes=None):
        m = self.model
        block = BlockConfig(
            kind=m.block, channels=m.channels, hidden=m.hidden, structure_dim=m.structure_dim,
            k=m.k, es_kind=m.es_kind, es_usage=m.es_usage, denoise=m.denoise, ncp=m.ncp,
            agg=m.agg, normalize=m.normalize, relation=m.relation,
            shared_mlp_mode=m.shared_mlp_mode, kpconv_points=m.kpconv_points,
            kpconv_sigma=m.radius, seed=self.training.seed,
        )
        return NetworkConfig(
            block=block, n_blocks=m.blocks, centers=m.centers, center_decay=m.center_decay,
            neighborhood=m.neighborhood, radius=m.radius,
            n_classes=len(self.dataset.classes) if n_classes is None else n_classes,
        )

    def with_seed(self, seed):
        return replace(
            self,
            dataset=replace(self.dataset, seed=seed),
            training=replace(self.training, seed=seed),
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        sections = {}
        for name in SECTIONS:
            sections[name] = {
                key: ','.join(value) if isinstance(value, (list, tuple)) else value
                for key, value in dict(data.get(name, {})).items()
            }
        return build_config(sections)


def _section_serializers():
    from .serializers import (
        DatasetSectionSerializer, EvalSectionSerializer,
        ModelSectionSerializer, TrainingSectionSerializer,
    )
    return {
        'dataset': DatasetSectionSerializer,
        'model': ModelSectionSerializer,
        'training': TrainingSectionSerializer,
        'eval': EvalSectionSerializer,
    }


def _flatten_errors(section, errors):
    parts = []
    for key, messages in errors.items():
        text = '; '.join(str(m) for m in messages) if isinstance(messages, list) else str(messages)
        parts.append(f"[{section}] {key}: {text}")
    return parts


def build_config(sections):
    """Validate raw section dicts (string or typed values) into an ExperimentConfig."""
    unknown = set(sections) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {', '.join(sorted(unknown))}")

    validated, problems = {}, []
    for name, serializer_class in _section_serializers().items():
        raw = dict(sections.get(name, {}))
        serializer = serializer_class(data=raw)
        if not serializer.is_valid():
            problems.extend(_flatten_errors(name, serializer.errors))
            continue
        extra = set(raw) - set(serializer.fields)
        if extra:
            problems.append(f"[{name}] unknown keys: {', '.join(sorted(extra))}")
        validated[name] = dict(serializer.validated_data)
    if problems:
        raise ConfigError('invalid experiment config: ' + ' | '.join(problems))

    for name in ('classes', 'transforms', 'metrics', 'probe_tasks'):
        for section in validated.values():
            if name in section:
                section[name] = tuple(section[name])
    return ExperimentConfig(
        dataset=DatasetConfig(**validated['dataset']),
        model=ModelConfig(**validated['model']),
        training=TrainingConfig(**validated['training']),
        eval=EvalConfig(**validated['eval']),
    )


def load_config(path=None, seed=None, overrides=None):
    """
    Read a config file (or only defaults when path is None).

    seed, when given, fills both the dataset and the training seed.
    overrides maps 'section.key' to a value and wins over the file.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding='utf-8') as handle:
                parser.read_file(handle)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc

    sections = {name: dict(parser.items(name)) if parser.has_section(name) else {} for name in SECTIONS}
    for extra in parser.sections():
        if extra not in SECTIONS:
            sections[extra] = dict(parser.items(extra))
    if seed is not None:
        sections['dataset']['seed'] = seed
        sections['training']['seed'] = seed
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition('.')
        sections.setdefault(section, {})[key] = value

    config = build_config(sections)
    logger.debug("Loaded experiment config from %s", path or 'defaults')
    return config
