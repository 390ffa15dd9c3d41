from functools import partial

from django.conf import settings
from rest_framework import serializers

from .blocks import BLOCK_KINDS, ES_KINDS, ES_USAGES, RELATION_KINDS
from .datasets import SHAPE_ALIASES, Transform
from .models import ExperimentRun


def _setting(key, fallback):
    return settings.X3D_SETTINGS.get(key, fallback)


def _csv(value):
    if isinstance(value, (list, tuple)):
        return [str(v).strip() for v in value if str(v).strip()]
    return [part.strip() for part in str(value).split(',') if part.strip()]


# -------------------- Experiment config sections --------------------
class DatasetSectionSerializer(serializers.Serializer):
    classes = serializers.CharField(default='sphere,plane,line,cube,torus')
    points = serializers.IntegerField(min_value=1, default=partial(_setting, 'POINTS_PER_CLOUD', 1024))
    noise = serializers.FloatField(min_value=0.0, default=0.0)
    count = serializers.IntegerField(min_value=1, default=400)
    test_count = serializers.IntegerField(min_value=1, default=100)
    seed = serializers.IntegerField(min_value=0, default=partial(_setting, 'SEED', 0))
    rotate = serializers.BooleanField(default=True)

    def validate_classes(self, value):
        names = _csv(value)
        unknown = [n for n in names if n.lower() not in SHAPE_ALIASES]
        if unknown:
            raise serializers.ValidationError(f"unknown shape classes: {', '.join(unknown)}")
        if len(names) < 2:
            raise serializers.ValidationError("at least two shape classes are required")
        return names


class ModelSectionSerializer(serializers.Serializer):
    block = serializers.ChoiceField(choices=BLOCK_KINDS, default='x3d')
    es_kind = serializers.ChoiceField(choices=ES_KINDS, default='ph')
    es_usage = serializers.ChoiceField(choices=ES_USAGES, default='structure_kernel')
    structure_dim = serializers.IntegerField(min_value=1, default=partial(_setting, 'STRUCTURE_DIM', 32))
    channels = serializers.IntegerField(min_value=1, default=partial(_setting, 'CHANNELS', 64))
    hidden = serializers.IntegerField(min_value=1, default=partial(_setting, 'HIDDEN', 64))
    blocks = serializers.IntegerField(min_value=1, default=partial(_setting, 'BLOCKS', 2))
    k = serializers.IntegerField(min_value=1, default=partial(_setting, 'K', 16))
    centers = serializers.IntegerField(min_value=1, default=partial(_setting, 'CENTERS', 64))
    center_decay = serializers.IntegerField(min_value=1, default=partial(_setting, 'CENTER_DECAY', 2))
    neighborhood = serializers.ChoiceField(choices=('knn', 'ball'), default='knn')
    radius = serializers.FloatField(min_value=1e-12, default=partial(_setting, 'BALL_RADIUS', 0.2))
    denoise = serializers.BooleanField(default=True)
    ncp = serializers.BooleanField(default=True)
    agg = serializers.ChoiceField(choices=('max', 'mean'), default='max')
    normalize = serializers.BooleanField(default=True)
    relation = serializers.ChoiceField(choices=RELATION_KINDS, default='pnpp')
    shared_mlp_mode = serializers.ChoiceField(choices=('explicit', 'implicit'), default='explicit')
    kpconv_points = serializers.IntegerField(min_value=1, default=partial(_setting, 'KPCONV_POINTS', 15))


class TrainingSectionSerializer(serializers.Serializer):
    epochs = serializers.IntegerField(min_value=1, default=partial(_setting, 'EPOCHS', 100))
    lr = serializers.FloatField(min_value=0.0, default=partial(_setting, 'LR', 0.05))
    momentum = serializers.FloatField(min_value=0.0, max_value=1.0, default=partial(_setting, 'MOMENTUM', 0.9))
    batch_size = serializers.IntegerField(min_value=1, default=partial(_setting, 'BATCH_SIZE', 16))
    seed = serializers.IntegerField(min_value=0, default=partial(_setting, 'SEED', 0))
    cosine = serializers.BooleanField(default=True)


class EvalSectionSerializer(serializers.Serializer):
    transforms = serializers.CharField(default='', allow_blank=True)
    metrics = serializers.CharField(default='', allow_blank=True)
    gap_mode = serializers.ChoiceField(choices=('euclidean', 'geodesic'), default='euclidean')
    gap_k = serializers.IntegerField(min_value=1, default=partial(_setting, 'GAP_K', 8))
    graph_k = serializers.IntegerField(min_value=2, default=8)
    probe_tasks = serializers.CharField(default='relative_coordinate_bins,geodesic_regression')
    probe_bins = serializers.IntegerField(min_value=2, default=partial(_setting, 'PROBE_BINS', 8))
    probe_epochs = serializers.IntegerField(min_value=1, default=200)
    jobs = serializers.IntegerField(min_value=1, default=1)

    def validate_transforms(self, value):
        names = _csv(value)
        for name in names:
            Transform.parse(name)
        return names

    def validate_metrics(self, value):
        names = _csv(value)
        unknown = [n for n in names if n not in ('gap', 'probe', 'robustness')]
        if unknown:
            raise serializers.ValidationError(f"unknown metrics: {', '.join(unknown)}")
        return names

    def validate_probe_tasks(self, value):
        from .analytics import PROBE_TASKS

        names = _csv(value)
        unknown = [n for n in names if n not in PROBE_TASKS]
        if unknown:
            raise serializers.ValidationError(f"unknown probe tasks: {', '.join(unknown)}")
        return names


# -------------------- Experiment runs --------------------
class ExperimentRunSerializer(serializers.ModelSerializer):
    duration_seconds = serializers.SerializerMethodField()

    class Meta:
        model = ExperimentRun
        fields = [
            'id', 'name', 'command', 'status', 'seed',
            'config', 'report', 'error_log',
            'started_at', 'completed_at', 'duration_seconds',
            'created_at', 'updated_at',
        ]
        read_only_fields = fields

    def get_duration_seconds(self, obj):
        if obj.started_at and obj.completed_at:
            return round((obj.completed_at - obj.started_at).total_seconds(), 3)
        return None


class ExperimentRunListSerializer(serializers.ModelSerializer):
    accuracy = serializers.SerializerMethodField()

    class Meta:
        model = ExperimentRun
        fields = ['id', 'name', 'command', 'status', 'seed', 'accuracy', 'created_at']

    def get_accuracy(self, obj):
        return (obj.report or {}).get('accuracy')


class FlopsQuerySerializer(serializers.Serializer):
    N = serializers.IntegerField(min_value=1, default=1)
    C = serializers.IntegerField(min_value=1, default=256)
    K = serializers.IntegerField(min_value=1, default=16)
    methods = serializers.CharField(default='x3d,scalar_attention,vector_attention')

    def validate_methods(self, value):
        from .analytics import COST_METHODS

        names = _csv(value)
        unknown = [n for n in names if n not in COST_METHODS]
        if unknown:
            raise serializers.ValidationError(f"unknown methods: {', '.join(unknown)}")
        return names
