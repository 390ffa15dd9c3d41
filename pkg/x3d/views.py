from drf_yasg import openapi
from drf_yasg.utils import swagger_auto_schema
from rest_framework import permissions, status, viewsets
from rest_framework.decorators import action
from rest_framework.response import Response
from rest_framework.views import APIView
from django.http import HttpResponse

from .analytics import CostAnalytics
from .excel_generator import ReportWorkbook
from .exceptions import X3DError
from .models import ExperimentRun
from .serializers import ExperimentRunListSerializer, ExperimentRunSerializer, FlopsQuerySerializer


# =====================================================
# EXPERIMENT RUNS
# =====================================================

class ExperimentRunViewSet(viewsets.ReadOnlyModelViewSet):
    """
    Recorded train/eval runs
    GET /runs/?status=completed&command=train
    """
    queryset = ExperimentRun.objects.all()
    permission_classes = [permissions.AllowAny]

    def get_serializer_class(self):
        if self.action == 'list':
            return ExperimentRunListSerializer
        return ExperimentRunSerializer

    def get_queryset(self):
        queryset = super().get_queryset()
        for key in ('status', 'command'):
            value = self.request.query_params.get(key)
            if value:
                queryset = queryset.filter(**{key: value})
        return queryset

    @action(detail=True, methods=['get'])
    def excel(self, request, pk=None):
        """Download the run report as an xlsx workbook"""
        run = self.get_object()
        if not run.report:
            return Response({"error": "run has no report"}, status=status.HTTP_404_NOT_FOUND)
        response = HttpResponse(
            ReportWorkbook.generate_excel(run.report).getvalue(),
            content_type='application/vnd.openxmlformats-officedocument.spreadsheetml.sheet',
        )
        response['Content-Disposition'] = f'attachment; filename="run_{run.pk}.xlsx"'
        return response


# =====================================================
# COST MODEL
# =====================================================

class FlopsView(APIView):
    """
    Closed-form FLOPs per block method
    GET /flops/?N=1&C=256&K=16&methods=x3d,vector_attention
    """
    permission_classes = [permissions.AllowAny]

    @swagger_auto_schema(manual_parameters=[
        openapi.Parameter('N', openapi.IN_QUERY, type=openapi.TYPE_INTEGER),
        openapi.Parameter('C', openapi.IN_QUERY, type=openapi.TYPE_INTEGER),
        openapi.Parameter('K', openapi.IN_QUERY, type=openapi.TYPE_INTEGER),
        openapi.Parameter('methods', openapi.IN_QUERY, type=openapi.TYPE_STRING),
    ])
    def get(self, request):
        serializer = FlopsQuerySerializer(data=request.query_params)
        serializer.is_valid(raise_exception=True)
        query = serializer.validated_data
        try:
            estimates = CostAnalytics.compare_methods(query['N'], query['C'], query['K'], query['methods'])
        except X3DError as exc:
            return Response({"error": str(exc)}, status=status.HTTP_400_BAD_REQUEST)
        return Response(estimates)
