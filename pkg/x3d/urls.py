from django.urls import path, include
from rest_framework.routers import DefaultRouter

from .views import ExperimentRunViewSet, FlopsView

router = DefaultRouter()
router.register(r'runs', ExperimentRunViewSet, basename='run')

urlpatterns = [
    path('', include(router.urls)),

    # ===== Cost Model =====
    path('flops/', FlopsView.as_view(), name='flops'),
]

app_name = 'x3d'
