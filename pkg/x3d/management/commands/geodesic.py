import numpy as np

from ...analytics import GeodesicAnalytics
from ...fileio import read_cloud
from ..base import X3DCommand


class Command(X3DCommand):
    help = 'Geodesic distances along a point cloud (Dijkstra on a kNN graph)'
    uses_config = False

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('cloud', help='.ply or .x3pc file')
        parser.add_argument('--graph-k', type=int, default=8)
        parser.add_argument('--source', type=int, help='report distances from this point only')
        parser.add_argument('--matrix', help='write the full distance matrix as CSV')

    def run(self, **options):
        cloud = read_cloud(options['cloud'])
        result = GeodesicAnalytics.geodesic_matrix(cloud.coords, options['graph_k'])
        finite = result.distances[np.isfinite(result.distances)]
        payload = {
            'metric': 'geodesic',
            'config': {'graph_k': options['graph_k']},
            'n_points': cloud.n_points,
            'n_components': result.n_components,
            'connected': result.connected,
            'max_finite': float(finite.max()) if finite.size else 0.0,
            'mean_finite': float(finite.mean()) if finite.size else 0.0,
        }
        if options.get('source') is not None:
            payload['source'] = options['source']
            payload['distances'] = result.distances[options['source']].tolist()
        if options.get('matrix'):
            np.savetxt(options['matrix'], result.distances, delimiter=',')
        self.emit(payload, options.get('out'))
