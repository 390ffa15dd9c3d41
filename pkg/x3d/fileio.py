"""
File formats.

- ASCII PLY: vertex x/y/z plus optional nx/ny/nz (normals), label, and any
  other scalar properties (features, in header order).
- X3PC (little-endian): b"X3PC", u32 N, u32 C, f64 coords row-major,
  f64 features row-major, then optionally i32 labels.
- X3CK (little-endian): b"X3CK", u32 entry count, per entry u16 name length,
  utf-8 name, u32 offset, u8 ndim, ndim x u32 dims; then the f64 payload.
  Parameter entries come first; normalization statistics follow as
  'stats:<layer>:mean' / 'stats:<layer>:var'.
- CSV: descriptor rows (center, kind, values...), embedding rows
  (point, x, y, z, features...) and overlap rows (point, count, regions).
"""

from __future__ import annotations

import csv
import logging
import struct
from pathlib import Path

import numpy as np

from .autodiff import ParamStore
from .exceptions import FormatError
from .geometry import PointCloud

logger = logging.getLogger(__name__)

X3PC_MAGIC = b'X3PC'
X3CK_MAGIC = b'X3CK'
STATS_PREFIX = 'stats:'


# =====================================================
# PLY
# =====================================================

def read_ply(path):
    path = Path(path)
    try:
        lines = path.read_text(encoding='ascii').splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FormatError(f"cannot read PLY {path}: {exc}") from exc
    if not lines or lines[0].strip() != 'ply':
        raise FormatError(f"{path} is not a PLY file")

    n_vertices, properties, in_vertex, seen_vertex, header_end = None, [], False, False, None
    for number, line in enumerate(lines[1:], start=1):
        parts = line.split()
        if not parts or parts[0] in ('comment', 'obj_info'):
            continue
        if parts[0] == 'format':
            if parts[1] != 'ascii':
                raise FormatError(f"only ASCII PLY is supported, got '{parts[1]}'")
        elif parts[0] == 'element':
            in_vertex = parts[1] == 'vertex'
            if in_vertex:
                if seen_vertex or properties:
                    raise FormatError("vertex element must come first")
                n_vertices = int(parts[2])
                seen_vertex = True
        elif parts[0] == 'property':
            if in_vertex:
                if parts[1] == 'list':
                    raise FormatError("list properties are not supported on vertices")
                properties.append(parts[-1])
        elif parts[0] == 'end_header':
            header_end = number
            break
    if header_end is None or n_vertices is None:
        raise FormatError(f"{path}: missing vertex element or end_header")
    for axis in ('x', 'y', 'z'):
        if axis not in properties:
            raise FormatError(f"{path}: vertex property '{axis}' missing")

    body = lines[header_end + 1:header_end + 1 + n_vertices]
    if len(body) < n_vertices:
        raise FormatError(f"{path}: expected {n_vertices} vertices, found {len(body)}")
    try:
        table = np.array([[float(v) for v in row.split()[:len(properties)]] for row in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric vertex data") from exc
    if table.shape != (n_vertices, len(properties)):
        raise FormatError(f"{path}: vertex rows do not match {len(properties)} properties")

    column = {name: i for i, name in enumerate(properties)}
    coords = table[:, [column['x'], column['y'], column['z']]]
    normals = None
    if all(n in column for n in ('nx', 'ny', 'nz')):
        normals = table[:, [column['nx'], column['ny'], column['nz']]]
    labels = table[:, column['label']].astype(np.int64) if 'label' in column else None
    reserved = {'x', 'y', 'z', 'label'} | ({'nx', 'ny', 'nz'} if normals is not None else set())
    extra = [i for i, name in enumerate(properties) if name not in reserved]
    features = table[:, extra] if extra else None
    return PointCloud(coords=coords, features=features, labels=labels, normals=normals)


def write_ply(path, cloud, feature_names=None):
    names = ['x', 'y', 'z']
    columns = [cloud.coords]
    if cloud.normals is not None:
        names += ['nx', 'ny', 'nz']
        columns.append(cloud.normals)
    if cloud.features is not None:
        names += list(feature_names or [f"f{i}" for i in range(cloud.n_features)])
        columns.append(cloud.features)
    table = np.concatenate(columns, axis=1)
    header = ['ply', 'format ascii 1.0', f"element vertex {cloud.n_points}"]
    header += [f"property double {name}" for name in names]
    if cloud.labels is not None:
        header.append('property int label')
    header.append('end_header')
    with open(path, 'w', encoding='ascii') as handle:
        handle.write('\n'.join(header) + '\n')
        for i, row in enumerate(table):
            values = [repr(float(v)) for v in row]
            if cloud.labels is not None:
                values.append(str(int(cloud.labels[i])))
            handle.write(' '.join(values) + '\n')


# =====================================================
# X3PC
# =====================================================

def write_x3pc(path, cloud):
    n, c = cloud.n_points, cloud.n_features
    with open(path, 'wb') as handle:
        handle.write(X3PC_MAGIC)
        handle.write(struct.pack('<II', n, c))
        handle.write(cloud.coords.astype('<f8').tobytes())
        if c:
            handle.write(cloud.features.astype('<f8').tobytes())
        if cloud.labels is not None:
            handle.write(cloud.labels.astype('<i4').tobytes())


def read_x3pc(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if data[:4] != X3PC_MAGIC or len(data) < 12:
        raise FormatError(f"{path} is not an X3PC file")
    n, c = struct.unpack_from('<II', data, 4)
    pos = 12
    need = pos + 8 * n * 3 + 8 * n * c
    if len(data) < need:
        raise FormatError(f"{path}: truncated payload")
    coords = np.frombuffer(data, dtype='<f8', count=n * 3, offset=pos).reshape(n, 3).astype(np.float64)
    pos += 8 * n * 3
    features = None
    if c:
        features = np.frombuffer(data, dtype='<f8', count=n * c, offset=pos).reshape(n, c).astype(np.float64)
        pos += 8 * n * c
    labels = None
    remaining = len(data) - pos
    if remaining == 4 * n and n:
        labels = np.frombuffer(data, dtype='<i4', count=n, offset=pos).astype(np.int64)
    elif remaining:
        raise FormatError(f"{path}: {remaining} trailing bytes")
    return PointCloud(coords=coords, features=features, labels=labels)


# =====================================================
# X3CK CHECKPOINTS
# =====================================================

def write_checkpoint(path, params):
    entries = [(name, offset, shape) for name, (offset, shape) in params.layout.items()]
    chunks = [params.values]
    cursor = params.size
    for layer, (mean, var) in sorted(params.stats.items()):
        for suffix, array in (('mean', mean), ('var', var)):
            entries.append((f"{STATS_PREFIX}{layer}:{suffix}", cursor, tuple(np.shape(array))))
            chunks.append(np.asarray(array, dtype=np.float64).reshape(-1))
            cursor += int(np.size(array))

    with open(path, 'wb') as handle:
        handle.write(X3CK_MAGIC)
        handle.write(struct.pack('<I', len(entries)))
        for name, offset, shape in entries:
            encoded = name.encode('utf-8')
            handle.write(struct.pack('<H', len(encoded)))
            handle.write(encoded)
            handle.write(struct.pack('<IB', offset, len(shape)))
            handle.write(struct.pack(f"<{len(shape)}I", *shape))
        handle.write(np.concatenate(chunks).astype('<f8').tobytes())
    logger.info("Wrote checkpoint %s (%d parameters)", path, params.size)


def read_checkpoint(path):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if data[:4] != X3CK_MAGIC:
        raise FormatError(f"{path} is not an X3CK checkpoint")
    try:
        (count,) = struct.unpack_from('<I', data, 4)
        pos = 8
        entries = []
        for _ in range(count):
            (length,) = struct.unpack_from('<H', data, pos)
            pos += 2
            name = data[pos:pos + length].decode('utf-8')
            pos += length
            offset, ndim = struct.unpack_from('<IB', data, pos)
            pos += 5
            shape = struct.unpack_from(f"<{ndim}I", data, pos)
            pos += 4 * ndim
            entries.append((name, offset, tuple(shape)))
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt layout table") from exc

    if (len(data) - pos) % 8:
        raise FormatError(f"{path}: payload is not a whole number of f64 values")
    payload = np.frombuffer(data, dtype='<f8', offset=pos).astype(np.float64)

    layout, stats = {}, {}
    param_size = 0
    for name, offset, shape in entries:
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise FormatError(f"{path}: entry '{name}' runs past the payload")
        if name.startswith(STATS_PREFIX):
            layer, _, suffix = name[len(STATS_PREFIX):].rpartition(':')
            stats.setdefault(layer, {})[suffix] = payload[offset:offset + size].reshape(shape)
        else:
            layout[name] = (offset, shape)
            param_size = max(param_size, offset + size)
    try:
        store = ParamStore(payload[:param_size].copy(), layout)
    except Exception as exc:
        raise FormatError(f"{path}: {exc}") from exc
    store.stats = {layer: (pair['mean'], pair['var']) for layer, pair in stats.items()}
    return store


# =====================================================
# CSV
# =====================================================

def write_descriptors_csv(path, centers, kind, data):
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['center', 'kind'] + [f"v{i}" for i in range(np.shape(data)[1])])
        for center, row in zip(centers, data):
            writer.writerow([int(center), kind] + [repr(float(v)) for v in row])


def write_embeddings_csv(path, coords, embeddings, points=None):
    """points: input-cloud index of every row (defaults to 0..n-1)."""
    points = np.arange(len(coords)) if points is None else points
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['point', 'x', 'y', 'z'] + [f"e{i}" for i in range(np.shape(embeddings)[1])])
        for i, p, e in zip(points, coords, embeddings):
            writer.writerow([int(i)] + [repr(float(v)) for v in p] + [repr(float(v)) for v in e])


def write_overlap_csv(path, overlap, points=None):
    """One row per level input point: input-cloud index, region count, space-separated region ids."""
    points = np.arange(len(overlap.counts)) if points is None else points
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        writer = csv.writer(handle)
        writer.writerow(['point', 'count', 'regions'])
        for point, count, regions in zip(points, overlap.counts, overlap.members):
            writer.writerow([int(point), int(count), ' '.join(str(int(r)) for r in regions)])


def read_embeddings_csv(path):
    """Returns (points, coords, embeddings) as written by write_embeddings_csv."""
    try:
        with open(path, newline='', encoding='utf-8') as handle:
            rows = list(csv.reader(handle))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if not rows or rows[0][:4] != ['point', 'x', 'y', 'z']:
        raise FormatError(f"{path} is not an embeddings CSV")
    try:
        points = np.array([int(row[0]) for row in rows[1:]], dtype=np.int64)
        table = np.array([[float(v) for v in row[1:]] for row in rows[1:]])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric embedding data") from exc
    if table.ndim != 2 or table.shape[1] < 4:
        raise FormatError(f"{path}: no embedding columns")
    return points, table[:, :3], table[:, 3:]


def read_cloud(path):
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)
    if suffix == ".x3pc":
        return read_x3pc(path)
    raise FormatError(f"unsupported point cloud format '{suffix}' (use .ply or .x3pc)")
