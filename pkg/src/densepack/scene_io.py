"""Scene bundles: a JSON manifest plus raw little-endian blobs, one per array.

Key names follow the dataset's own hierarchy (``segm/boxes``, ``bbox3d/poses``
and so on). Blob files are named after the key with ``/`` replaced by ``.``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EndiannessMismatch, InvalidSpec, IoFailure, MissingKey, ShapeMismatch
from .geometry import PinholeIntrinsics, PointCloud, Pose, Rotation, TriangleMesh, unproject_pixels
from .meshes import box_mesh, cylinder_mesh, first_hit, lshape_mesh, merge_meshes, points_inside

FORMAT_NAME = "densepack-scene"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"

_DTYPES = {"float32": np.dtype("<f4"), "bool": np.dtype("u1"), "int32": np.dtype("<i4")}

# key -> (dtype, shape template); "N" objects, "H"/"W" image, "V" voxels per side
ARRAY_SPECS: Dict[str, Tuple[str, Tuple]] = {
    "intrinsic": ("float32", (3, 3)),
    "depth_map": ("float32", ("H", "W")),
    "segm/boxes": ("float32", ("N", 4)),
    "segm/masks": ("bool", ("N", "H", "W")),
    "bbox3d/poses": ("float32", ("N", 4, 4)),
    "bbox3d/dimensions": ("float32", ("N", 3)),
    "obj_poses/poses": ("float32", ("N", 4, 4)),
    "obj_poses/scales": ("float32", ("N", 3)),
    "voxel_grid/voxels": ("bool", ("N", "V", "V", "V")),
    "voxel_grid/extents": ("float32", ("N", 3)),
}
OPTIONAL_SPECS: Dict[str, Tuple[str, Tuple]] = {"rgb": ("float32", (3, "H", "W"))}
SCALAR_KEYS = ("near_plane", "far_plane")


@dataclass(eq=False)
class SceneBundle:
    """Arrays keyed as in ``ARRAY_SPECS``; ``meshes`` are (vertices, triangles) in mesh frames."""

    arrays: Dict[str, np.ndarray]
    near_plane: float
    far_plane: float
    meshes: List[Tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def __post_init__(self):
        self.arrays = {k: _coerce(k, v) for k, v in self.arrays.items()}
        self.near_plane = float(np.float32(self.near_plane))
        self.far_plane = float(np.float32(self.far_plane))
        self.meshes = [
            (np.asarray(v, dtype="<f4").reshape(-1, 3), np.asarray(t, dtype="<i4").reshape(-1, 3))
            for v, t in self.meshes
        ]
        validate(self)

    def __getitem__(self, key: str) -> np.ndarray:
        try:
            return self.arrays[key]
        except KeyError:
            raise MissingKey(key) from None

    @property
    def n_objects(self) -> int:
        return int(self.arrays["segm/boxes"].shape[0])

    @property
    def intrinsics(self) -> PinholeIntrinsics:
        h, w = self.arrays["depth_map"].shape
        return PinholeIntrinsics.from_matrix(self.arrays["intrinsic"].astype(float), w, h)

    def object_pose(self, i: int) -> Pose:
        return Pose.from_matrix(self.arrays["obj_poses/poses"][i].astype(float))

    def bbox_pose(self, i: int) -> Pose:
        return Pose.from_matrix(self.arrays["bbox3d/poses"][i].astype(float))

    def posed_mesh(self, i: int) -> TriangleMesh:
        """Mesh ``i`` scaled and moved into the camera frame."""
        if i >= len(self.meshes):
            raise MissingKey(f"meshes/{i}")
        v, t = self.meshes[i]
        m = TriangleMesh(v.astype(float) * self.arrays["obj_poses/scales"][i].astype(float), t)
        return m.transformed(self.object_pose(i))

    def gt_box(self, i: int):
        from .boxes import OrientedBox3D

        return OrientedBox3D(self.bbox_pose(i), tuple(float(d) for d in self.arrays["bbox3d/dimensions"][i]))


def _coerce(key: str, value) -> np.ndarray:
    spec = ARRAY_SPECS.get(key) or OPTIONAL_SPECS.get(key)
    if spec is None:
        raise ShapeMismatch(f"unknown array key {key!r}")
    a = np.asarray(value)
    if spec[0] == "bool":
        return np.ascontiguousarray(a.astype(bool))
    return np.ascontiguousarray(a.astype(_DTYPES[spec[0]]))


def validate(bundle: SceneBundle) -> None:
    """Presence, per-key shape templates and cross-field count consistency."""
    dims: Dict[str, int] = {}
    for key, (_, template) in list(ARRAY_SPECS.items()) + list(OPTIONAL_SPECS.items()):
        if key not in bundle.arrays:
            if key in ARRAY_SPECS:
                raise MissingKey(key)
            continue
        shape = bundle.arrays[key].shape
        if len(shape) != len(template):
            raise ShapeMismatch(f"{key}: expected {len(template)} axes, got shape {shape}")
        for n, t in zip(shape, template):
            if isinstance(t, int):
                if n != t:
                    raise ShapeMismatch(f"{key}: shape {shape} does not match {template}")
            elif dims.setdefault(t, n) != n:
                raise ShapeMismatch(f"{key}: axis {t}={n} but another field has {t}={dims[t]}")
    for key in bundle.arrays:
        if key not in ARRAY_SPECS and key not in OPTIONAL_SPECS:
            raise ShapeMismatch(f"unknown array key {key!r}")
    if bundle.meshes and len(bundle.meshes) != dims["N"]:
        raise ShapeMismatch(f"{len(bundle.meshes)} meshes for {dims['N']} objects")
    for i, (_, t) in enumerate(bundle.meshes):
        if len(t) and (t.min() < 0 or t.max() >= len(bundle.meshes[i][0])):
            raise ShapeMismatch(f"mesh {i} references missing vertices")


def _blob_name(key: str) -> str:
    return key.replace("/", ".") + ".bin"


def _entries(bundle: SceneBundle):
    for key in sorted(bundle.arrays):
        spec = ARRAY_SPECS.get(key) or OPTIONAL_SPECS[key]
        yield key, spec[0], bundle.arrays[key]
    for i, (v, t) in enumerate(bundle.meshes):
        yield f"meshes/{i}/vertices", "float32", v
        yield f"meshes/{i}/triangles", "int32", t


def manifest_of(bundle: SceneBundle) -> dict:
    arrays = {
        key: {"file": _blob_name(key), "dtype": dtype, "shape": list(a.shape)} for key, dtype, a in _entries(bundle)
    }
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "byte_order": "little",
        "scalars": {"near_plane": bundle.near_plane, "far_plane": bundle.far_plane},
        "n_meshes": len(bundle.meshes),
        "arrays": arrays,
    }


def save_scene(bundle: SceneBundle, path) -> None:
    validate(bundle)
    root = Path(path)
    try:
        root.mkdir(parents=True, exist_ok=True)
        for key, dtype, a in _entries(bundle):
            raw = a.astype(_DTYPES[dtype]).tobytes(order="C")
            (root / _blob_name(key)).write_bytes(raw)
        text = json.dumps(manifest_of(bundle), sort_keys=True, indent=2) + "\n"
        (root / MANIFEST).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write scene bundle to {root}: {exc}") from exc


def _read_blob(root: Path, key: str, entry: Mapping) -> np.ndarray:
    for field_name in ("file", "dtype", "shape"):
        if field_name not in entry:
            raise MissingKey(f"{key}.{field_name}")
    dtype = entry["dtype"]
    if isinstance(dtype, str) and dtype.startswith(">"):
        raise EndiannessMismatch(f"{key}: big-endian dtype {dtype!r}")
    if dtype not in _DTYPES:
        raise ShapeMismatch(f"{key}: unsupported dtype {dtype!r}")
    shape = tuple(int(s) for s in entry["shape"])
    file = root / entry["file"]
    try:
        raw = file.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read blob {file}: {exc}") from exc
    dt = _DTYPES[dtype]
    expected = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(raw) != expected:
        raise ShapeMismatch(f"{key}: blob holds {len(raw)} bytes, shape {shape} needs {expected}")
    a = np.frombuffer(raw, dtype=dt).reshape(shape)
    return a.astype(bool) if dtype == "bool" else a.copy()


def load_scene(path) -> SceneBundle:
    root = Path(path)
    try:
        text = (root / MANIFEST).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {root / MANIFEST}: {exc}") from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ShapeMismatch(f"malformed manifest: {exc}") from exc
    for key in ("byte_order", "scalars", "arrays"):
        if key not in manifest:
            raise MissingKey(key)
    if manifest["byte_order"] != "little":
        raise EndiannessMismatch(f"byte order {manifest['byte_order']!r}; only little-endian is supported")
    scalars = manifest["scalars"]
    for key in SCALAR_KEYS:
        if key not in scalars:
            raise MissingKey(key)
    entries = manifest["arrays"]
    for key in ARRAY_SPECS:
        if key not in entries:
            raise MissingKey(key)
    arrays = {}
    for key, entry in entries.items():
        if key.startswith("meshes/"):
            continue
        arrays[key] = _read_blob(root, key, entry)
    meshes = []
    for i in range(int(manifest.get("n_meshes", 0))):
        vk, tk = f"meshes/{i}/vertices", f"meshes/{i}/triangles"
        if vk not in entries or tk not in entries:
            raise MissingKey(vk if vk not in entries else tk)
        meshes.append((_read_blob(root, vk, entries[vk]), _read_blob(root, tk, entries[tk])))
    return SceneBundle(arrays, scalars["near_plane"], scalars["far_plane"], meshes)


def empty_arrays(intr: PinholeIntrinsics, voxel_resolution: int = 32) -> Dict[str, np.ndarray]:
    h, w, v = intr.height, intr.width, voxel_resolution
    return {
        "intrinsic": intr.as_matrix(),
        "depth_map": np.zeros((h, w)),
        "segm/boxes": np.zeros((0, 4)),
        "segm/masks": np.zeros((0, h, w), dtype=bool),
        "bbox3d/poses": np.zeros((0, 4, 4)),
        "bbox3d/dimensions": np.zeros((0, 3)),
        "obj_poses/poses": np.zeros((0, 4, 4)),
        "obj_poses/scales": np.zeros((0, 3)),
        "voxel_grid/voxels": np.zeros((0, v, v, v), dtype=bool),
        "voxel_grid/extents": np.zeros((0, 3)),
    }


# --- synthetic scenes -------------------------------------------------------------

_PALETTE = np.array(
    [[0.90, 0.30, 0.20], [0.20, 0.60, 0.90], [0.30, 0.80, 0.30], [0.95, 0.75, 0.20], [0.60, 0.35, 0.80]]
)
WALL_THICKNESS = 0.01
DEFAULT_CAMERA = {"fx": 500.0, "fy": 500.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480}


def _need(d: Mapping, key: str, where: str):
    if key not in d:
        raise InvalidSpec(f"{where}: missing {key!r}")
    return d[key]


def _positive(values, where: str) -> List[float]:
    try:
        out = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise InvalidSpec(f"{where}: expected numbers") from exc
    if not all(np.isfinite(out)) or min(out) <= 0:
        raise InvalidSpec(f"{where}: values must be positive, got {out}")
    return out


def item_mesh(spec: Mapping) -> TriangleMesh:
    """Mesh-frame geometry of one item spec (cuboids centered, prisms standing on z = 0)."""
    kind = _need(spec, "kind", "item")
    try:
        if kind == "cuboid":
            return box_mesh(_positive(_need(spec, "dims", "cuboid"), "cuboid dims"))
        if kind == "cylinder":
            r, h = _positive([_need(spec, "radius", kind), _need(spec, "height", kind)], kind)
            return cylinder_mesh(r, h, segments=int(spec.get("segments", 48)))
        if kind == "lshape":
            keys = ("length_x", "length_y", "thickness", "height")
            a, b, t, h = _positive([_need(spec, k, kind) for k in keys], kind)
            return lshape_mesh(a, b, t, h)
    except ValueError as exc:
        if isinstance(exc, InvalidSpec):
            raise
        raise InvalidSpec(f"{kind}: {exc}") from exc
    raise InvalidSpec(f"unknown item kind {kind!r}")


def item_pose(spec: Mapping) -> Pose:
    """``position`` plus either a ``rotation`` quaternion (w, x, y, z) or ``yaw`` in degrees."""
    pos = _need(spec, "position", "item")
    try:
        t = tuple(float(p) for p in pos)
    except (TypeError, ValueError) as exc:
        raise InvalidSpec("item position must be three numbers") from exc
    if len(t) != 3:
        raise InvalidSpec("item position must be three numbers")
    if "rotation" in spec:
        q = np.asarray(spec["rotation"], dtype=float)
        if q.shape != (4,) or not np.linalg.norm(q) > 0:
            raise InvalidSpec("rotation must be a non-zero quaternion (w, x, y, z)")
        rot = Rotation.from_array(q)
    else:
        rot = Rotation.from_axis_angle((0.0, 0.0, 1.0), np.radians(float(spec.get("yaw", 0.0))))
    return Pose(rot, t)


def container_mesh(dims: Sequence[float], pose: Pose) -> TriangleMesh:
    """Open-top tote: a floor slab under ``z = 0`` and four walls around the interior."""
    lx, ly, lz = dims
    w = WALL_THICKNESS
    parts = [
        box_mesh((lx + 2 * w, ly + 2 * w, w), (0, 0, -w / 2)),
        box_mesh((w, ly + 2 * w, lz), (-(lx + w) / 2, 0, lz / 2)),
        box_mesh((w, ly + 2 * w, lz), ((lx + w) / 2, 0, lz / 2)),
        box_mesh((lx, w, lz), (0, -(ly + w) / 2, lz / 2)),
        box_mesh((lx, w, lz), (0, (ly + w) / 2, lz / 2)),
    ]
    return merge_meshes(parts).transformed(pose)


def pixel_rays(intr: PinholeIntrinsics) -> np.ndarray:
    """Ray directions with unit z through every pixel center; pixel (r, c) is at image point (c, r)."""
    r, c = np.meshgrid(np.arange(intr.height), np.arange(intr.width), indexing="ij")
    return np.stack([(c - intr.cx) / intr.fx, (r - intr.cy) / intr.fy, np.ones(c.shape)], axis=-1)


def render_depth(intr: PinholeIntrinsics, meshes: Sequence[TriangleMesh]) -> Tuple[np.ndarray, np.ndarray]:
    """Z-depth of the first surface per pixel (0 on miss) and the index of the mesh hit (-1 on miss)."""
    dirs = pixel_rays(intr).reshape(-1, 3)
    depth = np.full(len(dirs), np.inf)
    label = np.full(len(dirs), -1, dtype=np.int64)
    origin = np.zeros((1, 3))
    for i, m in enumerate(meshes):
        v = m.vertices
        if np.any(v[:, 2] <= 0):
            raise InvalidSpec(f"object {i} is not entirely in front of the camera")
        u = intr.fx * v[:, 0] / v[:, 2] + intr.cx
        w = intr.fy * v[:, 1] / v[:, 2] + intr.cy
        c0, c1 = max(0, int(np.floor(u.min()))), min(intr.width - 1, int(np.ceil(u.max())))
        r0, r1 = max(0, int(np.floor(w.min()))), min(intr.height - 1, int(np.ceil(w.max())))
        if c0 > c1 or r0 > r1:
            continue
        rr, cc = np.meshgrid(np.arange(r0, r1 + 1), np.arange(c0, c1 + 1), indexing="ij")
        sel = (rr * intr.width + cc).ravel()
        t = first_hit(np.repeat(origin, len(sel), axis=0), dirs[sel], m)
        closer = t < depth[sel]
        depth[sel[closer]] = t[closer]
        label[sel[closer]] = i
    depth[~np.isfinite(depth)] = 0.0
    return depth.reshape(intr.height, intr.width), label.reshape(intr.height, intr.width)


def surface_voxels(mesh: TriangleMesh, extents: np.ndarray, n: int) -> np.ndarray:
    """Voxels of ``[-extents, extents]`` whose center is inside the mesh next to an outside voxel."""
    axes = [(np.arange(n) + 0.5) / n * 2 * e - e for e in extents]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    inside, _ = points_inside(grid, mesh)
    solid = inside.reshape(n, n, n)
    padded = np.pad(solid, 1)
    interior = solid.copy()
    for ax in range(3):
        for s in (-1, 1):
            interior &= np.roll(padded, s, axis=ax)[1:-1, 1:-1, 1:-1]
    return solid & ~interior


def synth_scene(spec: Mapping, seed: int = 0) -> Tuple[SceneBundle, List[TriangleMesh]]:
    """Render a scene of primitive items.

    ``spec``: ``camera`` (fx, fy, cx, cy, width, height; defaults to
    ``DEFAULT_CAMERA``), ``items`` (list of
    item specs with ``kind``, shape parameters and ``position``/``rotation``
    or ``yaw``, all in the camera frame), optional ``container`` (``dims`` and
    ``position``/``rotation`` of the interior floor center), optional
    ``near_plane``/``far_plane`` and ``voxel_resolution``. Returns the bundle
    and the mesh-frame meshes. ``seed`` only drives per-object colors.
    """
    if not isinstance(spec, Mapping):
        raise InvalidSpec("scene spec must be a mapping")
    cam = spec.get("camera", DEFAULT_CAMERA)
    try:
        intr = PinholeIntrinsics(
            float(cam["fx"]), float(cam["fy"]), float(cam["cx"]), float(cam["cy"]), int(cam["width"]), int(cam["height"])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidSpec(f"bad camera spec: {exc}") from exc
    n_vox = int(spec.get("voxel_resolution", 32))
    if n_vox < 2:
        raise InvalidSpec("voxel_resolution must be >= 2")
    items = list(spec.get("items", []))
    local = [item_mesh(it) for it in items]
    poses = [item_pose(it) for it in items]
    posed = [m.transformed(p) for m, p in zip(local, poses)]
    scene_meshes = list(posed)
    if "container" in spec:
        c = spec["container"]
        dims = _positive(_need(c, "dims", "container"), "container dims")
        scene_meshes.append(container_mesh(dims, item_pose({"position": (0, 0, 0), **c})))
    depth, label = render_depth(intr, scene_meshes)

    n = len(items)
    arrays = empty_arrays(intr, n_vox)
    arrays["depth_map"] = depth
    if n:
        masks = np.stack([label == i for i in range(n)])
        boxes = np.zeros((n, 4))
        for i in range(n):
            rows, cols = np.nonzero(masks[i])
            if len(rows) == 0:
                raise InvalidSpec(f"item {i} is not visible")
            boxes[i] = (cols.min() - 0.5, rows.min() - 0.5, cols.max() + 0.5, rows.max() + 0.5)
        bb_poses, bb_dims, extents, voxels = [], [], [], []
        for m, p in zip(local, poses):
            lo, hi = m.bounds()
            bb_poses.append((p @ Pose(Rotation.identity(), tuple((lo + hi) / 2))).as_matrix())
            bb_dims.append(hi - lo)
            ext = np.maximum(np.abs(lo), np.abs(hi)) * 1.05
            extents.append(ext)
            voxels.append(surface_voxels(m, ext, n_vox))
        arrays.update(
            {
                "segm/masks": masks,
                "segm/boxes": boxes,
                "bbox3d/poses": np.stack(bb_poses),
                "bbox3d/dimensions": np.stack(bb_dims),
                "obj_poses/poses": np.stack([p.as_matrix() for p in poses]),
                "obj_poses/scales": np.ones((n, 3)),
                "voxel_grid/voxels": np.stack(voxels),
                "voxel_grid/extents": np.stack(extents),
            }
        )
    rng = np.random.default_rng(seed)
    colors = _PALETTE[rng.permutation(len(_PALETTE))]
    rgb = np.full((intr.height, intr.width, 3), 0.5)
    for i in range(n):
        rgb[label == i] = colors[i % len(colors)]
    arrays["rgb"] = rgb.transpose(2, 0, 1)

    hit = depth[depth > 0]
    near = float(spec.get("near_plane", max(hit.min() - 0.05, 1e-3) if len(hit) else 0.1))
    far = float(spec.get("far_plane", hit.max() + 0.05 if len(hit) else 1.0))
    if not 0 < near < far:
        raise InvalidSpec(f"need 0 < near_plane < far_plane, got {near}, {far}")
    bundle = SceneBundle(arrays, near, far, [(m.vertices, m.triangles) for m in local])
    return bundle, local


def observed_cloud(bundle: SceneBundle, i: int) -> PointCloud:
    """Camera-frame points unprojected from the depth map under mask ``i``, with rgb colors if present."""
    mask = bundle["segm/masks"][i] & (bundle["depth_map"] > 0)
    rows, cols = np.nonzero(mask)
    z = bundle["depth_map"][rows, cols].astype(float)
    pts = unproject_pixels(bundle.intrinsics, cols.astype(float), rows.astype(float), z)
    colors = bundle.arrays["rgb"][:, rows, cols].T.astype(float) if "rgb" in bundle.arrays else None
    return PointCloud(pts, colors)


# --- point cloud files ------------------------------------------------------------


def read_cloud(path) -> PointCloud:
    """``.npy`` arrays or whitespace text with three (points) or six (points + colors) columns."""
    p = Path(path)
    try:
        a = np.load(p) if p.suffix == ".npy" else np.loadtxt(p, comments="#", ndmin=2)
    except OSError as exc:
        raise IoFailure(f"cannot read cloud {p}: {exc}") from exc
    except ValueError as exc:
        raise ShapeMismatch(f"{p}: malformed cloud file ({exc})") from exc
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return PointCloud(np.zeros((0, 3)))
    if a.ndim != 2 or a.shape[1] not in (3, 6):
        raise ShapeMismatch(f"{p}: expected 3 or 6 columns, got shape {a.shape}")
    return PointCloud(a[:, :3], a[:, 3:] if a.shape[1] == 6 else None)


def write_cloud(cloud: PointCloud, path) -> None:
    p = Path(path)
    a = cloud.points if cloud.colors is None else np.hstack([cloud.points, cloud.colors])
    try:
        if p.suffix == ".npy":
            np.save(p, np.asarray(a, dtype="<f8"))
        else:
            np.savetxt(p, a, fmt="%.17g")
    except OSError as exc:
        raise IoFailure(f"cannot write cloud {p}: {exc}") from exc
