"""Synthetic multi-view tabletop scenes with exact ground truth."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import io, kernels
from .geometry import (CameraIntrinsics, PointCloud, Pose, ViewFrame, axis_angle, backproject,
                       compose, invert, rot_z)
from .mesh import LIBRARY, Mesh, class_color, class_name, library_mesh
from .rng import rng_for

CAMERA_MODES = ("fixed", "quadrant", "wiggle")
DEFAULT_INTRINSICS = CameraIntrinsics(fx=150.0, fy=150.0, cx=80.0, cy=60.0, width=160, height=120)
LIGHT_DIR = np.array([0.3, 0.2, 1.0]) / np.linalg.norm([0.3, 0.2, 1.0])
TABLE_HALF = 0.45
TABLE_TILES = 12
PLACEMENT_RADIUS = 0.20
MAX_ATTEMPTS = 10_000


@dataclass
class SceneSpec:
    classes: Optional[List[int]] = None     # None: draw 3-5 distinct classes
    n_views: int = 3
    camera_mode: str = "fixed"
    sigma_rot: float = np.deg2rad(1.0)      # wiggle only, radians
    sigma_trans: float = 0.005              # wiggle only, metres
    seed: int = 0
    scene_id: int = 0
    min_objects: int = 3
    max_objects: int = 5
    min_visible_points: int = 30

    def __post_init__(self):
        if self.n_views < 1:
            raise ValueError("need at least one camera")
        if self.camera_mode not in CAMERA_MODES:
            raise ValueError(f"camera mode must be one of {CAMERA_MODES}")


@dataclass
class SceneBundle:
    scene_id: int
    views: List[ViewFrame]              # camera_pose is the annotated pose
    true_camera_poses: List[Pose]
    object_classes: List[int]
    object_poses: List[Pose]            # object -> world
    object_maps: List[np.ndarray]       # per view: -1 empty, 0 table, i+1 object i
    spec: dict = field(default_factory=dict)

    @property
    def n_views(self):
        return len(self.views)

    def gt_poses(self) -> List[Pose]:
        """Object poses in the (true) first camera frame."""
        ref = invert(self.true_camera_poses[0])
        return [compose(ref, p) for p in self.object_poses]

    def subset_views(self, k: Sequence[int]) -> "SceneBundle":
        k = list(k)
        return SceneBundle(self.scene_id, [self.views[i] for i in k],
                           [self.true_camera_poses[i] for i in k], self.object_classes,
                           self.object_poses, [self.object_maps[i] for i in k], dict(self.spec))


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose with +z toward ``target`` and +y pointing down."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.column_stack([x, y, z]), eye)


def _hemisphere_eye(azimuth, elevation, radius, target):
    return np.asarray(target) + radius * np.array([np.cos(elevation) * np.cos(azimuth),
                                                   np.cos(elevation) * np.sin(azimuth),
                                                   np.sin(elevation)])


LOOK_TARGET = np.array([0.0, 0.0, 0.03])


def fixed_cameras(n_views: int) -> List[Pose]:
    az0 = np.deg2rad(-90.0)
    out = []
    for k in range(n_views):
        az = az0 + 2 * np.pi * k / n_views
        out.append(look_at(_hemisphere_eye(az, np.deg2rad(45.0), 0.7, LOOK_TARGET), LOOK_TARGET))
    return out


def quadrant_cameras(n_views: int, rng) -> List[Pose]:
    if n_views > 4:
        raise ValueError("quadrant mode supports at most 4 cameras")
    quads = rng.permutation(4)[:n_views]
    out = []
    for q in quads:
        az = np.deg2rad(90.0 * q + rng.uniform(10.0, 80.0))
        el = np.deg2rad(rng.uniform(30.0, 60.0))
        out.append(look_at(_hemisphere_eye(az, el, rng.uniform(0.6, 0.8), LOOK_TARGET), LOOK_TARGET))
    return out


def perturb_pose(p: Pose, sigma_rot, sigma_trans, rng) -> Pose:
    w = rng.normal(size=3) * sigma_rot
    dt = rng.normal(size=3) * sigma_trans
    if sigma_rot == 0 and sigma_trans == 0:
        return p
    angle = np.linalg.norm(w)
    dR = axis_angle(w, angle) if angle > 0 else np.eye(3)
    return Pose(p.rotation @ dR, p.translation + dt)


def table_mesh() -> Mesh:
    g = np.linspace(-TABLE_HALF, TABLE_HALF, TABLE_TILES + 1)
    X, Y = np.meshgrid(g, g, indexing="ij")
    verts = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    n = TABLE_TILES + 1
    faces = []
    for i in range(TABLE_TILES):
        for j in range(TABLE_TILES):
            a, b, c, d = i * n + j, (i + 1) * n + j, (i + 1) * n + j + 1, i * n + j + 1
            faces += [[a, b, c], [a, c, d]]
    return Mesh(verts, np.asarray(faces), name="table")


def rest_pose(class_id: int, yaw: float, xy) -> Pose:
    """Upright placement on the table plane z = 0 with the given yaw."""
    mesh = library_mesh(class_id)
    z = -mesh.vertices[:, 2].min()
    return Pose(rot_z(yaw), [xy[0], xy[1], z])


def footprint_radius(class_id: int) -> float:
    return float(np.linalg.norm(library_mesh(class_id).vertices[:, :2], axis=1).max())


def footprint_polygon(class_id: int, pose: Pose) -> np.ndarray:
    """Convex hull of the object's table footprint, counter-clockwise (K x 2)."""
    from scipy.spatial import ConvexHull

    xy = pose.apply(library_mesh(class_id).vertices)[:, :2]
    return xy[ConvexHull(xy).vertices]


def footprint_gap(a, b) -> float:
    """Separating-axis gap between two convex polygons (negative when they overlap).

    Only edge normals are tested, so the value never exceeds the true distance.
    """
    best = -np.inf
    for poly in (a, b):
        edges = np.roll(poly, -1, axis=0) - poly
        normals = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        normals /= np.linalg.norm(normals, axis=1, keepdims=True)
        pa, pb = a @ normals.T, b @ normals.T
        sep = np.maximum(pb.min(0) - pa.max(0), pa.min(0) - pb.max(0))
        best = max(best, float(sep.max()))
    return best


def place_objects(classes, rng, radius=PLACEMENT_RADIUS, gap=0.004) -> List[Pose]:
    """Rejection-sample non-overlapping footprints (bounding circles)."""
    for _ in range(MAX_ATTEMPTS):
        poses, centers = [], []
        ok = True
        for c in classes:
            r = footprint_radius(c)
            for _ in range(50):
                rho = radius * np.sqrt(rng.random())
                phi = rng.uniform(0, 2 * np.pi)
                xy = np.array([rho * np.cos(phi), rho * np.sin(phi)])
                if all(np.linalg.norm(xy - q) > r + rq + gap for q, rq in centers):
                    break
            else:
                ok = False
                break
            centers.append((xy, r))
            poses.append(rest_pose(c, rng.uniform(0, 2 * np.pi), xy))
        if ok:
            return poses
    raise RuntimeError("cannot place objects")


def _scene_geometry(classes, poses, include_table=True):
    verts, faces, obj_of_face, normals = [], [], [], []
    offset = 0
    items = []
    if include_table:
        items.append((0, table_mesh(), Pose.identity()))
    items += [(i + 1, library_mesh(c), p) for i, (c, p) in enumerate(zip(classes, poses))]
    for idx, mesh, pose in items:
        verts.append(pose.apply(mesh.vertices))
        faces.append(mesh.faces + offset)
        obj_of_face.append(np.full(len(mesh.faces), idx))
        normals.append(mesh.face_normals @ pose.rotation.T)
        offset += len(mesh.vertices)
    return (np.vstack(verts), np.vstack(faces), np.concatenate(obj_of_face),
            np.vstack(normals))


def render_depth(classes, poses, camera: Pose, intr: CameraIntrinsics = DEFAULT_INTRINSICS,
                 include_table=True):
    """Z-buffered depth, class-label map, object-index map and shaded RGB.

    ``poses`` map object to world; ``camera`` maps camera to world.
    """
    verts_w, faces, obj_of_face, normals_w = _scene_geometry(classes, poses, include_table)
    verts_c = invert(camera).apply(verts_w)
    depth, fid = kernels.rasterize(verts_c, faces, intr.fx, intr.fy, intr.cx, intr.cy,
                                   intr.width, intr.height)
    hit = fid >= 0
    obj_map = np.full(depth.shape, -1, dtype=np.int64)
    obj_map[hit] = obj_of_face[fid[hit]]
    class_of_obj = np.array([0] + list(classes))
    labels = np.zeros(depth.shape, dtype=np.uint8)
    labels[hit] = class_of_obj[obj_map[hit]]
    # Lambertian shading with normals flipped toward the camera
    rgb = np.zeros(depth.shape + (3,))
    n = normals_w[fid[hit]]
    pts_c = backproject(depth, intr)[hit]
    view_dir_w = -(pts_c @ camera.rotation.T)
    n = np.where((np.einsum("ij,ij->i", n, view_dir_w) < 0)[:, None], -n, n)
    shade = 0.35 + 0.65 * np.clip(n @ LIGHT_DIR, 0.0, 1.0)
    base = np.array([class_color(c) for c in range(len(LIBRARY) + 1)])
    rgb[hit] = base[labels[hit]] * shade[:, None]
    rgb = np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)
    return depth, labels, obj_map, rgb


def _quantize_depth(depth):
    # in-memory bundles match their float32 on-disk form exactly
    return depth.astype(np.float32).astype(np.float64)


def _cameras_for(spec: SceneSpec):
    rng = rng_for(spec.seed, "scenegen.cameras", spec.scene_id)
    if spec.camera_mode == "quadrant":
        true = quadrant_cameras(spec.n_views, rng)
    else:
        true = fixed_cameras(spec.n_views)
    annotated = list(true)
    if spec.camera_mode == "wiggle":
        wrng = rng_for(spec.seed, "scenegen.wiggle", spec.scene_id)
        annotated = [perturb_pose(p, spec.sigma_rot, spec.sigma_trans, wrng) for p in true]
    return true, annotated


def render_bundle(scene_id, classes, poses, true_cams, annotated_cams,
                  intr=DEFAULT_INTRINSICS, spec_dict=None) -> SceneBundle:
    views, obj_maps = [], []
    for cam, ann in zip(true_cams, annotated_cams):
        depth, labels, obj_map, rgb = render_depth(classes, poses, cam, intr)
        views.append(ViewFrame(rgb, _quantize_depth(depth), intr, ann, labels))
        obj_maps.append(obj_map)
    return SceneBundle(scene_id, views, list(true_cams), list(classes), list(poses), obj_maps,
                       dict(spec_dict or {}))


def generate_scene(spec: SceneSpec, intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> SceneBundle:
    """Random non-colliding tabletop arrangement rendered from ``n_views`` cameras."""
    rng = rng_for(spec.seed, "scenegen.objects", spec.scene_id)
    true, annotated = _cameras_for(spec)
    for _ in range(100):
        if spec.classes is None:
            n = int(rng.integers(spec.min_objects, spec.max_objects + 1))
            classes = sorted(int(c) for c in rng.choice(sorted(LIBRARY), size=n, replace=False))
        else:
            classes = list(spec.classes)
        poses = place_objects(classes, rng)
        bundle = render_bundle(spec.scene_id, classes, poses, true, annotated, intr, asdict(spec))
        counts = [sum(int((m == i + 1).sum()) for m in bundle.object_maps)
                  for i in range(len(classes))]
        if min(counts) >= spec.min_visible_points:
            return bundle
    raise RuntimeError("cannot place objects with every object visible")


def generate_occlusion_scene(spec: SceneSpec, target_class: int, occluder_classes,
                             min_occlusion=0.7, intr=DEFAULT_INTRINSICS) -> SceneBundle:
    """Scene where the target is at least ``min_occlusion`` hidden in view 1.

    Occluders are placed between the first camera and the target.
    """
    rng = rng_for(spec.seed, "scenegen.occlusion", spec.scene_id)
    true, annotated = _cameras_for(spec)
    eye = true[0].translation
    classes = [target_class] + list(occluder_classes)
    for _ in range(MAX_ATTEMPTS):
        rho = 0.06 * np.sqrt(rng.random())
        phi = rng.uniform(0, 2 * np.pi)
        txy = np.array([rho * np.cos(phi), rho * np.sin(phi)])
        poses = [rest_pose(target_class, rng.uniform(0, 2 * np.pi), txy)]
        toward = eye[:2] - txy
        toward /= np.linalg.norm(toward)
        side = np.array([-toward[1], toward[0]])
        polys = [footprint_polygon(target_class, poses[0])]
        # occluders stand side by side across the line of sight, each slid
        # toward the target until its footprint is a few millimetres away
        radii = [footprint_radius(c) for c in occluder_classes]
        lateral = np.concatenate([[0.0], np.cumsum([0.75 * (radii[k] + radii[k + 1])
                                                    for k in range(len(radii) - 1)])])
        lateral = lateral - lateral.mean() + rng.uniform(-0.015, 0.015)
        for c, lat in zip(occluder_classes, lateral):
            yaw = rng.uniform(0, 2 * np.pi)
            gap = rng.uniform(0.003, 0.010)
            lo, hi = 0.0, 0.4
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                trial = rest_pose(c, yaw, txy + toward * mid + side * lat)
                if footprint_gap(polys[0], footprint_polygon(c, trial)) >= gap:
                    hi = mid
                else:
                    lo = mid
            poses.append(rest_pose(c, yaw, txy + toward * hi + side * lat))
            polys.append(footprint_polygon(c, poses[-1]))
        if any(footprint_gap(a, b) < 0.002 for i, a in enumerate(polys) for b in polys[i + 1:]):
            continue
        bundle = render_bundle(spec.scene_id, classes, poses, true, annotated, intr, asdict(spec))
        _, _, alone, _ = render_depth([target_class], poses[:1], true[0], intr)
        n_alone = int((alone == 1).sum())
        n_seen = int((bundle.object_maps[0] == 1).sum())
        others = sum(int((m == 1).sum()) for m in bundle.object_maps[1:])
        if n_alone > 0 and 1 - n_seen / n_alone >= min_occlusion and others >= spec.min_visible_points:
            return bundle
    raise RuntimeError("cannot place objects")


def occlusion_fraction(bundle: SceneBundle, obj: int) -> float:
    """1 - (surface regions of object ``obj`` seen in the scene) / (seen when alone).

    Visible pixels are mapped to the nearest of the object's surface samples so
    overlapping views count each region once.
    """
    cls = bundle.object_classes[obj]
    mesh = library_mesh(cls)
    to_object = invert(bundle.object_poses[obj])

    def regions(masks, depths):
        seen = set()
        for mask, depth, cam, view in zip(masks, depths, bundle.true_camera_poses, bundle.views):
            if not mask.any():
                continue
            pts_c = backproject(depth, view.intrinsics)[mask]
            pts_o = to_object.apply(cam.apply(pts_c))
            seen.update(kernels.knn(pts_o, mesh.surface_samples, 1)[:, 0].tolist())
        return seen

    scene_seen = regions([m == obj + 1 for m in bundle.object_maps],
                         [v.depth for v in bundle.views])
    alone_masks, alone_depths = [], []
    for cam, view in zip(bundle.true_camera_poses, bundle.views):
        d, _, m, _ = render_depth([cls], [bundle.object_poses[obj]], cam, view.intrinsics,
                                  include_table=False)
        alone_masks.append(m == 1)
        alone_depths.append(_quantize_depth(d))
    alone_seen = regions(alone_masks, alone_depths)
    if not alone_seen:
        return 0.0
    return 1.0 - len(scene_seen & alone_seen) / len(alone_seen)


# -- on-disk layout ---------------------------------------------------------------------------

def save_scene(bundle: SceneBundle, root) -> Path:
    d = Path(root) / f"scene_{bundle.scene_id:05d}"
    d.mkdir(parents=True, exist_ok=True)
    cams = []
    for k, view in enumerate(bundle.views):
        rows, cols = np.nonzero(view.depth > 0)
        pts = backproject(view.depth, view.intrinsics)[rows, cols]
        io.write_ply_cloud(d / f"view_{k}.ply", PointCloud(pts, view.rgb[rows, cols]))
        io.write_depth(d / f"view_{k}_depth.bin", view.depth)
        io.write_raw(d / f"view_{k}_labels.bin", view.labels, np.uint8)
        io.write_raw(d / f"view_{k}_rgb.bin", view.rgb, np.uint8)
        io.write_raw(d / f"view_{k}_objects.bin", bundle.object_maps[k], "<i2")
        cams.append({"view": k, "intrinsics": view.intrinsics.to_json(),
                     "camera_pose": view.camera_pose.to_json(),
                     "true_camera_pose": bundle.true_camera_poses[k].to_json()})
    io.dump_json(d / "cameras.json", {"scene": bundle.scene_id, "cameras": cams})
    gt = [{"class_id": int(c), "name": class_name(c), "pose_world": p.to_json(),
           "pose_cam1": g.to_json()}
          for c, p, g in zip(bundle.object_classes, bundle.object_poses, bundle.gt_poses())]
    io.dump_json(d / "gt_poses.json", {"scene": bundle.scene_id, "objects": gt})
    io.dump_json(d / "scene.json", {"scene": bundle.scene_id, "n_views": bundle.n_views,
                                    "spec": _jsonable(bundle.spec)})
    return d


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def load_scene(path) -> SceneBundle:
    d = Path(path)
    if d.is_file():
        d = d.parent
    meta = io.load_json(d / "scene.json")
    cams = io.load_json(d / "cameras.json")["cameras"]
    gt = io.load_json(d / "gt_poses.json")["objects"]
    views, true, maps = [], [], []
    for c in cams:
        k = c["view"]
        intr = CameraIntrinsics(**c["intrinsics"])
        shape = (intr.height, intr.width)
        depth = io.read_depth(d / f"view_{k}_depth.bin")
        labels = io.read_raw(d / f"view_{k}_labels.bin", np.uint8, shape)
        rgb = io.read_raw(d / f"view_{k}_rgb.bin", np.uint8, shape + (3,))
        maps.append(io.read_raw(d / f"view_{k}_objects.bin", "<i2", shape).astype(np.int64))
        views.append(ViewFrame(rgb, depth, intr, Pose.from_json(c["camera_pose"]), labels))
        true.append(Pose.from_json(c["true_camera_pose"]))
    return SceneBundle(meta["scene"], views, true, [o["class_id"] for o in gt],
                       [Pose.from_json(o["pose_world"]) for o in gt], maps, meta.get("spec", {}))
