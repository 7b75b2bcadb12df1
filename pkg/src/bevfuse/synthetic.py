"""Synthetic multi-camera / multi-radar driving scenes with ground truth.

Scenes hold a handful of constant-velocity objects observed by a moving ego
vehicle. Cameras render each object's projected footprint hull with
class-specific colors; rain and night degrade only the images (contrast
compression, brightness drop, pixel noise) while the radar simulation is a
function of scene geometry alone, so the fusion benefit of radar under low
visibility is testable by construction.

Dataset directory layout::

    out/
      index.json                      # splits, rig, grid, config
      scenes/<scene_id>/annotations.json
      scenes/<scene_id>/frames/<frame_id>/cam_00.png ...
      scenes/<scene_id>/frames/<frame_id>/radar.csv

All JSON files carry schema_version = 1; radar CSVs have a header row with
columns sensor_id, x, y, z, radial_velocity, cross_section.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

from .detection import ATTRIBUTES, CLASSES, Annotation, Box3D
from .errors import ConfigError, DatasetIOError, SchemaError
from .geometry import BevGridSpec, CameraSpec, Pose, SensorRig
from .radar_backbone import PointCloudSet

FRAME_RATE_HZ = 2.0

# class -> (length, width, height), base color (RGB in [0, 1]), speed cap m/s
CLASS_DIMS = {
    "vehicle": (4.5, 1.9, 1.7),
    "motorcycle": (2.2, 0.8, 1.4),
    "pedestrian": (0.7, 0.7, 1.7),
    "barrier": (2.5, 0.3, 1.0),
}
CLASS_COLORS = {
    "vehicle": (1.0, 0.6, 0.1),
    "motorcycle": (0.9, 0.15, 0.15),
    "pedestrian": (0.2, 0.3, 0.95),
    "barrier": (0.55, 0.55, 0.55),
}
CLASS_MAX_SPEED = {"vehicle": 8.0, "motorcycle": 8.0, "pedestrian": 1.5, "barrier": 0.0}
BACKGROUND = 0.35
MOVING_THRESHOLD = 0.1  # m/s; below this an object is labeled stopped


@dataclass(frozen=True)
class SceneConfig:
    frames_per_scene: int = 8
    min_objects: int = 2
    max_objects: int = 6
    world_extent: float = 18.0  # objects stay inside +/- world_extent (m)
    speed_min: float = 0.5
    speed_max: float = 6.0
    rain_probability: float = 0.25
    night_probability: float = 0.25
    rain_noise_sigma: float = 0.05
    rain_contrast: float = 0.35
    night_brightness: float = 0.15
    radar_dropout: float = 0.1
    radar_noise_sigma: float = 0.1
    clutter_points: int = 5
    seed: int = 0
    # simulator details beyond the headline knobs
    points_per_object: int = 12
    radar_range: float = 60.0
    ego_speed_max: float = 2.0
    ego_yaw_rate_max: float = 0.04  # rad per frame
    stopped_probability: float = 0.3
    image_size: int = 64
    num_cameras: int = 4
    num_radars: int = 5

    def __post_init__(self):
        for name in ("rain_probability", "night_probability", "radar_dropout",
                     "stopped_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        for name in ("rain_contrast", "night_brightness"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1], got {v}")
        if self.world_extent <= 0 or self.radar_range <= 0:
            raise ConfigError("extents must be positive")
        if self.frames_per_scene < 1 or self.min_objects < 0 \
                or self.max_objects < self.min_objects:
            raise ConfigError("invalid frame/object counts")
        if self.image_size % 4:
            raise ConfigError("image_size must be divisible by 4")


@dataclass
class FrameRecord:
    """One synchronized observation: images, radar, ego pose and ground truth."""

    frame_id: str
    timestamp: float
    images: np.ndarray  # (N_c, 3, H, W) float32 in [0, 1]
    clouds: PointCloudSet
    ego_pose: Pose  # world-from-ego
    annotations: list[Annotation]
    rain: int
    night: int


@dataclass
class Scene:
    scene_id: str
    split: str
    rain: int
    night: int
    frames: list[FrameRecord] = field(default_factory=list)


@dataclass
class SceneDataset:
    scenes: list[Scene]
    rig: SensorRig
    grid: BevGridSpec
    config: SceneConfig
    splits: dict[str, list[str]] = field(default_factory=dict)

    def split_scenes(self, split: str) -> list[Scene]:
        wanted = set(self.splits.get(split, []))
        return [s for s in self.scenes if s.scene_id in wanted]


def default_grid() -> BevGridSpec:
    return BevGridSpec(x_cells=32, y_cells=32, cell_size=1.6)


def default_rig(config: SceneConfig = SceneConfig()) -> SensorRig:
    """Cameras at evenly spaced yaws with 90-degree FOV; radars on a small ring."""
    size = config.image_size
    focal = size / 2.0  # 90-degree horizontal FOV
    intrinsics = np.array([[focal, 0.0, size / 2.0],
                           [0.0, focal, size / 2.0],
                           [0.0, 0.0, 1.0]])
    cameras = []
    for idx in range(config.num_cameras):
        yaw = 2.0 * np.pi * idx / config.num_cameras
        # ego-from-camera columns are the camera axes in ego coordinates:
        # x right = (sin, -cos, 0), y down = (0, 0, -1), z optical = (cos, sin, 0)
        c, s = np.cos(yaw), np.sin(yaw)
        rot_ego_from_cam = np.array([
            [s, 0.0, c],
            [-c, 0.0, s],
            [0.0, -1.0, 0.0],
        ])
        mount = Pose(rot_ego_from_cam, np.array([0.8 * c, 0.8 * s, 1.4]))
        cameras.append(CameraSpec(intrinsics, mount.inverse(), size, size))
    radars = []
    for idx in range(config.num_radars):
        yaw = 2.0 * np.pi * idx / config.num_radars
        radars.append(Pose.from_yaw(yaw, (1.0 * np.cos(yaw), 1.0 * np.sin(yaw), 0.5)))
    return SensorRig(cameras=cameras, radar_poses=radars)


@dataclass
class _ObjectState:
    """Ground-truth object in the world frame."""

    class_id: int
    size: np.ndarray
    position: np.ndarray  # (2,) world xy at t=0
    velocity: np.ndarray  # (2,) world, constant
    yaw: float  # world heading
    attribute_id: int

    def center_at(self, t: float) -> np.ndarray:
        return self.position + self.velocity * t


def _spawn_objects(config: SceneConfig, rng: np.random.Generator) -> list[_ObjectState]:
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    duration = (config.frames_per_scene - 1) / FRAME_RATE_HZ
    objects = []
    for _ in range(count):
        class_id = int(rng.integers(len(CLASSES)))
        name = CLASSES[class_id]
        dims = np.asarray(CLASS_DIMS[name]) * rng.uniform(0.85, 1.15, 3)
        heading = float(rng.uniform(-np.pi, np.pi))
        if rng.random() < config.stopped_probability or CLASS_MAX_SPEED[name] == 0.0:
            speed = 0.0
        else:
            speed = float(rng.uniform(config.speed_min,
                                      min(config.speed_max, CLASS_MAX_SPEED[name])))
        velocity = speed * np.array([np.cos(heading), np.sin(heading)])
        margin = max(dims[0], dims[1])
        lo, hi = -config.world_extent + margin, config.world_extent - margin
        position = rng.uniform(lo, hi, 2)
        for _ in range(100):
            end = position + velocity * duration
            if np.abs(end).max() <= config.world_extent - margin:
                break
            position = rng.uniform(lo, hi, 2)
        else:
            velocity = np.zeros(2)
            speed = 0.0
        objects.append(_ObjectState(
            class_id=class_id, size=dims, position=position, velocity=velocity,
            yaw=heading, attribute_id=int(speed > MOVING_THRESHOLD)))
    return objects


def _ego_frame_annotations(objects: list[_ObjectState], ego: Pose, t: float) -> list[Annotation]:
    inv = ego.inverse()
    ego_yaw = ego.yaw()
    rot2 = np.array([[np.cos(-ego_yaw), -np.sin(-ego_yaw)],
                     [np.sin(-ego_yaw), np.cos(-ego_yaw)]])
    anns = []
    for obj in objects:
        center_w = np.array([*obj.center_at(t), obj.size[2] / 2.0])
        center_e = inv.rotation @ center_w + inv.translation
        vel_e = rot2 @ obj.velocity
        box = Box3D(center=center_e, size=obj.size, yaw=obj.yaw - ego_yaw,
                    velocity=vel_e)
        anns.append(Annotation(box=box, class_id=obj.class_id,
                               attribute_id=obj.attribute_id))
    return anns


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices counterclockwise."""
    pts = sorted(map(tuple, points))
    if len(pts) <= 2:
        return np.asarray(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                ox, oy = out[-2]
                ax, ay = out[-1]
                if (ax - ox) * (p[1] - oy) - (ay - oy) * (p[0] - ox) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(reversed(pts))
    return np.asarray(lower[:-1] + upper[:-1])


def _fill_hull(canvas: np.ndarray, uv: np.ndarray, color: np.ndarray):
    """Paint the convex hull of projected points onto an (H, W, 3) canvas."""
    hull = _convex_hull(uv)
    if len(hull) < 3:
        return
    height, width = canvas.shape[:2]
    u_lo = max(int(np.floor(hull[:, 0].min())), 0)
    u_hi = min(int(np.ceil(hull[:, 0].max())) + 1, width)
    v_lo = max(int(np.floor(hull[:, 1].min())), 0)
    v_hi = min(int(np.ceil(hull[:, 1].max())) + 1, height)
    if u_lo >= u_hi or v_lo >= v_hi:
        return
    uu, vv = np.meshgrid(np.arange(u_lo, u_hi) + 0.5, np.arange(v_lo, v_hi) + 0.5)
    inside = np.ones(uu.shape, dtype=bool)
    for a, b in zip(hull, np.roll(hull, -1, axis=0)):
        inside &= (b[0] - a[0]) * (vv - a[1]) - (b[1] - a[1]) * (uu - a[0]) >= 0
    canvas[v_lo:v_hi, u_lo:u_hi][inside] = color


def _box_corners_3d(box: Box3D) -> np.ndarray:
    """(8, 3) ego-frame corners of an annotation box."""
    l, w, h = box.size
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    local = signs * np.array([l, w, h]) / 2.0
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + box.center


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Clip to [0, 1] and snap to the 8-bit grid PNG round trips exactly."""
    as_u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    return as_u8.astype(np.float32) / 255.0


def render_cameras(annotations: list[Annotation], rig: SensorRig, config: SceneConfig,
                   rain: int, night: int, rng: np.random.Generator) -> np.ndarray:
    """Render every camera view; returns (N_c, 3, H, W) float32 in [0, 1].

    Objects are drawn far-to-near as filled convex hulls of their projected
    box corners, colored by class and shaded by distance. Night multiplies
    brightness; rain compresses contrast toward the image mean and adds
    Gaussian pixel noise. Output is quantized to the 8-bit grid.
    """
    size = config.image_size
    images = np.empty((rig.num_cameras, 3, size, size), dtype=np.float32)
    order = sorted(annotations, key=lambda a: -float(np.linalg.norm(a.box.center[:2])))
    for cam_idx, cam in enumerate(rig.cameras):
        canvas = np.full((size, size, 3), BACKGROUND, dtype=np.float64)
        for ann in order:
            corners = _box_corners_3d(ann.box)
            cam_pts = corners @ cam.extrinsics.rotation.T + cam.extrinsics.translation
            if (cam_pts[:, 2] <= 1e-6).any():
                continue  # partially behind the image plane; skipped at toy scale
            uvw = cam_pts @ cam.intrinsics.T
            uv = uvw[:, :2] / cam_pts[:, 2:3]
            if uv[:, 0].max() < 0 or uv[:, 0].min() >= size \
                    or uv[:, 1].max() < 0 or uv[:, 1].min() >= size:
                continue
            dist = float(np.linalg.norm(ann.box.center[:2]))
            shade = float(np.clip(1.0 - dist / 80.0, 0.25, 1.0))
            color = np.asarray(CLASS_COLORS[CLASSES[ann.class_id]]) * shade
            _fill_hull(canvas, uv, color)
        if night:
            canvas *= config.night_brightness
        if rain:
            mean = canvas.mean()
            canvas = mean + (canvas - mean) * config.rain_contrast
            canvas += rng.normal(0.0, config.rain_noise_sigma, canvas.shape)
        images[cam_idx] = quantize_image(canvas).transpose(2, 0, 1)
    return images


def _perimeter_samples(box: Box3D, n_random: int, rng: np.random.Generator):
    """Points on the footprint perimeter plus their outward edge normals.

    Always includes the four edge midpoints so that every exterior sensor
    sees at least one facing point; the rest are uniform in arclength.
    """
    corners = box.footprint_corners()  # counterclockwise
    edges = list(zip(corners, np.roll(corners, -1, axis=0)))
    lengths = np.array([np.linalg.norm(b - a) for a, b in edges])
    fractions = np.concatenate([
        (np.cumsum(lengths) - lengths / 2.0) / lengths.sum(),  # edge midpoints
        rng.uniform(0.0, 1.0, max(n_random, 0)),
    ])
    points, normals = [], []
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    for frac in fractions:
        s = frac * lengths.sum()
        e = min(int(np.searchsorted(cum, s, side="right")) - 1, 3)
        a, b = edges[e]
        t = (s - cum[e]) / lengths[e]
        points.append(a + (b - a) * t)
        d = (b - a) / lengths[e]
        normals.append(np.array([d[1], -d[0]]))  # outward for CCW winding
    return np.asarray(points), np.asarray(normals)


def simulate_radar(annotations: list[Annotation], rig: SensorRig, config: SceneConfig,
                   rng: np.random.Generator) -> PointCloudSet:
    """Radar returns per sensor, independent of rain/night by construction.

    Each in-range object contributes perimeter points on its sensor-facing
    footprint edges, thinned by dropout and blurred by position noise; the
    radial velocity is the object's ego-frame velocity projected on the line
    of sight. Uniform clutter points are appended per frame.
    """
    per_sensor: list[list[np.ndarray]] = [[] for _ in range(rig.num_radars)]
    for sensor_idx, pose in enumerate(rig.radar_poses):
        sensor_xy = pose.translation[:2]
        inv = pose.inverse()
        for ann in annotations:
            center = ann.box.center[:2]
            if np.linalg.norm(center - sensor_xy) > config.radar_range:
                continue
            pts, normals = _perimeter_samples(ann.box, config.points_per_object - 4, rng)
            facing = ((sensor_xy - pts) * normals).sum(axis=1) > 0.0
            keep = rng.random(len(pts)) >= config.radar_dropout
            for point in pts[facing & keep]:
                xy = point + (rng.normal(0.0, config.radar_noise_sigma, 2)
                              if config.radar_noise_sigma > 0 else 0.0)
                p_ego = np.array([xy[0], xy[1], ann.box.center[2]])
                los = p_ego[:2] - sensor_xy
                norm = np.linalg.norm(los)
                unit = los / norm if norm > 1e-9 else np.zeros(2)
                rv = float(ann.box.velocity @ unit)
                rcs = 10.0 + 2.0 * ann.box.size[0]
                p_sensor = inv.rotation @ p_ego + inv.translation
                per_sensor[sensor_idx].append(np.array([*p_sensor, rv, rcs]))
    for _ in range(config.clutter_points):
        xy = rng.uniform(-config.world_extent, config.world_extent, 2)
        z = rng.uniform(0.0, 2.0)
        rv = rng.normal(0.0, 2.0)
        rcs = rng.uniform(1.0, 20.0)
        sensor_idx = int(rng.integers(rig.num_radars))
        pose = rig.radar_poses[sensor_idx]
        inv = pose.inverse()
        p_sensor = inv.rotation @ np.array([xy[0], xy[1], z]) + inv.translation
        per_sensor[sensor_idx].append(np.array([*p_sensor, rv, rcs]))
    return PointCloudSet([np.asarray(rows).reshape(-1, 5) for rows in per_sensor])


def generate_scene(config: SceneConfig, rig: SensorRig, scene_index: int,
                   scene_id: str, split: str) -> Scene:
    """Fully seeded scene generation; independent RNG streams per concern.

    The radar stream never sees weather draws, so rain/night flags cannot
    change a single radar byte.
    """
    streams = np.random.SeedSequence([config.seed, scene_index]).spawn(4)
    geom_rng, weather_rng, radar_rng, image_rng = map(np.random.default_rng, streams)

    rain = int(weather_rng.random() < config.rain_probability)
    night = int(weather_rng.random() < config.night_probability)
    objects = _spawn_objects(config, geom_rng)

    ego_yaw0 = float(geom_rng.uniform(-np.pi, np.pi))
    ego_speed = float(geom_rng.uniform(0.0, config.ego_speed_max))
    ego_yaw_rate = float(geom_rng.uniform(-config.ego_yaw_rate_max, config.ego_yaw_rate_max))

    frames = []
    ego_xy = np.zeros(2)
    ego_yaw = ego_yaw0
    for k in range(config.frames_per_scene):
        t = k / FRAME_RATE_HZ
        if k:
            ego_xy = ego_xy + (ego_speed / FRAME_RATE_HZ) \
                * np.array([np.cos(ego_yaw), np.sin(ego_yaw)])
            ego_yaw += ego_yaw_rate
        ego_pose = Pose.from_yaw(ego_yaw, (ego_xy[0], ego_xy[1], 0.0))
        annotations = _ego_frame_annotations(objects, ego_pose, t)
        clouds = simulate_radar(annotations, rig, config, radar_rng)
        images = render_cameras(annotations, rig, config, rain, night, image_rng)
        frames.append(FrameRecord(
            frame_id=f"{scene_id}-{k:03d}", timestamp=t, images=images,
            clouds=clouds, ego_pose=ego_pose, annotations=annotations,
            rain=rain, night=night))
    return Scene(scene_id=scene_id, split=split, rain=rain, night=night, frames=frames)


def generate_dataset(config: SceneConfig, n_train: int, n_val: int,
                     rig: SensorRig | None = None,
                     grid: BevGridSpec | None = None) -> SceneDataset:
    rig = rig if rig is not None else default_rig(config)
    grid = grid if grid is not None else default_grid()
    scenes = []
    splits: dict[str, list[str]] = {"train": [], "val": []}
    for idx in range(n_train + n_val):
        split = "train" if idx < n_train else "val"
        scene_id = f"scene_{idx:04d}"
        scenes.append(generate_scene(config, rig, idx, scene_id, split))
        splits[split].append(scene_id)
    return SceneDataset(scenes=scenes, rig=rig, grid=grid, config=config, splits=splits)


# ---------------------------------------------------------------------------
# Dataset serialization


def gt_frame_json(frame: FrameRecord) -> dict:
    """One frame in the metrics ground-truth schema (plus ego pose/timestamp)."""
    return {
        "frame_id": frame.frame_id,
        "rain": frame.rain,
        "night": frame.night,
        "timestamp": frame.timestamp,
        "ego_pose": frame.ego_pose.to_json(),
        "annotations": [
            {
                "class": CLASSES[a.class_id],
                "center": a.box.center.tolist(),
                "size": a.box.size.tolist(),
                "yaw": a.box.yaw,
                "velocity": a.box.velocity.tolist(),
                "attribute": ATTRIBUTES[a.attribute_id],
            }
            for a in frame.annotations
        ],
    }


def write_dataset(dataset: SceneDataset, directory: str):
    """Write the directory layout documented in the module docstring."""
    os.makedirs(directory, exist_ok=True)
    index = {
        "schema_version": 1,
        "splits": dataset.splits,
        "rig": dataset.rig.to_json(),
        "grid": dataset.grid.to_json(),
        "config": asdict(dataset.config),
        "scenes": [{"scene_id": s.scene_id, "split": s.split,
                    "n_frames": len(s.frames)} for s in dataset.scenes],
    }
    with open(os.path.join(directory, "index.json"), "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1)
    for scene in dataset.scenes:
        scene_dir = os.path.join(directory, "scenes", scene.scene_id)
        os.makedirs(scene_dir, exist_ok=True)
        ann = {"schema_version": 1, "frames": [gt_frame_json(f) for f in scene.frames]}
        with open(os.path.join(scene_dir, "annotations.json"), "w", encoding="utf-8") as fh:
            json.dump(ann, fh, indent=1)
        for frame in scene.frames:
            frame_dir = os.path.join(scene_dir, "frames", frame.frame_id)
            os.makedirs(frame_dir, exist_ok=True)
            for cam_idx in range(frame.images.shape[0]):
                img = (frame.images[cam_idx].transpose(1, 2, 0) * 255.0)
                img = np.round(img).astype(np.uint8)
                Image.fromarray(img, mode="RGB").save(
                    os.path.join(frame_dir, f"cam_{cam_idx:02d}.png"))
            with open(os.path.join(frame_dir, "radar.csv"), "w", encoding="utf-8",
                      newline="\n") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["sensor_id", "x", "y", "z",
                                 "radial_velocity", "cross_section"])
                for sensor_idx, cloud in enumerate(frame.clouds.per_sensor):
                    for row in cloud:
                        writer.writerow([sensor_idx] + [repr(float(v)) for v in row])


def _read_json(path: str):
    if not os.path.exists(path):
        raise DatasetIOError(f"missing dataset file: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetIOError(f"unreadable dataset file {path}: {exc}") from None
    if isinstance(doc, dict) and doc.get("schema_version") != 1:
        raise SchemaError(f"{path}: unsupported schema_version "
                          f"{doc.get('schema_version')!r}")
    return doc


def read_dataset(directory: str) -> SceneDataset:
    """Load a dataset written by write_dataset; round-trips all fields."""
    from .metrics import annotation_from_json, EvalConfig  # local to avoid cycle at import

    index = _read_json(os.path.join(directory, "index.json"))
    rig = SensorRig.from_json(index["rig"])
    grid = BevGridSpec.from_json(index["grid"])
    config = SceneConfig(**index["config"])
    eval_config = EvalConfig()
    scenes = []
    for meta in index["scenes"]:
        scene_id = meta["scene_id"]
        scene_dir = os.path.join(directory, "scenes", scene_id)
        ann_doc = _read_json(os.path.join(scene_dir, "annotations.json"))
        frames = []
        for fr in ann_doc["frames"]:
            frame_id = fr["frame_id"]
            frame_dir = os.path.join(scene_dir, "frames", frame_id)
            images = []
            for cam_idx in range(config.num_cameras):
                png = os.path.join(frame_dir, f"cam_{cam_idx:02d}.png")
                if not os.path.exists(png):
                    raise DatasetIOError(f"missing dataset file: {png}")
                arr = np.asarray(Image.open(png), dtype=np.uint8)
                images.append(arr.astype(np.float32).transpose(2, 0, 1) / 255.0)
            clouds = _read_radar_csv(os.path.join(frame_dir, "radar.csv"),
                                     config.num_radars)
            annotations = [annotation_from_json(a, eval_config,
                                                f"{frame_id}.annotations[{i}]")
                           for i, a in enumerate(fr["annotations"])]
            frames.append(FrameRecord(
                frame_id=frame_id, timestamp=float(fr["timestamp"]),
                images=np.stack(images), clouds=clouds,
                ego_pose=Pose.from_json(fr["ego_pose"]),
                annotations=annotations, rain=int(fr["rain"]), night=int(fr["night"])))
        scenes.append(Scene(scene_id=scene_id, split=meta["split"],
                            rain=frames[0].rain if frames else 0,
                            night=frames[0].night if frames else 0, frames=frames))
    return SceneDataset(scenes=scenes, rig=rig, grid=grid, config=config,
                        splits={k: list(v) for k, v in index["splits"].items()})


def _read_radar_csv(path: str, num_radars: int) -> PointCloudSet:
    if not os.path.exists(path):
        raise DatasetIOError(f"missing dataset file: {path}")
    per_sensor: list[list[list[float]]] = [[] for _ in range(num_radars)]
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["sensor_id", "x", "y", "z", "radial_velocity", "cross_section"]:
            raise SchemaError(f"{path}: unexpected radar CSV header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise SchemaError(f"{path}: line {line_no}: expected 6 columns")
            sensor_idx = int(row[0])
            if not 0 <= sensor_idx < num_radars:
                raise SchemaError(f"{path}: line {line_no}: sensor_id out of range")
            per_sensor[sensor_idx].append([float(v) for v in row[1:]])
    return PointCloudSet([np.asarray(rows, dtype=np.float64).reshape(-1, 5)
                          for rows in per_sensor])
