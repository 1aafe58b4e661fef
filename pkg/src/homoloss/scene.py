"""Scene representation, text ingestion, synthetic scene generation, and the
depth-percentile slab parameterization (local and global variants).

File formats (plain text, UTF-8, whitespace separated, '#' comments):
    poses:   name tx ty tz qw qx qy qz      (meters, unit quaternion)
    points:  P x y z                        (world point, meters)
             V frame_id idx idx ...         (visibility set of a frame)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    InvalidInputError,
    Intrinsics,
    Pose,
    quat_canonical,
    quat_from_axis_angle,
    quat_multiply,
    quat_to_rotmat,
    rotmat_to_quat,
)
from .losses import SlabParams

DEFAULT_PERCENTILE_LO = 0.025
DEFAULT_PERCENTILE_HI = 0.975


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GenerationError(RuntimeError):
    pass


class DegenerateDepthError(ValueError):
    def __init__(self, message, frame_id=None):
        self.frame_id = frame_id
        super().__init__(message)


@dataclass(frozen=True)
class Frame:
    id: str
    gt_pose: Pose
    visible: tuple  # indices into the scene point list

    def __post_init__(self):
        object.__setattr__(self, "visible", tuple(int(i) for i in self.visible))


@dataclass(frozen=True)
class Scene:
    points: np.ndarray  # (N, 3) world points, meters
    frames: tuple
    intrinsics: Intrinsics

    def __post_init__(self):
        object.__setattr__(
            self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3)
        )
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 1:
            raise InvalidInputError("scene needs at least one frame")
        n = len(self.points)
        for f in self.frames:
            bad = [i for i in f.visible if i >= n or i < 0]
            if bad:
                raise InvalidInputError(
                    f"frame {f.id}: visibility index {bad[0]} out of range"
                )

    def visible_points(self, frame: Frame) -> np.ndarray:
        return self.points[list(frame.visible)]


@dataclass(frozen=True)
class DepthSlab:
    """Per-frame (local) or shared (global) slab bounds."""

    mode: str  # "local" | "global"
    percentile_lo: float
    percentile_hi: float
    per_frame: dict = None      # frame id -> SlabParams, local mode
    single: SlabParams = None   # shared bounds, global mode

    def for_frame(self, frame_id: str) -> SlabParams:
        if self.mode == "local":
            return self.per_frame[frame_id]
        return self.single


# -- depths and percentiles ------------------------------------------------

def point_depth(pose: Pose, P) -> float:
    """Signed depth: z-coordinate of P in the camera frame (distance along
    the optical axis, matching the n = (0,0,-1) plane family)."""
    R = quat_to_rotmat(pose.q)
    return float((R.T @ (np.asarray(P, dtype=float) - pose.t))[2])


def frame_depths(scene: Scene, frame: Frame) -> np.ndarray:
    pts = scene.visible_points(frame)
    if len(pts) == 0:
        return np.zeros(0)
    R = quat_to_rotmat(frame.gt_pose.q)
    return (pts - frame.gt_pose.t) @ R[:, 2]


def _percentile_bounds(depths, lo, hi, frame_id=None):
    """Slab bounds from positive depths by linear interpolation between
    order statistics. Non-positive depths are excluded."""
    depths = np.asarray(depths, dtype=float)
    positive = depths[depths > 0]
    if len(positive) < 2:
        raise DegenerateDepthError(
            f"frame {frame_id}: needs at least 2 positive-depth points, "
            f"got {len(positive)}",
            frame_id=frame_id,
        )
    x_min = float(np.quantile(positive, lo))
    x_max = float(np.quantile(positive, hi))
    if not x_min < x_max:
        raise DegenerateDepthError(
            f"frame {frame_id}: degenerate depth distribution, "
            f"x_min={x_min} >= x_max={x_max}",
            frame_id=frame_id,
        )
    return SlabParams(x_min=x_min, x_max=x_max)


def local_slabs(scene: Scene, lo: float = DEFAULT_PERCENTILE_LO,
                hi: float = DEFAULT_PERCENTILE_HI) -> DepthSlab:
    """Per-frame slab bounds from each frame's own depth distribution."""
    if not 0.0 <= lo < hi <= 1.0:
        raise InvalidInputError("need 0 <= lo < hi <= 1")
    per_frame = {}
    for f in scene.frames:
        per_frame[f.id] = _percentile_bounds(
            frame_depths(scene, f), lo, hi, frame_id=f.id
        )
    return DepthSlab(mode="local", percentile_lo=lo, percentile_hi=hi,
                     per_frame=per_frame)


def global_slab(scene: Scene = None, lo: float = DEFAULT_PERCENTILE_LO,
                hi: float = DEFAULT_PERCENTILE_HI,
                x_min: float = None, x_max: float = None) -> DepthSlab:
    """Shared slab bounds: manual (x_min, x_max) or pooled depth percentiles
    over every frame of the scene."""
    if x_min is not None or x_max is not None:
        if x_min is None or x_max is None or not 0.0 < x_min < x_max:
            raise InvalidInputError(
                f"manual bounds need 0 < x_min < x_max, got ({x_min}, {x_max})"
            )
        single = SlabParams(x_min=float(x_min), x_max=float(x_max))
        return DepthSlab(mode="global", percentile_lo=lo, percentile_hi=hi,
                         single=single)
    if scene is None:
        raise InvalidInputError("need a scene or manual bounds")
    if not 0.0 <= lo < hi <= 1.0:
        raise InvalidInputError("need 0 <= lo < hi <= 1")
    pooled = np.concatenate([frame_depths(scene, f) for f in scene.frames])
    single = _percentile_bounds(pooled, lo, hi, frame_id="<global>")
    return DepthSlab(mode="global", percentile_lo=lo, percentile_hi=hi,
                     single=single)


# -- text ingestion --------------------------------------------------------

def parse_pose_list(stream):
    """Parse `name tx ty tz qw qx qy qz` lines into (id, Pose) pairs.

    Quaternions are normalized and canonicalized (qw >= 0). '#'-prefixed
    and blank lines are skipped. Errors carry the 1-based line number.
    """
    out = []
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != 8:
            raise ParseError(
                f"expected 8 fields (name + 7 floats), got {len(fields)}",
                line=lineno,
            )
        name = fields[0]
        try:
            vals = [float(x) for x in fields[1:]]
        except ValueError as e:
            raise ParseError(f"non-numeric field: {e}", line=lineno) from e
        q = quat_canonical(np.array(vals[3:7]))
        out.append((name, Pose(np.array(vals[:3]), q)))
    return out


def write_pose_list(stream, poses):
    """Write (id, Pose) pairs in the pose-list text format."""
    stream.write("# name tx ty tz qw qx qy qz\n")
    for name, pose in poses:
        vals = " ".join(format(v, ".17g") for v in pose.params())
        stream.write(f"{name} {vals}\n")


def parse_points(stream):
    """Parse `P x y z` and `V frame_id idx...` lines.

    Returns (points array, {frame_id: visibility tuple}). Visibility indices
    are validated against the point count after the whole file is read, so
    P/V line order does not matter.
    """
    points = []
    vis = {}
    vis_lines = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        tag = fields[0]
        if tag == "P":
            if len(fields) != 4:
                raise ParseError(
                    f"P line expects 3 coordinates, got {len(fields) - 1}",
                    line=lineno,
                )
            try:
                points.append([float(x) for x in fields[1:]])
            except ValueError as e:
                raise ParseError(f"non-numeric field: {e}", line=lineno) from e
        elif tag == "V":
            if len(fields) < 2:
                raise ParseError("V line expects a frame id", line=lineno)
            fid = fields[1]
            try:
                idx = [int(x) for x in fields[2:]]
            except ValueError as e:
                raise ParseError(f"non-integer index: {e}", line=lineno) from e
            vis[fid] = tuple(idx)
            vis_lines[fid] = lineno
        else:
            raise ParseError(f"unknown record tag {tag!r}", line=lineno)
    n = len(points)
    for fid, idx in vis.items():
        for i in idx:
            if i < 0 or i >= n:
                raise ParseError(
                    f"frame {fid}: visibility index {i} out of range "
                    f"(have {n} points)",
                    line=vis_lines[fid],
                )
    return np.asarray(points, dtype=float).reshape(-1, 3), vis


def write_points(stream, points, visibility):
    stream.write("# P x y z / V frame_id idx...\n")
    for p in points:
        coords = " ".join(format(v, ".17g") for v in p)
        stream.write(f"P {coords}\n")
    for fid in visibility:
        idx = " ".join(str(i) for i in visibility[fid])
        stream.write(f"V {fid} {idx}\n")


def scene_from_files(pose_stream, points_stream,
                     intrinsics: Intrinsics) -> Scene:
    poses = parse_pose_list(pose_stream)
    points, vis = parse_points(points_stream)
    frames = [
        Frame(id=name, gt_pose=pose, visible=vis.get(name, ()))
        for name, pose in poses
    ]
    return Scene(points=points, frames=frames, intrinsics=intrinsics)


# -- synthetic scenes ------------------------------------------------------

def default_intrinsics(fov_deg: float = 65.0, w: int = 640,
                       h: int = 640) -> Intrinsics:
    f = (w / 2.0) / math.tan(math.radians(fov_deg) / 2.0)
    return Intrinsics(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0, w=w, h=h)


def _look_at(position, target, up, roll_rad=0.0):
    """World-from-camera rotation with +z pointing from position to target."""
    z = np.asarray(target, dtype=float) - position
    z = z / np.linalg.norm(z)
    x = np.cross(np.asarray(up, dtype=float), z)
    nx = np.linalg.norm(x)
    if nx < 1e-12:  # looking straight along up: pick any perpendicular
        x = np.cross([1.0, 0.0, 0.0], z)
        nx = np.linalg.norm(x)
    x = x / nx
    y = np.cross(z, x)
    R = np.column_stack([x, y, z])
    q = rotmat_to_quat(R)
    if roll_rad != 0.0:
        q = quat_multiply(q, quat_from_axis_angle([0, 0, 1], roll_rad))
    return quat_canonical(q)


def synth_scene(seed: int, n_points: int = 60, n_frames: int = 8,
                depth_range=(2.0, 8.0), fov: float = 65.0) -> Scene:
    """Deterministic desk-scale scene: a point cloud in a box and cameras
    looking at it from random directions.

    Visibility is the set of points with positive depth that project inside
    the sensor. Camera distances are chosen so each frame's depths fall
    inside depth_range.
    """
    if n_points < 10:
        raise InvalidInputError("need at least 10 points")
    if n_frames < 1:
        raise InvalidInputError("need at least 1 frame")
    lo, hi = float(depth_range[0]), float(depth_range[1])
    if not 0.0 < lo < hi:
        raise InvalidInputError("depth_range must satisfy 0 < lo < hi")
    rng = np.random.default_rng(seed)
    span = hi - lo
    extent = 0.25 * span            # half-extent of the point box
    mid = 0.5 * (lo + hi)
    points = rng.uniform(-extent, extent, size=(n_points, 3))
    K = default_intrinsics(fov)
    frames = []
    for i in range(n_frames):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        dist = mid + rng.uniform(-0.05, 0.05) * span
        position = direction * dist
        roll = rng.uniform(-math.pi, math.pi)
        q = _look_at(position, np.zeros(3), up=[0.0, 1.0, 0.0], roll_rad=roll)
        pose = Pose(position, q)
        R = quat_to_rotmat(q)
        cam = (points - position) @ R
        visible = []
        for j in range(n_points):
            X, Y, Z = cam[j]
            if Z <= 0:
                continue
            u = K.fx * X / Z + K.cx
            v = K.fy * Y / Z + K.cy
            if 0.0 <= u <= K.w and 0.0 <= v <= K.h:
                visible.append(j)
        if len(visible) < 2:
            raise GenerationError(
                f"frame {i} sees only {len(visible)} points; adjust fov, "
                f"depth_range, or n_points"
            )
        frames.append(Frame(id=f"f{i:03d}", gt_pose=pose, visible=visible))
    return Scene(points=points, frames=frames, intrinsics=K)
