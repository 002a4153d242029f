# anchorcast/anchorcast_core/skeleton.py
"""
3D joints -> OpenPose-135 slots -> pinhole projection -> rasterized skeleton maps.

Every function here is pure: no shared state, safe to call from several threads.
"""
import json
import time
import cv2
import numpy as np
from .exceptions import (InputValidationError, JointMappingError,
                         JointFileError, CameraFileError)
from .joint_layout import load_layout, load_limb_topology
from .utils import NUM_JOINTS, round_half_away

RECORD_FIELDS = 1 + NUM_JOINTS * 3 + NUM_JOINTS
CAMERA_KEYS = ('fx', 'fy', 'cx', 'cy', 'width', 'height')


class JointSet3D:
    def __init__(self, joints, valid, frame_index=0):
        joints = np.asarray(joints, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        if joints.shape != (NUM_JOINTS, 3) or valid.shape != (NUM_JOINTS,):
            raise InputValidationError(
                f"JointSet3D needs {NUM_JOINTS} joints, got joints {joints.shape} and flags {valid.shape}")
        # Joints behind the camera, or non-finite, are dropped rather than mirrored.
        self.valid = valid & np.isfinite(joints).all(axis=1) & (joints[:, 2] > 0)
        self.joints = joints
        self.frame_index = int(frame_index)
        self.unknown_labels = []

    def __repr__(self):
        return f"JointSet3D(frame={self.frame_index}, valid={int(self.valid.sum())}/{NUM_JOINTS})"


class CameraIntrinsics:
    def __init__(self, fx, fy, cx, cy, width, height):
        self.fx, self.fy = float(fx), float(fy)
        self.cx, self.cy = float(cx), float(cy)
        self.width, self.height = int(width), int(height)
        if not (self.fx > 0 and self.fy > 0):
            raise InputValidationError(f"focal lengths must be positive, got fx={fx}, fy={fy}")
        if self.width < 1 or self.height < 1:
            raise InputValidationError(f"image size must be positive, got {width}x{height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InputValidationError(
                f"principal point ({cx}, {cy}) outside the {width}x{height} image")

    def as_dict(self):
        return {k: getattr(self, k) for k in CAMERA_KEYS}

    def __eq__(self, other):
        return isinstance(other, CameraIntrinsics) and self.as_dict() == other.as_dict()

    def __repr__(self):
        return "CameraIntrinsics({})".format(", ".join(f"{k}={v}" for k, v in self.as_dict().items()))


class JointSet2D:
    def __init__(self, points, valid):
        points = np.array(points, dtype=np.float64)
        valid = np.asarray(valid, dtype=bool)
        if points.shape != (NUM_JOINTS, 2) or valid.shape != (NUM_JOINTS,):
            raise InputValidationError(
                f"JointSet2D needs {NUM_JOINTS} points, got {points.shape} and flags {valid.shape}")
        valid = valid & np.isfinite(points).all(axis=1)
        points[~valid] = np.nan
        self.points = points
        self.valid = valid

    def __repr__(self):
        return f"JointSet2D(valid={int(self.valid.sum())}/{NUM_JOINTS})"


class SkeletonMap:
    def __init__(self, pixels, frame_index=0):
        pixels = np.asarray(pixels)
        if pixels.dtype != np.uint8 or pixels.ndim != 3 or pixels.shape[2] != 3:
            raise InputValidationError(f"SkeletonMap pixels must be uint8 HxWx3, got {pixels.dtype} {pixels.shape}")
        self.pixels = pixels
        self.frame_index = int(frame_index)

    @property
    def size(self):
        return self.pixels.shape[0], self.pixels.shape[1]

    def __repr__(self):
        return f"SkeletonMap(frame={self.frame_index}, size={self.size})"


def map_to_openpose_config(raw_joints, frame_index=0, layout=None):
    """
    Relabels named 3D joints into the fixed 135-slot layout.
    raw_joints: a mapping or an iterable of (name, (x, y, z)) pairs; pairs let duplicates be caught.
    Names missing from the input give valid=False slots; unknown names are ignored and recorded.
    """
    layout = layout or load_layout()
    pairs = raw_joints.items() if hasattr(raw_joints, 'items') else raw_joints
    joints = np.zeros((NUM_JOINTS, 3), dtype=np.float64)
    valid = np.zeros(NUM_JOINTS, dtype=bool)
    seen = set()
    unknown = []
    for name, position in pairs:
        if name in seen:
            raise JointMappingError(f"duplicate joint label '{name}' in frame {frame_index}", label=name)
        seen.add(name)
        slot = layout.index.get(name)
        if slot is None:
            unknown.append(name)
            continue
        joints[slot] = np.asarray(position, dtype=np.float64)
        valid[slot] = True
    if unknown:
        print(f"[{time.ctime()}] SKELETON Warning: frame {frame_index} ignores unknown labels: {', '.join(unknown)}")
    result = JointSet3D(joints, valid, frame_index)
    result.unknown_labels = unknown
    return result


def project_perspective(j, cam):
    """Pinhole projection u = fx*x/z + cx, v = fy*y/z + cy. Off-image points stay valid."""
    valid = j.valid & (j.joints[:, 2] > 0)
    points = np.full((NUM_JOINTS, 2), np.nan)
    xyz = j.joints[valid]
    points[valid, 0] = cam.fx * xyz[:, 0] / xyz[:, 2] + cam.cx
    points[valid, 1] = cam.fy * xyz[:, 1] / xyz[:, 2] + cam.cy
    return JointSet2D(points, valid)


def scale_focal(cam, s):
    if not s > 0:
        raise InputValidationError(f"focal scale must be positive, got {s}")
    return CameraIntrinsics(cam.fx * s, cam.fy * s, cam.cx, cam.cy, cam.width, cam.height)


def _clip_segment(p0, p1, width, height, margin=0):
    """Liang-Barsky clip of p0->p1 to [-margin, width-1+margin] x [-margin, height-1+margin]; None if fully outside."""
    x0, y0 = p0
    dx, dy = p1[0] - x0, p1[1] - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 + margin), (dx, width - 1 + margin - x0),
                 (-dy, y0 + margin), (dy, height - 1 + margin - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    return (x0 + t0 * dx, y0 + t0 * dy), (x0 + t1 * dx, y0 + t1 * dy)


def rasterize(j, topo, cam, line_width=1, point_radius=1):
    """Draws limbs then points, no anti-aliasing; identical inputs give identical bytes."""
    if line_width < 1 or point_radius < 1:
        raise InputValidationError(f"line width and point radius must be >= 1, got {line_width}, {point_radius}")
    canvas = np.zeros((cam.height, cam.width, 3), dtype=np.uint8)
    for a, b, color in topo.edges:
        if not (j.valid[a] and j.valid[b]):
            continue
        # a thick stroke reaches line_width // 2 pixels past its centre line
        clipped = _clip_segment(j.points[a], j.points[b], cam.width, cam.height, margin=int(line_width) // 2)
        if clipped is None:
            continue
        (x0, y0), (x1, y1) = round_half_away(clipped).astype(int).tolist()
        cv2.line(canvas, (x0, y0), (x1, y1), tuple(int(c) for c in color),
                 thickness=int(line_width), lineType=cv2.LINE_8)
    centers = round_half_away(np.nan_to_num(j.points))
    for slot in np.flatnonzero(j.valid):
        cx, cy = centers[slot]
        if not (-point_radius <= cx <= cam.width - 1 + point_radius
                and -point_radius <= cy <= cam.height - 1 + point_radius):
            continue
        cv2.circle(canvas, (int(cx), int(cy)), int(point_radius),
                   tuple(int(c) for c in topo.point_color[slot]), thickness=-1, lineType=cv2.LINE_8)
    return SkeletonMap(canvas)


def render_skeleton_sequence(sequence, cam, topo=None, line_width=1, point_radius=1):
    topo = topo or load_limb_topology()
    maps = []
    for joints in sequence:
        skeleton = rasterize(project_perspective(joints, cam), topo, cam, line_width, point_radius)
        skeleton.frame_index = joints.frame_index
        maps.append(skeleton)
    return maps


def frame_gaps(sequence):
    """Missing frame indices between consecutive records."""
    gaps = []
    for prev, cur in zip(sequence, sequence[1:]):
        gaps.extend(range(prev.frame_index + 1, cur.frame_index))
    return gaps


def _check_order(sequence, frame_index, line_number):
    if sequence and frame_index <= sequence[-1].frame_index:
        raise JointFileError(
            f"frame_index {frame_index} does not increase (previous {sequence[-1].frame_index})",
            line_number=line_number)


def load_joint_sequence(path):
    """
    Slot-format joint file: per line `frame_index`, 135 `x y z` triples, 135 validity bits.
    Blank lines and `#` comments are skipped. Gaps are reported, not filled.
    """
    sequence = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            fields = line.split()
            if len(fields) != RECORD_FIELDS:
                raise JointFileError(
                    f"record '{fields[0]}' has {len(fields)} fields, expected {RECORD_FIELDS} "
                    f"(frame_index, {NUM_JOINTS} x y z triples, {NUM_JOINTS} validity bits)",
                    line_number=line_number)
            try:
                frame_index = int(fields[0])
                joints = np.array(fields[1:1 + 3 * NUM_JOINTS], dtype=np.float64).reshape(NUM_JOINTS, 3)
                bits = fields[1 + 3 * NUM_JOINTS:]
                if any(b not in ('0', '1') for b in bits):
                    raise ValueError("validity bits must be 0 or 1")
                valid = np.array([b == '1' for b in bits])
            except ValueError as e:
                raise JointFileError(f"record '{fields[0]}': {e}", line_number=line_number)
            _check_order(sequence, frame_index, line_number)
            sequence.append(JointSet3D(joints, valid, frame_index))
    gaps = frame_gaps(sequence)
    if gaps:
        print(f"[{time.ctime()}] SKELETON Warning: {path} has frame gaps at {gaps}")
    print(f"[{time.ctime()}] SKELETON: Loaded {len(sequence)} joint records from {path}.")
    return sequence


def load_labeled_joint_sequence(path, layout=None):
    """JSON-lines records {"frame_index": i, "joints": {"nose": [x, y, z], ...}} mapped to slots."""
    sequence = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            try:
                record = dict(json.loads(line, object_pairs_hook=list))
                frame_index = int(record['frame_index'])
                joint_pairs = record['joints']
            except (ValueError, KeyError, TypeError) as e:
                raise JointFileError(f"malformed labeled record: {e}", line_number=line_number)
            _check_order(sequence, frame_index, line_number)
            sequence.append(map_to_openpose_config(joint_pairs, frame_index, layout))
    gaps = frame_gaps(sequence)
    if gaps:
        print(f"[{time.ctime()}] SKELETON Warning: {path} has frame gaps at {gaps}")
    return sequence


def save_joint_sequence(sequence, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"# frame_index, {NUM_JOINTS} x y z triples, {NUM_JOINTS} validity bits\n")
        for joints in sequence:
            coords = " ".join(repr(float(v)) for v in joints.joints.reshape(-1))
            bits = " ".join('1' if v else '0' for v in joints.valid)
            f.write(f"{joints.frame_index} {coords} {bits}\n")


def load_camera(path):
    values = {}
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for line in f:
                line = line.split('#', 1)[0].strip()
                if not line:
                    continue
                key, sep, value = line.partition('=')
                if not sep:
                    raise CameraFileError(f"expected 'key = value', got '{line}'", path=path)
                key = key.strip().lower()
                if key not in CAMERA_KEYS:
                    raise CameraFileError(f"unknown key '{key}'", path=path)
                values[key] = float(value)
    except FileNotFoundError:
        raise CameraFileError("file not found", path=path)
    except ValueError as e:
        raise CameraFileError(str(e), path=path)
    missing = [k for k in CAMERA_KEYS if k not in values]
    if missing:
        raise CameraFileError(f"missing keys {missing}", path=path)
    try:
        return CameraIntrinsics(**values)
    except InputValidationError as e:
        raise CameraFileError(str(e), path=path)


def save_camera(cam, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write("# perspective camera, pixels\n")
        for key, value in cam.as_dict().items():
            f.write(f"{key} = {value}\n")
