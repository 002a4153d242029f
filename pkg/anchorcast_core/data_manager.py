# anchorcast/anchorcast_core/data_manager.py
import os
import re
import time
import cv2
import numpy as np
from .exceptions import DatasetValidationError, InputValidationError
from .skeleton import SkeletonMap, load_joint_sequence, load_camera

FRAMES_DIR = 'frames'
FACE_MASKS_DIR = 'face_masks'
FG_MASKS_DIR = 'fg_masks'
JOINTS_FILE = 'joints.txt'
CAMERA_FILE = 'camera.txt'
NUMBERED_PNG = re.compile(r'^(\d+)\.png$')


def frame_name(index):
    return f"{index:05d}.png"


def read_png(path):
    """RGB uint8 (H, W, 3). OpenCV stores BGR; the swap happens here and nowhere else."""
    pixels = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if pixels is None:
        raise InputValidationError(f"unreadable image: {path}")
    return cv2.cvtColor(pixels, cv2.COLOR_BGR2RGB)


def write_png(path, pixels):
    pixels = np.asarray(pixels, dtype=np.uint8)
    if not cv2.imwrite(str(path), cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write {path}")
    return path


def read_mask(path):
    """8-bit grayscale mask as (H, W) uint8 of 0/1 (nonzero = inside)."""
    mask = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
    if mask is None:
        raise InputValidationError(f"unreadable mask: {path}")
    return (mask > 0).astype(np.uint8)


def write_mask(path, mask):
    if not cv2.imwrite(str(path), (np.asarray(mask) > 0).astype(np.uint8) * 255):
        raise OSError(f"could not write {path}")
    return path


def numbered_pngs(directory):
    """Sorted [(index, path)] of the `<digits>.png` files in directory."""
    if not os.path.isdir(directory):
        raise DatasetValidationError(f"directory not found: {directory}")
    entries = []
    for name in os.listdir(directory):
        match = NUMBERED_PNG.match(name)
        if match:
            entries.append((int(match.group(1)), os.path.join(directory, name)))
    return sorted(entries)


def read_skeleton_dir(directory):
    entries = numbered_pngs(directory)
    if not entries:
        raise DatasetValidationError(f"no numbered PNG skeleton maps in {directory}")
    return [SkeletonMap(read_png(path), frame_index=index) for index, path in entries]


def write_frame_dir(directory, frames):
    os.makedirs(directory, exist_ok=True)
    paths = []
    for index, pixels in enumerate(frames):
        pixels = getattr(pixels, 'pixels', pixels)
        paths.append(write_png(os.path.join(directory, frame_name(index)), pixels))
    return paths


class DatasetManifest:
    def __init__(self, root, frame_count, resolution, has_fg_masks=False):
        self.root = os.path.abspath(root)
        self.frames_dir = os.path.join(self.root, FRAMES_DIR)
        self.face_mask_dir = os.path.join(self.root, FACE_MASKS_DIR)
        self.fg_mask_dir = os.path.join(self.root, FG_MASKS_DIR) if has_fg_masks else None
        self.joints_file = os.path.join(self.root, JOINTS_FILE)
        self.camera_file = os.path.join(self.root, CAMERA_FILE)
        self.frame_count = int(frame_count)
        self.resolution = tuple(resolution)

    def frame_path(self, index):
        return os.path.join(self.frames_dir, frame_name(index))

    def face_mask_path(self, index):
        return os.path.join(self.face_mask_dir, frame_name(index))

    def as_dict(self):
        return {
            'root': self.root,
            'frames_dir': self.frames_dir,
            'face_mask_dir': self.face_mask_dir,
            'fg_mask_dir': self.fg_mask_dir,
            'joints_file': self.joints_file,
            'camera_file': self.camera_file,
            'frame_count': self.frame_count,
            'resolution': list(self.resolution),
        }

    def __repr__(self):
        return f"DatasetManifest(root='{self.root}', frames={self.frame_count}, resolution={self.resolution})"


def _check_dense(entries, kind):
    indices = [i for i, _ in entries]
    if not indices:
        raise DatasetValidationError(f"no numbered PNG {kind} found")
    missing = sorted(set(range(max(indices) + 1)) - set(indices))
    if missing:
        raise DatasetValidationError(f"{kind} numbering is not dense from 0, missing",
                                     offenders=[f"frame {i} ({frame_name(i)})" for i in missing])
    return len(indices)


def _check_masks(directory, count, resolution, kind):
    missing, wrong = [], []
    for index in range(count):
        path = os.path.join(directory, frame_name(index))
        if not os.path.exists(path):
            missing.append(path)
            continue
        shape = read_mask(path).shape
        if shape != resolution:
            wrong.append(f"{path} ({shape[0]}x{shape[1]})")
    if missing:
        raise DatasetValidationError(f"missing {kind}", offenders=missing)
    if wrong:
        raise DatasetValidationError(f"{kind} size differs from frame size {resolution[0]}x{resolution[1]}",
                                     offenders=wrong)


def validate_dataset(path):
    """Checks the on-disk layout before any compute and returns its manifest."""
    print(f"[{time.ctime()}] DATASET: Validating {path}...")
    if not os.path.isdir(path):
        raise DatasetValidationError(f"dataset root not found: {path}")
    for name in (FRAMES_DIR, FACE_MASKS_DIR, JOINTS_FILE, CAMERA_FILE):
        if not os.path.exists(os.path.join(path, name)):
            raise DatasetValidationError(f"missing {os.path.join(path, name)}")

    entries = numbered_pngs(os.path.join(path, FRAMES_DIR))
    count = _check_dense(entries, 'frames')
    shapes = {}
    for index, frame_path in entries:
        shapes[frame_path] = read_png(frame_path).shape[:2]
    resolution = shapes[entries[0][1]]
    offenders = [f"{p} ({s[0]}x{s[1]})" for p, s in shapes.items() if s != resolution]
    if offenders:
        raise DatasetValidationError(
            f"mixed frame resolutions (first frame is {resolution[0]}x{resolution[1]})", offenders=offenders)

    _check_masks(os.path.join(path, FACE_MASKS_DIR), count, resolution, 'face masks')
    has_fg = os.path.isdir(os.path.join(path, FG_MASKS_DIR))
    if has_fg:
        _check_masks(os.path.join(path, FG_MASKS_DIR), count, resolution, 'foreground masks')

    joints = load_joint_sequence(os.path.join(path, JOINTS_FILE))
    if len(joints) != count:
        raise DatasetValidationError(f"{os.path.join(path, JOINTS_FILE)} has {len(joints)} records "
                                     f"for {count} frames")
    camera = load_camera(os.path.join(path, CAMERA_FILE))
    if (camera.height, camera.width) != tuple(resolution):
        raise DatasetValidationError(f"{os.path.join(path, CAMERA_FILE)} describes a "
                                     f"{camera.width}x{camera.height} image, frames are "
                                     f"{resolution[1]}x{resolution[0]}")
    manifest = DatasetManifest(path, count, resolution, has_fg_masks=has_fg)
    print(f"[{time.ctime()}] DATASET: {manifest}")
    return manifest


class LossLog:
    """Line-delimited `step loss` records, flushed per line so an abort keeps what was written."""

    def __init__(self, path):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._file = open(path, 'w', encoding='utf-8')

    def append(self, step, loss):
        self._file.write(f"{step} {loss!r}\n")
        self._file.flush()

    def close(self):
        self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
