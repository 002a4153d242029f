# anchorcast/anchorcast_core/toy_data.py
"""
Synthetic toy dataset: a simple avatar on a gray background, driven by a
swaying skeleton. Frames, masks, joints and camera all agree, so the dataset
passes validate_dataset as written.
"""
import json
import math
import os
import time
import cv2
import numpy as np
from .data_manager import (FRAMES_DIR, FACE_MASKS_DIR, FG_MASKS_DIR, JOINTS_FILE, CAMERA_FILE,
                           frame_name, write_png, write_mask)
from .joint_layout import load_layout
from .skeleton import CameraIntrinsics, map_to_openpose_config, project_perspective, save_joint_sequence, save_camera
from .utils import round_half_away

LABELED_JOINTS_FILE = 'joints.jsonl'
DEPTH = 2.0
BACKGROUND = 128
SKIN = (230, 190, 160)

# Rest pose (x, y) in meters, camera looking down +z; y grows downwards.
BODY_REST = {
    'nose': (0.0, -0.50), 'neck': (0.0, -0.34),
    'right_shoulder': (-0.16, -0.32), 'right_elbow': (-0.22, -0.12), 'right_wrist': (-0.24, 0.06),
    'left_shoulder': (0.16, -0.32), 'left_elbow': (0.22, -0.12), 'left_wrist': (0.24, 0.06),
    'mid_hip': (0.0, 0.08), 'right_hip': (-0.08, 0.08), 'left_hip': (0.08, 0.08),
    'right_knee': (-0.09, 0.32), 'left_knee': (0.09, 0.32),
    'right_ankle': (-0.10, 0.56), 'left_ankle': (0.10, 0.56),
    'right_eye': (-0.03, -0.53), 'left_eye': (0.03, -0.53),
    'right_ear': (-0.07, -0.51), 'left_ear': (0.07, -0.51),
    'left_big_toe': (0.14, 0.60), 'left_small_toe': (0.16, 0.59), 'left_heel': (0.09, 0.59),
    'right_big_toe': (-0.14, 0.60), 'right_small_toe': (-0.16, 0.59), 'right_heel': (-0.09, 0.59),
}
AVATAR_LIMBS = [
    ('neck', 'mid_hip', 5), ('right_shoulder', 'left_shoulder', 4),
    ('right_shoulder', 'right_elbow', 3), ('right_elbow', 'right_wrist', 3),
    ('left_shoulder', 'left_elbow', 3), ('left_elbow', 'left_wrist', 3),
    ('right_hip', 'right_knee', 3), ('right_knee', 'right_ankle', 3),
    ('left_hip', 'left_knee', 3), ('left_knee', 'left_ankle', 3),
]
FINGERS = ('thumb', 'index', 'middle', 'ring', 'pinky')
HEAD_RADIUS = 0.09


def _hand(prefix, wrist, side):
    joints = {f'{prefix}_hand_root': wrist}
    for k, finger in enumerate(FINGERS):
        angle = math.pi / 2 + side * (k - 2) * 0.3
        for seg in range(1, 5):
            r = 0.015 * seg
            joints[f'{prefix}_{finger}_{seg}'] = (wrist[0] + r * math.cos(angle) * side * 0.5,
                                                 wrist[1] + r * math.sin(angle))
    return joints


def _face(nose):
    return {f'face_{k:02d}': (nose[0] + 0.06 * math.cos(2 * math.pi * k / 68),
                              nose[1] + 0.06 * math.sin(2 * math.pi * k / 68)) for k in range(68)}


def toy_pose(phase, amplitude=0.06):
    """Named 3D joints for one sway phase: arms swing, head nods."""
    swing = amplitude * math.sin(phase)
    nod = 0.3 * amplitude * math.sin(2 * phase)
    pose = {}
    for name, (x, y) in BODY_REST.items():
        if 'elbow' in name:
            x += 0.5 * swing
        elif 'wrist' in name:
            x, y = x + swing, y - 0.5 * abs(swing)
        elif name in ('nose', 'right_eye', 'left_eye', 'right_ear', 'left_ear'):
            y += nod
        pose[name] = (x, y)
    pose.update(_hand('left', pose['left_wrist'], 1))
    pose.update(_hand('right', pose['right_wrist'], -1))
    pose.update(_face(pose['nose']))
    return {name: (x, y, DEPTH) for name, (x, y) in pose.items()}


def toy_camera(size):
    return CameraIntrinsics(fx=size, fy=size, cx=size / 2, cy=size / 2, width=size, height=size)


def _pixel(points, layout, name):
    return tuple(int(v) for v in round_half_away(points[layout.index[name]]))


def render_avatar(joints, camera, layout, shirt):
    """(frame, face_mask, fg_mask) for one pose."""
    points = project_perspective(joints, camera).points
    frame = np.full((camera.height, camera.width, 3), BACKGROUND, dtype=np.uint8)
    fg = np.zeros((camera.height, camera.width), dtype=np.uint8)
    face = np.zeros_like(fg)
    scale = camera.width / 64
    for a, b, thickness in AVATAR_LIMBS:
        pa, pb = _pixel(points, layout, a), _pixel(points, layout, b)
        width = max(1, int(round(thickness * scale)))
        cv2.line(frame, pa, pb, shirt, thickness=width, lineType=cv2.LINE_8)
        cv2.line(fg, pa, pb, 1, thickness=width, lineType=cv2.LINE_8)
    head = _pixel(points, layout, 'nose')
    radius = max(2, int(round(camera.fx * HEAD_RADIUS / DEPTH)))
    cv2.circle(frame, head, radius, SKIN, thickness=-1, lineType=cv2.LINE_8)
    cv2.circle(face, head, radius, 1, thickness=-1, lineType=cv2.LINE_8)
    fg = np.maximum(fg, face)
    for eye in ('right_eye', 'left_eye'):
        cv2.circle(frame, _pixel(points, layout, eye), max(1, radius // 4), (40, 40, 40), thickness=-1)
    return frame, face, fg


def build_toy_dataset(root, frame_count=8, size=64, seed=0):
    """Writes frames/, face_masks/, fg_masks/, joints.txt, joints.jsonl and camera.txt under root."""
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    print(f"[{time.ctime()}] DATASET: Building {frame_count}-frame toy dataset at {root} ({size}x{size}).")
    rng = np.random.default_rng(seed)
    layout = load_layout()
    camera = toy_camera(size)
    shirt = tuple(int(c) for c in rng.integers(40, 220, size=3))
    offset = float(rng.uniform(0, 2 * math.pi))
    for sub in (FRAMES_DIR, FACE_MASKS_DIR, FG_MASKS_DIR):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    sequence = []
    with open(os.path.join(root, LABELED_JOINTS_FILE), 'w', encoding='utf-8') as labeled:
        for i in range(frame_count):
            pose = toy_pose(offset + 2 * math.pi * i / frame_count)
            labeled.write(json.dumps({'frame_index': i, 'joints': {k: list(v) for k, v in pose.items()}}) + "\n")
            joints = map_to_openpose_config(pose, frame_index=i, layout=layout)
            sequence.append(joints)
            frame, face, fg = render_avatar(joints, camera, layout, shirt)
            write_png(os.path.join(root, FRAMES_DIR, frame_name(i)), frame)
            write_mask(os.path.join(root, FACE_MASKS_DIR, frame_name(i)), face)
            write_mask(os.path.join(root, FG_MASKS_DIR, frame_name(i)), fg)
    save_joint_sequence(sequence, os.path.join(root, JOINTS_FILE))
    save_camera(camera, os.path.join(root, CAMERA_FILE))
    print(f"[{time.ctime()}] DATASET: Toy dataset written to {root}.")
    return root
