# anchorcast/anchorcast_core/utils.py
import os
import json
import hashlib
import time
import numpy as np
import torch
from django.conf import settings as django_settings

BASE_DIR_PROJECT_ROOT = str(django_settings.BASE_DIR)
DATA_DIR = os.path.join(BASE_DIR_PROJECT_ROOT, 'data')
LAYOUT_FILE = os.path.join(DATA_DIR, 'openpose135_layout.txt')
LIMBS_FILE = os.path.join(DATA_DIR, 'openpose135_limbs.txt')
TOY_DATASET_DIR = os.path.join(DATA_DIR, 'toy_dataset')


def output_dir():
    """Root for run outputs; ANCHORCAST_OUTPUT_DIR overrides it."""
    path = str(django_settings.ANCHORCAST_OUTPUT_DIR)
    try:
        os.makedirs(path, exist_ok=True)
    except Exception as e:
        print(f"[{time.ctime()}] Warning (anchorcast_core.utils): Could not create output dir {path}: {e}")
    return path


NUM_JOINTS = 135
PIXEL_MAX = 255.0


def round_half_away(values):
    """Rounds half away from zero (numpy's rint rounds half to even)."""
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) + 0.5)


def image_to_tensor(pixels):
    """uint8 (H, W, 3) RGB -> float32 (3, H, W) in [-1, 1]."""
    arr = np.asarray(pixels, dtype=np.float32)
    return torch.from_numpy(arr.transpose(2, 0, 1) / 127.5 - 1.0).contiguous()


def tensor_to_image(tensor):
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3); values outside are clamped."""
    arr = tensor.detach().to(torch.float64).clamp(-1.0, 1.0).cpu().numpy()
    arr = round_half_away((arr + 1.0) * 127.5)
    return np.ascontiguousarray(arr.transpose(1, 2, 0).astype(np.uint8))


def mask_to_tensor(mask):
    """(H, W) mask, nonzero = inside -> float32 (1, H, W) of 0/1."""
    arr = (np.asarray(mask) > 0).astype(np.float32)
    return torch.from_numpy(arr[None])


def sha256_file(path):
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_json(obj):
    payload = json.dumps(obj, sort_keys=True, separators=(',', ':')).encode('utf-8')
    return hashlib.sha256(payload).hexdigest()


def write_json_atomic(path, obj):
    tmp_path = f"{path}.tmp"
    with open(tmp_path, 'w', encoding='utf-8') as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp_path, path)
