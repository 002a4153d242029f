# anchorcast/anchorcast_core/checkpoint.py
"""
Single-file checkpoints.

Layout of the joblib archive (stable across versions):

    {"format": "anchorcast-checkpoint", "version": 1,
     "manifest": {"model_config": {...}, "model_config_hash": str,
                  "parameters": [{"name", "shape", "dtype"}, ...],
                  "schedule": {"kind", "num_steps"}, "step": int, "seed": int},
     "tensors": {name: numpy array}}

Nothing time-dependent goes into the archive, so identical training yields
identical bytes.
"""
import os
import time
import joblib
import numpy as np
import torch
from .exceptions import CheckpointError
from .networks import ModelConfig, build_model
from .utils import sha256_file

CHECKPOINT_FORMAT = "anchorcast-checkpoint"
CHECKPOINT_VERSION = 1


def _state_arrays(model):
    return {name: tensor.detach().cpu().numpy().copy() for name, tensor in model.state_dict().items()}


def save_checkpoint(model, path, schedule=None, step=0, seed=0):
    tensors = _state_arrays(model)
    manifest = {
        'model_config': model.config.as_dict(),
        'model_config_hash': model.config.config_hash(),
        'parameters': [{'name': n, 'shape': list(a.shape), 'dtype': str(a.dtype)} for n, a in tensors.items()],
        'schedule': schedule.descriptor() if schedule is not None else None,
        'step': int(step),
        'seed': int(seed),
    }
    archive = {'format': CHECKPOINT_FORMAT, 'version': CHECKPOINT_VERSION, 'manifest': manifest, 'tensors': tensors}
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    tmp_path = f"{path}.tmp"
    try:
        joblib.dump(archive, tmp_path)
        os.replace(tmp_path, path)
    except OSError as e:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise CheckpointError(f"could not write checkpoint {path}: {e}") from e
    print(f"[{time.ctime()}] CKPT: Saved step {step} to {path}.")
    return path


def read_checkpoint(path):
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        archive = joblib.load(path)
    except Exception as e:
        raise CheckpointError(f"could not read checkpoint {path}: {e}") from e
    if not isinstance(archive, dict) or archive.get('format') != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not an anchorcast checkpoint")
    if archive.get('version') != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {archive.get('version')}")
    return archive


def load_checkpoint(path):
    """Rebuilds the model from the manifest and loads its tensors. Returns (model, manifest)."""
    archive = read_checkpoint(path)
    manifest = archive['manifest']
    config = ModelConfig.from_dict(manifest['model_config'])
    if config.config_hash() != manifest['model_config_hash']:
        raise CheckpointError(f"{path}: model config hash does not match its manifest")
    model = build_model(config, seed=manifest.get('seed', 0))
    expected = model.state_dict()
    tensors = archive['tensors']
    for name in expected:
        if name not in tensors:
            raise CheckpointError(f"{path}: missing parameter '{name}'")
    for name, array in tensors.items():
        if name not in expected:
            raise CheckpointError(f"{path}: unexpected parameter '{name}'")
        if tuple(array.shape) != tuple(expected[name].shape):
            raise CheckpointError(f"{path}: parameter '{name}' has shape {tuple(array.shape)}, "
                                  f"model expects {tuple(expected[name].shape)}")
    model.load_state_dict({name: torch.from_numpy(np.array(a)) for name, a in tensors.items()})
    model.apply_freeze()
    print(f"[{time.ctime()}] CKPT: Loaded {path} (step {manifest['step']}).")
    return model, manifest


def checkpoint_hash(path):
    return sha256_file(path)
