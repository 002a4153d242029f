# anchorcast/anchorcast_core/sampler.py
"""
Deterministic video sampling: DDIM (eta = 0) per non-overlapping window,
all-frames self-attention inside a window, one noise draw reused by every window.
"""
import math
import time
import numpy as np
import torch
from joblib import Parallel, delayed
from .exceptions import InputValidationError, ScheduleError, ShapeMismatchError
from .networks import TEMPORAL_MODES, skeleton_to_tensor
from .schedule import build_schedule
from .utils import image_to_tensor, mask_to_tensor, tensor_to_image

NOISE_MODES = ('shared', 'per-slot', 'independent')


class SamplerConfig:
    def __init__(self, steps=50, window_size=4, seed=0, temporal_mode='all-frames', noise_mode='shared', n_jobs=1):
        self.steps = int(steps)
        self.window_size = int(window_size)
        self.seed = int(seed)
        self.temporal_mode = temporal_mode
        self.noise_mode = noise_mode
        self.n_jobs = int(n_jobs)
        self.guidance = None
        if self.steps < 1:
            raise InputValidationError(f"sampler needs steps >= 1, got {steps}")
        if self.window_size < 1:
            raise InputValidationError(f"window size must be >= 1, got {window_size}")
        if temporal_mode not in TEMPORAL_MODES:
            raise InputValidationError(f"temporal mode must be one of {TEMPORAL_MODES}, got '{temporal_mode}'")
        if noise_mode not in NOISE_MODES:
            raise InputValidationError(f"noise mode must be one of {NOISE_MODES}, got '{noise_mode}'")
        if self.n_jobs < 1:
            raise InputValidationError(f"n_jobs must be >= 1, got {n_jobs}")

    def as_dict(self):
        return {k: getattr(self, k) for k in
                ('steps', 'window_size', 'seed', 'temporal_mode', 'noise_mode', 'n_jobs', 'guidance')}

    def __repr__(self):
        return f"SamplerConfig({self.as_dict()})"


class WindowBatch:
    def __init__(self, skeletons, bank, latents):
        if skeletons.ndim != 4 or latents.ndim != 4:
            raise ShapeMismatchError("window skeletons and latents must be (f, C, H, W)", layer='window')
        if skeletons.shape[0] != latents.shape[0] or skeletons.shape[-2:] != latents.shape[-2:]:
            raise ShapeMismatchError(f"skeletons {tuple(skeletons.shape)} vs latents {tuple(latents.shape)}",
                                     layer='window')
        self.skeletons = skeletons
        self.bank = bank
        self.latents = latents

    @property
    def size(self):
        return self.latents.shape[0]


def init_window_noise(shape, seed):
    generator = torch.Generator().manual_seed(int(seed))
    return torch.randn(tuple(shape), generator=generator)


def ddim_timesteps(sched, steps):
    """Descending steps spread over [0, T) and their successors, ending at -1 (clean)."""
    if steps < 1 or steps > sched.num_steps:
        raise ScheduleError(f"{steps} sampling steps for a {sched.num_steps}-step schedule")
    ts = np.round(np.linspace(sched.num_steps - 1, 0, steps)).astype(int).tolist()
    return list(zip(ts, ts[1:] + [-1]))


def ddim_update(x_t, eps_pred, alpha_bar_t, alpha_bar_prev):
    x0_hat = (x_t - math.sqrt(1.0 - alpha_bar_t) * eps_pred) / math.sqrt(alpha_bar_t)
    return math.sqrt(alpha_bar_prev) * x0_hat + math.sqrt(1.0 - alpha_bar_prev) * eps_pred


def ddim_step(x_t, eps_pred, t, t_prev, sched):
    if not (t > t_prev >= -1) or t >= sched.num_steps:
        raise ScheduleError(f"DDIM step needs T > t > t_prev >= -1, got t={t}, t_prev={t_prev}")
    if x_t.shape != eps_pred.shape:
        raise ShapeMismatchError(f"x_t {tuple(x_t.shape)} vs eps {tuple(eps_pred.shape)}", layer='ddim')
    return ddim_update(x_t, eps_pred, sched.alpha_bar(t), sched.alpha_bar(t_prev))


def sample_window(batch, model, sched, cfg):
    """Denoises the f frames of one window jointly; returns f uint8 RGB frames. Read-only on the model."""
    with torch.no_grad():
        x = batch.latents.clone()
        f = batch.size
        for t, t_prev in ddim_timesteps(sched, cfg.steps):
            tt = torch.full((f,), t, dtype=torch.long)
            ctrl = model.controlnet_forward(batch.skeletons, x, tt)
            eps = model.backbone_forward(x, tt, batch.bank, ctrl, temporal_mode=cfg.temporal_mode)
            x = ddim_step(x, eps, t, t_prev, sched)
        decoded = model.autoencoder.decode(x)
    return [tensor_to_image(frame) for frame in decoded]


def partition_windows(length, window_size):
    """Consecutive non-overlapping [start, stop) ranges; the last may be short."""
    if length < 1:
        raise InputValidationError("cannot partition an empty sequence")
    return [(start, min(start + window_size, length)) for start in range(0, length, window_size)]


def _window_noise(windows, shape, cfg):
    """Every draw happens here, before any window is dispatched."""
    channels, height, width = shape
    if cfg.noise_mode == 'shared':
        eps = init_window_noise((1, channels, height, width), cfg.seed)
        return [eps.expand(stop - start, -1, -1, -1).clone() for start, stop in windows]
    if cfg.noise_mode == 'per-slot':
        eps = init_window_noise((cfg.window_size, channels, height, width), cfg.seed)
        return [eps[:stop - start].clone() for start, stop in windows]
    generator = torch.Generator().manual_seed(cfg.seed)
    return [torch.randn((stop - start, channels, height, width), generator=generator) for start, stop in windows]


def generate_video(skeleton_sequence, ref_image, face_mask, model, cfg, sched=None):
    if len(skeleton_sequence) == 0:
        raise InputValidationError("skeleton sequence is empty")
    sched = sched or build_schedule(1000)
    skeletons = skeleton_to_tensor(list(skeleton_sequence))
    height, width = model.config.image_size
    if tuple(skeletons.shape[-2:]) != (height, width):
        raise ShapeMismatchError(f"skeleton maps are {tuple(skeletons.shape[-2:])}, model expects "
                                 f"{(height, width)}", layer='control')
    ref = ref_image if torch.is_tensor(ref_image) else image_to_tensor(ref_image)
    mask = face_mask if torch.is_tensor(face_mask) else mask_to_tensor(face_mask)
    with torch.no_grad():
        bank = model.reference_forward(ref.unsqueeze(0), mask.unsqueeze(0))

    windows = partition_windows(len(skeleton_sequence), cfg.window_size)
    noise = _window_noise(windows, (3, height, width), cfg)
    batches = [WindowBatch(skeletons[start:stop], bank, model.autoencoder.encode(eps))
               for (start, stop), eps in zip(windows, noise)]
    print(f"[{time.ctime()}] SAMPLER: {len(skeleton_sequence)} frames in {len(windows)} windows "
          f"({cfg.temporal_mode}, {cfg.noise_mode} noise, {cfg.steps} steps).")
    if cfg.n_jobs > 1 and len(batches) > 1:
        results = Parallel(n_jobs=cfg.n_jobs, prefer='threads')(
            delayed(sample_window)(batch, model, sched, cfg) for batch in batches)
    else:
        results = [sample_window(batch, model, sched, cfg) for batch in batches]
    frames = [frame for window in results for frame in window]
    print(f"[{time.ctime()}] SAMPLER: Generated {len(frames)} frames.")
    return frames


def boundary_difference(frames, window_size):
    """Mean absolute pixel change across each window boundary (last frame -> next window's first)."""
    windows = partition_windows(len(frames), window_size)
    if len(windows) < 2:
        raise InputValidationError("boundary difference needs at least two windows")
    diffs = [np.abs(np.asarray(frames[stop - 1], dtype=np.float64) - np.asarray(frames[stop], dtype=np.float64)).mean()
             for _, stop in windows[:-1]]
    return float(np.mean(diffs))
