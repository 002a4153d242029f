# anchorcast/anchorcast_core/schedule.py
import math
import numpy as np
import torch
from .exceptions import ScheduleError, ShapeMismatchError

LINEAR_BETA_START = 1e-4
LINEAR_BETA_END = 2e-2
COSINE_OFFSET = 8e-3
MAX_BETA = 0.999


class NoiseSchedule:
    """beta / alpha-bar tables in float64; alpha_bar[t] = prod_{s<=t} (1 - beta[s])."""

    def __init__(self, betas, kind='custom'):
        betas = np.asarray(betas, dtype=np.float64)
        if betas.ndim != 1 or betas.size < 1:
            raise ScheduleError("betas must be a non-empty 1-D table")
        if not np.all((betas > 0) & (betas < 1)):
            raise ScheduleError("every beta must lie in (0, 1)")
        self.kind = kind
        self.betas = betas
        self.alpha_bars = np.cumprod(1.0 - betas)

    @property
    def num_steps(self):
        return int(self.betas.size)

    def alpha_bar(self, t):
        """alpha_bar at step t, with t = -1 standing for the clean sample (1.0)."""
        if not -1 <= t < self.num_steps:
            raise ScheduleError(f"step {t} outside [-1, {self.num_steps})")
        return 1.0 if t < 0 else float(self.alpha_bars[t])

    def descriptor(self):
        return {'kind': self.kind, 'num_steps': self.num_steps}

    def __repr__(self):
        return f"NoiseSchedule(kind={self.kind}, T={self.num_steps})"


def build_schedule(T, kind='linear'):
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ScheduleError(f"schedule needs T >= 1, got {T}")
    if kind == 'linear':
        betas = np.linspace(LINEAR_BETA_START, LINEAR_BETA_END, T, dtype=np.float64)
    elif kind == 'cosine':
        steps = np.arange(T + 1, dtype=np.float64) / T
        f = np.cos((steps + COSINE_OFFSET) / (1 + COSINE_OFFSET) * math.pi / 2) ** 2
        betas = np.clip(1.0 - f[1:] / f[:-1], 1e-8, MAX_BETA)
    else:
        raise ScheduleError(f"unknown schedule kind '{kind}' (linear, cosine)")
    return NoiseSchedule(betas, kind=kind)


def q_sample(x0, t, eps, sched):
    """x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps. t is an int or a per-sample tensor."""
    if x0.shape != eps.shape:
        raise ShapeMismatchError(f"x0 {tuple(x0.shape)} and eps {tuple(eps.shape)} differ", layer='q_sample')
    if isinstance(t, torch.Tensor) and t.ndim == 1:
        if t.numel() != x0.shape[0]:
            raise ShapeMismatchError(f"{t.numel()} steps for a batch of {x0.shape[0]}", layer='q_sample')
        if (t < 0).any() or (t >= sched.num_steps).any():
            raise ScheduleError(f"steps outside [0, {sched.num_steps})")
        ab = torch.as_tensor(sched.alpha_bars, dtype=x0.dtype)[t].view(-1, *([1] * (x0.ndim - 1)))
        return ab.sqrt() * x0 + (1.0 - ab).sqrt() * eps
    t = int(t)
    if not 0 <= t < sched.num_steps:
        raise ScheduleError(f"step {t} outside [0, {sched.num_steps})")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
