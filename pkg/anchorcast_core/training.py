# anchorcast/anchorcast_core/training.py
"""
Single-stage fine-tuning: only the ReferenceNet (its magnification gains
included) learns; backbone, ControlNet and the null context stay frozen.
"""
import os
import time
import hashlib
import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F
from threadpoolctl import threadpool_limits
from .checkpoint import save_checkpoint
from .data_manager import read_png, read_mask, LossLog
from .exceptions import (InputValidationError, TrainingDivergedError, FreezeViolationError)
from .networks import ModelConfig, build_model, skeleton_to_tensor
from .schedule import build_schedule, q_sample
from .skeleton import load_joint_sequence, load_camera, render_skeleton_sequence
from .utils import image_to_tensor, mask_to_tensor

LOSS_FILE = 'loss.txt'
CHECKPOINT_DIR = 'checkpoints'


class TrainConfig:
    def __init__(self, learning_rate=1e-4, batch_size=1, total_steps=1000, seed=0, schedule_steps=1000,
                 schedule_kind='linear', checkpoint_every=500, base_steps=0, base_learning_rate=1e-4):
        self.learning_rate = float(learning_rate)
        self.batch_size = int(batch_size)
        self.total_steps = int(total_steps)
        self.seed = int(seed)
        self.schedule_steps = int(schedule_steps)
        self.schedule_kind = schedule_kind
        self.checkpoint_every = int(checkpoint_every)
        self.base_steps = int(base_steps)
        self.base_learning_rate = float(base_learning_rate)
        self.loss = 'mse'
        if not self.learning_rate > 0 or not self.base_learning_rate > 0:
            raise InputValidationError(f"learning rate must be > 0, got {learning_rate}")
        if self.batch_size < 1:
            raise InputValidationError(f"batch size must be >= 1, got {batch_size}")
        if self.total_steps < 0 or self.base_steps < 0:
            raise InputValidationError("step counts must be >= 0")
        if self.checkpoint_every < 1:
            raise InputValidationError(f"checkpoint cadence must be >= 1, got {checkpoint_every}")

    def as_dict(self):
        return {k: getattr(self, k) for k in (
            'learning_rate', 'batch_size', 'total_steps', 'seed', 'schedule_steps', 'schedule_kind',
            'checkpoint_every', 'base_steps', 'base_learning_rate', 'loss')}

    def __repr__(self):
        return f"TrainConfig({self.as_dict()})"


class GestureDataset:
    """In-memory frames (3, H, W) in [-1, 1], face masks (1, H, W) and skeleton maps (3, H, W) in [0, 1]."""

    def __init__(self, frames, face_masks, skeletons):
        if not (len(frames) == len(face_masks) == len(skeletons)):
            raise InputValidationError(
                f"{len(frames)} frames, {len(face_masks)} masks and {len(skeletons)} skeleton maps")
        sizes = {tuple(t.shape[-2:]) for t in list(frames) + list(face_masks) + list(skeletons)}
        if len(sizes) > 1:
            raise InputValidationError(f"dataset mixes resolutions {sorted(sizes)}")
        self.frames = list(frames)
        self.face_masks = list(face_masks)
        self.skeletons = list(skeletons)

    @classmethod
    def from_manifest(cls, manifest, line_width=1, point_radius=1):
        camera = load_camera(manifest.camera_file)
        maps = render_skeleton_sequence(load_joint_sequence(manifest.joints_file), camera,
                                        line_width=line_width, point_radius=point_radius)
        frames = [image_to_tensor(read_png(manifest.frame_path(i))) for i in range(manifest.frame_count)]
        masks = [mask_to_tensor(read_mask(manifest.face_mask_path(i))) for i in range(manifest.frame_count)]
        skeletons = [skeleton_to_tensor(m)[0] for m in maps]
        print(f"[{time.ctime()}] TRAINER: Loaded {len(frames)} frames from {manifest.root}.")
        return cls(frames, masks, skeletons)

    @property
    def resolution(self):
        return tuple(self.frames[0].shape[-2:]) if self.frames else None

    def __len__(self):
        return len(self.frames)


class TrainingTriplet:
    def __init__(self, skeleton, target, reference, reference_mask, target_index, reference_index):
        self.skeleton = skeleton
        self.target = target
        self.reference = reference
        self.reference_mask = reference_mask
        self.target_index = target_index
        self.reference_index = reference_index

    def __repr__(self):
        return f"TrainingTriplet(target={self.target_index}, reference={self.reference_index})"


def sample_training_triplet(dataset, rng):
    """Target uniform over frames; reference uniform over the other frames (itself only for 1 frame)."""
    n = len(dataset)
    if n == 0:
        raise InputValidationError("cannot sample a triplet from an empty dataset")
    target = int(rng.integers(n))
    if n == 1:
        reference = target
    else:
        reference = int(rng.integers(n - 1))
        if reference >= target:
            reference += 1
    return TrainingTriplet(dataset.skeletons[target], dataset.frames[target], dataset.frames[reference],
                           dataset.face_masks[reference], target, reference)


def _collate(triplets):
    if isinstance(triplets, TrainingTriplet):
        triplets = [triplets]
    return (torch.stack([t.skeleton for t in triplets]),
            torch.stack([t.target for t in triplets]),
            torch.stack([t.reference for t in triplets]),
            torch.stack([t.reference_mask for t in triplets]))


def parameter_norms(model):
    return {name: float(torch.linalg.vector_norm(torch.cat([p.detach().reshape(-1) for p in
                                                             getattr(model, name).parameters()])))
            for name in model.SUBMODULES}


def parameter_hashes(model):
    """SHA-256 per submodule over its parameters in registration order."""
    hashes = {}
    for name in model.SUBMODULES:
        digest = hashlib.sha256()
        for pname, p in getattr(model, name).named_parameters():
            digest.update(pname.encode('utf-8'))
            digest.update(p.detach().cpu().contiguous().numpy().tobytes())
        hashes[name] = digest.hexdigest()
    return hashes


def _noise_loss(model, sched, generator, skel, target, bank):
    t = torch.randint(0, sched.num_steps, (target.shape[0],), generator=generator)
    eps = torch.randn(target.shape, generator=generator, dtype=target.dtype)
    x_t = q_sample(target, t, eps, sched)
    ctrl = model.controlnet_forward(skel, x_t, t)
    eps_pred = model.backbone_forward(x_t, t, bank, ctrl)
    loss = F.mse_loss(eps_pred, eps)
    if not torch.isfinite(loss):
        raise TrainingDivergedError("non-finite loss", diagnostics={
            't': t.tolist(), 'loss': float(loss), 'parameter_norms': parameter_norms(model)})
    return loss


def train_step(triplets, model, sched, generator, optimizer):
    """One Adam step on the eps-MSE; returns (loss, optimizer)."""
    skel, target, reference, reference_mask = _collate(triplets)
    bank = model.reference_forward(reference, reference_mask)
    loss = _noise_loss(model, sched, generator, skel, target, bank)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach()), optimizer


def make_optimizer(model, learning_rate):
    return torch.optim.Adam(model.reference_net.parameters(), lr=learning_rate)


class FreezeReport:
    def __init__(self, entries, violations):
        self.entries = entries
        self.violations = violations

    @property
    def passed(self):
        return not self.violations

    @property
    def parameter_count(self):
        return sum(e['numel'] for e in self.entries)

    def counts_by_submodule(self):
        counts = {}
        for e in self.entries:
            counts[e['submodule']] = counts.get(e['submodule'], 0) + e['numel']
        return counts

    def raise_for_violations(self):
        if self.violations:
            raise FreezeViolationError("misflagged parameters", parameter_names=self.violations)

    def __repr__(self):
        state = "passed" if self.passed else f"{len(self.violations)} violations"
        return f"FreezeReport({len(self.entries)} tensors, {self.parameter_count} parameters, {state})"


def freeze_check(model):
    entries, violations = [], []
    for name, p in model.named_parameters():
        submodule = model.submodule_of(name)
        should_train = submodule in model.TRAINABLE
        entries.append({'name': name, 'submodule': submodule, 'trainable': p.requires_grad, 'numel': p.numel()})
        if p.requires_grad != should_train:
            violations.append(name)
    report = FreezeReport(entries, violations)
    print(f"[{time.ctime()}] TRAINER: {report}")
    return report


def pretrain_base(model, dataset, config, generator, rng):
    """
    Noise-prediction warm-up of backbone and ControlNet with an empty reference bank,
    then the ReferenceNet trunk is re-seeded from the backbone and the freeze restored.
    """
    if config.base_steps == 0:
        return []
    print(f"[{time.ctime()}] TRAINER: Base stage, {config.base_steps} steps.")
    for name in model.SUBMODULES:
        trainable = name in ('backbone', 'controlnet')
        for p in getattr(model, name).parameters():
            p.requires_grad_(trainable)
    params = list(model.backbone.parameters()) + list(model.controlnet.parameters())
    optimizer = torch.optim.Adam(params, lr=config.base_learning_rate)
    sched = sched_for(config)
    history = []
    for _ in range(config.base_steps):
        triplets = [sample_training_triplet(dataset, rng) for _ in range(config.batch_size)]
        skel, target, _, _ = _collate(triplets)
        loss = _noise_loss(model, sched, generator, skel, target, None)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))
    model.reference_net.load_state_dict(model.backbone.state_dict(), strict=False)
    model.apply_freeze()
    print(f"[{time.ctime()}] TRAINER: Base stage done, loss {history[0]:.4f} -> {history[-1]:.4f}.")
    return history


def sched_for(config):
    return build_schedule(config.schedule_steps, config.schedule_kind)


def checkpoint_path(output_dir, step):
    return os.path.join(output_dir, CHECKPOINT_DIR, f"step_{step:06d}.ckpt")


def _verify_checkpoint_invariants(model, frozen_hashes, step):
    now = parameter_hashes(model)
    changed = [name for name, digest in frozen_hashes.items() if now[name] != digest]
    if changed:
        raise FreezeViolationError(f"frozen submodules changed by step {step}", parameter_names=changed)
    gammas = [float(g) for g in model.reference_net.gammas()]
    if not all(g > 1.0 for g in gammas):
        raise TrainingDivergedError("magnification gain is not above 1", diagnostics={'step': step, 'gamma': gammas})


def fit(dataset, config, output_dir, model_config=None):
    """Trains and checkpoints at step 0, every `checkpoint_every` steps and at the end; returns the final path."""
    model_config = model_config or ModelConfig(image_size=dataset.resolution)
    if tuple(model_config.image_size) != tuple(dataset.resolution):
        raise InputValidationError(f"dataset resolution {dataset.resolution} != model size {model_config.image_size}")
    os.makedirs(output_dir, exist_ok=True)
    previous_threads = torch.get_num_threads()
    with threadpool_limits(limits=1):
        torch.set_num_threads(1)
        try:
            return _fit(dataset, config, output_dir, model_config)
        finally:
            torch.set_num_threads(previous_threads)


def _fit(dataset, config, output_dir, model_config):
    print(f"[{time.ctime()}] TRAINER: fit called with {config}.")
    model = build_model(model_config, seed=config.seed)
    generator = torch.Generator().manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    sched = sched_for(config)
    pretrain_base(model, dataset, config, generator, rng)
    freeze_check(model).raise_for_violations()
    frozen = {k: v for k, v in parameter_hashes(model).items() if k not in model.TRAINABLE}
    optimizer = make_optimizer(model, config.learning_rate)

    path = save_checkpoint(model, checkpoint_path(output_dir, 0), sched, step=0, seed=config.seed)
    with LossLog(os.path.join(output_dir, LOSS_FILE)) as log:
        for step in range(1, config.total_steps + 1):
            triplets = [sample_training_triplet(dataset, rng) for _ in range(config.batch_size)]
            loss, optimizer = train_step(triplets, model, sched, generator, optimizer)
            log.append(step, loss)
            if step % 100 == 0:
                print(f"[{time.ctime()}] TRAINER: step {step}/{config.total_steps} loss {loss:.5f}")
            if step % config.checkpoint_every == 0 or step == config.total_steps:
                _verify_checkpoint_invariants(model, frozen, step)
                path = save_checkpoint(model, checkpoint_path(output_dir, step), sched, step=step, seed=config.seed)
    print(f"[{time.ctime()}] TRAINER: Training complete, final checkpoint {path}.")
    return path


def load_loss_curve(path):
    if os.path.getsize(path) == 0:
        return pd.DataFrame({'step': pd.Series(dtype='int64'), 'loss': pd.Series(dtype='float64')})
    return pd.read_csv(path, sep=r'\s+', names=['step', 'loss'], comment='#')


def windowed_means(curve, window):
    """Mean loss over consecutive non-overlapping windows of `window` steps."""
    blocks = (curve['step'] - curve['step'].min()) // window
    return curve.groupby(blocks)['loss'].mean()
