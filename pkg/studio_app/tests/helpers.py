# anchorcast/studio_app/tests/helpers.py
import numpy as np
import torch
from anchorcast_core.networks import ModelConfig, build_model
from anchorcast_core.training import GestureDataset


def tiny_config(**overrides):
    params = dict(image_size=16, channels=(8, 16), attention_levels=(1,), heads=2, context_dim=8,
                  window_size=2, groups=4)
    params.update(overrides)
    return ModelConfig(**params)


def tiny_model(seed=0, **overrides):
    return build_model(tiny_config(**overrides), seed=seed)


def randomize_zero_convs(model, seed=1):
    """Gives the ControlNet nonzero output projections, as a trained checkpoint would have."""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for conv in model.controlnet.zero_convs:
            conv.weight.copy_(0.1 * torch.randn(conv.weight.shape, generator=generator))
        conv = model.controlnet.hint.zero_conv
        conv.weight.copy_(0.1 * torch.randn(conv.weight.shape, generator=generator))


def random_dataset(frames=4, size=16, seed=0):
    rng = np.random.default_rng(seed)
    images = [torch.from_numpy(rng.uniform(-1, 1, (3, size, size)).astype(np.float32)) for _ in range(frames)]
    masks = []
    for _ in range(frames):
        mask = np.zeros((1, size, size), dtype=np.float32)
        mask[:, : size // 2, size // 4: 3 * size // 4] = 1.0
        masks.append(torch.from_numpy(mask))
    skeletons = [torch.from_numpy((rng.random((3, size, size)) > 0.9).astype(np.float32)) for _ in range(frames)]
    return GestureDataset(images, masks, skeletons)


def random_skeleton_pixels(size=16, seed=0):
    rng = np.random.default_rng(seed)
    return (rng.random((size, size, 3)) > 0.8).astype(np.uint8) * 255


def mid_gray_reference(size=16, seed=0):
    rng = np.random.default_rng(seed)
    image = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
    mask = np.zeros((size, size), dtype=np.uint8)
    mask[: size // 2, size // 4: 3 * size // 4] = 1
    return image, mask
