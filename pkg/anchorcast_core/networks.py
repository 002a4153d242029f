# anchorcast/anchorcast_core/networks.py
"""
Toy-scale denoising stack: a pixel-space UNet backbone, a same-topology
ReferenceNet with Face Enhancement Attention, a Pose ControlNet and the frozen
null text context, assembled in GestureVideoModel.
"""
import math
import time
import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from .attention import (Attention, MagnificationParam, face_enhance_attention,
                        concat_reference_attention, all_frames_attention)
from .exceptions import ShapeMismatchError, InputValidationError
from .utils import sha256_json

TEMPORAL_MODES = ('per-frame', 'all-frames')


class ModelConfig:
    def __init__(self, image_size=64, channels=(32, 64, 64), attention_levels=(2,), heads=4,
                 context_dim=32, window_size=4, groups=8, face_enhance=True):
        if isinstance(image_size, (int, np.integer)):
            image_size = (image_size, image_size)
        self.image_size = tuple(int(s) for s in image_size)
        self.channels = tuple(int(c) for c in channels)
        self.attention_levels = tuple(sorted(int(a) for a in attention_levels))
        self.heads = int(heads)
        self.context_dim = int(context_dim)
        self.window_size = int(window_size)
        self.groups = int(groups)
        self.face_enhance = bool(face_enhance)
        self._validate()

    def _validate(self):
        h, w = self.image_size
        factor = 2 ** (self.levels - 1)
        if self.levels < 1:
            raise InputValidationError("model needs at least one level")
        if h % factor or w % factor:
            raise InputValidationError(f"image size {h}x{w} must be divisible by 2^(levels-1) = {factor}")
        if self.window_size < 1:
            raise InputValidationError(f"window size must be >= 1, got {self.window_size}")
        for c in self.channels:
            if c % self.groups:
                raise InputValidationError(f"{c} channels do not split into {self.groups} norm groups")
        for level in self.attention_levels:
            if not 0 <= level < self.levels:
                raise InputValidationError(f"attention level {level} outside [0, {self.levels})")
            if self.channels[level] % self.heads:
                raise InputValidationError(
                    f"level {level} width {self.channels[level]} does not split into {self.heads} heads")

    @property
    def levels(self):
        return len(self.channels)

    def level_size(self, level):
        return self.image_size[0] >> level, self.image_size[1] >> level

    def attention_layer_levels(self):
        """Resolution level of each self-attention layer, in forward order (down, mid, up)."""
        deepest = self.levels - 1
        return list(self.attention_levels) + [deepest] + list(reversed(self.attention_levels))

    @property
    def tokens_per_attention_layer(self):
        return [self.level_size(l)[0] * self.level_size(l)[1] for l in self.attention_layer_levels()]

    def as_dict(self):
        return {
            'image_size': list(self.image_size),
            'channels': list(self.channels),
            'attention_levels': list(self.attention_levels),
            'heads': self.heads,
            'context_dim': self.context_dim,
            'window_size': self.window_size,
            'groups': self.groups,
            'face_enhance': self.face_enhance,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data)

    def config_hash(self):
        return sha256_json(self.as_dict())

    def __repr__(self):
        return f"ModelConfig({self.as_dict()})"


def timestep_embedding(t, dim, dtype=torch.float32):
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / half)
    args = t.to(torch.float64)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = F.pad(emb, (0, 1))
    return emb.to(dtype)


class TimestepEmbedding(nn.Module):
    def __init__(self, base_dim, embed_dim):
        super().__init__()
        self.base_dim = base_dim
        self.linear_1 = nn.Linear(base_dim, embed_dim)
        self.linear_2 = nn.Linear(embed_dim, embed_dim)

    def forward(self, t, dtype):
        emb = timestep_embedding(t, self.base_dim, dtype)
        return self.linear_2(F.silu(self.linear_1(emb)))


class ResBlock(nn.Module):
    def __init__(self, in_channels, out_channels, temb_dim, groups):
        super().__init__()
        self.norm_1 = nn.GroupNorm(groups, in_channels)
        self.conv_1 = nn.Conv2d(in_channels, out_channels, 3, padding=1)
        self.time_proj = nn.Linear(temb_dim, out_channels)
        self.norm_2 = nn.GroupNorm(groups, out_channels)
        self.conv_2 = nn.Conv2d(out_channels, out_channels, 3, padding=1)
        self.skip = nn.Identity() if in_channels == out_channels else nn.Conv2d(in_channels, out_channels, 1)

    def forward(self, x, temb):
        h = self.conv_1(F.silu(self.norm_1(x)))
        h = h + self.time_proj(F.silu(temb))[:, :, None, None]
        h = self.conv_2(F.silu(self.norm_2(h)))
        return h + self.skip(x)


class TransformerBlock(nn.Module):
    """Self-attention (reference-aware), cross-attention against the text context, feed-forward."""

    def __init__(self, channels, context_dim, heads):
        super().__init__()
        self.norm_1 = nn.LayerNorm(channels)
        self.attn_1 = Attention(channels, heads=heads)
        self.norm_2 = nn.LayerNorm(channels)
        self.attn_2 = Attention(channels, context_dim, heads=heads)
        self.norm_3 = nn.LayerNorm(channels)
        self.ff = nn.Sequential(nn.Linear(channels, 4 * channels), nn.GELU(), nn.Linear(4 * channels, channels))

    def forward(self, x, context, ref_tokens=None, face_flags=None, gamma=None, temporal=False):
        """Returns the block output and the tokens right after self-attention."""
        b, c, h, w = x.shape
        tokens = x.flatten(2).transpose(1, 2)
        normed = self.norm_1(tokens)
        if gamma is not None:
            attn_out = face_enhance_attention(normed, face_flags, gamma, self.attn_1)
        else:
            # LayerNorm is token-wise, so normalising the reference separately equals normalising the concat.
            ref = None if ref_tokens is None or ref_tokens.shape[1] == 0 else self.norm_1(ref_tokens)
            if temporal:
                attn_out = all_frames_attention(normed, ref, self.attn_1)
            else:
                attn_out = concat_reference_attention(normed, ref, self.attn_1)
        tokens = tokens + attn_out
        post_attention = tokens
        tokens = tokens + self.attn_2(self.norm_2(tokens), context.expand(b, -1, -1))
        tokens = tokens + self.ff(self.norm_3(tokens))
        return tokens.transpose(1, 2).reshape(b, c, h, w), post_attention


class Downsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, stride=2, padding=1)

    def forward(self, x):
        return self.conv(x)


class Upsample(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x):
        return self.conv(F.interpolate(x, scale_factor=2, mode='nearest'))


class UNetLevel(nn.Module):
    def __init__(self, in_channels, out_channels, temb_dim, config, attention, resample=None):
        super().__init__()
        self.res = ResBlock(in_channels, out_channels, temb_dim, config.groups)
        self.attn = TransformerBlock(out_channels, config.context_dim, config.heads) if attention else None
        self.resample = resample


class FeatureBank:
    """Per-self-attention-layer reference tokens (batch, h*w, c) and face flags (batch, h*w)."""

    def __init__(self, tokens, face_flags):
        if len(tokens) != len(face_flags):
            raise ShapeMismatchError(f"{len(tokens)} token layers but {len(face_flags)} flag layers")
        for i, (tok, flags) in enumerate(zip(tokens, face_flags)):
            if tok.ndim != 3 or tuple(flags.shape) != tuple(tok.shape[:2]):
                raise ShapeMismatchError(
                    f"tokens {tuple(tok.shape)} vs flags {tuple(flags.shape)}", layer=f"bank layer {i}")
        self.tokens = list(tokens)
        self.face_flags = list(face_flags)

    @property
    def layer_count(self):
        return len(self.tokens)

    @classmethod
    def empty(cls, config, batch=1, dtype=torch.float32):
        widths = [config.channels[l] for l in config.attention_layer_levels()]
        return cls([torch.zeros(batch, 0, c, dtype=dtype) for c in widths],
                   [torch.zeros(batch, 0, dtype=torch.bool) for _ in widths])

    def __repr__(self):
        return f"FeatureBank(layers={self.layer_count}, shapes={[tuple(t.shape) for t in self.tokens]})"


class ControlResiduals:
    """One residual per decoder block, shaped like that block's input latent."""

    def __init__(self, residuals):
        self.residuals = list(residuals)

    @classmethod
    def zeros(cls, shapes, dtype=torch.float32):
        return cls([torch.zeros(s, dtype=dtype) for s in shapes])

    def __len__(self):
        return len(self.residuals)

    def __getitem__(self, index):
        return self.residuals[index]

    def __repr__(self):
        return f"ControlResiduals({[tuple(r.shape) for r in self.residuals]})"


class NullTextEmbedding(nn.Module):
    """The empty-text context: one all-zero token, never trained."""

    def __init__(self, context_dim):
        super().__init__()
        self.context = nn.Parameter(torch.zeros(1, 1, context_dim), requires_grad=False)

    def forward(self):
        return self.context


class DenoisingUNet(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        ch = config.channels
        temb_dim = 4 * ch[0]
        self.time_embed = TimestepEmbedding(ch[0], temb_dim)
        self.conv_in = nn.Conv2d(3, ch[0], 3, padding=1)

        self.down = nn.ModuleList()
        in_ch = ch[0]
        for level, out_ch in enumerate(ch):
            resample = Downsample(out_ch) if level < config.levels - 1 else None
            self.down.append(UNetLevel(in_ch, out_ch, temb_dim, config, level in config.attention_levels, resample))
            in_ch = out_ch

        self.mid_res_1 = ResBlock(ch[-1], ch[-1], temb_dim, config.groups)
        self.mid_attn = TransformerBlock(ch[-1], config.context_dim, config.heads)
        self.mid_res_2 = ResBlock(ch[-1], ch[-1], temb_dim, config.groups)

        self.up = nn.ModuleList()
        for level in reversed(range(config.levels)):
            resample = Upsample(ch[level]) if level > 0 else None
            self.up.append(UNetLevel(self.decoder_input_channels(level) + ch[level], ch[level], temb_dim,
                                     config, level in config.attention_levels, resample))

        self.out_norm = nn.GroupNorm(config.groups, ch[0])
        self.out_conv = nn.Conv2d(ch[0], 3, 3, padding=1)

    def decoder_input_channels(self, level):
        ch = self.config.channels
        return ch[-1] if level == self.config.levels - 1 else ch[level + 1]

    def decoder_input_shapes(self, batch):
        """Input-latent shape of each decoder block, in forward order."""
        shapes = []
        for level in reversed(range(self.config.levels)):
            h, w = self.config.level_size(level)
            shapes.append((batch, self.decoder_input_channels(level), h, w))
        return shapes

    def attention_blocks(self):
        blocks = [lvl.attn for lvl in self.down if lvl.attn is not None]
        blocks.append(self.mid_attn)
        blocks.extend(lvl.attn for lvl in self.up if lvl.attn is not None)
        return blocks

    def _attend(self, block, h, context, layer, bank, face_flags, temporal, recorded):
        ref = None if bank is None else bank.tokens[layer]
        flags = gamma = None
        magnification = getattr(self, 'magnification', None)
        if face_flags is not None and magnification is not None and self.config.face_enhance:
            flags, gamma = face_flags[layer], magnification[layer].gamma()
        h, post = block(h, context, ref_tokens=ref, face_flags=flags, gamma=gamma, temporal=temporal)
        if recorded is not None:
            recorded.append(post)
        return h

    def _check_inputs(self, x, bank, residuals):
        expected = self.config.image_size
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != expected:
            raise ShapeMismatchError(f"input {tuple(x.shape)} does not match (B, 3, {expected[0]}, {expected[1]})",
                                     layer='input')
        if bank is not None:
            widths = [self.config.channels[l] for l in self.config.attention_layer_levels()]
            if bank.layer_count != len(widths):
                raise ShapeMismatchError(f"bank has {bank.layer_count} layers, backbone has {len(widths)}",
                                         layer='bank')
            for i, (tok, width) in enumerate(zip(bank.tokens, widths)):
                if tok.shape[-1] != width:
                    raise ShapeMismatchError(f"token width {tok.shape[-1]} != {width}", layer=f"bank layer {i}")
        if residuals is not None:
            shapes = self.decoder_input_shapes(x.shape[0])
            if len(residuals) != len(shapes):
                raise ShapeMismatchError(f"{len(residuals)} residuals for {len(shapes)} decoder blocks",
                                         layer='control')
            for i, (res, shape) in enumerate(zip(residuals, shapes)):
                if tuple(res.shape) != shape:
                    raise ShapeMismatchError(f"residual {tuple(res.shape)} != block input {shape}",
                                             layer=f"decoder block {i}")

    def forward(self, x, t, context, bank=None, residuals=None, face_flags=None, temporal=False, record=False):
        self._check_inputs(x, bank, residuals)
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        elif t.ndim == 0:
            t = t.expand(x.shape[0])
        temb = self.time_embed(t, x.dtype)
        recorded = [] if record else None
        layer = 0

        h = self.conv_in(x)
        skips = []
        for level in self.down:
            h = level.res(h, temb)
            if level.attn is not None:
                h = self._attend(level.attn, h, context, layer, bank, face_flags, temporal, recorded)
                layer += 1
            skips.append(h)
            if level.resample is not None:
                h = level.resample(h)

        h = self.mid_res_1(h, temb)
        h = self._attend(self.mid_attn, h, context, layer, bank, face_flags, temporal, recorded)
        layer += 1
        h = self.mid_res_2(h, temb)

        for block_index, level in enumerate(self.up):
            if residuals is not None:
                h = h + residuals[block_index]
            h = torch.cat([h, skips.pop()], dim=1)
            h = level.res(h, temb)
            if level.attn is not None:
                h = self._attend(level.attn, h, context, layer, bank, face_flags, temporal, recorded)
                layer += 1
            if level.resample is not None:
                h = level.resample(h)

        out = self.out_conv(F.silu(self.out_norm(h)))
        return (out, recorded) if record else out


def face_flags_for_layers(face_mask, config):
    """Mask (B, 1, H, W) of 0/1 -> per-layer flags (B, h*w): cell coverage > 0.5."""
    flags = []
    for level in config.attention_layer_levels():
        factor = 2 ** level
        coverage = F.avg_pool2d(face_mask.to(torch.float64), kernel_size=factor, stride=factor)
        flags.append((coverage > 0.5).flatten(1))
    return flags


class ReferenceNet(DenoisingUNet):
    """Same topology as the backbone, plus one magnification gain per self-attention layer."""

    def __init__(self, config):
        super().__init__(config)
        self.magnification = nn.ModuleList(MagnificationParam() for _ in config.attention_layer_levels())

    def gammas(self):
        return [m.gamma() for m in self.magnification]

    def encode(self, ref_image, face_mask, context):
        if ref_image.ndim == 3:
            ref_image = ref_image.unsqueeze(0)
        if face_mask.ndim == 2:
            face_mask = face_mask[None, None]
        elif face_mask.ndim == 3:
            face_mask = face_mask.unsqueeze(1)
        if tuple(ref_image.shape[-2:]) != tuple(face_mask.shape[-2:]):
            raise ShapeMismatchError(f"reference {tuple(ref_image.shape[-2:])} and face mask "
                                     f"{tuple(face_mask.shape[-2:])} differ", layer='reference')
        flags = face_flags_for_layers(face_mask, self.config)
        t = torch.zeros(ref_image.shape[0], dtype=torch.long)
        _, tokens = self.forward(ref_image, t, context, face_flags=flags, record=True)
        return FeatureBank(tokens, flags)


class HintEncoder(nn.Module):
    """Skeleton map -> first-level features, ending in a zero-initialised conv."""

    def __init__(self, out_channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, padding=1), nn.SiLU(),
            nn.Conv2d(16, 16, 3, padding=1), nn.SiLU(),
        )
        self.zero_conv = zero_module(nn.Conv2d(16, out_channels, 3, padding=1))

    def forward(self, hint):
        return self.zero_conv(self.body(hint))


def zero_module(module):
    for p in module.parameters():
        nn.init.zeros_(p)
    return module


class PoseControlNet(nn.Module):
    """Trunk mirroring the backbone encoder; one zero-initialised projection per decoder block."""

    def __init__(self, config):
        super().__init__()
        self.config = config
        ch = config.channels
        temb_dim = 4 * ch[0]
        self.time_embed = TimestepEmbedding(ch[0], temb_dim)
        self.conv_in = nn.Conv2d(3, ch[0], 3, padding=1)
        self.hint = HintEncoder(ch[0])
        self.down = nn.ModuleList()
        in_ch = ch[0]
        for level, out_ch in enumerate(ch):
            resample = Downsample(out_ch) if level < config.levels - 1 else None
            self.down.append(UNetLevel(in_ch, out_ch, temb_dim, config, level in config.attention_levels, resample))
            in_ch = out_ch
        self.mid_res_1 = ResBlock(ch[-1], ch[-1], temb_dim, config.groups)
        self.mid_attn = TransformerBlock(ch[-1], config.context_dim, config.heads)
        self.mid_res_2 = ResBlock(ch[-1], ch[-1], temb_dim, config.groups)
        # Forward order of the decoder: deepest block first.
        self.zero_convs = nn.ModuleList()
        for level in reversed(range(config.levels)):
            out_ch = ch[-1] if level == config.levels - 1 else ch[level + 1]
            self.zero_convs.append(zero_module(nn.Conv2d(ch[level], out_ch, 1)))

    def copy_encoder_from(self, unet):
        own = self.state_dict()
        shared = {k: v for k, v in unet.state_dict().items() if k in own and not k.startswith('hint.')}
        self.load_state_dict(shared, strict=False)
        return len(shared)

    def forward(self, hint, x, t, context):
        if tuple(hint.shape[-2:]) != tuple(x.shape[-2:]):
            raise ShapeMismatchError(f"skeleton map {tuple(hint.shape[-2:])} and latent "
                                     f"{tuple(x.shape[-2:])} differ", layer='control')
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), int(t), dtype=torch.long)
        elif t.ndim == 0:
            t = t.expand(x.shape[0])
        temb = self.time_embed(t, x.dtype)
        h = self.conv_in(x) + self.hint(hint)
        features = []
        for level in self.down:
            h = level.res(h, temb)
            if level.attn is not None:
                h, _ = level.attn(h, context)
            features.append(h)
            if level.resample is not None:
                h = level.resample(h)
        h = self.mid_res_1(h, temb)
        h, _ = self.mid_attn(h, context)
        h = self.mid_res_2(h, temb)
        # Deepest decoder block reads the mid output; block for level l < L-1 reads encoder level l.
        sources = [h] + [features[level] for level in reversed(range(self.config.levels - 1))]
        return ControlResiduals([conv(src) for conv, src in zip(self.zero_convs, sources)])


def skeleton_to_tensor(skeletons):
    """SkeletonMap(s) or uint8 (H, W, 3) arrays -> float (B, 3, H, W) in [0, 1]."""
    if not isinstance(skeletons, (list, tuple)):
        skeletons = [skeletons]
    arrays = [np.asarray(getattr(s, 'pixels', s), dtype=np.float32) / 255.0 for s in skeletons]
    return torch.from_numpy(np.stack(arrays).transpose(0, 3, 1, 2)).contiguous()


class PixelAutoencoder(nn.Module):
    """Latent adapter slot: the toy model works in pixel space, so both maps are identities."""

    def encode(self, images):
        return images

    def decode(self, latents):
        return latents


class GestureVideoModel(nn.Module):
    SUBMODULES = ('backbone', 'reference_net', 'controlnet', 'null_text')
    TRAINABLE = ('reference_net',)

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.backbone = DenoisingUNet(config)
        self.reference_net = ReferenceNet(config)
        self.controlnet = PoseControlNet(config)
        self.null_text = NullTextEmbedding(config.context_dim)
        self.autoencoder = PixelAutoencoder()
        self.share_initialization()
        self.apply_freeze()

    def share_initialization(self):
        """ReferenceNet and ControlNet trunk start from the backbone's weights."""
        self.reference_net.load_state_dict(self.backbone.state_dict(), strict=False)
        copied = self.controlnet.copy_encoder_from(self.backbone)
        print(f"[{time.ctime()}] DIFFUSION: Shared backbone weights with ReferenceNet and "
              f"{copied} ControlNet tensors.")

    def apply_freeze(self):
        for name in self.SUBMODULES:
            trainable = name in self.TRAINABLE
            for p in getattr(self, name).parameters():
                p.requires_grad_(trainable)

    def submodule_of(self, parameter_name):
        return parameter_name.split('.', 1)[0]

    def reference_forward(self, ref_image, face_mask):
        return self.reference_net.encode(ref_image, face_mask, self.null_text())

    def controlnet_forward(self, skel, x_t, t):
        hint = skel if torch.is_tensor(skel) else skeleton_to_tensor(skel)
        if hint.ndim == 3:
            hint = hint.unsqueeze(0)
        hint = hint.to(x_t.dtype)
        if tuple(hint.shape[-2:]) != tuple(self.config.image_size):
            raise ShapeMismatchError(f"skeleton map {tuple(hint.shape[-2:])} != model size "
                                     f"{self.config.image_size}", layer='control')
        return self.controlnet(hint, x_t, t, self.null_text())

    def backbone_forward(self, x_t, t, bank=None, ctrl=None, null_ctx=None, temporal_mode='per-frame'):
        if temporal_mode not in TEMPORAL_MODES:
            raise InputValidationError(f"unknown temporal mode '{temporal_mode}'")
        context = self.null_text() if null_ctx is None else null_ctx
        if isinstance(null_ctx, NullTextEmbedding):
            context = null_ctx()
        residuals = None if ctrl is None else ctrl.residuals
        return self.backbone(x_t, t, context, bank=bank, residuals=residuals,
                             temporal=(temporal_mode == 'all-frames'))


def build_model(config, seed=0):
    """Deterministic construction: the same config and seed give identical parameters."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        model = GestureVideoModel(config)
    print(f"[{time.ctime()}] DIFFUSION: Built model {config.config_hash()[:12]} with "
          f"{sum(p.numel() for p in model.parameters())} parameters (seed {seed}).")
    return model
