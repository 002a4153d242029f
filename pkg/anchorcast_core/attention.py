# anchorcast/anchorcast_core/attention.py
"""
Attention primitives shared by the backbone, the ReferenceNet and the sampler.

Token arrays are (batch, tokens, channels). Every function takes an optional
`attn` module; without one it uses single-head attention with identity
projections, which keeps the math checkable by hand.
"""
import torch
import torch.nn as nn
import torch.nn.functional as F
from .exceptions import ShapeMismatchError

MAGNIFICATION_INIT = -4.0


class Attention(nn.Module):
    def __init__(self, query_dim, context_dim=None, heads=1, identity=False):
        super().__init__()
        context_dim = context_dim or query_dim
        if query_dim % heads:
            raise ShapeMismatchError(f"{query_dim} channels do not split into {heads} heads")
        self.heads = heads
        self.scale = (query_dim // heads) ** -0.5
        if identity:
            if context_dim != query_dim:
                raise ShapeMismatchError("identity projections need equal query/context widths")
            self.to_q = self.to_k = self.to_v = self.to_out = nn.Identity()
        else:
            self.to_q = nn.Linear(query_dim, query_dim, bias=False)
            self.to_k = nn.Linear(context_dim, query_dim, bias=False)
            self.to_v = nn.Linear(context_dim, query_dim, bias=False)
            self.to_out = nn.Linear(query_dim, query_dim)

    @classmethod
    def identity(cls, channels):
        return cls(channels, heads=1, identity=True)

    def _split(self, x):
        b, n, c = x.shape
        return x.view(b, n, self.heads, c // self.heads).transpose(1, 2)

    def attention_weights(self, x, context=None):
        """Softmax weights (batch, heads, queries, keys); every row sums to 1."""
        context = x if context is None else context
        q = self._split(self.to_q(x))
        k = self._split(self.to_k(context))
        return torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)

    def forward(self, x, context=None):
        context = x if context is None else context
        weights = self.attention_weights(x, context)
        v = self._split(self.to_v(context))
        out = (weights @ v).transpose(1, 2).reshape(x.shape[0], x.shape[1], -1)
        return self.to_out(out)


def magnification_gain(theta):
    return 1.0 + F.softplus(theta)


class MagnificationParam(nn.Module):
    """Learnable face-token gain gamma = 1 + softplus(theta) > 1."""

    def __init__(self, init=MAGNIFICATION_INIT):
        super().__init__()
        self.theta = nn.Parameter(torch.tensor(float(init)))

    def gamma(self):
        return magnification_gain(self.theta)

    def forward(self):
        return self.gamma()


def _check_tokens(tokens, name='tokens'):
    if tokens.ndim != 3:
        raise ShapeMismatchError(f"{name} must be (batch, tokens, channels), got {tuple(tokens.shape)}")


def self_attention(tokens, attn=None):
    _check_tokens(tokens)
    attn = attn or Attention.identity(tokens.shape[-1])
    return attn(tokens)


def magnify_face_tokens(tokens, face_flags, gamma):
    """Multiplies flagged tokens by gamma; flags are (tokens,) or (batch, tokens)."""
    _check_tokens(tokens)
    face_flags = torch.as_tensor(face_flags, dtype=torch.bool, device=tokens.device)
    if face_flags.shape[-1] != tokens.shape[1]:
        raise ShapeMismatchError(
            f"{face_flags.shape[-1]} face flags for {tokens.shape[1]} tokens", layer='face_enhance')
    if face_flags.ndim == 2 and face_flags.shape[0] not in (1, tokens.shape[0]):
        raise ShapeMismatchError(
            f"face flags for {face_flags.shape[0]} samples, tokens for {tokens.shape[0]}", layer='face_enhance')
    gamma = torch.as_tensor(gamma, dtype=tokens.dtype, device=tokens.device)
    # 1 + flag * (gamma - 1) is exactly 1 on non-face tokens and at gamma == 1.
    scale = 1.0 + face_flags.to(tokens.dtype) * (gamma - 1.0)
    return tokens * scale.unsqueeze(-1)


def face_enhance_attention(tokens, face_flags, gamma, attn=None):
    """Self-attention over tokens whose face entries were first multiplied by gamma."""
    return self_attention(magnify_face_tokens(tokens, face_flags, gamma), attn)


def concat_reference_attention(backbone_tokens, ref_tokens, attn=None):
    """Queries from the backbone; keys/values from [backbone || reference]. Output keeps n tokens."""
    _check_tokens(backbone_tokens, 'backbone_tokens')
    attn = attn or Attention.identity(backbone_tokens.shape[-1])
    if ref_tokens is None or ref_tokens.shape[-2] == 0:
        return attn(backbone_tokens)
    _check_tokens(ref_tokens, 'ref_tokens')
    if ref_tokens.shape[-1] != backbone_tokens.shape[-1]:
        raise ShapeMismatchError(
            f"reference width {ref_tokens.shape[-1]} != backbone width {backbone_tokens.shape[-1]}")
    b = backbone_tokens.shape[0]
    if ref_tokens.shape[0] != b:
        if ref_tokens.shape[0] != 1:
            raise ShapeMismatchError(f"{ref_tokens.shape[0]} reference samples for a batch of {b}")
        ref_tokens = ref_tokens.expand(b, -1, -1)
    context = torch.cat([backbone_tokens, ref_tokens], dim=1)
    return attn(backbone_tokens, context)


def all_frames_attention(window_tokens, ref_tokens, attn=None):
    """
    One attention over every token of every frame in the window:
    (f, n, c) flattened to (1, f*n, c), keys/values [window || reference], reshaped back.
    """
    _check_tokens(window_tokens, 'window_tokens')
    f, n, c = window_tokens.shape
    if f < 1:
        raise ShapeMismatchError("a window needs at least one frame")
    if ref_tokens is not None:
        if ref_tokens.ndim == 2:
            ref_tokens = ref_tokens.unsqueeze(0)
        if ref_tokens.shape[0] != 1:
            raise ShapeMismatchError("all-frames attention takes one shared reference token set")
    flat = window_tokens.reshape(1, f * n, c)
    return concat_reference_attention(flat, ref_tokens, attn).reshape(f, n, c)
