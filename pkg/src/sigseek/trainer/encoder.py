"""Small convolutional encoder with hand-written forward and backward passes.

Architecture: two conv(3^d) + ReLU + 2x max-pool blocks (8 then 16
channels), global average pooling, a fully-connected projection to the
embedding dimension, and row-wise l2 normalization. An optional sign layer
on the end produces ±1 embeddings with a straight-through gradient.

Works for 2-D and 3-D patches (3x3 or 3x3x3 kernels); every spatial extent
must be divisible by 4 so the two pooling stages stay exact. All math is
float64 so analytic gradients can be held to tight finite-difference
tolerances.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..errors import ContractViolation, DataFormatError
from .losses import sign_layer_forward

MODEL_MAGIC = b"ENC1"
_NORM_EPS = 1e-12


# ---------------------------------------------------------------------------
# layer primitives: forward returns (out, cache), backward consumes (dout, cache)

def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    """Stride-1 'same' correlation with zero padding; kernel size 3 per axis.

    x: (B, Cin, *S); w: (Cout, Cin, 3, ..., 3); b: (Cout,).
    """
    d = x.ndim - 2
    pad = [(0, 0), (0, 0)] + [(1, 1)] * d
    xp = np.pad(x, pad)
    spatial = x.shape[2:]
    out = np.empty((x.shape[0], w.shape[0]) + spatial, dtype=x.dtype)
    out[:] = b.reshape((1, -1) + (1,) * d)
    for off in product(range(3), repeat=d):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + n) for o, n in zip(off, spatial)
        )
        out += np.einsum("oi,bi...->bo...", w[(slice(None), slice(None)) + off], xp[sl])
    return out, (xp, w, x.shape)


def conv_backward(dout: np.ndarray, cache):
    xp, w, x_shape = cache
    d = dout.ndim - 2
    spatial = x_shape[2:]
    sp = "xyz"[:d]
    dw_sub = f"bo{sp},bi{sp}->oi"
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for off in product(range(3), repeat=d):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + n) for o, n in zip(off, spatial)
        )
        widx = (slice(None), slice(None)) + off
        dw[widx] = np.einsum(dw_sub, dout, xp[sl])
        dxp[sl] += np.einsum("oi,bo...->bi...", w[widx], dout)
    db = dout.sum(axis=tuple(i for i in range(dout.ndim) if i != 1))
    crop = (slice(None), slice(None)) + tuple(slice(1, 1 + n) for n in spatial)
    return dxp[crop], dw, db


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def maxpool_forward(x: np.ndarray):
    """Non-overlapping 2^d max pooling; spatial extents must be even."""
    d = x.ndim - 2
    spatial = x.shape[2:]
    if any(n % 2 for n in spatial):
        raise ContractViolation(f"spatial shape {spatial} not divisible by 2 for pooling")
    half = tuple(n // 2 for n in spatial)
    split_shape = (x.shape[0], x.shape[1]) + tuple(v for n in half for v in (n, 2))
    # bring the per-window axes to the back: (B, C, *half, 2^d)
    perm = (0, 1) + tuple(2 + 2 * i for i in range(d)) + tuple(3 + 2 * i for i in range(d))
    xs = x.reshape(split_shape).transpose(perm)
    win = xs.reshape(xs.shape[: 2 + d] + (2**d,))
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape, split_shape, perm)


def maxpool_backward(dout, cache):
    idx, x_shape, split_shape, perm = cache
    d = len(x_shape) - 2
    win_grad = np.zeros(dout.shape + (2**d,), dtype=dout.dtype)
    np.put_along_axis(win_grad, idx[..., None], dout[..., None], axis=-1)
    xs = win_grad.reshape(dout.shape + (2,) * d)
    return xs.transpose(np.argsort(perm)).reshape(x_shape)


def global_avg_pool_forward(x):
    spatial = x.shape[2:]
    return x.mean(axis=tuple(range(2, x.ndim))), (x.shape, spatial)


def global_avg_pool_backward(dout, cache):
    x_shape, spatial = cache
    scale = 1.0 / np.prod(spatial)
    return np.broadcast_to(
        dout.reshape(dout.shape + (1,) * len(spatial)) * scale, x_shape
    ).copy()


def dense_forward(x, w, b):
    return x @ w.T + b, (x, w)


def dense_backward(dout, cache):
    x, w = cache
    return dout @ w, dout.T @ x, dout.sum(axis=0)


def l2_normalize_forward(x):
    norms = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), _NORM_EPS)
    u = x / norms
    return u, (u, norms)


def l2_normalize_backward(dout, cache):
    u, norms = cache
    return (dout - u * np.sum(u * dout, axis=1, keepdims=True)) / norms


# ---------------------------------------------------------------------------
# model

@dataclass
class EncoderModel:
    """Parameters plus the structural facts needed to run them."""

    patch_shape: tuple[int, ...]
    embed_dim: int
    channels: tuple[int, int]
    binarize: bool
    pretrained: bool  # True once weights came from a trained real-valued model
    params: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    def copy(self) -> "EncoderModel":
        return EncoderModel(
            patch_shape=self.patch_shape,
            embed_dim=self.embed_dim,
            channels=self.channels,
            binarize=self.binarize,
            pretrained=self.pretrained,
            params={k: v.copy() for k, v in self.params.items()},
        )


def init_encoder(
    patch_shape: tuple[int, ...],
    embed_dim: int = 64,
    channels: tuple[int, int] = (8, 16),
    binarize: bool = False,
    seed: int = 0,
) -> EncoderModel:
    """He-initialized encoder for 2-D or 3-D patches."""
    d = len(patch_shape)
    if d not in (2, 3):
        raise ContractViolation(f"patch_shape must be 2-D or 3-D, got {patch_shape}")
    if any(n % 4 for n in patch_shape):
        raise ContractViolation(f"every patch extent must be divisible by 4, got {patch_shape}")
    c1, c2 = channels
    rng = np.random.default_rng(seed)
    k = (3,) * d

    def he(shape, fan_in):
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    params = {
        "conv1_w": he((c1, 1) + k, fan_in=3**d),
        "conv1_b": np.zeros(c1),
        "conv2_w": he((c2, c1) + k, fan_in=c1 * 3**d),
        "conv2_b": np.zeros(c2),
        "proj_w": he((embed_dim, c2), fan_in=c2),
        "proj_b": np.zeros(embed_dim),
    }
    return EncoderModel(
        patch_shape=tuple(patch_shape),
        embed_dim=embed_dim,
        channels=(c1, c2),
        binarize=binarize,
        pretrained=False,
        params=params,
    )


def binarize_model(model: EncoderModel) -> EncoderModel:
    """Copy a trained real-valued model with the sign output layer enabled."""
    out = model.copy()
    out.binarize = True
    out.pretrained = True
    return out


def forward_batch(model: EncoderModel, batch: np.ndarray, want_cache: bool = False):
    """Embeddings for a batch of patches (B, *patch_shape).

    Returns (emb, cache); the cache is None unless requested. Real mode
    yields unit-norm rows; binarize mode yields ±1 components.
    """
    if batch.shape[1:] != model.patch_shape:
        raise ContractViolation(
            f"batch patches {batch.shape[1:]} do not match model input {model.patch_shape}"
        )
    p = model.params
    x = np.asarray(batch, dtype=np.float64)[:, None]  # add channel axis
    h1, c_conv1 = conv_forward(x, p["conv1_w"], p["conv1_b"])
    r1, c_relu1 = relu_forward(h1)
    p1, c_pool1 = maxpool_forward(r1)
    h2, c_conv2 = conv_forward(p1, p["conv2_w"], p["conv2_b"])
    r2, c_relu2 = relu_forward(h2)
    p2, c_pool2 = maxpool_forward(r2)
    g, c_gap = global_avg_pool_forward(p2)
    z, c_dense = dense_forward(g, p["proj_w"], p["proj_b"])
    u, c_norm = l2_normalize_forward(z)
    emb = sign_layer_forward(u) if model.binarize else u
    cache = None
    if want_cache:
        cache = (c_conv1, c_relu1, c_pool1, c_conv2, c_relu2, c_pool2, c_gap, c_dense, c_norm)
    return emb, cache


def backward_batch(model: EncoderModel, cache, demb: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients from upstream embedding gradients.

    In binarize mode the sign layer passes the gradient straight through.
    """
    c_conv1, c_relu1, c_pool1, c_conv2, c_relu2, c_pool2, c_gap, c_dense, c_norm = cache
    du = demb  # straight-through: identical whether or not the sign layer ran
    dz = l2_normalize_backward(du, c_norm)
    dg, dproj_w, dproj_b = dense_backward(dz, c_dense)
    dp2 = global_avg_pool_backward(dg, c_gap)
    dr2 = maxpool_backward(dp2, c_pool2)
    dh2 = relu_backward(dr2, c_relu2)
    dp1, dconv2_w, dconv2_b = conv_backward(dh2, c_conv2)
    dr1 = maxpool_backward(dp1, c_pool1)
    dh1 = relu_backward(dr1, c_relu1)
    _, dconv1_w, dconv1_b = conv_backward(dh1, c_conv1)
    return {
        "conv1_w": dconv1_w,
        "conv1_b": dconv1_b,
        "conv2_w": dconv2_w,
        "conv2_b": dconv2_b,
        "proj_w": dproj_w,
        "proj_b": dproj_b,
    }


def encode_batch(model: EncoderModel, batch: np.ndarray) -> np.ndarray:
    emb, _ = forward_batch(model, batch)
    return emb


def encode(model: EncoderModel, patch: np.ndarray) -> np.ndarray:
    """Embedding of a single patch: unit-norm vector, or ±1 when binarizing."""
    patch = np.asarray(patch)
    if patch.shape != model.patch_shape:
        raise ContractViolation(
            f"patch shape {patch.shape} does not match model input {model.patch_shape}"
        )
    return encode_batch(model, patch[None])[0]


# ---------------------------------------------------------------------------
# checkpoints

_PARAM_ORDER = ("conv1_w", "conv1_b", "conv2_w", "conv2_b", "proj_w", "proj_b")


def save_model(model: EncoderModel, path) -> None:
    """Self-describing binary checkpoint: header, then named float32 tensors."""
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(
            struct.pack(
                "<BBBII",
                len(model.patch_shape),
                1 if model.binarize else 0,
                1 if model.pretrained else 0,
                model.embed_dim,
                len(_PARAM_ORDER),
            )
        )
        f.write(struct.pack("<II", *model.channels))
        for n in model.patch_shape:
            f.write(struct.pack("<I", n))
        for name in _PARAM_ORDER:
            arr = np.ascontiguousarray(model.params[name], dtype="<f4")
            enc = name.encode("ascii")
            f.write(struct.pack("<B", len(enc)))
            f.write(enc)
            f.write(struct.pack("<B", arr.ndim))
            for n in arr.shape:
                f.write(struct.pack("<I", n))
            f.write(arr.tobytes())


def load_model(path) -> EncoderModel:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MODEL_MAGIC:
        raise DataFormatError(f"bad model magic {blob[:4]!r}")
    off = 4
    ndim, binarize, pretrained, embed_dim, n_params = struct.unpack_from("<BBBII", blob, off)
    off += struct.calcsize("<BBBII")
    c1, c2 = struct.unpack_from("<II", blob, off)
    off += 8
    patch_shape = []
    for _ in range(ndim):
        (n,) = struct.unpack_from("<I", blob, off)
        patch_shape.append(n)
        off += 4
    params = {}
    for _ in range(n_params):
        (name_len,) = struct.unpack_from("<B", blob, off)
        off += 1
        name = blob[off : off + name_len].decode("ascii")
        off += name_len
        (arr_ndim,) = struct.unpack_from("<B", blob, off)
        off += 1
        shape = []
        for _ in range(arr_ndim):
            (n,) = struct.unpack_from("<I", blob, off)
            shape.append(n)
            off += 4
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        off += count * 4
        params[name] = arr.astype(np.float64)
    missing = set(_PARAM_ORDER) - set(params)
    if missing:
        raise DataFormatError(f"checkpoint missing tensors: {sorted(missing)}")
    return EncoderModel(
        patch_shape=tuple(patch_shape),
        embed_dim=embed_dim,
        channels=(c1, c2),
        binarize=bool(binarize),
        pretrained=bool(pretrained),
        params=params,
    )
