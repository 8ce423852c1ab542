"""Conv -> FC128 -> FC128 -> head networks with hand-written backprop.

The actor head emits 10 logits followed by a (masked) categorical
distribution; the critic head emits a single value. Everything runs in
float64; checkpoints are written as float32.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import ExplorationError

CONV_OUT = 64
CONV_K = 3
IN_CHANNELS = 3
HIDDEN = 128
MASK_PENALTY = -1e9

PARAM_ORDER = ("conv_w", "conv_b", "fc1_w", "fc1_b", "fc2_w", "fc2_b", "head_w", "head_b")

CHECKPOINT_MAGIC = b"DMRL"
CHECKPOINT_VERSION = 1


class AllActionsMasked(ExplorationError):
    pass


class NonFiniteGradient(ExplorationError):
    pass


class CheckpointMismatch(ExplorationError):
    pass


def param_shapes(n: int, head_size: int) -> dict:
    m = n - CONV_K + 1
    flat = CONV_OUT * m * m
    return {
        "conv_w": (CONV_OUT, IN_CHANNELS, CONV_K, CONV_K),
        "conv_b": (CONV_OUT,),
        "fc1_w": (HIDDEN, flat),
        "fc1_b": (HIDDEN,),
        "fc2_w": (HIDDEN, HIDDEN),
        "fc2_b": (HIDDEN,),
        "head_w": (head_size, HIDDEN),
        "head_b": (head_size,),
    }


def init_params(seed, n: int, head_size: int) -> dict:
    """Uniform(-b, b) fan-in weights with b = sqrt(2 / fan_in); zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(n, head_size).items():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=np.float64)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = np.sqrt(2.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def head_size_of(params: dict) -> int:
    return params["head_b"].shape[0]


def grid_size_of(params: dict) -> int:
    flat = params["fc1_w"].shape[1]
    m = int(round(np.sqrt(flat / CONV_OUT)))
    return m + CONV_K - 1


def _im2col(x: np.ndarray) -> np.ndarray:
    # (B, C, n, n) -> (B, C*K*K, m*m) with (c, ki, kj) ordering matching conv_w.reshape
    B, C, n, _ = x.shape
    m = n - CONV_K + 1
    win = sliding_window_view(x, (CONV_K, CONV_K), axis=(2, 3))  # B, C, m, m, K, K
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(B, C * CONV_K * CONV_K, m * m)


def _trunk(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    B = x.shape[0]
    cols = _im2col(x)
    w = params["conv_w"].reshape(CONV_OUT, -1)
    conv = np.matmul(w, cols) + params["conv_b"][None, :, None]  # B, 64, m*m
    h0 = np.maximum(conv, 0.0).reshape(B, -1)
    z1 = h0 @ params["fc1_w"].T + params["fc1_b"]
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params["fc2_w"].T + params["fc2_b"]
    h2 = np.maximum(z2, 0.0)
    out = h2 @ params["head_w"].T + params["head_b"]
    cache = (cols, conv, h0, z1, h1, z2, h2)
    return out, cache


def masked_log_softmax(logits: np.ndarray, mask=None) -> np.ndarray:
    z = np.array(logits, dtype=np.float64, copy=True)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if z.ndim == 1:
            if not mask.any():
                raise AllActionsMasked("every action is masked")
        elif not mask.any(axis=-1).all():
            raise AllActionsMasked("every action is masked for some sample")
        z = z + np.where(mask, 0.0, MASK_PENALTY)
    z -= z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class PolicyOutput:
    logits: np.ndarray
    probs: np.ndarray
    log_probs: np.ndarray


def forward(params, x):
    """Raw head output (B, head_size) plus the activation cache for ``backward``."""
    return _trunk(params, x)


def policy(params, obs, mask=None) -> PolicyOutput:
    """Actor forward; ``obs`` is (3, n, n) or a batch (B, 3, n, n)."""
    logits, _ = _trunk(params, obs)
    single = np.asarray(obs).ndim == 3
    logp = masked_log_softmax(logits, None if mask is None else np.broadcast_to(mask, logits.shape))
    probs = np.exp(logp)
    if mask is not None:
        probs = np.where(np.broadcast_to(mask, probs.shape), probs, 0.0)
    if single:
        return PolicyOutput(logits[0], probs[0], logp[0])
    return PolicyOutput(logits, probs, logp)


def value(params, state) -> np.ndarray | float:
    out, _ = _trunk(params, state)
    v = out[:, 0]
    return float(v[0]) if np.asarray(state).ndim == 3 else v


def sample_action(output: PolicyOutput, rng=None, greedy: bool = False):
    """Draw an action index from the categorical; ``greedy`` takes the lowest-index argmax."""
    probs = output.probs
    if greedy:
        a = int(np.argmax(probs))
    else:
        cdf = np.cumsum(probs)
        u = rng.random() * cdf[-1]
        a = int(np.searchsorted(cdf, u, side="right"))
        a = min(a, len(probs) - 1)
    return a, float(output.log_probs[a])


def backward(params, x, dout, cache=None) -> dict:
    """Gradients of sum(dout * head_output) with respect to every parameter.

    ``dout`` is (B, head_size): the loss gradient at the raw head output.
    ``cache`` may carry the activations of a forward pass over the same input.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    dout = np.asarray(dout, dtype=np.float64).reshape(x.shape[0], -1)
    if cache is None:
        _, cache = _trunk(params, x)
    cols, conv, h0, z1, h1, z2, h2 = cache
    g = {}
    g["head_w"] = dout.T @ h2
    g["head_b"] = dout.sum(axis=0)
    dh2 = dout @ params["head_w"]
    dz2 = dh2 * (z2 > 0)
    g["fc2_w"] = dz2.T @ h1
    g["fc2_b"] = dz2.sum(axis=0)
    dh1 = dz2 @ params["fc2_w"]
    dz1 = dh1 * (z1 > 0)
    g["fc1_w"] = dz1.T @ h0
    g["fc1_b"] = dz1.sum(axis=0)
    dh0 = (dz1 @ params["fc1_w"]).reshape(conv.shape)
    dconv = dh0 * (conv > 0)  # B, 64, m*m
    g["conv_b"] = dconv.sum(axis=(0, 2))
    g["conv_w"] = np.einsum("bom,bkm->ok", dconv, cols).reshape(params["conv_w"].shape)
    for name, arr in g.items():
        if not np.all(np.isfinite(arr)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    return g


def nll_grad(params, obs, actions, weights, mask=None):
    """Loss sum_t weights_t * (-log pi(a_t | o_t)) and its parameter gradients."""
    logits, cache = _trunk(params, obs)
    B = logits.shape[0]
    logp = masked_log_softmax(logits, None if mask is None else np.broadcast_to(mask, logits.shape))
    actions = np.asarray(actions, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    picked = logp[np.arange(B), actions]
    loss = float(-(weights * picked).sum())
    probs = np.exp(logp)
    if mask is not None:
        probs = np.where(np.broadcast_to(mask, probs.shape), probs, 0.0)
    # d(-log p_a)/dlogits = probs - onehot(a); masked logits carry zero gradient
    dlogits = probs.copy()
    dlogits[np.arange(B), actions] -= 1.0
    dlogits *= weights[:, None]
    return loss, backward(params, obs, dlogits, cache)


def mse_grad(params, states, targets):
    """Loss mean_t (V(s_t) - target_t)^2 and its parameter gradients."""
    out, cache = _trunk(params, states)
    v = out[:, 0]
    targets = np.asarray(targets, dtype=np.float64)
    diff = v - targets
    B = v.shape[0]
    loss = float(np.mean(diff**2))
    dout = (2.0 / B) * diff[:, None]
    return loss, backward(params, states, dout, cache)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params, grads, lr, state: AdamState, beta1=0.9, beta2=0.999, eps=1e-8) -> dict:
    """One Adam descent step; mutates ``state`` and returns new parameter arrays."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    new = {}
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        new[k] = p - lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + eps)
    return new


def global_grad_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_grads(grads, max_norm):
    if max_norm is None or max_norm <= 0:
        return grads
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def save_checkpoint(path, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params))


def checkpoint_bytes(params: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(params)))
    for name in [k for k in PARAM_ORDER if k in params] + sorted(k for k in params if k not in PARAM_ORDER):
        arr = np.asarray(params[name])
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def load_checkpoint(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointMismatch(f"{path}: bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointMismatch(f"{path}: unsupported checkpoint version {version}")
    off = 12
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off : off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        shape = struct.unpack_from(f"<{rank}Q", data, off)
        off += 8 * rank
        size = int(np.prod(shape)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        params[name] = arr.astype(np.float64)
    return params


def check_shapes(params: dict, n: int, head_size: int, label: str = "network") -> None:
    expected = param_shapes(n, head_size)
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointMismatch(f"{label}: missing tensor {name}")
        if tuple(params[name].shape) != shape:
            raise CheckpointMismatch(f"{label}: {name} has shape {tuple(params[name].shape)}, expected {shape}")
