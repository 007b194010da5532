"""Frame-scoring network: Conv1D(d -> 1024, k=3, pad=1) -> FC 512 -> FC 256 -> FC 1.

ReLU follows the conv and the first two FC layers; a sigmoid maps the last
layer to a per-frame score in (0, 1). The whole video is one batch, gradients
are derived by hand, and all math runs in float64 so finite-difference checks
can be held to tight tolerances.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TrainingDivergence

CONV_CHANNELS = 1024
FC1_UNITS = 512
FC2_UNITS = 256
KERNEL_SIZE = 3

PARAM_NAMES = (
    "conv_w",
    "conv_b",
    "fc1_w",
    "fc1_b",
    "fc2_w",
    "fc2_b",
    "fc3_w",
    "fc3_b",
)


@dataclass
class ScoringModel:
    """Parameter tensors; mutated in place by the optimizer."""

    conv_w: np.ndarray  # (1024, d, 3)
    conv_b: np.ndarray  # (1024,)
    fc1_w: np.ndarray  # (512, 1024)
    fc1_b: np.ndarray  # (512,)
    fc2_w: np.ndarray  # (256, 512)
    fc2_b: np.ndarray  # (256,)
    fc3_w: np.ndarray  # (1, 256)
    fc3_b: np.ndarray  # (1,)

    @property
    def dim(self) -> int:
        return self.conv_w.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ScoringModel":
        return ScoringModel(**{k: v.copy() for k, v in self.params().items()})


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


@dataclass
class ForwardCache:
    """Intermediate activations of one forward pass, kept for backprop."""

    x_pad: np.ndarray  # (N+2, d) zero-padded input
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    z3: np.ndarray
    a3: np.ndarray
    z4: np.ndarray  # (N, 1) pre-sigmoid
    p: np.ndarray  # (N,) scores


def init_params(seed: int, d: int) -> ScoringModel:
    """Uniform fan-in initialization (bound 1/sqrt(fan_in)), zero biases."""
    if d < 2:
        raise ValueError(f"feature dimension must be >= 2, got {d}")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ScoringModel(
        conv_w=uniform((CONV_CHANNELS, d, KERNEL_SIZE), d * KERNEL_SIZE),
        conv_b=np.zeros(CONV_CHANNELS),
        fc1_w=uniform((FC1_UNITS, CONV_CHANNELS), CONV_CHANNELS),
        fc1_b=np.zeros(FC1_UNITS),
        fc2_w=uniform((FC2_UNITS, FC1_UNITS), FC1_UNITS),
        fc2_b=np.zeros(FC2_UNITS),
        fc3_w=uniform((1, FC2_UNITS), FC2_UNITS),
        fc3_b=np.zeros(1),
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: ScoringModel, features: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Score a full (N, d) sequence; temporal length is preserved by the
    zero padding, so an N = 1 video is still valid."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected (N, d) feature matrix, got shape {x.shape}")
    if x.shape[1] != model.dim:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {model.dim}")
    n = x.shape[0]
    x_pad = np.zeros((n + 2, x.shape[1]))
    x_pad[1:-1] = x

    # Conv as three shifted matmuls: z1[t] = b + sum_k x_pad[t+k] @ conv_w[:, :, k].T
    z1 = np.broadcast_to(model.conv_b, (n, CONV_CHANNELS)).copy()
    for k in range(KERNEL_SIZE):
        z1 += x_pad[k : k + n] @ model.conv_w[:, :, k].T
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ model.fc1_w.T + model.fc1_b
    a2 = np.maximum(z2, 0.0)
    z3 = a2 @ model.fc2_w.T + model.fc2_b
    a3 = np.maximum(z3, 0.0)
    z4 = a3 @ model.fc3_w.T + model.fc3_b

    for name, z in (("conv", z1), ("fc1", z2), ("fc2", z3), ("fc3", z4)):
        if not np.isfinite(z).all():
            raise TrainingDivergence(f"non-finite activations after {name} layer")
    p = _sigmoid(z4[:, 0])
    return p, ForwardCache(x_pad, z1, a1, z2, a2, z3, a3, z4, p)


def backward(model: ScoringModel, cache: ForwardCache, dl_dp: np.ndarray) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar loss given dL/dp; ReLU subgradient
    at 0 is taken as 0."""
    dl_dp = np.asarray(dl_dp, dtype=np.float64)
    n = cache.p.shape[0]
    if dl_dp.shape != (n,):
        raise ValueError(f"dl_dp shape {dl_dp.shape} != ({n},)")

    dz4 = (dl_dp * cache.p * (1.0 - cache.p))[:, None]
    g_fc3_w = dz4.T @ cache.a3
    g_fc3_b = dz4.sum(axis=0)
    da3 = dz4 @ model.fc3_w

    dz3 = da3 * (cache.z3 > 0)
    g_fc2_w = dz3.T @ cache.a2
    g_fc2_b = dz3.sum(axis=0)
    da2 = dz3 @ model.fc2_w

    dz2 = da2 * (cache.z2 > 0)
    g_fc1_w = dz2.T @ cache.a1
    g_fc1_b = dz2.sum(axis=0)
    da1 = dz2 @ model.fc1_w

    dz1 = da1 * (cache.z1 > 0)
    g_conv_b = dz1.sum(axis=0)
    g_conv_w = np.empty_like(model.conv_w)
    for k in range(KERNEL_SIZE):
        g_conv_w[:, :, k] = dz1.T @ cache.x_pad[k : k + n]

    return {
        "conv_w": g_conv_w,
        "conv_b": g_conv_b,
        "fc1_w": g_fc1_w,
        "fc1_b": g_fc1_b,
        "fc2_w": g_fc2_w,
        "fc2_b": g_fc2_b,
        "fc3_w": g_fc3_w,
        "fc3_b": g_fc3_b,
    }


def init_adam(model: ScoringModel) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in model.params().items()},
        v={k: np.zeros_like(v) for k, v in model.params().items()},
        t=0,
    )


def adam_step(
    model: ScoringModel,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-5,
    weight_decay: float = 1e-5,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ScoringModel, AdamState]:
    """One Adam update with bias correction; weight decay enters as a coupled
    L2 term added to the gradient. Mutates and returns (model, state)."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, theta in model.params().items():
        g = grads[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} != {theta.shape}")
        if weight_decay != 0.0:
            g = g + weight_decay * theta
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return model, state


def params_digest(model: ScoringModel) -> str:
    """SHA-256 over all parameter bytes; used for run manifests and the
    shared-checkpoint invariant across folds."""
    h = hashlib.sha256()
    for name in PARAM_NAMES:
        h.update(np.ascontiguousarray(getattr(model, name)).tobytes())
    return h.hexdigest()


CHECKPOINT_VERSION = 1


def save_checkpoint(
    path: str | Path,
    model: ScoringModel,
    adam: AdamState | None = None,
    config_hash: str = "",
) -> None:
    arrays: dict[str, np.ndarray] = {
        "version": np.int64(CHECKPOINT_VERSION),
        "config_hash": np.bytes_(config_hash.encode()),
    }
    for name, val in model.params().items():
        arrays[f"param_{name}"] = val
    if adam is not None:
        arrays["adam_t"] = np.int64(adam.t)
        for name in PARAM_NAMES:
            arrays[f"adam_m_{name}"] = adam.m[name]
            arrays[f"adam_v_{name}"] = adam.v[name]
    np.savez(path, **arrays)


def load_checkpoint(path: str | Path) -> tuple[ScoringModel, AdamState | None, str]:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        model = ScoringModel(**{name: data[f"param_{name}"] for name in PARAM_NAMES})
        adam = None
        if "adam_t" in data:
            adam = AdamState(
                m={name: data[f"adam_m_{name}"] for name in PARAM_NAMES},
                v={name: data[f"adam_v_{name}"] for name in PARAM_NAMES},
                t=int(data["adam_t"]),
            )
        config_hash = bytes(data["config_hash"]).decode() if "config_hash" in data else ""
    return model, adam, config_hash
