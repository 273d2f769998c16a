"""Per-agent neural surrogate of the local cost.

A two-hidden-layer softplus perceptron ``fhat(x_i, s_i; theta)`` with a
linear scalar output. Parameters are a flat float64 vector; see
``_kernels_numpy`` for the layout. Derivatives are hand-written reverse mode.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import kernels

__all__ = [
    "EstimatorError",
    "MlpArch",
    "LossConfig",
    "n_params",
    "xavier_init",
    "forward",
    "input_grads",
    "eval_loss_grad",
    "softplus",
    "save_params",
    "load_params",
    "arch_from_size",
]


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class MlpArch:
    input_dim: int = 2
    hidden_width: int = 32
    n_layers: int = 2
    activation: str = "softplus"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.hidden_width < 1:
            raise EstimatorError("input_dim and hidden_width must be positive")
        if self.n_layers != 2 or self.activation != "softplus":
            raise EstimatorError("only two softplus hidden layers are supported")

    @property
    def n_params(self) -> int:
        h, n_in = self.hidden_width, self.input_dim
        return h * n_in + h + h * h + h + h + 1


@dataclass(frozen=True)
class LossConfig:
    regularizer_weight: float = 1e-3

    def __post_init__(self) -> None:
        if self.regularizer_weight < 0:
            raise EstimatorError("regularizer_weight must be nonnegative")


def n_params(arch: MlpArch) -> int:
    return arch.n_params


def softplus(z):
    return kernels.get_backend("numpy").softplus(np.asarray(z, dtype=np.float64))


def xavier_init(arch: MlpArch, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases. ``seed`` is anything ``default_rng`` accepts."""
    rng = np.random.default_rng(seed)
    h, n_in = arch.hidden_width, arch.input_dim

    def glorot(fan_in, fan_out, shape):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, shape).reshape(-1)

    return np.concatenate([
        glorot(n_in, h, (h, n_in)), np.zeros(h),
        glorot(h, h, (h, h)), np.zeros(h),
        glorot(h, 1, (h,)), np.zeros(1),
    ])


def _prepare(arch: MlpArch, theta, x_i, s_i):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (arch.n_params,):
        raise EstimatorError(f"expected {arch.n_params} parameters, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise EstimatorError("non-finite parameters")
    x = np.atleast_1d(np.asarray(x_i, dtype=np.float64))
    s = np.atleast_1d(np.asarray(s_i, dtype=np.float64))
    u = np.concatenate([x, s])
    if u.shape[0] != arch.input_dim:
        raise EstimatorError(f"input has {u.shape[0]} entries, arch expects {arch.input_dim}")
    return theta[None, :], u[None, :], x.shape[0]


def forward(arch: MlpArch, theta, x_i, s_i) -> float:
    th, u, _ = _prepare(arch, theta, x_i, s_i)
    out, _ = kernels.get_backend().mlp_value_input_grad(th, u, arch.hidden_width)
    return float(out[0])


def input_grads(arch: MlpArch, theta, x_i, s_i) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``fhat`` with respect to ``x_i`` and ``s_i``."""
    th, u, nx = _prepare(arch, theta, x_i, s_i)
    _, gin = kernels.get_backend().mlp_value_input_grad(th, u, arch.hidden_width)
    return gin[0, :nx].copy(), gin[0, nx:].copy()


def eval_loss_grad(arch: MlpArch, theta, cfg: LossConfig, u_x, u_s, y_obs: float) -> tuple[float, np.ndarray]:
    """Regularized squared loss ``0.5 (y - fhat)^2 + lambda |theta|^2`` and its parameter gradient."""
    if not np.isfinite(y_obs):
        raise EstimatorError("observed cost must be finite")
    th, u, _ = _prepare(arch, theta, u_x, u_s)
    loss, g3 = kernels.get_backend().mlp_loss_param_grad(
        th, u, np.array([float(y_obs)]), float(cfg.regularizer_weight), arch.hidden_width
    )
    return float(loss[0]), g3[0].copy()


_HEADER = struct.Struct("<I")


def save_params(path: str | Path, theta, arch: MlpArch, seed=None) -> None:
    """Write a length-prefixed JSON header followed by little-endian float64 data."""
    theta = np.asarray(theta, dtype="<f8")
    header = json.dumps({"arch": asdict(arch), "seed": seed, "n_params": int(theta.size)}).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(len(header)))
        fh.write(header)
        fh.write(theta.tobytes())


def load_params(path: str | Path) -> tuple[np.ndarray, MlpArch, dict]:
    raw = Path(path).read_bytes()
    (hlen,) = _HEADER.unpack_from(raw, 0)
    header = json.loads(raw[_HEADER.size:_HEADER.size + hlen])
    arch = MlpArch(**header["arch"])
    theta = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size + hlen).astype(np.float64)
    if theta.size != arch.n_params:
        raise EstimatorError(f"checkpoint holds {theta.size} values, arch needs {arch.n_params}")
    return theta, arch, header


def arch_from_size(n: int, input_dim: int = 2) -> MlpArch:
    """Recover the hidden width from a flat parameter count."""
    # n = h^2 + (input_dim + 3) h + 1
    b = input_dim + 3
    h = int(round((-b + np.sqrt(b * b + 4.0 * (n - 1))) / 2.0))
    arch = MlpArch(input_dim, max(h, 1))
    if arch.n_params != n:
        raise EstimatorError(f"{n} parameters do not match any width for input_dim={input_dim}")
    return arch
