"""Optimizers and checkpoint serialization.

Plain SGD handles the Euclidean parameters (convolution filters, FC
layer); the combined SPD-aggregation weight lives on the compact Stiefel
manifold of row-orthonormal matrices and is updated by projecting the
Euclidean gradient onto the tangent space and retracting with a QR
factorization, so orthonormality never drifts.

Checkpoints are a small versioned binary container of named float64
tensors (layout in docs/formats.md).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput, NumericalFailure
from .symmat import qr_orthonormalize


def euclid_sgd_step(param: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
    """One plain gradient step: param - lr * grad."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise InvalidInput(f"shape mismatch: param {param.shape} vs grad {grad.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalFailure("non-finite gradient in euclid_sgd_step")
    return param - lr * grad


def stiefel_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Row-orthonormal matrix from a seeded Gaussian, deterministic per seed."""
    if rows > cols:
        raise InvalidInput(f"need rows <= cols, got {rows}x{cols}")
    rng = np.random.default_rng(seed)
    return qr_orthonormalize(rng.standard_normal((rows, cols)))


def project_tangent(w: np.ndarray, egrad: np.ndarray) -> np.ndarray:
    """Remove the component of a Euclidean gradient normal to the manifold."""
    return egrad - egrad @ w.T @ w


def stiefel_step(w: np.ndarray, egrad: np.ndarray, lr: float) -> np.ndarray:
    """Tangent-projected gradient step followed by QR retraction."""
    w = np.asarray(w, dtype=np.float64)
    egrad = np.asarray(egrad, dtype=np.float64)
    if w.shape != egrad.shape:
        raise InvalidInput(f"shape mismatch: weight {w.shape} vs grad {egrad.shape}")
    if not np.all(np.isfinite(egrad)):
        raise NumericalFailure("non-finite gradient in stiefel_step")
    return qr_orthonormalize(w - lr * project_tangent(w, egrad))


def stiefel_error(w: np.ndarray) -> float:
    """Frobenius distance of W W^T from the identity."""
    r = w.shape[0]
    return float(np.linalg.norm(w @ w.T - np.eye(r)))


# ---------------------------------------------------------------------------
# checkpoint container

_MAGIC = b"SPDHGRCK"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float64 tensors to a little-endian binary container."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(tensors)))
        for name, tensor in tensors.items():
            arr = np.asarray(tensor, dtype=np.float64)
            if arr.ndim:
                arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ConfigError(f"truncated checkpoint {path}: while reading {what}")
    return data


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint container back into a name -> tensor dict."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint does not exist: {path}")
    tensors: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path} is not a checkpoint file (bad magic)")
        version, count = struct.unpack("<II", _read_exact(fh, 8, path, "header"))
        if version != _VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path, "name length"))
            name = _read_exact(fh, name_len, path, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read_exact(fh, 1, path, "rank"))
            dims = struct.unpack(f"<{rank}Q", _read_exact(fh, 8 * rank, path, "dims"))
            n_bytes = 8 * int(np.prod(dims, dtype=np.int64)) if rank else 8
            payload = _read_exact(fh, n_bytes, path, f"tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(dims)
    return tensors
