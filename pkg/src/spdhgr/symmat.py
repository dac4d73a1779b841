"""Dense symmetric-matrix kernel.

Everything downstream (Gaussian aggregation, eigenvalue rectification,
log-Euclidean maps, Stiefel retractions) reduces to a handful of
operations on real symmetric matrices collected here: a deterministic
eigendecomposition, spectral function maps, half-vectorization, the
eigendecomposition backprop shared by the rectification and log layers,
and QR row-orthonormalization.

Conventions:
  * matrices are dense row-major float64 ndarrays, symmetrized on entry;
  * eigenvalues are sorted descending with a deterministic eigenvector
    sign (first non-negligible component positive), so repeated runs and
    checkpoints reproduce bitwise;
  * gradients of scalar losses with respect to symmetric matrices use
    the Frobenius pairing dL = <G, dX>_F with G symmetric.

The private ``_stack`` helpers operate on stacks of matrices
(leading batch axes) and are the single implementation the public
single-matrix wrappers and the batched layer code both call.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput, NotSPD, NumericalFailure, RankDeficient

# Eigenvalue floor for the SPD check: min eig must exceed
# SPD_FLOOR_SCALE * max(1, max eig).
SPD_FLOOR_SCALE = 1e-12

# Entries of the eigen-gap reciprocal with |gap| below
# DEGENERACY_SCALE * (eig range + 1) are zeroed instead of divided.
DEGENERACY_SCALE = 1e-10

_tls = threading.local()


def degeneracy_count() -> int:
    """Number of near-degenerate eigenvalue pairs zeroed on this thread."""
    return getattr(_tls, "count", 0)


def reset_degeneracy_count() -> None:
    _tls.count = 0


def _bump_degeneracy(n: int) -> None:
    _tls.count = getattr(_tls, "count", 0) + int(n)


def symmetrize(a: np.ndarray) -> np.ndarray:
    """(A + A^T)/2, batched over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _as_square_sym(a, name: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise InvalidInput(f"{name} must be a square 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput(f"{name} has non-finite entries")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class EigPair:
    """Eigendecomposition A = vecs @ diag(vals) @ vecs.T.

    ``vecs`` columns are orthonormal eigenvectors; ``vals`` is sorted
    descending and each eigenvector's first non-negligible component is
    positive.
    """

    vecs: np.ndarray
    vals: np.ndarray

    @property
    def dim(self) -> int:
        return self.vals.shape[0]


def _order_and_sign(vals: np.ndarray, vecs: np.ndarray):
    """Sort descending and fix eigenvector signs; batched over leading axes."""
    vals = vals[..., ::-1]
    vecs = vecs[..., ::-1]
    # First component with magnitude above a per-column threshold decides
    # the sign; orthonormal columns always have one.
    absv = np.abs(vecs)
    thresh = 1e-12 * np.max(absv, axis=-2, keepdims=True)
    lead = np.argmax(absv > thresh, axis=-2)
    lead_vals = np.take_along_axis(vecs, lead[..., None, :], axis=-2)
    signs = np.where(lead_vals < 0.0, -1.0, 1.0)
    return np.ascontiguousarray(vals), np.ascontiguousarray(vecs * signs)


def _eigh_stack(a: np.ndarray):
    """Batched symmetric eigendecomposition with the package conventions."""
    try:
        vals, vecs = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigendecomposition did not converge: {exc}") from exc
    return _order_and_sign(vals, vecs)


def eigh(a: np.ndarray) -> EigPair:
    """Eigendecomposition of a symmetric matrix, deterministic ordering."""
    a = _as_square_sym(a)
    vals, vecs = _eigh_stack(a)
    return EigPair(vecs=vecs, vals=vals)


def _check_spd_vals(vals: np.ndarray, context: str) -> None:
    floor = SPD_FLOOR_SCALE * max(1.0, float(np.max(vals, initial=0.0)))
    smallest = float(np.min(vals))
    if smallest <= floor:
        raise NotSPD(f"{context}: min eigenvalue {smallest:.3e} <= floor {floor:.3e}")


def assert_spd(a: np.ndarray, context: str = "matrix") -> EigPair:
    """Raise NotSPD unless min eig > SPD_FLOOR_SCALE * max(1, max eig).

    Returns the eigendecomposition so callers can reuse it.
    """
    eig = eigh(a)
    _check_spd_vals(eig.vals, context)
    return eig


def _spectral_apply(eig: EigPair, fvals: np.ndarray) -> np.ndarray:
    out = (eig.vecs * fvals) @ eig.vecs.T
    return 0.5 * (out + out.T)


def spd_log(a: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm of an SPD matrix."""
    eig = eigh(a)
    _check_spd_vals(eig.vals, "spd_log")
    return _spectral_apply(eig, np.log(eig.vals))


def spd_exp(a: np.ndarray) -> np.ndarray:
    """Matrix exponential of a symmetric matrix (always SPD)."""
    eig = eigh(a)
    return _spectral_apply(eig, np.exp(eig.vals))


def rectify_eigs(a: np.ndarray, eps: float) -> np.ndarray:
    """Clamp eigenvalues from below: U max(eps I, V) U^T."""
    if not np.isfinite(eps) or eps <= 0.0:
        raise InvalidInput(f"eps must be a positive real, got {eps}")
    eig = eigh(a)
    return _spectral_apply(eig, np.maximum(eig.vals, eps))


def tri_length(dim: int) -> int:
    return dim * (dim + 1) // 2


def _tri_dim(length: int) -> int:
    dim = int(round((np.sqrt(8.0 * length + 1.0) - 1.0) / 2.0))
    if tri_length(dim) != length:
        raise InvalidInput(f"{length} is not a triangular number n(n+1)/2")
    return dim


_SQRT2 = np.sqrt(2.0)
_tri_cache: dict[int, tuple] = {}


def _tri_indices(n: int):
    """Cached row-major upper-triangle indices and off-diagonal mask."""
    hit = _tri_cache.get(n)
    if hit is None:
        iu = np.triu_indices(n)
        hit = _tri_cache.setdefault(n, (iu[0], iu[1], iu[0] != iu[1]))
    return hit


def sym_vectorize(a: np.ndarray) -> np.ndarray:
    """Half-vectorize a symmetric matrix, off-diagonals scaled by sqrt(2).

    Row-major over the upper triangle; the scaling makes the map a linear
    isometry: ||vec(A)||_2 = ||A||_F and <vec(A),vec(B)> = <A,B>_F.
    """
    a = _as_square_sym(a)
    return _sym_vectorize_stack(a)


def _sym_vectorize_stack(a: np.ndarray) -> np.ndarray:
    rows, cols, off = _tri_indices(a.shape[-1])
    scale = np.where(off, _SQRT2, 1.0)
    return a[..., rows, cols] * scale


def sym_unvectorize_grad(g: np.ndarray) -> np.ndarray:
    """Adjoint of sym_vectorize: map a vector gradient back to a matrix.

    Diagonal slots receive the raw entry; each off-diagonal entry is split
    across its two symmetric positions with weight 1/sqrt(2), so that
    <sym_unvectorize_grad(g), dA>_F == <g, sym_vectorize(dA)> for every
    symmetric dA.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 1:
        raise InvalidInput(f"gradient vector must be 1-d, got shape {g.shape}")
    n = _tri_dim(g.shape[0])
    return _sym_unvectorize_grad_stack(g[None, :], n)[0]


def _sym_unvectorize_grad_stack(g: np.ndarray, n: int) -> np.ndarray:
    rows, cols, off = _tri_indices(n)
    scale = np.where(off, 1.0 / _SQRT2, 0.5)
    half = np.zeros(g.shape[:-1] + (n, n), dtype=np.float64)
    half[..., rows, cols] = g * scale
    return half + np.swapaxes(half, -1, -2)


def _eig_grad_core(vecs, vals, g_vecs, g_vals):
    """Gradient w.r.t. a symmetric matrix from gradients w.r.t. (vecs, vals).

    Batched over leading axes. Returns (grad, n_degenerate) where
    n_degenerate counts eigenvalue pairs whose gap fell below the guard
    and whose cross-term was therefore zeroed.
    """
    gaps = vals[..., :, None] - vals[..., None, :]
    span = np.max(vals, axis=-1) - np.min(vals, axis=-1)
    guard = DEGENERACY_SCALE * (span + 1.0)
    off = ~np.eye(vals.shape[-1], dtype=bool)
    usable = (np.abs(gaps) >= guard[..., None, None]) & off
    # K~^T has entries 1/(vals_j - vals_i) off the diagonal.
    kt = np.where(usable, -1.0, 0.0) / np.where(usable, gaps, 1.0)
    inner = kt * (np.swapaxes(vecs, -1, -2) @ g_vecs)
    inner = 0.5 * (inner + np.swapaxes(inner, -1, -2))
    inner[..., np.arange(vals.shape[-1]), np.arange(vals.shape[-1])] = g_vals
    grad = vecs @ inner @ np.swapaxes(vecs, -1, -2)
    n_degenerate = int(np.count_nonzero(off & ~usable)) // 2
    return 0.5 * (grad + np.swapaxes(grad, -1, -2)), n_degenerate


def eig_backprop(eig: EigPair, dl_dvecs: np.ndarray, dl_dvals: np.ndarray) -> np.ndarray:
    """Backprop through the eigendecomposition A = U diag(V) U^T.

    ``dl_dvecs`` is the loss gradient w.r.t. the eigenvector matrix,
    ``dl_dvals`` w.r.t. the eigenvalues (vector, or a matrix whose
    diagonal is used). Near-degenerate eigenvalue pairs contribute
    nothing and are tallied in ``degeneracy_count``.
    """
    n = eig.dim
    dl_dvecs = np.asarray(dl_dvecs, dtype=np.float64)
    dl_dvals = np.asarray(dl_dvals, dtype=np.float64)
    if dl_dvals.ndim == 2:
        dl_dvals = np.diagonal(dl_dvals).copy()
    if dl_dvecs.shape != (n, n) or dl_dvals.shape != (n,):
        raise InvalidInput(
            f"gradient shapes {dl_dvecs.shape}/{dl_dvals.shape} do not match dim {n}"
        )
    grad, n_deg = _eig_grad_core(eig.vecs, eig.vals, dl_dvecs, dl_dvals)
    if n_deg:
        _bump_degeneracy(n_deg)
    return grad


def qr_orthonormalize(m: np.ndarray) -> np.ndarray:
    """Row-orthonormalize M (rows <= cols) preserving its row span.

    Uses the QR factorization of M^T with the positive-diagonal sign
    convention, so an already row-orthonormal input is a fixed point.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInput(f"expected a 2-d array, got shape {m.shape}")
    rows, cols = m.shape
    if rows > cols:
        raise InvalidInput(f"need rows <= cols, got {rows}x{cols}")
    if not np.all(np.isfinite(m)):
        raise NumericalFailure("qr_orthonormalize: non-finite entries")
    q, r = np.linalg.qr(m.T)
    diag = np.diagonal(r)
    tol = max(rows, cols) * np.finfo(np.float64).eps * float(np.max(np.abs(diag), initial=0.0))
    if np.min(np.abs(diag)) <= tol:
        raise RankDeficient(f"matrix of shape {rows}x{cols} is not full row rank")
    return (q * np.sign(diag)).T
