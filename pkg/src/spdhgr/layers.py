"""Network layers: grid convolution, Gaussian aggregation, spectral
nonlinearities, branch pipelines, SPD aggregation, and the classifier head.

Every forward returns (output, context); the context caches exactly what
the matching hand-written backward consumes, including the forward's
eigendecompositions so forward and backward always agree. Loss gradients
with respect to symmetric matrices use the Frobenius pairing and are
symmetrized on entry to each backward.

The branch pipelines batch their per-frame (or per-chunk) work over
stacked matrices; the batched code paths share the same spectral cores
(`symmat._eigh_stack`, `symmat._eig_grad_core`) as the public
single-matrix layers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import InvalidInput
from .skeleton import (
    JointGrid,
    N_FILTERS,
    N_GRID_NODES,
    grid_neighbors,
    split_range,
)
from .symmat import (
    EigPair,
    _check_spd_vals,
    _eig_grad_core,
    _eigh_stack,
    _sym_unvectorize_grad_stack,
    _sym_vectorize_stack,
    assert_spd,
    eig_backprop,
    eigh,
    sym_vectorize,
    spd_log,
    symmetrize,
    tri_length,
)

DEFAULT_RIDGE = 1e-6


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise InvalidInput(message)


# ---------------------------------------------------------------------------
# grid convolution


@lru_cache(maxsize=4)
def _conv_triples(mode: str) -> tuple[tuple[int, int, int], ...]:
    """(node index, neighbour index, filter index) triples, all 0-based."""
    grid = JointGrid(mode)
    triples = []
    for node in grid.node_ids:
        for j, label in grid_neighbors(grid, node):
            triples.append((node - 3, j - 3, label - 1))
    return tuple(triples)


@dataclass
class ConvContext:
    coords: np.ndarray  # (n_frames, 20, 3)
    weights: np.ndarray  # (9, d_out, 3)
    triples: tuple


def conv_forward(coords: np.ndarray, weights: np.ndarray, grid: JointGrid):
    """Lattice convolution: out_i = sum over neighbours j of W_{l(j,i)} p_j.

    Filter weights are shared across frames; coords is (n_frames, 20, 3)
    and the output (n_frames, 20, d_out).
    """
    coords = np.asarray(coords, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    _require(
        coords.ndim == 3 and coords.shape[1] == N_GRID_NODES and coords.shape[2] == 3,
        f"coords must be (n_frames, {N_GRID_NODES}, 3), got {coords.shape}",
    )
    _require(
        weights.ndim == 3 and weights.shape[0] == N_FILTERS and weights.shape[2] == 3,
        f"weights must be ({N_FILTERS}, d_out, 3), got {weights.shape}",
    )
    _require(bool(np.all(np.isfinite(coords))), "coords has non-finite entries")
    triples = _conv_triples(grid.mode)
    out = np.zeros((coords.shape[0], N_GRID_NODES, weights.shape[1]))
    for i, j, l in triples:
        out[:, i] += coords[:, j] @ weights[l].T
    return out, ConvContext(coords=coords, weights=weights, triples=triples)


def conv_backward(ctx: ConvContext, grad_out: np.ndarray):
    """Gradients w.r.t. the input coordinates and the nine filters."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    d_out = ctx.weights.shape[1]
    _require(
        grad_out.shape == (ctx.coords.shape[0], N_GRID_NODES, d_out),
        f"upstream gradient shape {grad_out.shape} does not match forward",
    )
    grad_coords = np.zeros_like(ctx.coords)
    grad_weights = np.zeros_like(ctx.weights)
    for i, j, l in ctx.triples:
        grad_weights[l] += grad_out[:, i].T @ ctx.coords[:, j]
        grad_coords[:, j] += grad_out[:, i] @ ctx.weights[l]
    return grad_coords, grad_weights


# ---------------------------------------------------------------------------
# Gaussian aggregation


def _gauss_embed_stack(samples: np.ndarray, ridge: float):
    """Embed stacks of sample sets as (d+1)x(d+1) Gaussian SPD matrices.

    samples is (..., n, d); the output block structure is
    [[Sigma + mu mu^T + ridge I, mu], [mu^T, 1]] with population (1/n)
    estimators, computed as [X 1]^T [X 1] / n plus the ridge.
    """
    n, d = samples.shape[-2:]
    x_aug = np.concatenate([samples, np.ones(samples.shape[:-1] + (1,))], axis=-1)
    y = np.swapaxes(x_aug, -1, -2) @ x_aug / n
    y = symmetrize(y)
    idx = np.arange(d)
    y[..., idx, idx] += ridge
    return y, x_aug


def _gauss_grad_stack(x_aug: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the sample matrix: (2/n) [X 1] sym(G) restricted
    to the first d columns. The ridge is constant and drops out."""
    n, d1 = x_aug.shape[-2:]
    g = symmetrize(grad_out)
    return (2.0 / n) * (x_aug @ g[..., :, : d1 - 1])


@dataclass
class GaussAggContext:
    samples: np.ndarray  # (n, d)
    mu: np.ndarray
    sigma: np.ndarray  # ridge included
    output: np.ndarray
    x_aug: np.ndarray


def gauss_agg_forward(samples: np.ndarray, ridge: float = DEFAULT_RIDGE):
    """Embed a sample set's Gaussian (mu, Sigma) as an SPD matrix.

    Returns the (d+1)x(d+1) embedding [[Sigma + mu mu^T, mu], [mu^T, 1]]
    with a ridge added to Sigma so constant inputs stay well-defined.
    """
    samples = np.asarray(samples, dtype=np.float64)
    _require(samples.ndim == 2 and samples.shape[0] >= 1 and samples.shape[1] >= 1,
             f"samples must be a non-empty (n, d) matrix, got {samples.shape}")
    y, x_aug = _gauss_embed_stack(samples, ridge)
    mu = samples.mean(axis=0)
    centered = samples - mu
    sigma = centered.T @ centered / samples.shape[0] + ridge * np.eye(samples.shape[1])
    return y, GaussAggContext(samples=samples, mu=mu, sigma=sigma, output=y, x_aug=x_aug)


def gauss_agg_backward(ctx: GaussAggContext, grad_out: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the (n, d) sample matrix."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    m = ctx.output.shape[0]
    _require(grad_out.shape == (m, m), f"gradient must be {m}x{m}, got {grad_out.shape}")
    return _gauss_grad_stack(ctx.x_aug, grad_out)


# ---------------------------------------------------------------------------
# spectral layers


@dataclass
class ReEigContext:
    eig: EigPair
    eps: float
    rect_vals: np.ndarray

    @property
    def rect_eig(self) -> EigPair:
        """Eigendecomposition of the rectified output (same eigenvectors)."""
        return EigPair(vecs=self.eig.vecs, vals=self.rect_vals)


def reeig_forward(x: np.ndarray, eps: float):
    """Eigenvalue rectification U max(eps I, V) U^T."""
    if not np.isfinite(eps) or eps <= 0.0:
        raise InvalidInput(f"eps must be a positive real, got {eps}")
    eig = eigh(x)
    rect = np.maximum(eig.vals, eps)
    y = symmetrize((eig.vecs * rect) @ eig.vecs.T)
    return y, ReEigContext(eig=eig, eps=eps, rect_vals=rect)


def reeig_backward(ctx: ReEigContext, grad_out: np.ndarray) -> np.ndarray:
    g = symmetrize(grad_out)
    u, vals = ctx.eig.vecs, ctx.eig.vals
    grad_vecs = 2.0 * g @ (u * ctx.rect_vals)
    inner = u.T @ g @ u
    grad_vals = np.where(vals > ctx.eps, np.diagonal(inner), 0.0)
    return eig_backprop(ctx.eig, grad_vecs, grad_vals)


@dataclass
class LogEigContext:
    eig: EigPair


def logeig_forward(x: np.ndarray, eig: EigPair | None = None):
    """Principal matrix logarithm U log(V) U^T of an SPD matrix.

    Accepts a precomputed eigendecomposition so pipelines never decompose
    the same matrix twice.
    """
    if eig is None:
        eig = eigh(x)
    _check_spd_vals(eig.vals, "logeig_forward")
    y = symmetrize((eig.vecs * np.log(eig.vals)) @ eig.vecs.T)
    return y, LogEigContext(eig=eig)


def logeig_backward(ctx: LogEigContext, grad_out: np.ndarray) -> np.ndarray:
    g = symmetrize(grad_out)
    u, vals = ctx.eig.vecs, ctx.eig.vals
    grad_vecs = 2.0 * g @ (u * np.log(vals))
    grad_vals = np.diagonal(u.T @ g @ u) / vals
    return eig_backprop(ctx.eig, grad_vecs, grad_vals)


def _rect_log_vec_stack(mats: np.ndarray, eps: float):
    """Batched ReEig -> LogEig -> half-vectorization over (..., m, m)."""
    vals, vecs = _eigh_stack(mats)
    rect = np.maximum(vals, eps)
    logs = symmetrize((vecs * np.log(rect)[..., None, :]) @ np.swapaxes(vecs, -1, -2))
    return _sym_vectorize_stack(logs), (vecs, vals, rect)


def _rect_log_vec_grad_stack(cache, eps: float, grad_vecs_flat: np.ndarray) -> np.ndarray:
    """Backward of `_rect_log_vec_stack` from per-row vector gradients."""
    vecs, vals, rect = cache
    m = vals.shape[-1]
    g = _sym_unvectorize_grad_stack(grad_vecs_flat, m)
    # log step; the rectified matrix shares the input's eigenvectors.
    grad_u = 2.0 * g @ (vecs * np.log(rect)[..., None, :])
    inner = np.swapaxes(vecs, -1, -2) @ g @ vecs
    grad_v = np.diagonal(inner, axis1=-2, axis2=-1) / rect
    dx, _ = _eig_grad_core(vecs, rect, grad_u, grad_v)
    # rectification step
    grad_u = 2.0 * dx @ (vecs * rect[..., None, :])
    inner = np.swapaxes(vecs, -1, -2) @ dx @ vecs
    grad_v = np.where(vals > eps, np.diagonal(inner, axis1=-2, axis2=-1), 0.0)
    dx, _ = _eig_grad_core(vecs, vals, grad_u, grad_v)
    return dx


# ---------------------------------------------------------------------------
# branch pipelines


@dataclass
class _SampleGroup:
    """A batch of equally-sized first-stage sample sets within a branch."""

    rows: np.ndarray  # destination rows in the second-stage sample matrix
    starts: np.ndarray  # first frame of each window/chunk
    length: int  # frames per window/chunk
    joints: np.ndarray | None  # per-row joint index (temporal-spatial only)
    x_aug: np.ndarray  # (batch, n_samples, d+1)


@dataclass
class BranchContext:
    kind: str  # "st" | "ts"
    shape: tuple[int, int, int]  # (n_frames, n_joints, feat_dim)
    eps: float
    groups: list[_SampleGroup]
    spectral_cache: tuple
    second: GaussAggContext


def st_branch_forward(feats: np.ndarray, t0: int, eps: float, ridge: float = DEFAULT_RIDGE):
    """Spatial-then-temporal branch.

    Per frame, a Gaussian over all joints in a sliding window (clamped at
    the branch boundary) is embedded, rectified, log-mapped and
    vectorized; a second Gaussian over the per-frame vectors yields the
    branch's SPD descriptor of side (d(d+3)/2 + 2).
    """
    feats = np.asarray(feats, dtype=np.float64)
    _require(feats.ndim == 3, f"branch features must be (frames, joints, dim), got {feats.shape}")
    n_frames, n_joints, d = feats.shape
    _require(t0 >= 1, f"t0 must be >= 1, got {t0}")
    _require(n_frames >= 2 * t0 + 1,
             f"branch of {n_frames} frames is shorter than the window {2 * t0 + 1}")

    width = 2 * t0 + 1
    groups = []
    mats = np.empty((n_frames, d + 1, d + 1))
    interior = np.arange(t0, n_frames - t0)
    if interior.size:
        windows = np.lib.stride_tricks.sliding_window_view(feats, width, axis=0)
        samples = windows.transpose(0, 3, 1, 2).reshape(interior.size, width * n_joints, d)
        y, x_aug = _gauss_embed_stack(samples, ridge)
        mats[interior] = y
        groups.append(_SampleGroup(rows=interior, starts=interior - t0, length=width,
                                   joints=None, x_aug=x_aug))
    edge: dict[int, list[int]] = {}
    for t in list(range(t0)) + list(range(n_frames - t0, n_frames)):
        lo = max(0, t - t0)
        hi = min(n_frames - 1, t + t0)
        edge.setdefault(hi - lo + 1, []).append(t)
    for length, ts in sorted(edge.items()):
        rows = np.array(ts)
        starts = np.maximum(rows - t0, 0)
        idx = starts[:, None] + np.arange(length)[None, :]
        samples = feats[idx].reshape(rows.size, length * n_joints, d)
        y, x_aug = _gauss_embed_stack(samples, ridge)
        mats[rows] = y
        groups.append(_SampleGroup(rows=rows, starts=starts, length=length,
                                   joints=None, x_aug=x_aug))

    vec_rows, cache = _rect_log_vec_stack(mats, eps)
    out, second = gauss_agg_forward(vec_rows, ridge)
    ctx = BranchContext(kind="st", shape=(n_frames, n_joints, d), eps=eps,
                        groups=groups, spectral_cache=cache, second=second)
    return out, ctx


def ts_branch_forward(feats: np.ndarray, n_chunks: int, eps: float, ridge: float = DEFAULT_RIDGE):
    """Temporal-then-spatial branch.

    The branch is cut into ``n_chunks`` equal-length chunks; per joint and
    chunk a single-joint Gaussian is embedded, rectified, log-mapped and
    vectorized; a second Gaussian over all joints x chunks vectors yields
    the branch descriptor.
    """
    feats = np.asarray(feats, dtype=np.float64)
    _require(feats.ndim == 3, f"branch features must be (frames, joints, dim), got {feats.shape}")
    n_frames, n_joints, d = feats.shape
    _require(n_chunks >= 1, f"n_chunks must be >= 1, got {n_chunks}")
    _require(n_frames >= 2 * n_chunks,
             f"branch of {n_frames} frames cannot give {n_chunks} chunks of >= 2 frames")

    bounds = split_range(n_frames, n_chunks)
    sizes = {}
    for k, (start, stop) in enumerate(bounds):
        sizes.setdefault(stop - start, []).append((k, start))
    groups = []
    mats = np.empty((n_joints * n_chunks, d + 1, d + 1))
    for length, chunks in sorted(sizes.items()):
        ks = np.array([k for k, _ in chunks])
        starts = np.array([s for _, s in chunks])
        # rows are joint-major: row = joint * n_chunks + chunk
        joints = np.repeat(np.arange(n_joints), ks.size)
        rows = joints * n_chunks + np.tile(ks, n_joints)
        all_starts = np.tile(starts, n_joints)
        idx = all_starts[:, None] + np.arange(length)[None, :]
        samples = feats[idx, joints[:, None], :]
        y, x_aug = _gauss_embed_stack(samples, ridge)
        mats[rows] = y
        groups.append(_SampleGroup(rows=rows, starts=all_starts, length=length,
                                   joints=joints, x_aug=x_aug))

    vec_rows, cache = _rect_log_vec_stack(mats, eps)
    out, second = gauss_agg_forward(vec_rows, ridge)
    ctx = BranchContext(kind="ts", shape=(n_frames, n_joints, d), eps=eps,
                        groups=groups, spectral_cache=cache, second=second)
    return out, ctx


def branch_backward(ctx: BranchContext, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of either branch w.r.t. its (frames, joints, dim) features.

    Overlapping windows accumulate additively.
    """
    n_frames, n_joints, d = ctx.shape
    m = ctx.second.output.shape[0]
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _require(grad_out.shape == (m, m),
             f"branch gradient must be {m}x{m}, got {grad_out.shape}")
    grad_vecs = gauss_agg_backward(ctx.second, grad_out)
    dmats = _rect_log_vec_grad_stack(ctx.spectral_cache, ctx.eps, grad_vecs)
    grad_feats = np.zeros((n_frames, n_joints, d))
    for group in ctx.groups:
        grad_samples = _gauss_grad_stack(group.x_aug, dmats[group.rows])
        idx = group.starts[:, None] + np.arange(group.length)[None, :]
        if group.joints is None:  # spatial-temporal: samples cover all joints
            contrib = grad_samples.reshape(len(group.rows), group.length, n_joints, d)
            np.add.at(grad_feats, idx.ravel(),
                      contrib.reshape(-1, n_joints, d))
        else:  # temporal-spatial: one joint per row
            joints = np.broadcast_to(group.joints[:, None], idx.shape)
            np.add.at(grad_feats, (idx.ravel(), joints.ravel()),
                      grad_samples.reshape(-1, d))
    return grad_feats


# ---------------------------------------------------------------------------
# SPD aggregation


@dataclass
class SpdAggContext:
    xs: np.ndarray  # (N, d_in, d_in)
    w_hat: np.ndarray  # (d_out, N * d_in)
    wx: np.ndarray  # cached W_i X_i, (N, d_out, d_in)
    output: np.ndarray
    out_eig: EigPair


def _w_blocks(w_hat: np.ndarray, n: int, d_in: int) -> np.ndarray:
    """View of the N column blocks W_i, shape (N, d_out, d_in)."""
    return w_hat.reshape(w_hat.shape[0], n, d_in).swapaxes(0, 1)


def spd_agg_forward(xs: np.ndarray, w_hat: np.ndarray):
    """Aggregate N SPD matrices: Y = sum_i W_i X_i W_i^T.

    Equals W_hat applied to the block-diagonal of the inputs; with W_hat
    of full row rank the output is SPD, which is asserted.
    """
    xs = np.asarray(xs, dtype=np.float64)
    w_hat = np.asarray(w_hat, dtype=np.float64)
    _require(xs.ndim == 3 and xs.shape[1] == xs.shape[2],
             f"inputs must be (N, d_in, d_in), got {xs.shape}")
    n, d_in = xs.shape[0], xs.shape[1]
    _require(w_hat.ndim == 2 and w_hat.shape[1] == n * d_in,
             f"weight must be (d_out, {n * d_in}), got {w_hat.shape}")
    _require(w_hat.shape[0] <= w_hat.shape[1],
             f"d_out {w_hat.shape[0]} exceeds N*d_in {w_hat.shape[1]}")
    blocks = _w_blocks(w_hat, n, d_in)
    wx = blocks @ xs
    # sum_i (W_i X_i) W_i^T as one product of the flattened block rows
    wx_flat = wx.swapaxes(0, 1).reshape(w_hat.shape[0], n * d_in)
    y = symmetrize(wx_flat @ w_hat.T)
    eig = assert_spd(y, "spd_agg_forward output")
    return y, SpdAggContext(xs=xs, w_hat=w_hat, wx=wx, output=y, out_eig=eig)


def spd_agg_backward(ctx: SpdAggContext, grad_out: np.ndarray):
    """Per-input gradients and the Euclidean gradient of the combined weight.

    dL/dX_i = W_i^T G W_i and dL/dW_i = 2 G W_i X_i with G the
    symmetrized upstream gradient; the W_i gradients concatenate into the
    gradient of W_hat.
    """
    grad_out = np.asarray(grad_out, dtype=np.float64)
    d_out = ctx.w_hat.shape[0]
    _require(grad_out.shape == (d_out, d_out),
             f"gradient must be {d_out}x{d_out}, got {grad_out.shape}")
    g = symmetrize(grad_out)
    n, d_in = ctx.xs.shape[0], ctx.xs.shape[1]
    blocks = _w_blocks(ctx.w_hat, n, d_in)
    grad_xs = (np.swapaxes(blocks, 1, 2) @ g) @ blocks
    grad_blocks = 2.0 * g @ ctx.wx
    grad_w_hat = grad_blocks.swapaxes(0, 1).reshape(d_out, n * d_in)
    return grad_xs, grad_w_hat


def block_diagonal(xs: np.ndarray) -> np.ndarray:
    """Stack SPD matrices into one block-diagonal matrix."""
    xs = np.asarray(xs, dtype=np.float64)
    n, d = xs.shape[0], xs.shape[1]
    out = np.zeros((n * d, n * d))
    for i in range(n):
        out[i * d : (i + 1) * d, i * d : (i + 1) * d] = xs[i]
    return out


# ---------------------------------------------------------------------------
# classifier head


@dataclass
class HeadContext:
    logeig: LogEigContext
    log_flat: np.ndarray
    probs: np.ndarray
    fc_weight: np.ndarray


def head_forward(y: np.ndarray, fc_weight: np.ndarray, fc_bias: np.ndarray,
                 y_eig: EigPair | None = None):
    """Log-map the SPD input, apply a fully connected layer and softmax."""
    fc_weight = np.asarray(fc_weight, dtype=np.float64)
    fc_bias = np.asarray(fc_bias, dtype=np.float64)
    d = np.asarray(y).shape[0]
    _require(fc_weight.ndim == 2 and fc_weight.shape[1] == d * d,
             f"fc weight must be (n_classes, {d * d}), got {fc_weight.shape}")
    _require(fc_bias.shape == (fc_weight.shape[0],),
             f"fc bias must be ({fc_weight.shape[0]},), got {fc_bias.shape}")
    log_mat, lctx = logeig_forward(y, eig=y_eig)
    log_flat = log_mat.ravel()
    logits = fc_weight @ log_flat + fc_bias
    shifted = np.exp(logits - np.max(logits))
    probs = shifted / shifted.sum()
    return logits, probs, HeadContext(logeig=lctx, log_flat=log_flat, probs=probs,
                                      fc_weight=fc_weight)


def head_backward(ctx: HeadContext, true_label: int):
    """Cross-entropy gradients: (dL/dY, dL/dW_fc, dL/db_fc)."""
    n_classes = ctx.probs.shape[0]
    if not 0 <= true_label < n_classes:
        raise InvalidInput(f"label {true_label} out of range [0, {n_classes})")
    dz = ctx.probs.copy()
    dz[true_label] -= 1.0
    grad_fc = np.outer(dz, ctx.log_flat)
    d = ctx.logeig.eig.dim
    grad_log = (ctx.fc_weight.T @ dz).reshape(d, d)
    grad_y = logeig_backward(ctx.logeig, grad_log)
    return grad_y, grad_fc, dz


def cross_entropy(probs: np.ndarray, true_label: int) -> float:
    if not 0 <= true_label < probs.shape[0]:
        raise InvalidInput(f"label {true_label} out of range [0, {probs.shape[0]})")
    return float(-np.log(max(float(probs[true_label]), 1e-300)))


def extract_representation(y: np.ndarray) -> np.ndarray:
    """Log-Euclidean feature vector of an SPD matrix, length d(d+1)/2."""
    return sym_vectorize(spd_log(y))


def branch_output_dim(feat_dim: int) -> int:
    """Side length of a branch's SPD descriptor for a given feature dim."""
    return tri_length(feat_dim + 1) + 1
