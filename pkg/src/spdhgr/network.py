"""Full gesture-recognition network: grid convolution feeding 30
spatial-temporal and 30 temporal-spatial branches, SPD aggregation under
a Stiefel-constrained weight, and a log-Euclidean softmax head.

Branch order is fixed (spatial-temporal branches first, each group
sub-sequence-major then finger) and defines the column-block layout of
the combined aggregation weight, so checkpoints are portable. Variants
drop one branch group and shrink the weight accordingly.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput
from .layers import (
    BranchContext,
    ConvContext,
    HeadContext,
    SpdAggContext,
    branch_backward,
    branch_output_dim,
    conv_backward,
    conv_forward,
    cross_entropy,
    extract_representation,
    head_backward,
    head_forward,
    spd_agg_backward,
    spd_agg_forward,
    st_branch_forward,
    ts_branch_forward,
)
from .optim import load_checkpoint, save_checkpoint, stiefel_init
from .skeleton import (
    GRID_MODES,
    JointGrid,
    N_FILTERS,
    SkeletonSequence,
    build_branch_plan,
    grid_joint_coords,
    grid_node_index,
)
from .symmat import tri_length

VARIANTS = ("st_ts", "st_only", "ts_only")
ENV_PREFIX = "SPDHGR_"


@dataclass
class NetworkConfig:
    """All architecture knobs; see docs/formats.md for the file format."""

    n_classes: int
    d_out_c: int = 9  # convolution output dimension
    d_out_s: int = 200  # side of the aggregated SPD matrix
    n_frames: int = 500  # frames after resampling
    t0: int = 1  # sliding-window half width
    n_chunks: int = 15  # temporal chunks per branch
    epsilon: float = 1e-4  # eigenvalue rectification threshold
    ridge: float = 1e-6  # covariance ridge
    variant: str = "st_ts"
    grid_mode: str = "full"

    @property
    def d_in_s(self) -> int:
        """Branch descriptor side: half-vectorized (d+1)-Gaussian plus one."""
        return branch_output_dim(self.d_out_c)

    @property
    def n_inputs(self) -> int:
        return 60 if self.variant == "st_ts" else 30

    @property
    def feature_dim(self) -> int:
        return tri_length(self.d_out_s)

    def validate(self) -> "NetworkConfig":
        problems = []
        if self.n_classes < 2:
            problems.append(f"n_classes must be >= 2, got {self.n_classes}")
        if self.d_out_c < 1:
            problems.append(f"d_out_c must be >= 1, got {self.d_out_c}")
        if self.d_out_s < 1:
            problems.append(f"d_out_s must be >= 1, got {self.d_out_s}")
        if self.variant not in VARIANTS:
            problems.append(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.grid_mode not in GRID_MODES:
            problems.append(f"grid_mode must be one of {GRID_MODES}, got {self.grid_mode!r}")
        if self.t0 < 1:
            problems.append(f"t0 must be >= 1, got {self.t0}")
        if self.n_chunks < 2:
            problems.append(f"n_chunks must be >= 2, got {self.n_chunks}")
        if self.epsilon <= 0:
            problems.append(f"epsilon must be > 0, got {self.epsilon}")
        if self.ridge < 0:
            problems.append(f"ridge must be >= 0, got {self.ridge}")
        if self.n_frames < 6:
            problems.append(f"n_frames must be >= 6, got {self.n_frames}")
        else:
            shortest = self.n_frames // 3  # shortest branch: first third
            if self.variant != "ts_only" and shortest < 2 * self.t0 + 1:
                problems.append(
                    f"shortest branch ({shortest} frames) cannot hold a window of {2 * self.t0 + 1}"
                )
            if self.variant != "st_only" and shortest < 2 * self.n_chunks:
                problems.append(
                    f"shortest branch ({shortest} frames) cannot hold {self.n_chunks} chunks"
                )
        if self.variant in VARIANTS and self.d_out_s > self.n_inputs * self.d_in_s:
            problems.append(
                f"d_out_s {self.d_out_s} exceeds the aggregation width "
                f"{self.n_inputs} * {self.d_in_s} = {self.n_inputs * self.d_in_s}"
            )
        if problems:
            raise ConfigError("; ".join(problems))
        return self


_INT_FIELDS = {"n_classes", "d_out_c", "d_out_s", "n_frames", "t0", "n_chunks"}
_FLOAT_FIELDS = {"epsilon", "ridge"}
_STR_FIELDS = {"variant", "grid_mode"}


def config_from_mapping(mapping: dict[str, str]) -> NetworkConfig:
    kwargs = {}
    for key, value in mapping.items():
        if key in _INT_FIELDS:
            kwargs[key] = int(value)
        elif key in _FLOAT_FIELDS:
            kwargs[key] = float(value)
        elif key in _STR_FIELDS:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if "n_classes" not in kwargs:
        raise ConfigError("config must set n_classes")
    return NetworkConfig(**kwargs).validate()


def load_config(path, overrides: dict[str, str] | None = None, env=None) -> NetworkConfig:
    """Parse a key=value config file.

    '#' starts a comment. Environment variables SPDHGR_<KEY> override the
    file; explicit ``overrides`` (e.g. CLI flags) override both.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file does not exist: {path}")
    mapping: dict[str, str] = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {stripped!r}")
            key, _, value = stripped.partition("=")
            mapping[key.strip()] = value.strip()
    env = os.environ if env is None else env
    for field in _INT_FIELDS | _FLOAT_FIELDS | _STR_FIELDS:
        env_val = env.get(ENV_PREFIX + field.upper())
        if env_val is not None:
            mapping[field] = env_val
    for key, value in (overrides or {}).items():
        mapping[key] = str(value)
    try:
        return config_from_mapping(mapping)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc


def save_config(path, config: NetworkConfig) -> None:
    with open(path, "w") as fh:
        for field in dataclasses.fields(config):
            fh.write(f"{field.name}={getattr(config, field.name)}\n")


# ---------------------------------------------------------------------------
# parameters


@dataclass
class NetworkParams:
    conv: np.ndarray  # (9, d_out_c, 3)
    w_hat: np.ndarray  # (d_out_s, n_inputs * d_in_s), row-orthonormal
    fc_weight: np.ndarray  # (n_classes, d_out_s^2)
    fc_bias: np.ndarray  # (n_classes,)


@dataclass
class GradientSet:
    conv: np.ndarray
    w_hat: np.ndarray
    fc_weight: np.ndarray
    fc_bias: np.ndarray

    def add_(self, other: "GradientSet") -> "GradientSet":
        self.conv += other.conv
        self.w_hat += other.w_hat
        self.fc_weight += other.fc_weight
        self.fc_bias += other.fc_bias
        return self

    def scale_(self, factor: float) -> "GradientSet":
        self.conv *= factor
        self.w_hat *= factor
        self.fc_weight *= factor
        self.fc_bias *= factor
        return self

    @staticmethod
    def zeros_like(params: NetworkParams) -> "GradientSet":
        return GradientSet(
            conv=np.zeros_like(params.conv),
            w_hat=np.zeros_like(params.w_hat),
            fc_weight=np.zeros_like(params.fc_weight),
            fc_bias=np.zeros_like(params.fc_bias),
        )


def init_params(config: NetworkConfig, seed: int) -> NetworkParams:
    """Seeded init: fan-scaled uniform filters, Stiefel weight, zero FC."""
    config.validate()
    ss = np.random.SeedSequence(seed)
    conv_seed, stiefel_seed = ss.generate_state(2)
    rng = np.random.default_rng(conv_seed)
    bound = np.sqrt(3.0 / (3.0 * config.d_out_c))
    conv = rng.uniform(-bound, bound, size=(N_FILTERS, config.d_out_c, 3))
    w_hat = stiefel_init(config.d_out_s, config.n_inputs * config.d_in_s, int(stiefel_seed))
    fc_weight = np.zeros((config.n_classes, config.d_out_s * config.d_out_s))
    fc_bias = np.zeros(config.n_classes)
    return NetworkParams(conv=conv, w_hat=w_hat, fc_weight=fc_weight, fc_bias=fc_bias)


def expected_shapes(config: NetworkConfig) -> dict[str, tuple[int, ...]]:
    return {
        "conv_weights": (N_FILTERS, config.d_out_c, 3),
        "spdagg_w_hat": (config.d_out_s, config.n_inputs * config.d_in_s),
        "fc_weight": (config.n_classes, config.d_out_s * config.d_out_s),
        "fc_bias": (config.n_classes,),
    }


def save_params(path, params: NetworkParams) -> None:
    save_checkpoint(path, {
        "conv_weights": params.conv,
        "spdagg_w_hat": params.w_hat,
        "fc_weight": params.fc_weight,
        "fc_bias": params.fc_bias,
    })


def load_params(path, config: NetworkConfig) -> NetworkParams:
    tensors = load_checkpoint(path)
    expected = expected_shapes(config)
    for name, shape in expected.items():
        if name not in tensors:
            raise ConfigError(f"checkpoint {path} is missing tensor {name!r}")
        if tensors[name].shape != shape:
            raise ConfigError(
                f"checkpoint {path}: tensor {name!r} has shape {tensors[name].shape}, "
                f"config expects {shape}"
            )
    return NetworkParams(
        conv=tensors["conv_weights"],
        w_hat=tensors["spdagg_w_hat"],
        fc_weight=tensors["fc_weight"],
        fc_bias=tensors["fc_bias"],
    )


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardContext:
    config: NetworkConfig
    conv: ConvContext
    branch_slices: list[tuple[slice, list[int]]]
    branches: list[BranchContext]
    agg: SpdAggContext
    head: HeadContext
    feats_shape: tuple[int, int, int]


def _as_grid_coords(seq, config: NetworkConfig) -> np.ndarray:
    coords = grid_joint_coords(seq) if isinstance(seq, SkeletonSequence) else np.asarray(seq)
    if coords.ndim != 3 or coords.shape[0] != config.n_frames:
        raise InvalidInput(
            f"expected coordinates of shape ({config.n_frames}, 20, 3), got {coords.shape}; "
            "resample sequences before the forward pass"
        )
    return np.asarray(coords, dtype=np.float64)


def forward(seq, params: NetworkParams, config: NetworkConfig):
    """Run the full pipeline; returns (probs, context, final SPD matrix)."""
    coords = _as_grid_coords(seq, config)
    grid = JointGrid(config.grid_mode)
    feats, conv_ctx = conv_forward(coords, params.conv, grid)
    plan = build_branch_plan(config.n_frames)

    branch_slices = []
    for spec in plan.entries:
        t_begin, t_end = spec.frame_range
        joints = [grid_node_index(j) for j in spec.joints]
        branch_slices.append((slice(t_begin - 1, t_end), joints))

    inputs = []
    contexts = []
    if config.variant in ("st_ts", "st_only"):
        for frame_slice, joints in branch_slices:
            y, ctx = st_branch_forward(feats[frame_slice][:, joints], config.t0,
                                       config.epsilon, config.ridge)
            inputs.append(y)
            contexts.append(ctx)
    if config.variant in ("st_ts", "ts_only"):
        for frame_slice, joints in branch_slices:
            y, ctx = ts_branch_forward(feats[frame_slice][:, joints], config.n_chunks,
                                       config.epsilon, config.ridge)
            inputs.append(y)
            contexts.append(ctx)

    y_final, agg_ctx = spd_agg_forward(np.stack(inputs), params.w_hat)
    _, probs, head_ctx = head_forward(y_final, params.fc_weight, params.fc_bias,
                                      y_eig=agg_ctx.out_eig)
    ctx = ForwardContext(config=config, conv=conv_ctx, branch_slices=branch_slices,
                         branches=contexts, agg=agg_ctx, head=head_ctx,
                         feats_shape=feats.shape)
    return probs, ctx, y_final


def backward(ctx: ForwardContext, true_label: int) -> GradientSet:
    """Full-chain gradients for all trainable tensors.

    The aggregation-weight gradient is Euclidean (pre tangent
    projection); branch gradients accumulate additively into the shared
    convolution filters.
    """
    grad_y, grad_fc, grad_bias = head_backward(ctx.head, true_label)
    grad_xs, grad_w_hat = spd_agg_backward(ctx.agg, grad_y)
    grad_feats = np.zeros(ctx.feats_shape)
    n_branches = len(ctx.branch_slices)
    for k, (bctx, gx) in enumerate(zip(ctx.branches, grad_xs)):
        frame_slice, joints = ctx.branch_slices[k % n_branches]
        sub = grad_feats[frame_slice]
        sub[:, joints] += branch_backward(bctx, gx)
    _, grad_conv = conv_backward(ctx.conv, grad_feats)
    return GradientSet(conv=grad_conv, w_hat=grad_w_hat,
                       fc_weight=grad_fc, fc_bias=grad_bias)


def loss_for(seq, params: NetworkParams, config: NetworkConfig, label: int):
    probs, ctx, _ = forward(seq, params, config)
    return cross_entropy(probs, label), probs, ctx


def extract_features(seq, params: NetworkParams, config: NetworkConfig) -> np.ndarray:
    """Log-Euclidean feature vector of the final SPD matrix."""
    _, _, y_final = forward(seq, params, config)
    return extract_representation(y_final)
