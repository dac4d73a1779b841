"""Mini-batch SGD training loop with per-epoch checkpoints and a manifest.

Gradient reduction over a batch always sums in submission order, so runs
are bitwise reproducible for a given seed even with a thread pool; the
deterministic flag additionally forces serial execution.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalFailure
from .layers import cross_entropy
from .network import (
    GradientSet,
    NetworkConfig,
    NetworkParams,
    backward,
    forward,
    save_params,
)
from .optim import euclid_sgd_step, stiefel_step
from .skeleton import SkeletonSequence


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    accuracy: float
    wall_time_s: float


@dataclass
class TrainResult:
    params: NetworkParams
    epochs: list[EpochRecord]
    final_loss: float
    final_accuracy: float
    checkpoints: list[str] = field(default_factory=list)

    def manifest(self, *, config: NetworkConfig, seed: int, deterministic: bool,
                 dataset_id: str, n_sequences: int, batch_size: int, lr: float,
                 total_wall_time_s: float) -> dict:
        return {
            "run": "train",
            "config": asdict(config),
            "seed": seed,
            "deterministic": deterministic,
            "dataset": {"id": dataset_id, "n_sequences": n_sequences},
            "batch_size": batch_size,
            "learning_rate": lr,
            "epochs": [asdict(r) for r in self.epochs],
            "final": {"mean_loss": self.final_loss, "accuracy": self.final_accuracy},
            "checkpoints": self.checkpoints,
            "total_wall_time_s": total_wall_time_s,
        }


def _check_labels(sequences: list[SkeletonSequence], config: NetworkConfig) -> None:
    bad = sorted({s.label for s in sequences if not 0 <= s.label < config.n_classes})
    if bad:
        raise ConfigError(
            f"labels {bad} out of range for n_classes={config.n_classes}"
        )


def _item_pass(seq: SkeletonSequence, params: NetworkParams, config: NetworkConfig):
    probs, ctx, _ = forward(seq, params, config)
    loss = cross_entropy(probs, seq.label)
    grads = backward(ctx, seq.label)
    return loss, int(np.argmax(probs)) == seq.label, grads


def _apply_updates(params: NetworkParams, grads: GradientSet, lr: float) -> NetworkParams:
    return NetworkParams(
        conv=euclid_sgd_step(params.conv, grads.conv, lr),
        w_hat=stiefel_step(params.w_hat, grads.w_hat, lr),
        fc_weight=euclid_sgd_step(params.fc_weight, grads.fc_weight, lr),
        fc_bias=euclid_sgd_step(params.fc_bias, grads.fc_bias, lr),
    )


def evaluate(sequences, params: NetworkParams, config: NetworkConfig):
    """Mean loss and accuracy of fixed parameters over a sequence list."""
    losses = []
    correct = 0
    for seq in sequences:
        probs, _, _ = forward(seq, params, config)
        losses.append(cross_entropy(probs, seq.label))
        correct += int(np.argmax(probs)) == seq.label
    n = max(len(sequences), 1)
    return float(np.mean(losses)) if losses else float("nan"), correct / n


def train_network(
    sequences: list[SkeletonSequence],
    params: NetworkParams,
    config: NetworkConfig,
    *,
    epochs: int = 15,
    batch_size: int = 30,
    lr: float = 0.01,
    seed: int = 0,
    workers: int = 1,
    deterministic: bool = False,
    out_dir=None,
    log=None,
) -> TrainResult:
    """Train in place for ``epochs`` epochs of shuffled mini-batches.

    Sequences must already be resampled to ``config.n_frames``. A NaN
    batch loss aborts with the offending batch's sequence indices.
    """
    if not sequences:
        raise ConfigError("training set is empty")
    _check_labels(sequences, config)
    if deterministic:
        workers = 1
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    records = []
    checkpoints = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for epoch in range(1, epochs + 1):
            t_start = time.perf_counter()
            order = rng.permutation(len(sequences))
            epoch_losses = []
            epoch_correct = 0
            for batch_lo in range(0, len(order), batch_size):
                batch = order[batch_lo : batch_lo + batch_size]
                items = [sequences[i] for i in batch]
                if pool is not None:
                    results = list(pool.map(lambda s: _item_pass(s, params, config), items))
                else:
                    results = [_item_pass(s, params, config) for s in items]
                losses = [r[0] for r in results]
                if not np.all(np.isfinite(losses)):
                    raise NumericalFailure(
                        f"non-finite loss in epoch {epoch}, batch of sequences "
                        f"{sorted(int(i) for i in batch)}"
                    )
                total = GradientSet.zeros_like(params)
                for _, correct, grads in results:
                    epoch_correct += correct
                    total.add_(grads)
                total.scale_(1.0 / len(items))
                epoch_losses.extend(losses)
                params = _apply_updates(params, total, lr)
            record = EpochRecord(
                epoch=epoch,
                mean_loss=float(np.mean(epoch_losses)),
                accuracy=epoch_correct / len(sequences),
                wall_time_s=time.perf_counter() - t_start,
            )
            records.append(record)
            if out_dir is not None:
                ckpt = out_dir / f"epoch_{epoch:02d}.ckpt"
                save_params(ckpt, params)
                checkpoints.append(ckpt.name)
            if log is not None:
                log(f"EPOCH {epoch} loss={record.mean_loss!r} "
                    f"acc={record.accuracy!r} time={record.wall_time_s:.3f}")
    finally:
        if pool is not None:
            pool.shutdown()

    final_loss, final_acc = evaluate(sequences, params, config)
    return TrainResult(params=params, epochs=records, final_loss=final_loss,
                       final_accuracy=final_acc, checkpoints=checkpoints)
