"""Skeleton-sequence ingestion, the finger-joint lattice, and branch planning.

Hand joints are numbered 1..22 the way the DHG recordings ship them:
1 = wrist, 2 = palm, then four joints per finger from base to tip
(thumb 3-6, index 7-10, middle 11-14, ring 15-18, pinky 19-22).
Nodes 3..22 form a 5x4 lattice (finger x level) on which the grid
convolution operates; wrist and palm never enter the convolution or the
finger sets.

Dataset layout (see docs/formats.md for the exact grammar): a root
directory with index files ``train.txt``/``test.txt`` where each line
names a per-sequence skeleton file plus its labels, and plain-text
skeleton files with one frame per line.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput, ParseError

N_FINGERS = 5
N_LEVELS = 4
N_GRID_NODES = N_FINGERS * N_LEVELS
GRID_NODE_IDS = tuple(range(3, 3 + N_GRID_NODES))

# Lattice offset (j - i) -> filter index, in canonical filter order.
# An offset o decomposes as o = 4*df + dl with df, dl in {-1, 0, 1}:
# df steps to the neighbouring finger, dl along the same finger.
OFFSET_LABELS = ((0, 1), (4, 2), (5, 3), (1, 4), (-3, 5), (-4, 6), (-5, 7), (-1, 8), (3, 9))
_OFFSET_STEPS = {4 * df + dl: (df, dl) for df in (-1, 0, 1) for dl in (-1, 0, 1)}
N_FILTERS = len(OFFSET_LABELS)
PHYSICAL_OFFSETS = frozenset((0, 1, -1))

GRID_MODES = ("full", "physical")


@dataclass(frozen=True)
class JointGrid:
    """The 5x4 finger-joint lattice.

    ``full`` mode connects each node to its up-to-9 lattice neighbours
    (itself included); ``physical`` keeps only same-finger neighbours
    {i-1, i, i+1}.
    """

    mode: str = "full"

    def __post_init__(self):
        if self.mode not in GRID_MODES:
            raise InvalidInput(f"grid mode must be one of {GRID_MODES}, got {self.mode!r}")

    @property
    def node_ids(self):
        return GRID_NODE_IDS


def node_finger_level(node_id: int) -> tuple[int, int]:
    """Map a grid node id to (finger 1..5, level 1..4)."""
    if node_id not in GRID_NODE_IDS:
        raise InvalidInput(f"node {node_id} is not a grid node (expected 3..22)")
    k = node_id - 3
    return k // N_LEVELS + 1, k % N_LEVELS + 1


def finger_joints(finger: int) -> tuple[int, int, int, int]:
    """The four node ids of a finger, base to tip."""
    if not 1 <= finger <= N_FINGERS:
        raise InvalidInput(f"finger must be 1..{N_FINGERS}, got {finger}")
    base = 3 + N_LEVELS * (finger - 1)
    return tuple(range(base, base + N_LEVELS))


def grid_node_index(node_id: int) -> int:
    """0-based position of a grid node in coordinate arrays."""
    if node_id not in GRID_NODE_IDS:
        raise InvalidInput(f"node {node_id} is not a grid node (expected 3..22)")
    return node_id - 3


def grid_neighbors(grid: JointGrid, node_id: int) -> list[tuple[int, int]]:
    """Valid (neighbour node id, filter index) pairs for a node.

    Offsets whose finger or level step leaves the lattice are excluded;
    the node itself is always present with filter index 1.
    """
    finger, level = node_finger_level(node_id)
    pairs = []
    for offset, label in OFFSET_LABELS:
        if grid.mode == "physical" and offset not in PHYSICAL_OFFSETS:
            continue
        df, dl = _OFFSET_STEPS[offset]
        if 1 <= finger + df <= N_FINGERS and 1 <= level + dl <= N_LEVELS:
            pairs.append((node_id + offset, label))
    return pairs


# ---------------------------------------------------------------------------
# sequences


@dataclass
class SkeletonSequence:
    """Time-ordered 3-d joint coordinates for one gesture sample."""

    frames: np.ndarray  # (n_frames, n_joints, 3) float64
    label: int
    subject: int | None = None
    source: str | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def joints_per_frame(self) -> int:
        return self.frames.shape[1]


def grid_joint_coords(seq: SkeletonSequence) -> np.ndarray:
    """The (n_frames, 20, 3) coordinates of the lattice nodes.

    Sequences carrying wrist and palm (22 joints) have them dropped;
    20-joint sequences pass through.
    """
    if seq.joints_per_frame == 22:
        return seq.frames[:, 2:, :]
    if seq.joints_per_frame == N_GRID_NODES:
        return seq.frames
    raise InvalidInput(f"expected 20 or 22 joints per frame, got {seq.joints_per_frame}")


def resample(seq: SkeletonSequence, n_frames: int) -> SkeletonSequence:
    """Linearly resample a sequence to ``n_frames`` uniformly spaced frames.

    Per joint and coordinate, piecewise-linear interpolation over [0, 1];
    the first and last frames are preserved exactly, and resampling an
    already-resampled sequence is a bitwise no-op.
    """
    if n_frames < 2:
        raise InvalidInput(f"n_frames must be >= 2, got {n_frames}")
    if seq.n_frames < 2:
        raise InvalidInput("cannot resample a sequence with fewer than 2 frames")
    src_t = np.linspace(0.0, 1.0, seq.n_frames)
    dst_t = np.linspace(0.0, 1.0, n_frames)
    flat = seq.frames.reshape(seq.n_frames, -1)
    out = np.empty((n_frames, flat.shape[1]), dtype=np.float64)
    for c in range(flat.shape[1]):
        out[:, c] = np.interp(dst_t, src_t, flat[:, c])
    return SkeletonSequence(
        frames=out.reshape(n_frames, seq.joints_per_frame, 3),
        label=seq.label,
        subject=seq.subject,
        source=seq.source,
    )


# ---------------------------------------------------------------------------
# branch plan


def split_range(n: int, parts: int) -> list[tuple[int, int]]:
    """Partition range(n) into ``parts`` contiguous half-open pieces.

    Piece lengths differ by at most one; the longer pieces come last.
    """
    if parts < 1 or n < parts:
        raise InvalidInput(f"cannot split {n} frames into {parts} parts")
    base, extra = divmod(n, parts)
    bounds = []
    start = 0
    for k in range(parts):
        size = base + (1 if k >= parts - extra else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


@dataclass(frozen=True)
class BranchSpec:
    """One (sub-sequence, finger) branch: frames are 1-based inclusive."""

    sub_seq: int
    finger: int
    frame_range: tuple[int, int]
    joints: tuple[int, int, int, int]


@dataclass(frozen=True)
class BranchPlan:
    n_frames: int
    entries: tuple[BranchSpec, ...]


def build_branch_plan(n_frames: int) -> BranchPlan:
    """The 30 (sub-sequence, finger) branches over a sequence.

    Sub-sequence 1 is the whole sequence, 2-3 its halves, 4-6 its thirds;
    crossed with the five fingers, ordered sub-sequence-major.
    """
    if n_frames < 6:
        raise InvalidInput(f"need at least 6 frames for the branch plan, got {n_frames}")
    ranges = [(0, n_frames)]
    ranges += split_range(n_frames, 2)
    ranges += split_range(n_frames, 3)
    entries = []
    for s, (start, stop) in enumerate(ranges, start=1):
        for f in range(1, N_FINGERS + 1):
            entries.append(
                BranchSpec(
                    sub_seq=s,
                    finger=f,
                    frame_range=(start + 1, stop),
                    joints=finger_joints(f),
                )
            )
    return BranchPlan(n_frames=n_frames, entries=tuple(entries))


# ---------------------------------------------------------------------------
# loaders


def _parse_floats(path: Path, lineno: int, tokens: list[str], expected: int) -> np.ndarray:
    if len(tokens) != expected:
        raise ParseError(f"{path}:{lineno}: expected {expected} values, got {len(tokens)}")
    try:
        row = np.array([float(t) for t in tokens], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"{path}:{lineno}: non-numeric value ({exc})") from exc
    if not np.all(np.isfinite(row)):
        raise ParseError(f"{path}:{lineno}: non-finite coordinate")
    return row


def _read_skeleton_file(path: Path, n_joints: int, leading_index: bool) -> np.ndarray:
    expected = n_joints * 3 + (1 if leading_index else 0)
    rows = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            row = _parse_floats(path, lineno, tokens, expected)
            rows.append(row[1:] if leading_index else row)
    if not rows:
        raise ParseError(f"{path}:1: empty skeleton file")
    return np.stack(rows).reshape(len(rows), n_joints, 3)


def _read_index(path: Path, n_fields: int) -> list[tuple[str, list[int]]]:
    if not path.is_file():
        raise ConfigError(f"missing split index file: {path}")
    entries = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != n_fields:
                raise ParseError(f"{path}:{lineno}: expected {n_fields} fields, got {len(tokens)}")
            try:
                fields = [int(t) for t in tokens[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer field ({exc})") from exc
            entries.append((tokens[0], fields))
    entries.sort(key=lambda e: e[0])
    return entries


def _split_entries(root: Path, split: str, n_fields: int):
    """Resolve a split name to index entries.

    ``train``/``test`` read the matching index file; ``loso-train:K`` and
    ``loso-test:K`` pool both files and partition by subject K.
    """
    if split in ("train", "test"):
        return _read_index(root / f"{split}.txt", n_fields)
    if split.startswith(("loso-train:", "loso-test:")):
        kind, _, subj = split.partition(":")
        try:
            subject = int(subj)
        except ValueError:
            raise ConfigError(f"bad leave-one-subject-out split {split!r}") from None
        pooled = _read_index(root / "train.txt", n_fields) + _read_index(root / "test.txt", n_fields)
        pooled.sort(key=lambda e: e[0])
        held_out = kind == "loso-test"
        return [e for e in pooled if (e[1][-1] == subject) == held_out]
    raise ConfigError(
        f"unknown split {split!r}; expected train, test, loso-train:K or loso-test:K"
    )


def load_dhg(root_path, split: str, classes: int = 14) -> list[SkeletonSequence]:
    """Load DHG-style sequences (22 joints, 66 values per line).

    Index lines are ``relpath label14 label28 subject`` with 0-based
    labels; ``classes`` selects which label column applies.
    """
    if classes not in (14, 28):
        raise ConfigError(f"classes must be 14 or 28, got {classes}")
    root = Path(root_path)
    if not root.is_dir():
        raise ConfigError(f"dataset root does not exist: {root}")
    sequences = []
    for relpath, (label14, label28, subject) in _split_entries(root, split, 4):
        frames = _read_skeleton_file(root / relpath, 22, leading_index=False)
        sequences.append(
            SkeletonSequence(
                frames=frames,
                label=label14 if classes == 14 else label28,
                subject=subject,
                source=relpath,
            )
        )
    return sequences


def load_fpha(root_path, split: str) -> list[SkeletonSequence]:
    """Load FPHA-style sequences (frame index + 21 joints per line).

    The wrist (first joint) is dropped so frames carry exactly the 20
    lattice nodes; index lines are ``relpath label subject``.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise ConfigError(f"dataset root does not exist: {root}")
    sequences = []
    for relpath, (label, subject) in _split_entries(root, split, 3):
        frames = _read_skeleton_file(root / relpath, 21, leading_index=True)
        sequences.append(
            SkeletonSequence(
                frames=np.ascontiguousarray(frames[:, 1:, :]),
                label=label,
                subject=subject,
                source=relpath,
            )
        )
    return sequences


# ---------------------------------------------------------------------------
# synthetic fixtures


def _synthetic_frames(cls: int, n_frames: int, amplitude: float, rng) -> np.ndarray:
    """One DHG-format sequence whose motion encodes the class.

    Classes differ in which finger moves, how fast, and (decisively for
    covariance features) by how much: per-class sway scales are spread
    over a wide geometric range.
    """
    frames = np.zeros((n_frames, 22, 3))
    frames[:, 1, 2] = 0.4  # palm above wrist
    for f in range(1, N_FINGERS + 1):
        for node in finger_joints(f):
            _, level = node_finger_level(node)
            frames[:, node - 1, 0] = 0.3 * (f - 3)
            frames[:, node - 1, 2] = 0.4 + 0.25 * level
    moving = cls % N_FINGERS + 1
    freq = 1.0 + 0.8 * (cls // N_FINGERS) + 0.35 * cls
    scale = amplitude * 0.4 * 4.0 ** (cls % 3)
    t = np.linspace(0.0, 2.0 * np.pi * freq, n_frames)
    direction = 1.0 if cls % 2 == 0 else -1.0
    for node in finger_joints(moving):
        _, level = node_finger_level(node)
        sway = scale * level / N_LEVELS
        frames[:, node - 1, 0] += sway * np.sin(t + 0.4 * level)
        frames[:, node - 1, 1] += direction * sway * np.cos(t)
    frames += rng.normal(scale=0.02 * scale, size=frames.shape)
    return frames


def write_synthetic_dataset(
    root_path,
    *,
    n_classes: int = 2,
    train_per_class: int = 10,
    test_per_class: int = 0,
    n_frames: int = 20,
    amplitude: float = 1.0,
    seed: int = 0,
) -> None:
    """Emit a miniature DHG-format dataset with separable motion classes."""
    root = Path(root_path)
    (root / "sequences").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    for kind, per_class in (("train", train_per_class), ("test", test_per_class)):
        lines = []
        for cls in range(n_classes):
            for k in range(per_class):
                frames = _synthetic_frames(cls, n_frames, amplitude, rng)
                rel = f"sequences/{kind}_c{cls}_{k:02d}.txt"
                with open(root / rel, "w") as fh:
                    for frame in frames:
                        fh.write(" ".join(f"{v:.9f}" for v in frame.ravel()) + "\n")
                subject = k % 3 + 1
                lines.append(f"{rel} {cls} {cls} {subject}\n")
        with open(root / f"{kind}.txt", "w") as fh:
            fh.writelines(lines)
