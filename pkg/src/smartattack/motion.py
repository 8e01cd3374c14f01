"""Motion containers, derivative sequences, joint weighting and the JSON interchange format."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import MOTION_FORMAT_VERSION, kernels
from .errors import InvalidMotionError, MotionParseError, UnsupportedOrderError
from .skeleton import DOF_COUNT, Skeleton, standard_skeleton

MIN_FRAMES = 8
MAX_ORDER = 4

SPINAL_WEIGHT = 0.04
OTHER_WEIGHT = 0.02


@dataclass
class Motion:
    """``frames`` is an (M, 75) joint-major array of positions in meters."""

    frames: np.ndarray
    fps: float = 30.0
    label: int | None = None
    id: str = ""
    skeleton_id: str = "std25-v1"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2 or frames.shape[1] != DOF_COUNT:
            raise InvalidMotionError(f"frames must be (M, {DOF_COUNT}), got {frames.shape}")
        if frames.shape[0] < MIN_FRAMES:
            raise InvalidMotionError(f"need at least {MIN_FRAMES} frames, got {frames.shape[0]}")
        bad = ~np.isfinite(frames).all(axis=1)
        if bad.any():
            raise InvalidMotionError(f"non-finite coordinate in frame {int(np.argmax(bad))}")
        if not (math.isfinite(self.fps) and self.fps > 0):
            raise InvalidMotionError(f"fps must be positive, got {self.fps}")
        frames.setflags(write=False)
        self.frames = frames

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def joints(self) -> np.ndarray:
        """View as (M, 25, 3)."""
        return self.frames.reshape(self.frame_count, -1, 3)

    def with_frames(self, frames, **changes) -> "Motion":
        kw = dict(fps=self.fps, label=self.label, id=self.id, skeleton_id=self.skeleton_id,
                  meta=dict(self.meta))
        kw.update(changes)
        return Motion(frames, **kw)


@dataclass(frozen=True)
class DerivativeSequence:
    order: int
    values: np.ndarray


def bone_lengths(frame, skeleton: Skeleton | None = None) -> np.ndarray:
    """Lengths of the skeleton's bones for one 75-vector frame, or for each row of (M, 75)."""
    skeleton = skeleton or standard_skeleton()
    arr = np.asarray(frame, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise InvalidMotionError("non-finite joint coordinate")
    child, parent = skeleton.bone_index_arrays()
    rows = arr.reshape(-1, 3 * skeleton.joint_count)
    out = kernels.bone_lengths(rows, child, parent)
    return out[0] if arr.ndim == 1 else out


def forward_difference(motion, order: int) -> DerivativeSequence:
    """Order-``n`` forward difference over frames (positional; not scaled by fps)."""
    frames = motion.frames if isinstance(motion, Motion) else np.asarray(motion, dtype=np.float64)
    if not 0 <= order <= MAX_ORDER:
        raise UnsupportedOrderError(f"order must lie in [0, {MAX_ORDER}], got {order}")
    if frames.shape[0] <= order:
        raise UnsupportedOrderError(f"{frames.shape[0]} frames cannot support order {order}")
    if order == 0:
        return DerivativeSequence(0, np.array(frames))
    values = kernels.forward_diff(frames[None], order)[0]
    return DerivativeSequence(order, values)


def joint_weight_vector(skeleton: Skeleton | None = None, spinal_weight: float = SPINAL_WEIGHT,
                        other_weight: float = OTHER_WEIGHT, spinal_joints=None) -> np.ndarray:
    """Per-DoF weights: ``spinal_weight`` on the three DoFs of each spinal joint, else ``other_weight``."""
    if spinal_weight < 0 or other_weight < 0:
        raise ValueError("joint weights must be nonnegative")
    skeleton = skeleton or standard_skeleton()
    spinal = skeleton.spinal_joints if spinal_joints is None else spinal_joints
    gamma = np.full(3 * skeleton.joint_count, float(other_weight))
    for j in spinal:
        gamma[3 * j:3 * j + 3] = spinal_weight
    return gamma


def motion_to_dict(motion: Motion) -> dict:
    doc = {
        "format_version": MOTION_FORMAT_VERSION,
        "skeleton": motion.skeleton_id,
        "id": motion.id,
        "fps": float(motion.fps),
        "label": motion.label,
    }
    doc.update(motion.meta)
    doc["frames"] = motion.frames.tolist()
    return doc


_RESERVED = {"format_version", "skeleton", "id", "fps", "label", "frames"}


def motion_from_dict(doc: dict) -> Motion:
    if not isinstance(doc, dict):
        raise MotionParseError("motion document must be a JSON object")
    if doc.get("format_version") != MOTION_FORMAT_VERSION:
        raise MotionParseError(f"unsupported format_version {doc.get('format_version')!r}")
    frames = doc.get("frames")
    if not isinstance(frames, list) or not frames:
        raise MotionParseError("missing or empty 'frames'")
    for i, row in enumerate(frames):
        if not isinstance(row, list) or len(row) != DOF_COUNT:
            n = len(row) if isinstance(row, list) else type(row).__name__
            raise MotionParseError(f"frame {i}: expected {DOF_COUNT} values, got {n}", frame=i)
        for v in row:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise MotionParseError(f"frame {i}: non-numeric value {v!r}", frame=i)
            if not math.isfinite(v):
                raise MotionParseError(f"frame {i}: non-finite coordinate {v!r}", frame=i)
    label = doc.get("label")
    if label is not None and (isinstance(label, bool) or not isinstance(label, int)):
        raise MotionParseError(f"label must be an integer, got {label!r}")
    try:
        return Motion(
            np.array(frames, dtype=np.float64),
            fps=float(doc.get("fps", 30.0)),
            label=label,
            id=str(doc.get("id", "")),
            skeleton_id=str(doc.get("skeleton", "std25-v1")),
            meta={k: v for k, v in doc.items() if k not in _RESERVED},
        )
    except InvalidMotionError as exc:
        raise MotionParseError(str(exc)) from exc


def save_motion(motion: Motion, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips binary64
    with open(path, "w") as fh:
        json.dump(motion_to_dict(motion), fh, allow_nan=False)
        fh.write("\n")


def load_motion(path) -> Motion:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MotionParseError(f"{path}: invalid JSON ({exc})") from exc
    return motion_from_dict(doc)
