"""The fixed 25-joint skeleton and its topology helpers."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .errors import SkeletonError

JOINT_COUNT = 25
DOF_COUNT = 3 * JOINT_COUNT
ROOT = -1

SKELETON_FILE = "skeleton_std25.json"


@dataclass(frozen=True)
class Skeleton:
    """Joint tree on which every motion lives.

    ``parents[j]`` is the parent index of joint ``j``; the root carries ``-1``.
    ``bones`` lists ``(child, parent)`` pairs in child order.
    """

    joint_names: tuple
    parents: tuple
    spinal_joints: frozenset
    skeleton_id: str = "custom"
    offsets: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        validate_topology(self.parents, self.spinal_joints, len(self.joint_names))

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def bones(self) -> tuple:
        return tuple((j, p) for j, p in enumerate(self.parents) if p != ROOT)

    @property
    def root(self) -> int:
        return self.parents.index(ROOT)

    def bone_index_arrays(self):
        """(child, parent) index arrays, convenient for vectorised kernels."""
        bones = np.asarray(self.bones, dtype=np.intp).reshape(-1, 2)
        return np.ascontiguousarray(bones[:, 0]), np.ascontiguousarray(bones[:, 1])

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.joint_count, self.joint_count))
        for c, p in self.bones:
            a[c, p] = a[p, c] = 1.0
        return a

    def bone_matrix(self) -> np.ndarray:
        """Fixed linear map from a joint-major DoF row to stacked bone vectors (child - parent)."""
        bones = self.bones
        d = np.zeros((3 * self.joint_count, 3 * len(bones)))
        for k, (c, p) in enumerate(bones):
            for ax in range(3):
                d[3 * c + ax, 3 * k + ax] = 1.0
                d[3 * p + ax, 3 * k + ax] = -1.0
        return d


def validate_topology(parents, spinal_joints, n_names=None):
    n = len(parents)
    if n_names is not None and n_names != n:
        raise SkeletonError(f"{n_names} joint names for {n} joints")
    roots = [j for j, p in enumerate(parents) if p == ROOT]
    if len(roots) != 1:
        raise SkeletonError(f"expected exactly one root, found {len(roots)}")
    for j, p in enumerate(parents):
        if p != ROOT and not 0 <= p < n:
            raise SkeletonError(f"joint {j} has out-of-range parent {p}")
    # every joint must reach the root without revisiting a joint
    for j in range(n):
        seen = set()
        k = j
        while k != ROOT:
            if k in seen:
                raise SkeletonError(f"cycle through joint {k}")
            seen.add(k)
            k = parents[k]
    if not spinal_joints:
        raise SkeletonError("spinal joint set is empty")
    if any(not 0 <= s < n for s in spinal_joints):
        raise SkeletonError("spinal joint index out of range")


def _content_checksum(doc: dict) -> str:
    body = {k: doc[k] for k in ("joint_names", "parents", "spinal_joints", "offsets")}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def skeleton_from_dict(doc: dict) -> Skeleton:
    try:
        checksum = doc["checksum"]
        if checksum != _content_checksum(doc):
            raise SkeletonError("skeleton file checksum mismatch")
        return Skeleton(
            joint_names=tuple(doc["joint_names"]),
            parents=tuple(int(p) for p in doc["parents"]),
            spinal_joints=frozenset(int(s) for s in doc["spinal_joints"]),
            skeleton_id=doc["skeleton_id"],
            offsets=np.asarray(doc["offsets"], dtype=float),
        )
    except KeyError as exc:
        raise SkeletonError(f"skeleton file missing field {exc}") from None


def skeleton_to_dict(skel: Skeleton) -> dict:
    doc = {
        "format_version": 1,
        "skeleton_id": skel.skeleton_id,
        "joint_names": list(skel.joint_names),
        "parents": list(skel.parents),
        "spinal_joints": sorted(skel.spinal_joints),
        "offsets": np.asarray(skel.offsets).tolist() if skel.offsets is not None else None,
    }
    doc["checksum"] = _content_checksum(doc)
    return doc


def load_skeleton(path) -> Skeleton:
    with open(path) as fh:
        return skeleton_from_dict(json.load(fh))


@lru_cache(maxsize=1)
def standard_skeleton() -> Skeleton:
    """The shipped 25-joint tree (pelvis root, spinal set ``{0..4}``)."""
    text = resources.files("smartattack.data").joinpath(SKELETON_FILE).read_text()
    skel = skeleton_from_dict(json.loads(text))
    if skel.joint_count != JOINT_COUNT:
        raise SkeletonError("standard skeleton must have 25 joints")
    return skel
