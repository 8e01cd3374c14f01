"""Procedural labelled motion datasets on the standard skeleton.

Poses are built by forward kinematics over the skeleton's fixed rest offsets, so
bone lengths are exact before joint noise is added.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .motion import Motion, load_motion, save_motion
from .skeleton import standard_skeleton

CLASS_NAMES = (
    "wave-one-arm",
    "raise-both-arms",
    "squat",
    "kick",
    "jump",
    "turn",
    "clap",
    "walk-in-place",
)

# joint indices on the standard skeleton
PELVIS, SPINE, CHEST = 0, 1, 2
L_SHOULDER, L_ELBOW = 6, 7
R_SHOULDER, R_ELBOW = 10, 11
L_HIP, L_KNEE, L_ANKLE = 13, 14, 15
R_HIP, R_KNEE, R_ANKLE = 17, 18, 19


@dataclass
class DatasetSpec:
    class_count: int = 8
    samples_per_class: int = 100
    frame_count: int = 48
    fps: float = 30.0
    noise_std: float = 0.002
    seed: int = 0
    amplitude_jitter: float = 0.2
    test_fraction: float = 0.2
    tempo_jitter: float = 0.0       # relative speed change, uniform in [-x, x]
    heading_jitter: float = 0.0     # radians of facing direction, uniform in [-x, x]
    position_jitter: float = 0.0    # metres of floor offset per horizontal axis

    def __post_init__(self):
        if self.class_count < 2:
            raise ConfigError("class_count must be at least 2")
        if self.class_count > len(CLASS_NAMES):
            raise ConfigError(f"only {len(CLASS_NAMES)} class generators are available, "
                              f"asked for {self.class_count}")
        if self.samples_per_class < 1:
            raise ConfigError("samples_per_class must be positive")
        if self.frame_count < 8:
            raise ConfigError("frame_count must be at least 8")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if not 0 <= self.amplitude_jitter < 1:
            raise ConfigError("amplitude_jitter must lie in [0, 1)")
        if not 0 <= self.tempo_jitter < 1:
            raise ConfigError("tempo_jitter must lie in [0, 1)")
        if self.heading_jitter < 0 or self.position_jitter < 0:
            raise ConfigError("heading_jitter and position_jitter must be nonnegative")
        if self.fps <= 0:
            raise ConfigError("fps must be positive")

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetSpec":
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown dataset spec keys: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


@dataclass
class Dataset:
    motions: list
    class_names: list
    split: dict = field(default_factory=dict)  # motion id -> "train" | "test"
    spec: DatasetSpec | None = None

    def subset(self, which: str) -> list:
        return [m for m in self.motions if self.split.get(m.id) == which]

    @property
    def train(self):
        return self.subset("train")

    @property
    def test(self):
        return self.subset("test")


# -- kinematics ---------------------------------------------------------------

def _rx(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2)


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def forward_kinematics(skeleton, root_pos, root_rot, local):
    """Global joint positions (T, J, 3) from root trajectory and per-joint local rotations."""
    t = root_pos.shape[0]
    offsets = np.asarray(skeleton.offsets)
    eye = np.broadcast_to(np.eye(3), (t, 3, 3))
    pos = np.zeros((t, skeleton.joint_count, 3))
    rot = np.zeros((t, skeleton.joint_count, 3, 3))
    for j, p in enumerate(skeleton.parents):
        r_local = local.get(j, eye)
        if p < 0:
            pos[:, j] = root_pos
            rot[:, j] = root_rot @ r_local
        else:
            pos[:, j] = pos[:, p] + np.einsum("tij,j->ti", rot[:, p], offsets[j])
            rot[:, j] = rot[:, p] @ r_local
    return pos


def _wave(t, ph, a):
    raise_ = np.full_like(t, 2.5)
    swing = a * 0.6 * np.sin(2 * np.pi * 1.5 * t + ph)
    return {R_SHOULDER: _rz(-raise_), R_ELBOW: _rz(swing - 0.3)}, 0.0, 0.0


def _raise_both(t, ph, a):
    th = a * 1.3 * (1 - np.cos(2 * np.pi * 0.7 * t + ph))
    return {L_SHOULDER: _rz(th), R_SHOULDER: _rz(-th)}, 0.0, 0.0


def _squat(t, ph, a):
    th = a * 0.55 * (1 - np.cos(2 * np.pi * 0.6 * t + ph))
    drop = (0.42 + 0.40) * (1 - np.cos(th))
    loc = {L_HIP: _rx(-th), R_HIP: _rx(-th), L_KNEE: _rx(2 * th), R_KNEE: _rx(2 * th),
           L_ANKLE: _rx(-th), R_ANKLE: _rx(-th), SPINE: _rx(0.4 * th),
           L_SHOULDER: _rx(-0.8 * th), R_SHOULDER: _rx(-0.8 * th)}
    return loc, -drop, 0.0


def _kick(t, ph, a):
    s = np.maximum(0.0, np.sin(2 * np.pi * 0.8 * t + ph))
    th = a * 1.2 * s
    knee = 3.6 * s * (1 - s)
    return {R_HIP: _rx(-th), R_KNEE: _rx(knee), L_SHOULDER: _rz(0.3 + 0.2 * th),
            R_SHOULDER: _rz(-0.3 - 0.2 * th)}, 0.0, 0.0


def _jump(t, ph, a):
    s = np.abs(np.sin(np.pi * 1.1 * t + ph))
    lift = a * 0.22 * s
    tuck = 0.35 * (1 - s)
    swing = a * 1.0 * s
    loc = {L_HIP: _rx(-tuck), R_HIP: _rx(-tuck), L_KNEE: _rx(2 * tuck), R_KNEE: _rx(2 * tuck),
           L_SHOULDER: _rx(-swing), R_SHOULDER: _rx(-swing)}
    return loc, lift - 0.82 * (1 - np.cos(tuck)), 0.0


def _turn(t, ph, a):
    yaw = a * 1.4 * np.sin(2 * np.pi * 0.45 * t + ph)
    step = 0.3 * np.maximum(0.0, np.sin(2 * np.pi * 1.2 * t + ph))
    return {L_HIP: _rx(-step), L_KNEE: _rx(2 * step)}, 0.0, yaw


def _clap(t, ph, a):
    fwd = np.full_like(t, 1.3)
    spread = 0.45 + a * 0.35 * np.sin(2 * np.pi * 1.6 * t + ph)
    return {L_SHOULDER: _ry(-spread) @ _rx(-fwd), R_SHOULDER: _ry(spread) @ _rx(-fwd),
            L_ELBOW: _rx(-0.4 + 0 * t), R_ELBOW: _rx(-0.4 + 0 * t)}, 0.0, 0.0


def _walk(t, ph, a):
    w = 2 * np.pi * 0.9 * t + ph
    lh = a * 0.7 * np.maximum(0.0, np.sin(w))
    rh = a * 0.7 * np.maximum(0.0, -np.sin(w))
    arm = a * 0.45 * np.sin(w)
    return {L_HIP: _rx(-lh), R_HIP: _rx(-rh), L_KNEE: _rx(1.6 * lh), R_KNEE: _rx(1.6 * rh),
            L_SHOULDER: _rx(arm), R_SHOULDER: _rx(-arm)}, 0.0, 0.0


_GENERATORS = (_wave, _raise_both, _squat, _kick, _jump, _turn, _clap, _walk)


def synthesize_clean(label: int, frame_count: int, fps: float, phase: float, amplitude: float,
                     skeleton=None, tempo: float = 1.0, heading: float = 0.0,
                     offset=(0.0, 0.0)) -> np.ndarray:
    """Noise-free (T, 75) motion for one class, before sensor noise."""
    skeleton = skeleton or standard_skeleton()
    t = tempo * np.arange(frame_count) / fps
    local, dy, yaw = _GENERATORS[label](t, phase, amplitude)
    root = np.tile(np.asarray(skeleton.offsets[skeleton.root]), (frame_count, 1))
    root[:, 1] += dy
    root[:, 0] += offset[0]
    root[:, 2] += offset[1]
    root_rot = _ry(heading + np.broadcast_to(yaw, t.shape).astype(float))
    pos = forward_kinematics(skeleton, root, root_rot, local)
    return pos.reshape(frame_count, -1)


def _sample_rng(seed: int, index: int):
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, index]))


def generate_dataset(spec: DatasetSpec) -> Dataset:
    """Deterministic labelled dataset; each sample has its own RNG stream from (seed, index)."""
    skeleton = standard_skeleton()
    motions = []
    index = 0
    for label in range(spec.class_count):
        for k in range(spec.samples_per_class):
            rng = _sample_rng(spec.seed, index)
            phase = rng.uniform(0, 2 * np.pi)
            amp = 1.0 + (rng.uniform(-spec.amplitude_jitter, spec.amplitude_jitter)
                         if spec.amplitude_jitter > 0 else 0.0)
            # draws are unconditional so enabling one jitter leaves the others' streams alone
            tempo = 1.0 + spec.tempo_jitter * rng.uniform(-1, 1)
            heading = spec.heading_jitter * rng.uniform(-1, 1)
            offset = spec.position_jitter * rng.uniform(-1, 1, 2)
            frames = synthesize_clean(label, spec.frame_count, spec.fps, phase, amp, skeleton,
                                      tempo, heading, offset)
            if spec.noise_std > 0:
                frames = frames + rng.normal(0.0, spec.noise_std, frames.shape)
            motions.append(Motion(frames, fps=spec.fps, label=label, id=f"c{label}_s{k:04d}",
                                  skeleton_id=skeleton.skeleton_id))
            index += 1
    ds = Dataset(motions, list(CLASS_NAMES[:spec.class_count]), {}, spec)
    return split_dataset(ds, spec.test_fraction, spec.seed)


def split_dataset(dataset: Dataset, test_fraction: float, seed: int) -> Dataset:
    """Stratified train/test split; every class keeps at least one test motion."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must lie strictly between 0 and 1")
    by_class = {}
    for m in dataset.motions:
        by_class.setdefault(m.label, []).append(m.id)
    split = {}
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, 0x5B117]))
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        n_test = int(round(test_fraction * len(ids)))
        if n_test < 1:
            raise ConfigError(f"class {label}: test_fraction leaves no test sample")
        if n_test >= len(ids):
            raise ConfigError(f"class {label}: test_fraction leaves no training sample")
        order = rng.permutation(len(ids))
        test_ids = {ids[i] for i in order[:n_test]}
        for i in ids:
            split[i] = "test" if i in test_ids else "train"
    return Dataset(list(dataset.motions), list(dataset.class_names), split, dataset.spec)


# -- on-disk layout -------------------------------------------------------------

def save_dataset(dataset: Dataset, out_dir) -> str:
    os.makedirs(os.path.join(out_dir, "motions"), exist_ok=True)
    for m in dataset.motions:
        save_motion(m, os.path.join(out_dir, "motions", f"{m.id}.json"))
    manifest = {
        "format_version": 1,
        "spec": asdict(dataset.spec) if dataset.spec else None,
        "class_names": dataset.class_names,
        "split": {k: dataset.split[k] for k in sorted(dataset.split)},
        "motions": [m.id for m in dataset.motions],
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def load_dataset(path) -> Dataset:
    with open(os.path.join(path, "manifest.json")) as fh:
        manifest = json.load(fh)
    motions = [load_motion(os.path.join(path, "motions", f"{i}.json")) for i in manifest["motions"]]
    spec = DatasetSpec(**manifest["spec"]) if manifest.get("spec") else None
    return Dataset(motions, manifest["class_names"], manifest["split"], spec)


def directory_checksum(path) -> str:
    h = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(path)):
        dirs.sort()
        for name in sorted(files):
            full = os.path.join(root, name)
            h.update(os.path.relpath(full, path).encode())
            with open(full, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()
