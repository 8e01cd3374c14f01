"""Black-box transfer evaluation and joint-level attack statistics."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import REPORT_SCHEMA_VERSION
from .attack import AttackConfig, AttackStrategy, attack_batch, success_mask
from .errors import ConfigError
from .models import ModelCheckpoint, predict_logits
from .motion import Motion, forward_difference
from .skeleton import JOINT_COUNT, standard_skeleton

MAP_NAMES = ("disp_disp", "disp_vel", "disp_acc")


def model_id(ckpt: ModelCheckpoint) -> str:
    return str(ckpt.metadata.get("name", ckpt.architecture_id))


@dataclass
class TargetOutcome:
    clean_accuracy: float
    success_rate: float
    sample_count: int

    def to_dict(self):
        return {"clean_accuracy": self.clean_accuracy, "success_rate": self.success_rate,
                "sample_count": self.sample_count}


@dataclass
class TransferReport:
    surrogate_id: str
    strategy: str
    white_box_success_rate: float
    sample_count: int
    targets: dict = field(default_factory=dict)  # target id -> TargetOutcome

    def to_dict(self):
        return {"schema_version": REPORT_SCHEMA_VERSION, "surrogate_id": self.surrogate_id,
                "strategy": self.strategy, "white_box_success_rate": self.white_box_success_rate,
                "sample_count": self.sample_count,
                "targets": {k: v.to_dict() for k, v in self.targets.items()}}


def _ids(targets):
    if isinstance(targets, dict):
        return list(targets.items())
    out, seen = [], {}
    for ckpt in targets:
        name = model_id(ckpt)
        seen[name] = seen.get(name, 0) + 1
        out.append((name if seen[name] == 1 else f"{name}#{seen[name]}", ckpt))
    return out


def evaluate_transfer(target: ModelCheckpoint, originals, adversarials, strategy,
                      sa_targets=None) -> TargetOutcome:
    """Replay adversarial motions on ``target``; success uses the target's own predicate."""
    if isinstance(strategy, str):
        strategy = AttackStrategy.parse(strategy)
    if not originals:
        raise ConfigError("transfer evaluation needs at least one sample")
    labels = np.array([m.label for m in originals], dtype=int)
    clean = np.argmax(predict_logits(target, np.stack([m.frames for m in originals])), axis=1)
    z = predict_logits(target, np.stack([m.frames for m in adversarials]))
    ok = success_mask(strategy, z, labels, sa_targets)
    return TargetOutcome(float(np.mean(clean == labels)), float(np.mean(ok)), len(originals))


def transfer_attack(surrogate: ModelCheckpoint, targets, motions, config: AttackConfig,
                    return_results=False):
    """Attack ``surrogate`` white-box and replay the examples on every target.

    ``motions`` may be a Dataset (its test split is used) or a list; motions the
    surrogate misclassifies are dropped before attacking.
    """
    pairs = _ids(targets)
    for name, ckpt in pairs:
        if ckpt.class_count != surrogate.class_count:
            raise ConfigError(f"target {name} has {ckpt.class_count} classes, "
                              f"surrogate has {surrogate.class_count}")
    motions = list(motions.test if hasattr(motions, "test") else motions)
    if not motions:
        raise ConfigError("no motions to attack")
    pred = np.argmax(predict_logits(surrogate, np.stack([m.frames for m in motions])), axis=1)
    kept = [m for m, p in zip(motions, pred) if p == m.label]
    if not kept:
        raise ConfigError("surrogate classifies none of the motions correctly")
    results = attack_batch(surrogate, kept, config)
    adv = [r.adversarial for r in results]
    sa_targets = None
    if config.strategy.kind == "SA":
        sa_targets = np.array([r.target for r in results])
    report = TransferReport(model_id(surrogate), str(config.strategy),
                            float(np.mean([r.success for r in results])), len(kept))
    for name, ckpt in pairs:
        report.targets[name] = evaluate_transfer(ckpt, kept, adv, config.strategy, sa_targets)
    return (report, results) if return_results else report


# -- joint statistics ----------------------------------------------------------------

def _frames(x):
    return x.frames if isinstance(x, Motion) else np.asarray(x, dtype=np.float64)


def joint_displacements(original, adversarial) -> np.ndarray:
    """Per-joint Euclidean norm of the displacement trajectory over all frames."""
    d = _frames(adversarial) - _frames(original)
    if d.ndim != 2 or d.shape[1] != 3 * JOINT_COUNT:
        raise ConfigError(f"expected (frames, {3 * JOINT_COUNT}) motions, got {d.shape}")
    return np.sqrt((d.reshape(len(d), JOINT_COUNT, 3) ** 2).sum(axis=(0, 2)))


def joint_mean_derivative_norm(original, order: int) -> np.ndarray:
    """Mean over frames of each joint's 3-DoF order-``order`` difference norm."""
    v = forward_difference(_frames(original), order).values
    return np.linalg.norm(v.reshape(len(v), JOINT_COUNT, 3), axis=2).mean(axis=0)


def pearson_matrix(a, b) -> np.ndarray:
    """Correlation between every column of ``a`` and every column of ``b`` (samples on rows).

    Columns with zero variance produce NaN, which the report layer writes as null.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0] or a.shape[0] < 2:
        raise ConfigError("correlation needs at least two paired samples")
    ac = a - a.mean(axis=0)
    bc = b - b.mean(axis=0)
    na = np.sqrt((ac ** 2).sum(axis=0))
    nb = np.sqrt((bc ** 2).sum(axis=0))
    # relative tolerance: a column constant up to rounding has no defined correlation
    dead_a = na <= 1e-12 * (np.abs(a).max(axis=0) * math.sqrt(len(a)) + 1e-300)
    dead_b = nb <= 1e-12 * (np.abs(b).max(axis=0) * math.sqrt(len(b)) + 1e-300)
    with np.errstate(invalid="ignore", divide="ignore"):
        r = (ac.T @ bc) / np.outer(na, nb)
    r = np.clip(r, -1.0, 1.0)
    r[dead_a, :] = np.nan
    r[:, dead_b] = np.nan
    return r


@dataclass
class CorrelationReport:
    disp_disp: np.ndarray
    disp_vel: np.ndarray
    disp_acc: np.ndarray
    displacement_mean: np.ndarray
    displacement_std: np.ndarray
    sample_count: int
    displacements: np.ndarray = None   # (samples, joints)
    speeds: np.ndarray = None
    accelerations: np.ndarray = None
    sample_ids: list = None
    by_label: dict = None              # label -> CorrelationReport

    def maps(self):
        return {n: getattr(self, n) for n in MAP_NAMES}

    def diagonal_margin(self, name="disp_acc") -> float:
        """Mean defined diagonal minus mean defined off-diagonal entry."""
        m = getattr(self, name)
        diag = np.diag(m)
        off = m[~np.eye(len(m), dtype=bool)]
        if np.isnan(diag).all() or np.isnan(off).all():
            return float("nan")
        return float(np.nanmean(diag) - np.nanmean(off))

    def summary(self):
        def clean(x):
            return [None if not np.isfinite(v) else float(v) for v in np.ravel(x)]
        out = {"schema_version": REPORT_SCHEMA_VERSION, "sample_count": self.sample_count,
               "joints": list(standard_skeleton().joint_names),
               "displacement_mean": clean(self.displacement_mean),
               "displacement_std": clean(self.displacement_std),
               "diagonal_margin": {n: _none_if_nan(self.diagonal_margin(n))
                                   for n in ("disp_vel", "disp_acc")},
               "undefined_entries": {n: int(np.isnan(m).sum()) for n, m in self.maps().items()}}
        if self.by_label:
            out["by_label"] = {str(k): v.summary() for k, v in sorted(self.by_label.items())}
        return out


def _none_if_nan(x):
    return None if not np.isfinite(x) else x


def pearson_correlation_maps(originals, adversarials, group_by_label=False) -> CorrelationReport:
    """Displacement/displacement, displacement/speed and displacement/acceleration maps.

    Entry (i, j) correlates joint i's displacement norm with joint j's statistic
    across the sample set.
    """
    originals, adversarials = list(originals), list(adversarials)
    if len(originals) != len(adversarials):
        raise ConfigError("originals and adversarials differ in length")
    if not originals:
        raise ConfigError("empty sample set")
    disp = np.stack([joint_displacements(o, a) for o, a in zip(originals, adversarials)])
    vel = np.stack([joint_mean_derivative_norm(o, 1) for o in originals])
    acc = np.stack([joint_mean_derivative_norm(o, 2) for o in originals])
    ids = [getattr(o, "id", str(i)) for i, o in enumerate(originals)]
    report = CorrelationReport(
        pearson_matrix(disp, disp), pearson_matrix(disp, vel), pearson_matrix(disp, acc),
        disp.mean(axis=0), disp.std(axis=0), len(disp), disp, vel, acc, ids)
    if group_by_label:
        labels = [getattr(o, "label", None) for o in originals]
        groups = {}
        for i, lab in enumerate(labels):
            groups.setdefault(lab, []).append(i)
        report.by_label = {}
        for lab, rows in groups.items():
            if len(rows) >= 2:
                report.by_label[lab] = pearson_correlation_maps(
                    [originals[i] for i in rows], [adversarials[i] for i in rows])
    return report


# -- report files --------------------------------------------------------------------

def _fmt(x) -> str:
    return "null" if not np.isfinite(x) else repr(float(x))


def write_matrix_csv(matrix, path, names=None):
    names = list(names or standard_skeleton().joint_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["joint"] + names)
        for name, row in zip(names, matrix):
            w.writerow([name] + [_fmt(v) for v in row])


def read_matrix_csv(path):
    """Inverse of write_matrix_csv: returns (names, matrix) with NaN for null."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    mat = np.array([[np.nan if v == "null" else float(v) for v in r[1:]] for r in rows[1:]])
    return names, mat


def write_reports(report: CorrelationReport, out_dir, transfer_reports=()) -> list:
    """Write one CSV per correlation map, a JSON summary and a long-format CSV.

    Returns the written paths, sorted.
    """
    if report is None or report.sample_count == 0:
        raise ConfigError("empty sample set")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(standard_skeleton().joint_names)
    written = []
    for name, m in report.maps().items():
        p = out / f"{name}.csv"
        write_matrix_csv(m, p, names)
        written.append(p)
    summary = report.summary()
    if transfer_reports:
        summary["transfer"] = [t.to_dict() for t in transfer_reports]
    p = out / "summary.json"
    p.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(p)
    if report.displacements is not None:
        p = out / "long.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample", "joint", "displacement", "speed", "acceleration"])
            for s, sid in enumerate(report.sample_ids):
                for j, jn in enumerate(names):
                    w.writerow([sid, jn, _fmt(report.displacements[s, j]),
                                _fmt(report.speeds[s, j]), _fmt(report.accelerations[s, j])])
        written.append(p)
    return sorted(str(p) for p in written)


def write_transfer_report(reports, path):
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
