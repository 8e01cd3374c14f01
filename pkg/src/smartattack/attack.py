"""Perceptual adversarial attack on skeletal motion classifiers.

The objective is ``w * L_c + (1 - w) * L_p`` where ``L_p`` blends a derivative
matching term with a per-frame bone-length term and ``L_c`` depends on the
strategy (anything-but, anything-but-N, specified target). Optimisation starts
from the clean motion and takes Adam steps on the joint positions.

Many motions are attacked together as one batch: every loss term is per-sample
and Adam is elementwise, so batching does not couple the samples.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from . import autograd as ag
from .autograd import AdamState, Tensor, adam_step
from .errors import AttackAbortedError, ConfigError, ContractError
from .models import ModelCheckpoint, forward, predict_logits
from .motion import MAX_ORDER, Motion, joint_weight_vector
from .skeleton import DOF_COUNT, Skeleton, standard_skeleton

PRESETS = ("full", "l2", "l2acc", "l2bone")
TRACE_FIELDS = ("L", "L_c", "L_p", "l_dyn", "l_bl")


@dataclass(frozen=True)
class PerceptualWeights:
    w: float = 0.4
    alpha: float = 0.3
    beta: tuple = (0.6, 0.0, 0.4, 0.0, 0.0)
    gamma: np.ndarray = field(default_factory=joint_weight_vector)

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != MAX_ORDER + 1:
            raise ConfigError(f"beta needs {MAX_ORDER + 1} entries (orders 0..{MAX_ORDER})")
        if any(b < 0 for b in beta) or abs(sum(beta) - 1.0) > 1e-12:
            raise ConfigError(f"beta must be nonnegative and sum to 1, got {beta}")
        if not 0 <= self.w <= 1 or not 0 <= self.alpha <= 1:
            raise ConfigError("w and alpha must lie in [0, 1]")
        gamma = np.array(self.gamma, dtype=np.float64)
        if gamma.shape != (DOF_COUNT,) or (gamma < 0).any():
            raise ConfigError(f"gamma must be a nonnegative {DOF_COUNT}-vector")
        gamma.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    def to_dict(self):
        return {"w": self.w, "alpha": self.alpha, "beta": list(self.beta),
                "gamma": self.gamma.tolist()}


def loss_preset(name: str) -> PerceptualWeights:
    """Weights for the ablation settings: l2, l2acc, l2bone, or the full perceptual loss."""
    ones = np.ones(DOF_COUNT)
    if name == "full":
        return PerceptualWeights()
    if name == "l2":
        return PerceptualWeights(alpha=1.0, beta=(1, 0, 0, 0, 0), gamma=ones)
    if name == "l2acc":
        return PerceptualWeights(alpha=1.0, beta=(0.6, 0, 0.4, 0, 0), gamma=ones)
    if name == "l2bone":
        return PerceptualWeights(alpha=0.3, beta=(1, 0, 0, 0, 0), gamma=ones)
    raise ConfigError(f"unknown loss preset {name!r}; choose from {PRESETS}")


@dataclass(frozen=True)
class AttackStrategy:
    kind: str
    n: int | None = None
    target: int | None = None
    random_target: bool = False

    def __post_init__(self):
        if self.kind not in ("AB", "ABN", "SA"):
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.kind == "ABN" and (self.n is None or self.n < 1):
            raise ConfigError("ABN needs n >= 1")
        if self.kind == "SA" and self.target is None and not self.random_target:
            raise ConfigError("SA needs a target label or random_target")

    @classmethod
    def parse(cls, text: str) -> "AttackStrategy":
        """Parse ``ab``, ``abn:N``, ``sa:K`` or ``sa:random``."""
        head, _, arg = text.strip().lower().partition(":")
        try:
            if head == "ab" and not arg:
                return cls("AB")
            if head == "abn":
                return cls("ABN", n=int(arg))
            if head == "sa":
                return cls("SA", random_target=True) if arg == "random" else cls("SA", target=int(arg))
        except ValueError:
            pass
        raise ConfigError(f"cannot parse strategy {text!r}")

    def validate(self, class_count: int):
        if self.kind == "ABN" and self.n >= class_count:
            raise ConfigError(f"ABN n={self.n} must be below the class count {class_count}")
        if self.kind == "SA" and self.target is not None and not 0 <= self.target < class_count:
            raise ConfigError(f"SA target {self.target} outside [0, {class_count})")

    def __str__(self):
        if self.kind == "AB":
            return "ab"
        if self.kind == "ABN":
            return f"abn:{self.n}"
        return "sa:random" if self.random_target else f"sa:{self.target}"


@dataclass(frozen=True)
class AttackConfig:
    strategy: AttackStrategy = field(default_factory=lambda: AttackStrategy("AB"))
    lr: float = 0.005
    max_iters: int = 300
    loss_preset: str = "full"
    weights: PerceptualWeights | None = None
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.max_iters < 1:
            raise ConfigError("max_iters must be at least 1")
        if not self.lr >= 0:
            raise ConfigError("lr must be nonnegative")
        if self.loss_preset not in PRESETS:
            raise ConfigError(f"unknown loss preset {self.loss_preset!r}")
        if self.weights is None:
            object.__setattr__(self, "weights", loss_preset(self.loss_preset))

    def to_dict(self):
        return {"strategy": str(self.strategy), "lr": self.lr, "max_iters": self.max_iters,
                "loss_preset": self.loss_preset, "weights": self.weights.to_dict(),
                "seed": self.seed, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


@dataclass
class AttackResult:
    adversarial: Motion
    success: bool
    iterations_used: int
    loss_trace: np.ndarray       # (evaluations, 5) columns as TRACE_FIELDS
    label_trace: np.ndarray      # predicted label of each evaluated iterate
    final_prediction: np.ndarray  # class distribution of the returned iterate
    displacement: np.ndarray     # flattened q_hat - q
    ground_truth: int
    target: int | None = None
    best_iteration: int = -1
    strategy: str = "ab"

    @property
    def final_label(self) -> int:
        return int(np.argmax(self.final_prediction))

    def summary(self) -> dict:
        last = self.loss_trace[self.best_iteration if self.best_iteration >= 0 else -1]
        return {"id": self.adversarial.meta.get("origin_id", self.adversarial.id),
                "success": bool(self.success), "iterations": int(self.iterations_used),
                "best_iteration": int(self.best_iteration), "clean_label": int(self.ground_truth),
                "adversarial_label": self.final_label, "target": self.target,
                "final_losses": dict(zip(TRACE_FIELDS, map(float, last)))}


# -- losses ---------------------------------------------------------------------

def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def bone_loss(q, q_hat, skeleton: Skeleton | None = None):
    """Mean over frames of the squared bone-length deviation; (..., M, 75) -> (...)."""
    skeleton = skeleton or standard_skeleton()
    child, parent = skeleton.bone_index_arrays()
    q_hat = _as_tensor(q_hat)
    clean = ag.bone_lengths(Tensor(_data(q)), child, parent).data
    dev = ag.sub(ag.bone_lengths(q_hat, child, parent), clean)
    m = q_hat.shape[-2]
    return ag.scale(ag.l2sq(dev, axis=(-2, -1)), 1.0 / m)


def dyn_loss(q, q_hat, weights: PerceptualWeights):
    """Derivative matching: sum_n beta_n * ||gamma * (D^n q - D^n q_hat)||^2."""
    q_hat = _as_tensor(q_hat)
    dev = ag.sub(Tensor(_data(q)), q_hat)
    total = None
    for n, b in enumerate(weights.beta):
        if b == 0:
            continue
        term = ag.scale(ag.l2sq(ag.mul(ag.diff(dev, n), weights.gamma), axis=(-2, -1)), b)
        total = term if total is None else ag.add(total, term)
    return total


def perceptual_loss(q, q_hat, skeleton: Skeleton | None, weights: PerceptualWeights,
                    parts: dict | None = None):
    """``alpha * dyn + (1 - alpha) * bone``; fills ``parts`` with the two terms if given."""
    q_hat = _as_tensor(q_hat)
    dyn = dyn_loss(q, q_hat, weights)
    if weights.alpha < 1:
        bl = bone_loss(q, q_hat, skeleton)
        out = ag.add(ag.scale(dyn, weights.alpha), ag.scale(bl, 1.0 - weights.alpha))
    else:
        bl = Tensor(np.zeros(dyn.shape))
        out = ag.scale(dyn, weights.alpha)
    if parts is not None:
        parts["l_dyn"], parts["l_bl"] = dyn, bl
    return out


def softmax_np(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def ab_loss(clean_distribution, logits_hat):
    """Negative cross-entropy between the frozen clean distribution and the attacked prediction."""
    p = np.asarray(clean_distribution, dtype=np.float64)
    return ag.tsum(ag.mul(ag.log_softmax(_as_tensor(logits_hat), axis=-1), p), axis=-1)


def abn_loss(logits_hat):
    """Negative entropy of the attacked prediction (0 log 0 treated as 0)."""
    z = _as_tensor(logits_hat)
    return ag.tsum(ag.mul(ag.softmax(z, axis=-1), ag.log_softmax(z, axis=-1)), axis=-1)


def sa_loss(target, logits_hat):
    """Cross-entropy against the one-hot distribution of ``target`` (int or per-sample array)."""
    z = _as_tensor(logits_hat)
    onehot = np.zeros(z.shape)
    target = np.asarray(target)
    if onehot.ndim == 1:
        onehot[int(target)] = 1.0
    else:
        onehot[np.arange(onehot.shape[0]), np.broadcast_to(target, onehot.shape[:1])] = 1.0
    return ag.scale(ag.tsum(ag.mul(ag.log_softmax(z, axis=-1), onehot), axis=-1), -1.0)


def topn_excludes(probabilities, label, n) -> np.ndarray:
    """True where ``label`` is outside the top ``n``; ties keep the label inside."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    label = np.broadcast_to(np.asarray(label), p.shape[:1])
    p_true = p[np.arange(p.shape[0]), label]
    above = (p > p_true[:, None]).sum(axis=1)
    out = above >= n
    return out if np.ndim(probabilities) > 1 else bool(out[0])


def success_mask(strategy: AttackStrategy, logits, labels, targets=None) -> np.ndarray:
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels)
    if strategy.kind == "AB":
        return np.argmax(logits, axis=1) != labels
    if strategy.kind == "ABN":
        return topn_excludes(softmax_np(logits), labels, strategy.n)
    return np.argmax(logits, axis=1) == np.asarray(targets)


def classification_loss(strategy: AttackStrategy, logits_hat, clean_distribution=None, targets=None):
    if strategy.kind == "AB":
        return ab_loss(clean_distribution, logits_hat)
    if strategy.kind == "ABN":
        return abn_loss(logits_hat)
    return sa_loss(strategy.target if targets is None else targets, logits_hat)


def total_loss(q, q_hat, model: ModelCheckpoint, strategy: AttackStrategy,
               weights: PerceptualWeights, clean_distribution=None, targets=None,
               skeleton: Skeleton | None = None):
    """Blend ``w * L_c + (1 - w) * L_p``.

    Returns ``(L, parts, logits)`` where ``parts`` maps L_c, L_p, l_dyn, l_bl to tensors.
    ``clean_distribution`` defaults to the model's softmax on ``q`` (needed by AB only).
    """
    q_hat = _as_tensor(q_hat)
    logits = forward(model, q_hat, skeleton=skeleton)
    if strategy.kind == "AB" and clean_distribution is None:
        clean_distribution = softmax_np(forward(model, _data(q), skeleton=skeleton).data)
    parts = {}
    lc = classification_loss(strategy, logits, clean_distribution, targets)
    lp = perceptual_loss(q, q_hat, skeleton, weights, parts)
    parts["L_c"], parts["L_p"] = lc, lp
    total = ag.add(ag.scale(lc, weights.w), ag.scale(lp, 1.0 - weights.w))
    return total, parts, logits


# -- optimisation loop --------------------------------------------------------------

def derive_target(seed: int, motion_id: str, ground_truth: int, class_count: int) -> int:
    """Uniform non-ground-truth label from a stream keyed by (seed, motion id)."""
    key = int.from_bytes(hashlib.sha256(motion_id.encode()).digest()[:8], "little")
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, key]))
    choice = int(rng.integers(class_count - 1))
    return choice if choice < ground_truth else choice + 1


def attack_batch(model: ModelCheckpoint, motions, config: AttackConfig, targets=None,
                 skeleton: Skeleton | None = None) -> list:
    """Attack every motion in ``motions`` (same frame count) and return one result each."""
    motions = list(motions)
    if not motions:
        return []
    strategy = config.strategy
    strategy.validate(model.class_count)
    weights = config.weights
    q = np.stack([m.frames for m in motions])
    labels = np.array([m.label for m in motions], dtype=int)
    bsz = len(motions)

    clean_logits = predict_logits(model, q)
    clean_pred = np.argmax(clean_logits, axis=1)
    wrong = np.flatnonzero(clean_pred != labels)
    if wrong.size:
        raise ContractError(f"motion {motions[wrong[0]].id!r} is not classified correctly "
                            f"(predicted {clean_pred[wrong[0]]}, label {labels[wrong[0]]})")
    clean_dist = softmax_np(clean_logits)

    if strategy.kind == "SA":
        if targets is None:
            if strategy.random_target:
                targets = [derive_target(config.seed, m.id, int(m.label), model.class_count)
                           for m in motions]
            else:
                targets = [strategy.target] * bsz
        targets = np.asarray(targets, dtype=int)
        if (targets == labels).any():
            raise ContractError("specified-attack target equals the ground-truth label")
        if ((targets < 0) | (targets >= model.class_count)).any():
            raise ConfigError("specified-attack target out of range")
    else:
        targets = None

    q_hat = q.copy()
    m_buf = np.zeros_like(q)
    v_buf = np.zeros_like(q)
    steps = 0
    active = np.ones(bsz, dtype=bool)
    n_eval = config.max_iters + 1
    trace = np.full((n_eval, bsz, len(TRACE_FIELDS)), np.nan)
    label_trace = np.full((n_eval, bsz), -1, dtype=int)
    evaluated = np.zeros(bsz, dtype=int)
    best = q.copy()
    best_lp = np.full(bsz, np.inf)
    best_iter = np.full(bsz, -1)
    best_logits = clean_logits.copy()
    last_logits = clean_logits.copy()
    iterations_used = np.full(bsz, config.max_iters)

    for it in range(n_eval):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        leaf = Tensor(q_hat[idx], requires_grad=True)
        tgt = targets[idx] if targets is not None else None
        total, parts, logits = total_loss(q[idx], leaf, model, strategy, weights,
                                          clean_dist[idx], tgt, skeleton)
        cols = [total.data] + [parts[k].data for k in TRACE_FIELDS[1:]]
        if not np.isfinite(total.data).all():
            raise AttackAbortedError(f"non-finite attack loss at iteration {it}", iteration=it)
        trace[it, idx] = np.stack(cols, axis=1)
        z = logits.data
        label_trace[it, idx] = np.argmax(z, axis=1)
        evaluated[idx] = it + 1
        last_logits[idx] = z
        ok = success_mask(strategy, z, labels[idx], tgt)
        lp = parts["L_p"].data
        if strategy.kind == "ABN":
            hit = idx[ok]
            best[hit] = q_hat[hit]
            best_logits[hit] = z[ok]
            best_iter[hit] = it
            iterations_used[hit] = it
            active[hit] = False
        else:
            better = ok & (lp < best_lp[idx])
            upd = idx[better]
            best[upd] = q_hat[upd]
            best_lp[upd] = lp[better]
            best_logits[upd] = z[better]
            best_iter[upd] = it
        if it == config.max_iters:
            break
        keep = active[idx]
        if not keep.any():
            break
        ag.backward(ag.tsum(total))
        rows = idx[keep]
        state = AdamState(steps, m_buf[rows], v_buf[rows], lr=config.lr, beta1=config.beta1,
                          beta2=config.beta2, eps=config.eps)
        try:
            new, state = adam_step(q_hat[rows], leaf.grad[keep], state)
        except FloatingPointError as exc:
            raise AttackAbortedError(f"iteration {it}: {exc}", iteration=it) from exc
        q_hat[rows], m_buf[rows], v_buf[rows] = new, state.m, state.v
        steps += 1

    results = []
    for b, motion in enumerate(motions):
        won = best_iter[b] >= 0
        adv_frames = best[b] if won else q_hat[b]
        z = best_logits[b] if won else last_logits[b]
        adv = motion.with_frames(
            adv_frames, id=f"{motion.id}.adv",
            meta={"origin_id": motion.id,
                  "attack": {"strategy": str(strategy), "preset": config.loss_preset,
                             "lr": config.lr, "max_iters": config.max_iters,
                             "success": bool(won),
                             "target": int(targets[b]) if targets is not None else None}})
        results.append(AttackResult(
            adversarial=adv, success=bool(won), iterations_used=int(iterations_used[b]),
            loss_trace=trace[:evaluated[b], b].copy(), label_trace=label_trace[:evaluated[b], b].copy(),
            final_prediction=softmax_np(z), displacement=(adv_frames - q[b]).ravel(),
            ground_truth=int(labels[b]), target=int(targets[b]) if targets is not None else None,
            best_iteration=int(best_iter[b]), strategy=str(strategy)))
    return results


def attack(model: ModelCheckpoint, motion: Motion, config: AttackConfig, target=None,
           skeleton: Skeleton | None = None) -> AttackResult:
    """Attack a single correctly classified motion."""
    targets = None if target is None else [target]
    return attack_batch(model, [motion], config, targets, skeleton)[0]


def with_strategy(config: AttackConfig, strategy) -> AttackConfig:
    if isinstance(strategy, str):
        strategy = AttackStrategy.parse(strategy)
    return replace(config, strategy=strategy)
