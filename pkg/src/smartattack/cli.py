"""``smartattack`` command line: data generation, training, attacks, transfer and analysis."""

from __future__ import annotations

import functools
import hashlib
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import click
import numpy as np

from . import (CHECKPOINT_FORMAT_VERSION, MOTION_FORMAT_VERSION, REPORT_SCHEMA_VERSION,
               __version__)
from .attack import PRESETS, AttackConfig, AttackStrategy, attack_batch, total_loss
from .autograd import grad_check
from .datagen import (CLASS_NAMES, DatasetSpec, directory_checksum, generate_dataset,
                      load_dataset, save_dataset)
from .errors import ConfigError, SmartError
from .models import (ARCHITECTURES, TrainConfig, evaluate, load_checkpoint, new_checkpoint,
                     predict, save_checkpoint, train)
from .motion import load_motion, save_motion
from .transfer import pearson_correlation_maps, transfer_attack, write_reports

# attacks are batched in fixed chunks of sorted motion ids so --jobs never changes the arithmetic
ATTACK_CHUNK = 32
CONFIG_KEYS = {"seed", "jobs", "dataset", "train", "attack"}
ATTACK_KEYS = {"lr", "max_iters", "w", "alpha", "beta1", "beta2", "eps"}


def _canonical(doc) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"))


def config_hash(doc) -> str:
    return hashlib.sha256(_canonical(doc).encode()).hexdigest()


def load_run_config(path) -> dict:
    """Read a JSON run config; unknown keys at any level are rejected."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "dataset" in doc:
        DatasetSpec.from_dict(doc["dataset"])
    train_keys = {f.name for f in fields(TrainConfig)}
    if set(doc.get("train", {})) - train_keys:
        raise ConfigError(f"unknown train keys: {sorted(set(doc['train']) - train_keys)}")
    if set(doc.get("attack", {})) - ATTACK_KEYS:
        raise ConfigError(f"unknown attack keys: {sorted(set(doc['attack']) - ATTACK_KEYS)}")
    return doc


def _emit(doc):
    click.echo(json.dumps(doc, indent=2, sort_keys=True))


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_motion_dir(path) -> list:
    """Motions from a dataset or attack output directory, sorted by id."""
    root = Path(path)
    if not root.is_dir():
        raise ConfigError(f"{path}: not a directory")
    sub = root / "motions"
    files = sorted((sub if sub.is_dir() else root).glob("*.json"))
    motions = [load_motion(f) for f in files if f.name != "manifest.json"]
    if not motions:
        raise ConfigError(f"{path}: no motion files")
    return sorted(motions, key=lambda m: m.id)


class Context:
    def __init__(self, seed, jobs, config):
        self.seed = seed
        self.jobs = jobs
        self.config = config


pass_ctx = click.make_pass_decorator(Context)


def _version_text():
    return (f"smartattack {__version__} (motion format {MOTION_FORMAT_VERSION}, "
            f"checkpoint format {CHECKPOINT_FORMAT_VERSION}, report schema {REPORT_SCHEMA_VERSION})")


def _print_version(ctx, _param, value):
    if value and not ctx.resilient_parsing:
        click.echo(_version_text())
        ctx.exit()


@click.group()
@click.option("--version", is_flag=True, expose_value=False, is_eager=True,
              callback=_print_version, help="Print toolkit and file-format versions.")
@click.option("--seed", type=int, default=None, help="Run seed (default 0 or the config value).")
@click.option("--jobs", type=click.IntRange(min=1), default=None, help="Worker processes.")
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="JSON run config with optional seed, jobs, dataset, train, attack sections.")
@click.pass_context
def cli(ctx, seed, jobs, config_path):
    """Adversarial attacks on skeletal motion classifiers."""
    try:
        config = load_run_config(config_path) if config_path else {}
    except SmartError as exc:
        raise click.ClickException(str(exc)) from None
    seed = seed if seed is not None else int(config.get("seed", 0))
    jobs = jobs or int(config.get("jobs", 1))
    ctx.obj = Context(seed, jobs, config)


def _guard(fn):
    """Turn library errors into a clean nonzero exit."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (SmartError, ValueError, OSError) as exc:
            raise click.ClickException(str(exc)) from None
    return wrapper


@cli.command("gen-data")
@click.option("--spec", "spec_path", type=click.Path(dir_okay=False), default=None)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@pass_ctx
@_guard
def gen_data(obj, spec_path, out):
    """Generate the synthetic labelled motion dataset."""
    doc = dict(obj.config.get("dataset", {}))
    if spec_path:
        try:
            doc.update(json.loads(Path(spec_path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{spec_path}: invalid JSON ({exc})") from None
    doc.setdefault("seed", obj.seed)
    spec = DatasetSpec.from_dict(doc)
    ds = generate_dataset(spec)
    save_dataset(ds, out)
    counts = {}
    for m in ds.motions:
        counts[ds.class_names[m.label]] = counts.get(ds.class_names[m.label], 0) + 1
    click.echo(f"{len(ds.class_names)} classes, {len(ds.motions)} motions "
               f"({len(ds.train)} train / {len(ds.test)} test)")
    for name in ds.class_names:
        click.echo(f"  {name}: {counts.get(name, 0)}")
    click.echo(f"checksum {directory_checksum(out)}")


@cli.command("train")
@click.option("--arch", required=True, type=click.Choice(ARCHITECTURES))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--weight-decay", type=float, default=None)
@pass_ctx
@_guard
def train_cmd(obj, arch, data, out, epochs, lr, weight_decay):
    """Train a classifier on the dataset's training split."""
    doc = dict(obj.config.get("train", {}))
    doc.setdefault("seed", obj.seed)
    for key, val in (("epochs", epochs), ("lr", lr), ("weight_decay", weight_decay)):
        if val is not None:
            doc[key] = val
    cfg = TrainConfig(**doc)
    ds = load_dataset(data)
    ckpt = train(arch, ds, cfg)
    ckpt.metadata["dataset_checksum"] = directory_checksum(data)
    save_checkpoint(ckpt, out)
    report = evaluate(ckpt, ds.test)
    _emit({"architecture": arch, "accuracy": report["accuracy"],
           "train_accuracy": ckpt.metadata["train_accuracy"], "confusion": report["confusion"],
           "count": report["count"]})


@cli.command("eval")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--split", type=click.Choice(["test", "train", "all"]), default="test")
@pass_ctx
@_guard
def eval_cmd(obj, ckpt, data, split):
    """Report accuracy and confusion matrix as JSON."""
    model = load_checkpoint(ckpt)
    ds = load_dataset(data)
    motions = ds.motions if split == "all" else ds.subset(split)
    report = evaluate(model, motions)
    _emit({"architecture": model.architecture_id, "split": split, "accuracy": report["accuracy"],
           "confusion": report["confusion"], "count": report["count"]})


def _attack_chunk(args):
    ckpt_path, motions, config = args
    model = load_checkpoint(ckpt_path)
    return attack_batch(model, motions, config)


def run_attacks(ckpt_path, motions, config, jobs=1):
    chunks = [motions[i:i + ATTACK_CHUNK] for i in range(0, len(motions), ATTACK_CHUNK)]
    tasks = [(ckpt_path, c, config) for c in chunks]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_attack_chunk, tasks))
    else:
        parts = [_attack_chunk(t) for t in tasks]
    return [r for part in parts for r in part]


def _attack_config(obj, strategy, preset, lr, max_iters):
    doc = dict(obj.config.get("attack", {}))
    if lr is not None:
        doc["lr"] = lr
    if max_iters is not None:
        doc["max_iters"] = max_iters
    w = {k: doc.pop(k) for k in ("w", "alpha") if k in doc}
    config = AttackConfig(strategy=AttackStrategy.parse(strategy), loss_preset=preset,
                          seed=obj.seed, **doc)
    if w:
        config = replace(config, weights=replace(config.weights, **w))
    return config


@cli.command("attack")
@click.option("--ckpt", required=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--strategy", default="ab", show_default=True, help="ab, abn:N, sa:K or sa:random")
@click.option("--preset", type=click.Choice(PRESETS), default="full", show_default=True)
@click.option("--lr", type=float, default=None)
@click.option("--max-iters", type=int, default=None)
@click.option("--limit", type=int, default=None, help="Attack only the first N eligible motions.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@pass_ctx
@_guard
def attack_cmd(obj, ckpt, data, strategy, preset, lr, max_iters, limit, out):
    """Attack every correctly classified test motion."""
    model = load_checkpoint(ckpt)
    config = _attack_config(obj, strategy, preset, lr, max_iters)
    config.strategy.validate(model.class_count)
    ds = load_dataset(data)
    test = sorted(ds.test, key=lambda m: m.id)
    pred = predict(model, np.stack([m.frames for m in test])) if test else []
    eligible = [m for m, p in zip(test, pred) if p == m.label]
    if limit is not None:
        eligible = eligible[:limit]
    if not eligible:
        raise ConfigError("no correctly classified test motions to attack")
    results = run_attacks(ckpt, eligible, config, obj.jobs)
    motion_dir = Path(out) / "motions"
    motion_dir.mkdir(parents=True, exist_ok=True)
    for r in results:
        save_motion(r.adversarial, motion_dir / f"{r.adversarial.id}.json")
    config_doc = config.to_dict()
    success = float(np.mean([r.success for r in results]))
    manifest = {
        "schema_version": REPORT_SCHEMA_VERSION, "toolkit_version": __version__,
        "seed": obj.seed, "config": config_doc, "config_hash": config_hash(config_doc),
        "checkpoint": {"architecture": model.architecture_id,
                       "sha256": hashlib.sha256(Path(ckpt).read_bytes()).hexdigest()},
        "dataset_checksum": directory_checksum(data),
        "eligible": len(eligible), "test_count": len(test), "success_rate": success,
        "results": [r.summary() for r in results],
    }
    _write_json(Path(out) / "manifest.json", manifest)
    click.echo(f"attacked {len(results)} motions with {config.strategy} ({preset}): "
               f"success rate {success:.4f}")


@cli.command("transfer")
@click.option("--surrogate", required=True, type=click.Path(dir_okay=False))
@click.option("--targets", required=True, multiple=True, type=click.Path(dir_okay=False))
@click.option("--data", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--strategy", default="ab", show_default=True)
@click.option("--preset", type=click.Choice(PRESETS), default="full")
@click.option("--max-iters", type=int, default=None)
@click.option("--limit", type=int, default=None)
@click.option("--out", type=click.Path(dir_okay=False), default=None, help="JSON report path.")
@pass_ctx
@_guard
def transfer_cmd(obj, surrogate, targets, data, strategy, preset, max_iters, limit, out):
    """Attack a surrogate white-box and replay the examples on target models."""
    sur = load_checkpoint(surrogate)
    sur.metadata.setdefault("name", Path(surrogate).stem)
    tgts = {}
    for t in targets:
        ck = load_checkpoint(t)
        tgts[Path(t).stem] = ck
    config = _attack_config(obj, strategy, preset, None, max_iters)
    motions = sorted(load_dataset(data).test, key=lambda m: m.id)
    if limit is not None:
        motions = motions[:limit]
    report = transfer_attack(sur, tgts, motions, config)
    doc = {"schema_version": REPORT_SCHEMA_VERSION, "seed": obj.seed,
           "config_hash": config_hash(config.to_dict()), "reports": [report.to_dict()]}
    if out:
        _write_json(out, doc)
    _emit(doc)


@cli.command("analyze")
@click.option("--orig", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--adv", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--include-failed", is_flag=True, help="Also use motions whose attack failed.")
@click.option("--group-by-label", is_flag=True)
@pass_ctx
@_guard
def analyze_cmd(obj, orig, adv, out, include_failed, group_by_label):
    """Joint displacement statistics and correlation maps."""
    originals = {m.id: m for m in load_motion_dir(orig)}
    pairs = []
    for a in load_motion_dir(adv):
        info = a.meta.get("attack")
        if info is not None and not info.get("success", False) and not include_failed:
            continue
        key = a.meta.get("origin_id", a.id)
        if key not in originals:
            raise ConfigError(f"adversarial {a.id} has no original {key!r} in {orig}")
        pairs.append((originals[key], a))
    if not pairs:
        raise ConfigError("no adversarial motions to analyze")
    report = pearson_correlation_maps([p[0] for p in pairs], [p[1] for p in pairs],
                                      group_by_label=group_by_label)
    paths = write_reports(report, out)
    margin = report.diagonal_margin("disp_acc")
    click.echo(f"{report.sample_count} samples; disp_acc diagonal margin "
               f"{'undefined' if not np.isfinite(margin) else f'{margin:.4f}'}")
    for p in paths:
        click.echo(f"  {p}")


def gradcheck_suite(archs=ARCHITECTURES, trials=20, frames=16, seed=0, tolerance=1e-4,
                    coords=None):
    """Finite-difference check of the attack objective for every strategy and architecture.

    ``coords`` checks that many random coordinates per motion instead of all of them.
    Yields ``(arch, strategy, trial, max_rel_error)``.
    """
    from .attack import softmax_np
    rng = np.random.default_rng(seed)
    for arch in archs:
        model = new_checkpoint(arch, len(CLASS_NAMES), seed=seed)
        for strategy in (AttackStrategy("AB"), AttackStrategy("ABN", n=3),
                         AttackStrategy("SA", target=1)):
            config = AttackConfig(strategy=strategy)
            for trial in range(trials):
                q = rng.normal(0, 0.3, (frames, 75))
                q_hat = q + rng.normal(0, 0.05, q.shape)
                p = softmax_np(rng.normal(size=len(CLASS_NAMES)))

                def fn(t):
                    return total_loss(q, t, model, strategy, config.weights, p)[0]

                def batch_fn(xs):
                    n = len(xs)
                    return total_loss(np.broadcast_to(q, xs.shape), xs, model, strategy,
                                      config.weights, np.broadcast_to(p, (n, p.size)))[0].data
                subset = None
                if coords is not None and coords < q_hat.size:
                    subset = rng.choice(q_hat.size, coords, replace=False)
                report = grad_check(fn, q_hat, h=1e-5, tolerance=tolerance, batch_fn=batch_fn,
                                    coords=subset)
                yield arch, str(strategy), trial, report.max_rel_error


@cli.command("gradcheck")
@click.option("--arch", type=click.Choice(ARCHITECTURES), default=None)
@click.option("--trials", type=int, default=3, show_default=True)
@click.option("--frames", type=int, default=16, show_default=True)
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@pass_ctx
@_guard
def gradcheck_cmd(obj, arch, trials, frames, tolerance):
    """Finite-difference verification of attack gradients; nonzero exit on failure."""
    archs = (arch,) if arch else ARCHITECTURES
    worst = {}
    for a, s, _, err in gradcheck_suite(archs, trials, frames, obj.seed, tolerance):
        worst[(a, s)] = max(worst.get((a, s), 0.0), err)
    failed = False
    for (a, s), err in worst.items():
        ok = err < tolerance
        failed |= not ok
        click.echo(f"{'PASS' if ok else 'FAIL'} {a:<13} {s:<6} max rel err {err:.2e}")
    if failed:
        sys.exit(1)


def main(argv=None):
    cli.main(args=argv, prog_name="smartattack")


if __name__ == "__main__":
    main()
