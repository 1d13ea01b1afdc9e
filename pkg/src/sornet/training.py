"""Adam, learning-rate schedules and the iteration-based training loop."""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence

import numpy as np

from .autograd import Tape, Tensor, backward, mean_abs
from .checkpoint import ADAM_M, ADAM_V, Checkpoint, load_checkpoint, save_checkpoint
from .data import ChannelMeans, compute_channel_means, load_dataset, normalize, sample_patch_batch
from .models import ModelSpec, build_model, load_partial, model_forward

log = logging.getLogger(__name__)

SCHEDULES = {
    # name: (initial lr, iterations between halvings, maximum number of halvings)
    "edsr": (1e-4, 200_000, 1),
    "selfonn": (1.5e-4, 100_000, None),
}


class NumericError(Exception):
    """Training produced a non-finite loss."""


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, named_params):
        return cls({n: np.zeros_like(p.data) for n, p in named_params},
                   {n: np.zeros_like(p.data) for n, p in named_params}, 0)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place.

    ``params`` is a list of (name, Tensor); ``grads`` maps name -> array.
    """
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, p in params:
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for {name!r}: param {p.shape}, "
                             f"grad {g.shape}, moment {state.m[name].shape}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, p in params:
        g = grads[name]
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype)
    return params, state


def lr_at(iteration, schedule, lr0=None):
    """Step schedule: halve every `period` iterations (edsr: once, at 200K)."""
    if schedule not in SCHEDULES:
        raise ValueError(f"unknown schedule {schedule!r}; expected one of {sorted(SCHEDULES)}")
    base, period, max_halvings = SCHEDULES[schedule]
    halvings = iteration // period
    if max_halvings is not None:
        halvings = min(halvings, max_halvings)
    return (base if lr0 is None else lr0) * 0.5 ** halvings


def schedule_for(arch):
    return "edsr" if arch == "edsr" else "selfonn"


# ---------------------------------------------------------------- config

@dataclass
class TrainConfig:
    spec: ModelSpec
    train_data: str
    run_dir: str
    seed: int = 0
    total_iters: int = 300_000
    schedule: Optional[str] = None
    lr: Optional[float] = None
    batch: int = 16
    patch: int = 48
    checkpoint_interval: int = 10_000
    init_checkpoint: Optional[str] = None
    skip: Sequence[str] = ()
    resume: Optional[str] = None
    means: Optional[ChannelMeans] = None
    save_adam: bool = True
    extra_meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.schedule is None:
            self.schedule = schedule_for(self.spec.arch)

    def validate(self):
        self.spec.validate()
        if self.total_iters <= 0:
            raise ValueError(f"total_iters must be positive, got {self.total_iters}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.schedule != schedule_for(self.spec.arch):
            raise ValueError(f"schedule {self.schedule!r} does not match arch "
                             f"{self.spec.arch!r} (expected {schedule_for(self.spec.arch)!r})")
        if self.batch < 1 or self.patch < 1 or self.checkpoint_interval < 1:
            raise ValueError("batch, patch and checkpoint_interval must be positive")
        if self.lr is not None and self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        return self


# ---------------------------------------------------------------- checkpoints

def spec_meta(spec):
    return {f"spec.{k}": v for k, v in spec.to_dict().items()}


def spec_from_meta(meta):
    return ModelSpec.from_dict({k[5:]: v for k, v in meta.items() if k.startswith("spec.")})


def means_from_meta(meta):
    try:
        return ChannelMeans(float(meta["mean.r"]), float(meta["mean.g"]), float(meta["mean.b"]))
    except KeyError:
        return None


def make_checkpoint(model, iteration, means=None, state=None, rng=None, extra=None):
    meta = {"iteration": str(iteration), "scale": str(model.spec.scale)}
    meta.update(spec_meta(model.spec))
    if means is not None:
        meta.update({"mean.r": repr(means.r), "mean.g": repr(means.g), "mean.b": repr(means.b)})
    if rng is not None:
        meta["rng"] = json.dumps(rng.bit_generator.state, sort_keys=True)
    if extra:
        meta.update(extra)
    tensors = {name: t.data.copy() for name, t in model.named_parameters()}
    if state is not None:
        meta["adam.t"] = str(state.t)
        for name in state.m:
            tensors[ADAM_M + name] = state.m[name].copy()
            tensors[ADAM_V + name] = state.v[name].copy()
    return Checkpoint(meta, tensors)


def restore_rng(meta):
    state = json.loads(meta["rng"])
    rng = np.random.Generator(getattr(np.random, state["bit_generator"])())
    rng.bit_generator.state = state
    return rng


def check_spec_matches(spec, meta, what="checkpoint"):
    stored = spec_from_meta(meta).to_dict()
    wanted = spec.to_dict()
    diff = [f"{k}: {what} has {stored.get(k)!r}, config has {wanted[k]!r}"
            for k in wanted if stored.get(k) != wanted[k]]
    if diff:
        raise ValueError(f"{what} does not match the model spec: " + "; ".join(diff))


# ---------------------------------------------------------------- loss log

def read_loss_log(path):
    iters, lrs, losses = [], [], []
    for line in Path(path).read_text().splitlines():
        i, lr, loss = line.split("\t")
        iters.append(int(i))
        lrs.append(float(lr))
        losses.append(float(loss))
    return np.array(iters), np.array(lrs), np.array(losses)


def smoothed(losses, window=100):
    """Trailing moving average; entry i averages losses[max(0, i-window+1) .. i]."""
    losses = np.asarray(losses, dtype=np.float64)
    c = np.concatenate([[0.0], np.cumsum(losses)])
    idx = np.arange(1, len(losses) + 1)
    lo = np.maximum(0, idx - window)
    return (c[idx] - c[lo]) / (idx - lo)


def _truncate_log(path, n_lines):
    if not path.exists():
        return
    lines = path.read_text().splitlines(keepends=True)
    path.write_text("".join(lines[:n_lines]))


# ---------------------------------------------------------------- training loop

def init_model(cfg):
    """The model and batch rng at iteration 0, before any optimizer step.

    With ``cfg.init_checkpoint`` set, its tensors are copied in except those
    under ``cfg.skip`` prefixes, which keep their fresh initialization.
    Returns (model, data_rng, LoadReport or None).
    """
    init_seq, data_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    model = build_model(cfg.spec, np.random.default_rng(init_seq))
    report = None
    if cfg.init_checkpoint and not cfg.resume:
        ckpt = load_checkpoint(cfg.init_checkpoint)
        _, report = load_partial(model, ckpt.params, cfg.skip)
    return model, np.random.default_rng(data_seq), report


def train(cfg):
    """Run (or resume) training; returns the final checkpoint.

    Writes ``loss.log`` (iter, lr, loss per line) and ``ckpt_<iter>.bin``
    every ``checkpoint_interval`` iterations into ``cfg.run_dir``.
    """
    cfg.validate()
    spec = cfg.spec
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = load_dataset(cfg.train_data, spec.scale, min_lr_size=cfg.patch)

    model, data_rng, report = init_model(cfg)
    named = model.named_parameters()
    state = AdamState.zeros(named)
    means = cfg.means
    start = 0

    if cfg.resume:
        ckpt = load_checkpoint(cfg.resume)
        check_spec_matches(spec, ckpt.meta)
        load_partial(model, ckpt.params)
        if not ckpt.adam_m:
            raise ValueError(f"{cfg.resume}: checkpoint has no optimizer state to resume from")
        state = AdamState({n: ckpt.adam_m[n].copy() for n, _ in named},
                          {n: ckpt.adam_v[n].copy() for n, _ in named},
                          int(ckpt.meta["adam.t"]))
        data_rng = restore_rng(ckpt.meta)
        means = means_from_meta(ckpt.meta) or means
        start = int(ckpt.meta["iteration"])
        _truncate_log(run_dir / "loss.log", start)
        log.info("resumed from %s at iteration %d", cfg.resume, start)
    elif report is not None:
        log.info("initialized %d tensors from %s, kept %d fresh", len(report.loaded),
                 cfg.init_checkpoint, len(report.skipped))
        (run_dir / "init.report").write_text(
            "".join(f"loaded\t{n}\n" for n in report.loaded)
            + "".join(f"skipped\t{n}\n" for n in report.skipped))

    if means is None:
        means = compute_channel_means(r.hr for r in records)

    params = [t for _, t in named]
    meta_extra = dict(cfg.extra_meta, seed=str(cfg.seed), schedule=cfg.schedule)
    ckpt = None
    with open(run_dir / "loss.log", "a") as loss_log:
        for it in range(start, cfg.total_iters):
            lr_batch, hr_batch = sample_patch_batch(records, data_rng, spec.scale,
                                                    cfg.patch, cfg.batch)
            x = Tensor(normalize(lr_batch, means))
            y = Tensor(normalize(hr_batch, means))
            with Tape() as tape:
                loss = mean_abs(model_forward(model, x), y)
            value = loss.item()
            if not math.isfinite(value):
                diag = make_checkpoint(model, it, means, state, data_rng, meta_extra)
                save_checkpoint(diag, run_dir / "ckpt_nonfinite.bin")
                raise NumericError(f"non-finite loss {value} at iteration {it}; "
                                   f"state saved to {run_dir / 'ckpt_nonfinite.bin'}")
            grads = backward(loss, tape, params)
            lr = lr_at(it, cfg.schedule, cfg.lr)
            adam_step(named, {n: grads[t] for n, t in named}, state, lr)
            loss_log.write(f"{it}\t{lr!r}\t{value!r}\n")
            done = it + 1
            if done % cfg.checkpoint_interval == 0 or done == cfg.total_iters:
                loss_log.flush()
                ckpt = make_checkpoint(model, done, means, state if cfg.save_adam else None,
                                       data_rng, meta_extra)
                save_checkpoint(ckpt, run_dir / f"ckpt_{done:07d}.bin")
                log.info("iteration %d loss %.5f lr %.3g", done, value, lr)
    if ckpt is None:
        ckpt = make_checkpoint(model, start, means, state, data_rng, meta_extra)
    return ckpt
