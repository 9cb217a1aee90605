"""Mini-batch SGD training loop and the finite-difference gradient harness.

Each step pairs one labeled source batch with one unlabeled target batch,
applies inverse learning-rate decay, and updates the shared extractor at the
base rate while both heads run at a configurable multiple of it. Plain SGD
is the default so runs are exactly reproducible; momentum and weight decay
exist as opt-in config fields.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, fields

import numpy as np

from . import losses as losses_mod
from . import model as model_mod
from .data import Dataset, batch_iter
from .model import ModelParams, ModelSpec
from .numerics import finite_diff_grad, substream


class NumericError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    steps: int
    lr0: float = 0.01
    lam: float = 0.1  # weight of the target entropy term
    batch_size: int = 36  # per domain
    head_lr_multiplier: float = 10.0
    decay_gamma: float = 1e-4
    decay_power: float = 0.75
    seed: int = 0
    hncs_enabled: bool = True
    oem_enabled: bool = True
    oem_mean: bool = True  # False restores the summed-over-heads entropy
    momentum: float = 0.0
    weight_decay: float = 0.0

    def validate(self) -> None:
        if self.steps < 0:
            raise ValueError(f"TrainConfig: steps must be >= 0, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"TrainConfig: batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ValueError(f"TrainConfig: lr0 must be > 0, got {self.lr0}")
        if self.decay_power < 0 or self.decay_gamma < 0:
            raise ValueError("TrainConfig: decay constants must be >= 0")
        if self.lam < 0:
            raise ValueError(f"TrainConfig: lam must be >= 0, got {self.lam}")

    def replace(self, **kw) -> "TrainConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return TrainConfig(**vals)


@dataclass
class StepRecord:
    step: int
    lr: float
    l_cls: float
    l_ova: float
    l_ent: float
    total: float


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "lr", "l_cls", "l_ova", "l_ent", "total"])
            for r in self.records:
                writer.writerow(
                    [r.step, repr(r.lr), repr(r.l_cls), repr(r.l_ova), repr(r.l_ent), repr(r.total)]
                )

    def __len__(self) -> int:
        return len(self.records)


def lr_schedule(step: int, cfg: TrainConfig) -> float:
    """lr0 * (1 + gamma*step)^(-power); non-increasing, equals lr0 at step 0."""
    if step < 0:
        raise ValueError(f"lr_schedule: step must be >= 0, got {step}")
    return cfg.lr0 * (1.0 + cfg.decay_gamma * step) ** (-cfg.decay_power)


def _head_block(name: str) -> bool:
    return name.startswith("closed.") or name.startswith("ova.")


class _Momentum:
    """Per-block velocity buffers; inert when the coefficient is zero."""

    def __init__(self, params: ModelParams, coeff: float):
        self.coeff = coeff
        self.v = {name: np.zeros_like(arr) for name, arr in params.blocks()} if coeff else None

    def direction(self, name: str, grad: np.ndarray) -> np.ndarray:
        if not self.coeff:
            return grad
        buf = self.v[name]
        buf *= self.coeff
        buf += grad
        return buf


def train_step(
    params: ModelParams,
    src_batch: tuple[np.ndarray, np.ndarray],
    tgt_batch: np.ndarray | None,
    cfg: TrainConfig,
    step: int,
    momentum_state: _Momentum | None = None,
) -> tuple[ModelParams, StepRecord]:
    """One SGD step on the combined objective; updates params in place.

    Raises NumericError naming the loss component (or parameter block) if
    anything non-finite shows up.
    """
    src_x, src_y = src_batch
    src_fwd = model_mod.forward(params, src_x)
    tgt_fwd = None
    if cfg.oem_enabled and tgt_batch is not None:
        tgt_fwd = model_mod.forward(params, tgt_batch)

    obj = losses_mod.total_objective(
        params,
        src_fwd,
        src_y,
        tgt_fwd,
        lam=cfg.lam,
        hncs=cfg.hncs_enabled,
        oem_mean=cfg.oem_mean,
    )
    for comp, val in (("l_cls", obj.l_cls), ("l_ova", obj.l_ova), ("l_ent", obj.l_ent)):
        if not np.isfinite(val):
            raise NumericError(f"non-finite loss component {comp} at step {step}")
    for name, arr in obj.grads.blocks():
        if not np.all(np.isfinite(arr)):
            raise NumericError(f"non-finite gradient in block {name} at step {step}")

    lr = lr_schedule(step, cfg)
    if momentum_state is None:
        momentum_state = _Momentum(params, cfg.momentum)
    for (name, p_arr), (_, g_arr) in zip(params.blocks(), obj.grads.blocks()):
        g = g_arr
        if cfg.weight_decay:
            g = g + cfg.weight_decay * p_arr
        d = momentum_state.direction(name, g)
        block_lr = lr * cfg.head_lr_multiplier if _head_block(name) else lr
        p_arr -= block_lr * d

    record = StepRecord(step=step, lr=lr, l_cls=obj.l_cls, l_ova=obj.l_ova,
                        l_ent=obj.l_ent, total=obj.value)
    return params, record


def train(
    cfg: TrainConfig,
    src_dataset: Dataset,
    tgt_dataset: Dataset,
    model_spec: ModelSpec,
) -> tuple[ModelParams, TrainHistory]:
    """Full training run; returns final parameters and the per-step history.

    Source and target batches come from independent substreams of cfg.seed,
    reshuffled per epoch. Target labels are never read here: only feature
    rows are sliced from the target dataset.
    """
    cfg.validate()
    model_spec.validate()
    if src_dataset.n == 0 or tgt_dataset.n == 0:
        raise ValueError("train: datasets must be non-empty")
    if src_dataset.labels.min() < 0 or src_dataset.labels.max() >= model_spec.num_known_classes:
        raise ValueError("train: source labels must lie in [0, num_known_classes)")

    params = model_mod.init_model(model_spec, substream(cfg.seed, "init"))
    src_iter = batch_iter(src_dataset, cfg.batch_size, substream(cfg.seed, "batch-source"))
    tgt_iter = batch_iter(tgt_dataset, cfg.batch_size, substream(cfg.seed, "batch-target"))

    history = TrainHistory()
    momentum_state = _Momentum(params, cfg.momentum)
    for step in range(cfg.steps):
        src_idx = next(src_iter)
        tgt_idx = next(tgt_iter)  # drawn unconditionally to keep streams aligned
        src_batch = (src_dataset.features[src_idx], src_dataset.labels[src_idx])
        tgt_batch = tgt_dataset.features[tgt_idx] if cfg.oem_enabled else None
        params, record = train_step(params, src_batch, tgt_batch, cfg, step, momentum_state)
        history.records.append(record)
    return params, history


@dataclass
class GradCheckBlock:
    component: str
    block: str
    max_abs_err: float
    worst_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    blocks: list[GradCheckBlock]
    passed: bool

    def failing(self) -> list[GradCheckBlock]:
        return [b for b in self.blocks if not b.passed]

    def summary_lines(self) -> list[str]:
        out = []
        for b in self.blocks:
            status = "ok" if b.passed else "FAIL"
            out.append(
                f"{b.component:8s} {b.block:22s} abs={b.max_abs_err:.3e} "
                f"rel={b.worst_rel_err:.3e} {status}"
            )
        return out


def gradient_check(
    model_spec: ModelSpec,
    seed: int,
    lam: float = 0.1,
    batch: int = 4,
    eps: float = 1e-5,
    abs_tol: float = 1e-5,
    rel_tol: float = 1e-4,
    hncs: bool = True,
) -> GradCheckReport:
    """Compare every analytic loss gradient against central finite differences.

    Builds a random model and random source/target batches, then checks each
    loss component and the combined objective block by block. A coordinate
    passes when |analytic - numeric| <= max(abs_tol, rel_tol * scale); the
    report never raises, it records failures.
    """
    model_spec.validate()
    rng = substream(seed, "gradcheck")
    params = model_mod.init_model(model_spec, rng)
    input_dim = model_spec.input_dim
    src_x = rng.normal(size=(batch, input_dim))
    src_y = rng.integers(0, model_spec.num_known_classes, size=batch)
    tgt_x = rng.normal(size=(batch, input_dim))
    vec0 = model_mod.params_to_vector(params)
    slices = model_mod.block_slices(model_spec)

    def run(vec: np.ndarray):
        p = model_mod.vector_to_params(vec, model_spec)
        return p, model_mod.forward(p, src_x), model_mod.forward(p, tgt_x)

    def component_value_and_grad(name: str):
        p, src_fwd, tgt_fwd = run(vec0)
        if name == "closed":
            part = losses_mod.closed_loss(src_fwd.closed_logits, src_y)
            grads = model_mod.backward(p, src_fwd, part.grad_wrt_logits, None)
            value_fn = lambda v: losses_mod.closed_loss(run(v)[1].closed_logits, src_y).value
            return part.value, grads, value_fn
        if name == "ova":
            part = losses_mod.ova_loss_batch(
                src_fwd.ova_known_prob, src_y, hncs=hncs, grad_mask=src_fwd.ova_grad_mask
            )
            grads = model_mod.backward(p, src_fwd, None, part.grad_wrt_logits)
            value_fn = lambda v: losses_mod.ova_loss_batch(
                run(v)[1].ova_known_prob, src_y, hncs=hncs
            ).value
            return part.value, grads, value_fn
        if name == "oem":
            part = losses_mod.oem_loss_batch(
                tgt_fwd.ova_known_prob, grad_mask=tgt_fwd.ova_grad_mask
            )
            grads = model_mod.backward(p, tgt_fwd, None, part.grad_wrt_logits)
            value_fn = lambda v: losses_mod.oem_loss_batch(run(v)[2].ova_known_prob).value
            return part.value, grads, value_fn
        if name == "total":
            obj = losses_mod.total_objective(p, src_fwd, src_y, tgt_fwd, lam=lam, hncs=hncs)

            def value_fn(v):
                p2, sf, tf = run(v)
                return losses_mod.total_objective(p2, sf, src_y, tf, lam=lam, hncs=hncs).value

            return obj.value, obj.grads, value_fn
        raise ValueError(f"unknown component {name}")

    blocks: list[GradCheckBlock] = []
    for comp in ("closed", "ova", "oem", "total"):
        _, grads, value_fn = component_value_and_grad(comp)
        analytic = model_mod.params_to_vector(grads)
        numeric = finite_diff_grad(value_fn, vec0, eps=eps)
        for name, sl in slices:
            a, n = analytic[sl], numeric[sl]
            diff = np.abs(a - n)
            scale = np.maximum(np.abs(a), np.abs(n))
            ok = diff <= np.maximum(abs_tol, rel_tol * scale)
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = np.where(scale > 0, diff / scale, 0.0)
            blocks.append(
                GradCheckBlock(
                    component=comp,
                    block=name,
                    max_abs_err=float(diff.max()) if diff.size else 0.0,
                    worst_rel_err=float(rel.max()) if rel.size else 0.0,
                    passed=bool(ok.all()),
                )
            )
    return GradCheckReport(blocks=blocks, passed=all(b.passed for b in blocks))
