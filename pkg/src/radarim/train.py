"""Supervised interfered -> clean regression with Adam and early stopping."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import logging
import math
import os
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import torch

from . import ccnn, dsp, sim

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


# "sample_rms" divides every pair by the RMS of its own interfered input;
# "global_max" divides everything by the largest input magnitude in the
# training split.
NORMALIZATIONS = ("sample_rms", "global_max")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    max_epochs: int = 100
    lr0: float = 1e-3
    lr_decay: float = 0.95
    early_stop_patience: int = 10
    seed: int = 0
    deterministic: bool = False
    normalization: str = "sample_rms"
    output_gain: float = ccnn.OUTPUT_INIT_GAIN

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be at least 1")
        if self.early_stop_patience < 0:
            raise ValueError("patience must be non-negative")
        if not self.output_gain > 0:
            raise ValueError("output_gain must be positive")

    def lr(self, epoch: int) -> float:
        return self.lr0 * self.lr_decay**epoch


@dataclasses.dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()})


def mse_loss(pred: torch.Tensor, target: torch.Tensor) -> tuple[float, torch.Tensor]:
    """Mean of ``|pred - target|**2`` over complex elements of packed tensors.

    Returns the loss and its gradient with respect to ``pred``.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = pred - target
    n = diff.numel() // 2
    loss = float(torch.sum(diff.detach().double() ** 2) / n)
    return loss, 2.0 * diff / n


@torch.no_grad()
def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """Bias-corrected Adam update, applied in place on every real component."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.t
    c2 = 1 - b2**state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name].mul_(b1).add_(g, alpha=1 - b1)
        v = state.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))
    return params, state


# ----------------------------------------------------------------------------
# data


def configure_torch(deterministic: bool) -> None:
    torch.set_num_threads(1 if deterministic else sim.worker_count())
    torch.use_deterministic_algorithms(deterministic)


def model_input(rda: np.ndarray, spec: ccnn.ModelSpec) -> np.ndarray:
    """Complex network input ``[C, *S]`` for one RDA map."""
    if spec.variant == "3d":
        return rda[None]
    return np.moveaxis(dsp.rda_to_rd(rda), -1, 0)


def model_output(y: np.ndarray, spec: ccnn.ModelSpec) -> tuple[np.ndarray, str]:
    """Inverse of ``model_input``: returns the map and its kind (``rda`` or ``rd``)."""
    if spec.variant == "3d":
        return y[0], "rda"
    return np.moveaxis(y, 0, -1), "rd"


def input_scales(x: np.ndarray, normalization: str, normalizer: Optional[float] = None) -> np.ndarray:
    """Per-sample divisors for a stack of complex network inputs ``[B, C, *S]``."""
    if normalization == "sample_rms":
        axes = tuple(range(1, x.ndim))
        scales = np.sqrt(np.mean(np.abs(x.astype(np.complex128)) ** 2, axis=axes))
    elif normalization == "global_max":
        if normalizer is None:
            raise ValueError("global_max normalisation needs the training-set maximum")
        scales = np.full(x.shape[0], float(normalizer))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    if not np.all(scales > 0):
        raise ValueError("input with zero energy cannot be normalised")
    return scales


class PairSet:
    """Normalised (input, target) pairs of one split, packed for torch."""

    def __init__(self, manifest: dict, split: str, spec: ccnn.ModelSpec,
                 normalization: str = "sample_rms", normalizer: Optional[float] = None):
        records = manifest["splits"].get(split, [])
        if not records:
            raise ValueError(f"split {split!r} is empty")
        xs, ys = [], []
        for rec in records:
            s = sim.load_sample(manifest, rec)
            xs.append(model_input(s.interfered_rda, spec))
            ys.append(model_input(s.clean_rda, spec))
        x = np.stack(xs)
        y = np.stack(ys)
        if normalization == "global_max" and normalizer is None:
            normalizer = float(np.max(np.abs(x)))
        scales = input_scales(x, normalization, normalizer)[(slice(None),) + (None,) * (x.ndim - 1)]
        self.normalization = normalization
        self.normalizer = normalizer
        self.x = ccnn.pack(x / scales)
        self.y = ccnn.pack(y / scales)

    def __len__(self) -> int:
        return self.x.shape[0]


def evaluate_mse(model: ccnn.CCNN, data: PairSet, batch_size: int) -> float:
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(data), batch_size):
            pred = model(data.x[i:i + batch_size])
            loss, _ = mse_loss(pred, data.y[i:i + batch_size])
            total += loss * pred.shape[0]
    return total / len(data)


# ----------------------------------------------------------------------------
# training loop


@dataclasses.dataclass
class TrainResult:
    model: ccnn.CCNN
    history: list[dict]
    header: dict
    checkpoint: Optional[Path] = None


def _named_params(model: ccnn.CCNN) -> dict:
    return dict(model.named_parameters())


def train_model(spec: ccnn.ModelSpec, manifest: dict, cfg: TrainConfig = TrainConfig(),
                out_checkpoint=None, resume: bool = False,
                on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train ``spec`` on the manifest's train split, early-stopping on validation MSE.

    The returned model (and the checkpoint written to ``out_checkpoint``) is
    the one with the lowest validation MSE.  With ``resume`` an existing
    checkpoint at ``out_checkpoint`` is continued from its last epoch.
    """
    configure_torch(cfg.deterministic)
    train = PairSet(manifest, "train", spec, cfg.normalization)
    val = PairSet(manifest, "val", spec, cfg.normalization, train.normalizer)

    model = ccnn.build(spec, seed=cfg.seed, output_gain=cfg.output_gain)
    params = _named_params(model)
    state = AdamState.zeros_like(params)
    history: list[dict] = []
    start = 0
    best_val = math.inf
    best_epoch = -1
    best_state = None
    wait = 0

    if resume and out_checkpoint is not None and Path(out_checkpoint).exists():
        header, tensors = ccnn.read_checkpoint(out_checkpoint)
        if ccnn.ModelSpec.from_dict(header["spec"]) != spec:
            raise ValueError("checkpoint was trained with a different model spec")
        ccnn.load_state_tensors(model, tensors, "resume.model.")
        for name, p in params.items():
            for slot, store in (("m", state.m), ("v", state.v)):
                a = tensors[f"resume.adam_{slot}.{name}"]
                real = np.stack([a.real, a.imag]) if ccnn._is_complex_name(name) else a.real
                store[name] = torch.from_numpy(np.ascontiguousarray(real)).to(p.dtype)
        state.t = header["adam_t"]
        history = header["history"]
        start = header["epoch"] + 1
        best_val = header["best_val_mse"]
        best_epoch = header["best_epoch"]
        wait = header["wait"]
        best = ccnn.build(spec)
        ccnn.load_state_tensors(best, tensors, "model.")
        best_state = copy.deepcopy(best.state_dict())
        log.info("resuming at epoch %d", start)

    header: dict = {}
    stopped = bool(history) and (wait >= max(cfg.early_stop_patience, 0) and wait > 0)
    for epoch in range(start, cfg.max_epochs):
        if stopped:
            break
        lr = cfg.lr(epoch)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
        model.train()
        running = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size])
            pred = model(train.x[idx])
            loss, grad = mse_loss(pred, train.y[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss in epoch {epoch}")
            grads = dict(zip(params, torch.autograd.grad(pred, list(params.values()), grad)))
            adam_step(params, grads, state, lr)
            running += loss * len(idx)
        train_mse = running / len(train)
        val_mse = evaluate_mse(model, val, cfg.batch_size)
        if not math.isfinite(val_mse):
            raise NumericalError(f"non-finite validation loss in epoch {epoch}")
        row = {"epoch": epoch, "lr": lr, "train_mse": train_mse, "val_mse": val_mse}
        history.append(row)
        if on_epoch:
            on_epoch(row)
        if val_mse < best_val:
            best_val, best_epoch, wait = val_mse, epoch, 0
            best_state = copy.deepcopy(model.state_dict())
        else:
            wait += 1
            if wait >= cfg.early_stop_patience:
                stopped = True

        last_epoch = epoch
        header = {
            "format": "CKP1",
            "spec": spec.to_dict(),
            "param_count": ccnn.param_count(spec),
            "train_config": dataclasses.asdict(cfg),
            "normalization": cfg.normalization,
            "normalizer": train.normalizer,
            "epoch": last_epoch,
            "best_epoch": best_epoch,
            "best_val_mse": best_val,
            "wait": wait,
            "adam_t": state.t,
            "history": history,
            "manifest_seed": manifest.get("seed"),
            "fixed_aoa": manifest.get("fixed_aoa"),
        }
        if out_checkpoint is not None:
            best = ccnn.build(spec)
            best.load_state_dict(best_state)
            _save(out_checkpoint, header, best, model, state, params)

    best = ccnn.build(spec)
    if best_state is not None:
        best.load_state_dict(best_state)
    best.eval()
    return TrainResult(best, history, header, Path(out_checkpoint) if out_checkpoint else None)


def _save(path, header: dict, best: ccnn.CCNN, current: ccnn.CCNN, state: AdamState, params: dict) -> None:
    tensors = ccnn.state_tensors(best, "model.")
    tensors.update(ccnn.state_tensors(current, "resume.model."))
    for name in params:
        for slot, store in (("m", state.m), ("v", state.v)):
            a = store[name].detach().cpu().numpy().astype(np.float32)
            tensors[f"resume.adam_{slot}.{name}"] = (
                a[0] + 1j * a[1] if ccnn._is_complex_name(name) else a.astype(np.complex64))
    tmp = Path(str(path) + ".tmp")
    ccnn.write_checkpoint(tmp, header, tensors)
    os.replace(tmp, path)


def history_csv(history: list[dict]) -> str:
    lines = ["epoch,lr,train_mse,val_mse"]
    for row in history:
        lines.append(f"{row['epoch']},{row['lr']:.6g},{row['train_mse']:.9g},{row['val_mse']:.9g}")
    return "\n".join(lines) + "\n"


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----------------------------------------------------------------------------
# inference


class Predictor:
    """Wraps a trained checkpoint: RDA map in, mitigated map (RDA or RD) out."""

    def __init__(self, model: ccnn.CCNN, normalization: str = "sample_rms",
                 normalizer: Optional[float] = None):
        self.model = model.eval()
        self.spec = model.spec
        self.normalization = normalization
        self.normalizer = normalizer

    @classmethod
    def from_checkpoint(cls, path) -> "Predictor":
        model, header = ccnn.load_model(path)
        return cls(model, header.get("normalization", "sample_rms"), header.get("normalizer"))

    def __call__(self, rda: np.ndarray) -> tuple[np.ndarray, str]:
        x = model_input(np.asarray(rda), self.spec)[None]
        scale = input_scales(x, self.normalization, self.normalizer)[0]
        y = ccnn.model_forward(self.model, x / scale, "eval")[0] * scale
        out, kind = model_output(y, self.spec)
        return out.astype(np.complex64), kind
