"""Loss, optimizer, deterministic training loop and evaluation.

Everything downstream of an :class:`ExperimentConfig` is a pure function of
(config, dataset bytes): shuffling is derived from (seed, epoch), parameter
initialization from the seed, and the optimizer is sequential, so a repeated
run reproduces losses and metrics bit-identically on the same platform.
"""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import degrade, fileio, metrics, mri
from .blocks import Backbone, BackboneConfig
from .tensor import Tensor, absolute, backward, no_grad, sub, tmean
from .unrolled import UnrolledConfig, UnrolledModel, unroll_forward


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error; subgradient 0 at exact ties."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"shape mismatch: {pred.data.shape} vs {target.data.shape}")
    return tmean(absolute(sub(pred, target)))


class NonFiniteGradient(RuntimeError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient for parameter {name}")
        self.parameter = name


class Adam:
    """Bias-corrected adaptive-moment update, applied in sorted name order."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.isfinite(g).all():
                raise NonFiniteGradient(name)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / b1c
            v_hat = self.v[name] / b2c
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict:
        out = {}
        for name in self.params:
            out[f"opt.m.{name}"] = self.m[name].copy()
            out[f"opt.v.{name}"] = self.v[name].copy()
        return out

    def load_state(self, arrays: dict, step_count: int) -> None:
        self.step_count = step_count
        for name in self.params:
            self.m[name] = arrays[f"opt.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = arrays[f"opt.v.{name}"].astype(self.v[name].dtype)


def clip_gradients(params: dict, max_norm: float) -> float:
    """Scale all gradients so their global norm is at most ``max_norm``."""
    total = 0.0
    for name in sorted(params):
        g = params[name].grad
        if g is not None:
            total += float(np.sum(np.asarray(g, np.float64) ** 2))
    norm = math.sqrt(total)
    if norm > max_norm > 0:
        scale = max_norm / norm
        for name in sorted(params):
            p = params[name]
            if p.grad is not None:
                p.tensor.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


def cosine_lr(step: int, total_steps: int, lr: float, lr_min: float) -> float:
    if total_steps <= 1:
        return lr
    frac = min(step, total_steps - 1) / (total_steps - 1)
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * frac))


_BOOL = {"true": True, "false": False}


@dataclass
class ExperimentConfig:
    """Declarative run description, round-trippable through key=value files."""

    task: str = "denoise"
    model: str = "naf"
    width: int = 16
    enc_blocks: tuple = (1, 1)
    middle_blocks: int = 1
    dec_blocks: tuple = (1, 1)
    unroll_T: int = 8
    share_weights: bool = False
    learn_mu: bool = True
    reg_mode: str = "correction"
    epochs: int = 6
    batch_size: int = 2
    lr: float = 1e-3
    lr_min: float = 1e-5
    grad_clip: float = 1.0
    seed: int = 0
    data_root: str = "data"
    slices_per_volume: int = 8
    ssim_windows: str = "2d"

    def to_mapping(self) -> dict:
        out = {}
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                out[f.name] = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                out[f.name] = "true" if value else "false"
            else:
                out[f.name] = str(value)
        return out

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentConfig":
        kwargs = {}
        for f in dataclass_fields(cls):
            if f.name not in mapping:
                continue
            raw = mapping[f.name]
            if f.type in ("int", int):
                kwargs[f.name] = int(raw)
            elif f.type in ("float", float):
                kwargs[f.name] = float(raw)
            elif f.type in ("bool", bool):
                kwargs[f.name] = _BOOL[raw.lower()]
            elif f.type in ("tuple", tuple):
                kwargs[f.name] = tuple(int(v) for v in raw.split(",") if v)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)

    def save(self, path) -> None:
        fileio.write_config(path, self.to_mapping())

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_mapping(fileio.read_config(path))


def backbone_config(cfg: ExperimentConfig) -> BackboneConfig:
    channels = 2 if cfg.task == "recon" else 1
    mixer = "lsconv" if cfg.model == "lsg" else "local_dw3"
    return BackboneConfig(width=cfg.width, enc_blocks=cfg.enc_blocks,
                          middle_blocks=cfg.middle_blocks, dec_blocks=cfg.dec_blocks,
                          in_channels=channels, out_channels=channels, mixer=mixer)


def build_model(cfg: ExperimentConfig):
    if cfg.task == "recon":
        ucfg = UnrolledConfig(T=cfg.unroll_T, share_weights=cfg.share_weights,
                              learn_mu=cfg.learn_mu, reg_mode=cfg.reg_mode,
                              backbone=backbone_config(cfg))
        return UnrolledModel(ucfg, seed=[cfg.seed, 17])
    return Backbone(backbone_config(cfg), seed=[cfg.seed, 17])


def _clean_magnitude(sample) -> np.ndarray:
    if np.iscomplexobj(sample.clean):
        return np.abs(sample.clean).astype(np.float64)
    return np.asarray(sample.clean, np.float64)


def degraded_input_magnitude(sample) -> np.ndarray:
    """The model-free estimate: zero-filled reconstruction for recon, the
    degraded image itself otherwise."""
    if sample.task == "recon":
        k = Tensor(mri.to_pairs(sample.degraded, np.float64))
        image = mri.reduce(mri.ifft2c(k), sample.coils)
        return np.abs(mri.from_pairs(image.data))
    return np.asarray(sample.degraded, np.float64)


def infer_sample(model, cfg: ExperimentConfig, sample) -> np.ndarray:
    """Magnitude estimate for one sample (no gradient recording)."""
    with no_grad():
        if cfg.task == "recon":
            k = Tensor(mri.to_pairs(sample.degraded, np.float32))
            image = unroll_forward(None, k, sample.mask, sample.coils, model)
            return np.abs(mri.from_pairs(image.data)).astype(np.float64)
        x = Tensor(np.asarray(sample.degraded, np.float32)[None, None])
        return model(x).data[0, 0].astype(np.float64)


def _sample_loss_recon(model, sample) -> Tensor:
    k = Tensor(mri.to_pairs(sample.degraded, np.float32))
    image = unroll_forward(None, k, sample.mask, sample.coils, model)
    pred_mag = mri.complex_abs(image)
    target = Tensor(np.abs(sample.clean).astype(np.float32))
    return l1_loss(pred_mag, target)


@dataclass
class TrainResult:
    log_rows: list
    best_val_psnr: float
    input_val_psnr: float
    flagged_failed: bool
    best_path: Path
    last_path: Path
    log_path: Path


def _mean_slice_psnr(estimates, references) -> float:
    values = []
    for est, ref in zip(estimates, references):
        peak = float(ref.max())
        if peak <= 0:
            continue
        values.append(metrics.psnr(est, ref, peak))
    return float(np.mean(values))


def validate(model, cfg: ExperimentConfig, samples) -> float:
    estimates = [infer_sample(model, cfg, s) for s in samples]
    references = [_clean_magnitude(s) for s in samples]
    return _mean_slice_psnr(estimates, references)


def train(cfg: ExperimentConfig, out_dir, resume: bool = False,
          stop_after: int | None = None) -> TrainResult:
    """Run the training loop; writes best/last checkpoints and a CSV log
    (columns epoch, train_loss, val_psnr, wall_seconds).

    ``stop_after`` interrupts the run after that many epochs; a later call
    with ``resume=True`` picks up from the last checkpoint and reproduces
    the uninterrupted run exactly (shuffling is derived from (seed, epoch)
    and the optimizer state is checkpointed)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples = degrade.load_split(cfg.data_root, cfg.task, "train")
    val_samples = degrade.load_split(cfg.data_root, cfg.task, "val")
    if not train_samples:
        raise FileNotFoundError(f"no training samples under {cfg.data_root}/{cfg.task}/train")

    model = build_model(cfg)
    params = model.param_map()
    opt = Adam(params, cfg.lr)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    log_path = out_dir / "training.csv"

    n_batches = (len(train_samples) + cfg.batch_size - 1) // cfg.batch_size
    total_steps = cfg.epochs * n_batches
    start_epoch = 0
    step = 0
    best_val = -math.inf
    log_rows = []

    if resume:
        if not last_path.exists():
            raise FileNotFoundError(f"cannot resume: missing checkpoint {last_path}")
        header, arrays = fileio.load_checkpoint(last_path)
        model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt.")})
        opt.load_state(arrays, int(header["step"]))
        start_epoch = int(header["epoch"]) + 1
        step = int(header["step"])
        best_val = float(header["best_val_psnr"])
        if log_path.exists():
            log_rows = [line for line in log_path.read_text().splitlines()[1:] if line]

    input_val_psnr = _mean_slice_psnr(
        [degraded_input_magnitude(s) for s in val_samples],
        [_clean_magnitude(s) for s in val_samples])

    end_epoch = cfg.epochs if stop_after is None else min(cfg.epochs, stop_after)
    for epoch in range(start_epoch, end_epoch):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, 1000 + epoch]).permutation(len(train_samples))
        losses = []
        for b0 in range(0, len(order), cfg.batch_size):
            batch = [train_samples[i] for i in order[b0:b0 + cfg.batch_size]]
            model.zero_grad()
            if cfg.task == "recon":
                batch_losses = []
                for sample in batch:
                    loss = _sample_loss_recon(model, sample)
                    backward(loss)
                    batch_losses.append(loss.item())
                inv = np.float32(1.0 / len(batch))
                for p in params.values():
                    if p.grad is not None:
                        p.tensor.grad = p.grad * inv
                loss_value = float(np.mean(batch_losses))
            else:
                x = Tensor(np.stack([np.asarray(s.degraded, np.float32) for s in batch])[:, None])
                y = Tensor(np.stack([np.asarray(s.clean, np.float32) for s in batch])[:, None])
                loss = l1_loss(model(x), y)
                backward(loss)
                loss_value = loss.item()
            clip_gradients(params, cfg.grad_clip)
            opt.step(cosine_lr(step, total_steps, cfg.lr, cfg.lr_min))
            step += 1
            losses.append(loss_value)
        train_loss = float(np.mean(losses))
        val_psnr = validate(model, cfg, val_samples)
        wall = time.perf_counter() - t0
        log_rows.append(f"{epoch},{train_loss!r},{val_psnr!r},{wall:.3f}")
        log_path.write_text("epoch,train_loss,val_psnr,wall_seconds\n" + "\n".join(log_rows) + "\n")

        if val_psnr > best_val:
            best_val = val_psnr
            header = dict(cfg.to_mapping(), kind="best", epoch=str(epoch),
                          val_psnr=repr(val_psnr))
            fileio.save_checkpoint(best_path, header, model.state_arrays())
        header = dict(cfg.to_mapping(), kind="last", epoch=str(epoch), step=str(step),
                      best_val_psnr=repr(best_val))
        fileio.save_checkpoint(last_path, header,
                               dict(model.state_arrays(), **opt.state_arrays()))

    flagged = best_val < input_val_psnr
    return TrainResult(log_rows, best_val, input_val_psnr, flagged,
                       best_path, last_path, log_path)


def load_model(ckpt_path):
    """Rebuild the model recorded in a checkpoint; returns (model, config)."""
    header, arrays = fileio.load_checkpoint(ckpt_path)
    cfg = ExperimentConfig.from_mapping(header)
    model = build_model(cfg)
    model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    return model, cfg


def _input_digest(samples) -> str:
    digest = hashlib.sha256()
    for sample in samples:
        digest.update(np.ascontiguousarray(sample.degraded).tobytes())
    return digest.hexdigest()


def evaluate_split(model, cfg: ExperimentConfig, split: str, method: str = "") -> metrics.MetricsReport:
    """Inference over a split grouped into fixed-size synthetic volumes.

    ``model=None`` evaluates the model-free baseline (zero-filled input)."""
    samples = degrade.load_split(cfg.data_root, cfg.task, split)
    if not samples:
        raise FileNotFoundError(f"no samples under {cfg.data_root}/{cfg.task}/{split}")
    estimates = []
    references = []
    for sample in samples:
        if model is None:
            estimates.append(degraded_input_magnitude(sample))
        else:
            estimates.append(infer_sample(model, cfg, sample))
        references.append(_clean_magnitude(sample))
    pairs = []
    per_vol = cfg.slices_per_volume
    for v0 in range(0, len(samples), per_vol):
        ref = np.stack(references[v0:v0 + per_vol])
        est = np.stack(estimates[v0:v0 + per_vol])
        pairs.append(metrics.VolumePair(f"vol{v0 // per_vol:03d}", ref, est))
    return metrics.build_report(pairs, windows=cfg.ssim_windows, method=method,
                                input_digest=_input_digest(samples))


def evaluate_checkpoint(ckpt_path, split: str) -> metrics.MetricsReport:
    model, cfg = load_model(ckpt_path)
    return evaluate_split(model, cfg, split, method=f"{cfg.task}-{cfg.model}")
