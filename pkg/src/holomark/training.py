"""Autoencoder pretraining and the joint watermark/forensics training loop.

Joint training follows one fixed recipe per step: encode the batch, decode a
plain and a watermarked copy from the same latent, splice a tampered sample,
run the forensic network on it, and take one optimizer step on the adapter
and forensic parameters only. The encoder and vanilla decoder stay frozen
throughout; tests compare them bitwise before and after.

All randomness is drawn from generators derived functionally from
(seed, epoch, step), so an interrupted run resumed from a checkpoint
continues exactly as if it had never stopped.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch.optim import Adam

from . import metrics
from .autoencoder import WatermarkAutoencoder
from .bits import sample_bits
from .checkpointing import load_checkpoint, save_checkpoint
from .configs import (AutoencoderConfig, MoeConfig, PretrainConfig, TrainConfig,
                      UnetConfig, to_dict)
from .forensic import ForensicNetwork
from .losses import LossReport, sim_loss, total_loss, wbce_loss, dice_loss, wm_loss
from .synthesis import make_training_sample

_EPOCH_STREAM = 7919  # distinct stream tag for shuffle generators


class TrainingDiverged(RuntimeError):
    """Raised when a training step produces a non-finite loss."""


@dataclass
class PretrainResult:
    autoencoder: WatermarkAutoencoder
    achieved_psnr_db: float
    met_criterion: bool
    epochs_run: int


def pretrain_autoencoder(corpus: torch.Tensor, cfg: PretrainConfig,
                         ae_cfg: AutoencoderConfig, log_fn=None) -> PretrainResult:
    """Train the toy autoencoder on a reconstruction objective, then freeze it.

    The exit criterion is mean per-image PSNR over the corpus; if it is not
    met after the configured epochs the result is flagged, not raised, so the
    caller decides whether a weaker reconstruction is acceptable.
    """
    if len(corpus) == 0:
        raise ValueError("pretraining corpus is empty")
    torch.manual_seed(cfg.seed)
    ae = WatermarkAutoencoder(ae_cfg)
    params = [p for n, p in ae.named_parameters()
              if n.startswith("encoder.") or n.startswith("decoder.")]
    opt = Adam(params, lr=cfg.lr)
    n = corpus.shape[0]
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, _EPOCH_STREAM, epoch]).permutation(n)
        for start in range(0, n - cfg.batch_size + 1, cfg.batch_size):
            batch = corpus[order[start:start + cfg.batch_size]]
            recon = ae.decode_plain(ae.encode(batch), clamp=False)
            loss = torch.mean((recon - batch) ** 2)
            opt.zero_grad()
            loss.backward()
            opt.step()
        if log_fn is not None:
            log_fn(f"pretrain epoch {epoch + 1}/{cfg.epochs} mse={float(loss.detach()):.5f}")
    achieved = evaluate_reconstruction_psnr(ae, corpus)
    if log_fn is not None:
        log_fn(f"pretrain done: reconstruction PSNR {achieved:.2f} dB "
               f"(criterion {cfg.min_psnr_db} dB)")
    return PretrainResult(ae, achieved, achieved >= cfg.min_psnr_db, cfg.epochs)


@torch.no_grad()
def evaluate_reconstruction_psnr(ae: WatermarkAutoencoder, images: torch.Tensor,
                                 batch_size: int = 32) -> float:
    vals = []
    for start in range(0, images.shape[0], batch_size):
        batch = images[start:start + batch_size]
        recon = ae.decode_plain(ae.encode(batch))
        vals.extend(metrics.psnr(recon[i], batch[i]) for i in range(batch.shape[0]))
    return float(np.mean(vals))


def snapshot_params(module: torch.nn.Module, names: list[str] | None = None) -> dict[str, torch.Tensor]:
    wanted = set(names) if names is not None else None
    return {n: p.detach().clone() for n, p in module.named_parameters()
            if wanted is None or n in wanted}


def frozen_violations(before: dict[str, torch.Tensor],
                      after: dict[str, torch.Tensor]) -> list[str]:
    """Paths of snapshot tensors that changed bitwise."""
    changed = []
    for name, tensor in before.items():
        if name not in after or not torch.equal(tensor, after[name]):
            changed.append(name)
    return changed


def assert_frozen(before: dict[str, torch.Tensor], after: dict[str, torch.Tensor]) -> bool:
    return not frozen_violations(before, after)


@dataclass
class RunState:
    step: int = 0
    epoch: int = 0
    step_in_epoch: int = 0
    ema: dict = field(default_factory=dict)
    checkpoint_paths: list = field(default_factory=list)

    def update_ema(self, report: LossReport, decay: float = 0.98) -> None:
        for key, value in report.to_dict().items():
            prev = self.ema.get(key)
            self.ema[key] = value if prev is None else decay * prev + (1 - decay) * value


def step_rng(seed: int, epoch: int, step_in_epoch: int) -> np.random.Generator:
    """Generator for one training step, a pure function of its coordinates."""
    return np.random.default_rng([seed, epoch, step_in_epoch])


class JointTrainer:
    """Owns the models and optimizer for the joint training procedure."""

    def __init__(self, cfg: TrainConfig, autoencoder: WatermarkAutoencoder,
                 forensic: ForensicNetwork):
        cfg.validate()
        if autoencoder.cfg.bit_length != cfg.bit_length:
            raise ValueError("autoencoder bit length does not match train config")
        self.cfg = cfg
        self.autoencoder = autoencoder
        self.forensic = forensic
        self.autoencoder.freeze_base()
        self.trainable = list(autoencoder.adapter_parameters()) + list(forensic.parameters())
        self.optimizer = Adam(self.trainable, lr=cfg.lr, betas=cfg.betas, eps=cfg.eps)

    def train_step(self, batch: torch.Tensor, state: RunState,
                   rng: np.random.Generator, dump_dir: Path | None = None) -> LossReport:
        cfg = self.cfg
        b = batch.shape[0]
        z = self.autoencoder.encode(batch)
        x_hat_raw = self.autoencoder.decode_plain(z, clamp=False)
        bits = sample_bits(rng, cfg.bit_length, batch=b)
        y_raw = self.autoencoder.decode_watermarked(z, bits, clamp=False)

        x_hat = x_hat_raw.clamp(0.0, 1.0)
        y = y_raw.clamp(0.0, 1.0)
        spliced, masks = [], []
        for i in range(b):
            sample = make_training_sample(batch[i], x_hat[i], y[i], bits[i],
                                          cfg.splice, rng)
            spliced.append(sample.spliced)
            masks.append(sample.mask)
        spliced_t = torch.stack(spliced)
        mask_t = torch.stack(masks)

        mask_logits, wm_logits = self.forensic(spliced_t)
        sim = sim_loss(x_hat_raw, y_raw, cfg.loss)
        wm = wm_loss(bits, wm_logits)
        wbce = wbce_loss(mask_t, mask_logits, cfg.loss)
        dice = dice_loss(mask_t, mask_logits)

        components = {"sim": sim, "wm": wm, "wbce": wbce, "dice": dice}
        bad = [name for name, t in components.items() if not torch.isfinite(t)]
        if bad:
            dump = {"batch": batch, "bits": bits, "masks": mask_t,
                    "step": state.step, "epoch": state.epoch,
                    "components": {k: float(v.detach()) for k, v in components.items()}}
            path = None
            if dump_dir is not None:
                dump_dir.mkdir(parents=True, exist_ok=True)
                path = dump_dir / f"nan_step{state.step}.pt"
                torch.save(dump, path)
            raise TrainingDiverged(
                f"non-finite loss components {bad} at step {state.step}"
                + (f"; offending batch dumped to {path}" if path else ""))

        total, report = total_loss(sim, wm, wbce, dice, cfg.loss)

        self.optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(self.trainable, cfg.grad_clip)
        self.optimizer.step()
        state.update_ema(report)
        return report


def _checkpoint_payload(trainer: JointTrainer, state: RunState) -> dict:
    return {
        "autoencoder": trainer.autoencoder.state_dict(),
        "forensic": trainer.forensic.state_dict(),
        "optimizer": trainer.optimizer.state_dict(),
        "state": {"step": state.step, "epoch": state.epoch,
                  "step_in_epoch": state.step_in_epoch, "ema": state.ema},
    }


def _save_train_checkpoint(trainer: JointTrainer, state: RunState, path: Path,
                           config_hash: str, model_cfg: dict) -> Path:
    flat = {}
    for prefix in ("autoencoder", "forensic"):
        module = getattr(trainer, prefix)
        flat.update({f"{prefix}.{k}": v for k, v in module.state_dict().items()})
    freeze_mask = [f"autoencoder.{n}" for n in trainer.autoencoder.base_parameter_names()]
    extra = {"optimizer": trainer.optimizer.state_dict(),
             "state": _checkpoint_payload(trainer, state)["state"]}
    return save_checkpoint(path, params=flat, freeze_mask=freeze_mask,
                           config_hash=config_hash, meta=model_cfg, extra=extra)


def _latest_checkpoint(ckpt_dir: Path) -> Path | None:
    candidates = sorted(ckpt_dir.glob("step_*.pt"))
    return candidates[-1] if candidates else None


def train(cfg: TrainConfig, corpus: torch.Tensor, autoencoder: WatermarkAutoencoder,
          forensic: ForensicNetwork, out_dir: str | Path, config_hash: str = "",
          model_cfg: dict | None = None, max_steps: int | None = None,
          log_fn=None, resume: bool = True) -> Path:
    """Run the joint loop for cfg.epochs over the corpus; returns the final checkpoint.

    If `out_dir/checkpoints` already holds step checkpoints and `resume` is
    set, training continues from the latest one. `max_steps` stops early
    (after saving a checkpoint), which is how interruption is modeled.
    """
    if corpus.shape[0] == 0:
        raise ValueError("training corpus is empty")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    log_dir = out_dir / "logs"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_dir.mkdir(parents=True, exist_ok=True)
    log_path = log_dir / "train.jsonl"
    model_cfg = model_cfg or {}

    trainer = JointTrainer(cfg, autoencoder, forensic)
    state = RunState()
    resume_from = _latest_checkpoint(ckpt_dir) if resume else None
    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        ae_state = {k[len("autoencoder."):]: v for k, v in payload["params"].items()
                    if k.startswith("autoencoder.")}
        fo_state = {k[len("forensic."):]: v for k, v in payload["params"].items()
                    if k.startswith("forensic.")}
        trainer.autoencoder.load_state_dict(ae_state)
        trainer.forensic.load_state_dict(fo_state)
        trainer.optimizer.load_state_dict(payload["extra"]["optimizer"])
        saved = payload["extra"]["state"]
        state = RunState(step=saved["step"], epoch=saved["epoch"],
                         step_in_epoch=saved["step_in_epoch"], ema=dict(saved["ema"]))
        if log_fn is not None:
            log_fn(f"resumed from {resume_from} at step {state.step}")

    n = corpus.shape[0]
    steps_per_epoch = n // cfg.batch_size
    start_time = time.time()
    stop = False

    while state.epoch < cfg.epochs and not stop:
        order = np.random.default_rng([cfg.seed, _EPOCH_STREAM, state.epoch]).permutation(n)
        while state.step_in_epoch < steps_per_epoch:
            lo = state.step_in_epoch * cfg.batch_size
            batch = corpus[order[lo:lo + cfg.batch_size]]
            rng = step_rng(cfg.seed, state.epoch, state.step_in_epoch)
            report = trainer.train_step(batch, state, rng,
                                        dump_dir=out_dir / "diagnostics")
            state.step += 1
            state.step_in_epoch += 1
            line = {"step": state.step, "epoch": state.epoch, **report.to_dict(),
                    "wallclock": round(time.time() - start_time, 3)}
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(line) + "\n")
            if log_fn is not None and state.step % 50 == 0:
                log_fn(f"step {state.step} total={report.total:.4f} "
                       f"wm={report.wm:.4f} dice={report.dice:.4f}")
            if state.step % cfg.checkpoint_every == 0:
                path = _save_train_checkpoint(trainer, state,
                                              ckpt_dir / f"step_{state.step:07d}.pt",
                                              config_hash, model_cfg)
                state.checkpoint_paths.append(str(path))
            if max_steps is not None and state.step >= max_steps:
                stop = True
                break
        if not stop:
            state.epoch += 1
            state.step_in_epoch = 0

    final = _save_train_checkpoint(trainer, state,
                                   ckpt_dir / f"step_{state.step:07d}.pt",
                                   config_hash, model_cfg)
    state.checkpoint_paths.append(str(final))
    return final


def loss_moving_average(log_path: str | Path, window: int, at_step: int) -> float:
    """Trailing mean of the total loss over `window` steps ending at `at_step`."""
    totals = {}
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            rec = json.loads(line)
            totals[rec["step"]] = rec["total"]
    steps = [s for s in range(at_step - window + 1, at_step + 1) if s in totals]
    if not steps:
        raise ValueError(f"no logged steps in window ending at {at_step}")
    return float(np.mean([totals[s] for s in steps]))
