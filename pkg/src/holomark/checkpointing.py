"""Checkpoint persistence.

One file format for both models: a dict with a format version, the config
hash of the run that produced it, all parameter tensors keyed by module path,
and the freeze mask (paths that must never change during joint training).
Files are written atomically and never overwritten in place.
"""

from __future__ import annotations

import os
from pathlib import Path

import torch

from .autoencoder import WatermarkAutoencoder
from .configs import AutoencoderConfig, MoeConfig, UnetConfig, to_dict, _from_dict
from .forensic import ForensicNetwork

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, *, params: dict[str, torch.Tensor],
                    freeze_mask: list[str], config_hash: str,
                    meta: dict | None = None, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash,
        "params": {k: v.detach().cpu() for k, v in params.items()},
        "freeze_mask": list(freeze_mask),
        "meta": meta or {},
        "extra": extra or {},
    }
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    return payload


def save_models(path: str | Path, autoencoder: WatermarkAutoencoder,
                forensic: ForensicNetwork | None, config_hash: str,
                model_cfg: dict, extra: dict | None = None) -> Path:
    """Bundle the autoencoder (and optionally the forensic net) in one checkpoint."""
    params = {f"autoencoder.{k}": v for k, v in autoencoder.state_dict().items()}
    if forensic is not None:
        params.update({f"forensic.{k}": v for k, v in forensic.state_dict().items()})
    freeze_mask = [f"autoencoder.{n}" for n in autoencoder.base_parameter_names()]
    return save_checkpoint(path, params=params, freeze_mask=freeze_mask,
                           config_hash=config_hash, meta=model_cfg, extra=extra)


def load_models(path: str | Path) -> tuple[WatermarkAutoencoder, ForensicNetwork | None, dict]:
    """Rebuild models from a bundle checkpoint; returns (autoencoder, forensic, payload)."""
    payload = load_checkpoint(path)
    meta = payload["meta"]
    ae_cfg = _from_dict(AutoencoderConfig, meta["autoencoder"])
    ae = WatermarkAutoencoder(ae_cfg)
    ae_state = {k[len("autoencoder."):]: v for k, v in payload["params"].items()
                if k.startswith("autoencoder.")}
    ae.load_state_dict(ae_state)
    forensic = None
    fo_state = {k[len("forensic."):]: v for k, v in payload["params"].items()
                if k.startswith("forensic.")}
    if fo_state:
        moe = _from_dict(MoeConfig, meta["moe"])
        unet = _from_dict(UnetConfig, meta["unet"])
        forensic = ForensicNetwork(ae_cfg.bit_length, moe, unet,
                                   image_size=meta.get("image_size", 64))
        forensic.load_state_dict(fo_state)
    return ae, forensic, payload


def model_meta(ae_cfg: AutoencoderConfig, moe: MoeConfig | None = None,
               unet: UnetConfig | None = None, image_size: int = 64) -> dict:
    meta = {"autoencoder": to_dict(ae_cfg), "image_size": image_size}
    if moe is not None:
        meta["moe"] = to_dict(moe)
    if unet is not None:
        meta["unet"] = to_dict(unet)
    return meta
