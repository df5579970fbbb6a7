import pytest
import torch

from holomark.autoencoder import WatermarkAutoencoder
from holomark.checkpointing import (load_checkpoint, load_models, model_meta,
                                    save_checkpoint, save_models)
from holomark.configs import AutoencoderConfig, MoeConfig, UnetConfig
from holomark.forensic import ForensicNetwork

AE_CFG = AutoencoderConfig(base_width=8, adapter_dim=16, bit_length=8)
MOE = MoeConfig(n=2, heads=2)
UNET = UnetConfig(widths=(8, 16, 32), stem_width=8)


def test_checkpoint_roundtrip(tmp_path):
    params = {"a.weight": torch.randn(3, 3), "b.bias": torch.randn(4)}
    path = save_checkpoint(tmp_path / "ck.pt", params=params,
                           freeze_mask=["a.weight"], config_hash="cafe",
                           meta={"k": 1}, extra={"step": 7})
    payload = load_checkpoint(path)
    assert payload["config_hash"] == "cafe"
    assert payload["freeze_mask"] == ["a.weight"]
    assert payload["extra"]["step"] == 7
    assert torch.equal(payload["params"]["a.weight"], params["a.weight"])


def test_version_check(tmp_path):
    torch.save({"format_version": 99}, tmp_path / "bad.pt")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.pt")


def test_model_bundle_roundtrip(tmp_path):
    torch.manual_seed(0)
    ae = WatermarkAutoencoder(AE_CFG)
    net = ForensicNetwork(8, MOE, UNET, image_size=32)
    meta = model_meta(AE_CFG, MOE, UNET, image_size=32)
    path = save_models(tmp_path / "bundle.pt", ae, net, "beef", meta)

    ae2, net2, payload = load_models(path)
    assert payload["config_hash"] == "beef"
    img = torch.rand(1, 3, 32, 32)
    z = ae.encode(img)
    assert torch.equal(ae2.encode(img), z)
    m1, w1 = net(img)
    m2, w2 = net2(img)
    assert torch.equal(m1, m2) and torch.equal(w1, w2)
    # freeze mask covers exactly the encoder and vanilla decoder
    assert all(k.startswith("autoencoder.encoder.") or k.startswith("autoencoder.decoder.")
               for k in payload["freeze_mask"])


def test_autoencoder_only_bundle(tmp_path):
    ae = WatermarkAutoencoder(AE_CFG)
    path = save_models(tmp_path / "ae.pt", ae, None, "f00d", model_meta(AE_CFG))
    ae2, net2, _ = load_models(path)
    assert net2 is None
    z = torch.randn(1, 4, 8, 8)
    assert torch.equal(ae2.decode_plain(z), ae.decode_plain(z))


def test_atomic_write_no_tmp_left(tmp_path):
    save_checkpoint(tmp_path / "x.pt", params={}, freeze_mask=[], config_hash="")
    assert not list(tmp_path.glob("*.tmp"))
