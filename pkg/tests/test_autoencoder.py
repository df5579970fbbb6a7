import numpy as np
import pytest
import torch

from holomark.autoencoder import WatermarkAdapter, WatermarkAutoencoder
from holomark.bits import sample_bits
from holomark.configs import AutoencoderConfig, PretrainConfig
from holomark.training import pretrain_autoencoder

from util import central_diff_grad, max_rel_error


@pytest.fixture
def ae():
    torch.manual_seed(0)
    return WatermarkAutoencoder(AutoencoderConfig())


class TestEncode:
    def test_shape_contract(self, ae):
        img = torch.rand(2, 3, 64, 64)
        z = ae.encode(img)
        assert z.shape == (2, 4, 16, 16)

    def test_single_image(self, ae):
        z = ae.encode(torch.rand(3, 64, 64))
        assert z.shape == (4, 16, 16)

    def test_zero_image_finite(self, ae):
        z = ae.encode(torch.zeros(1, 3, 64, 64))
        assert torch.isfinite(z).all()

    def test_indivisible_size_rejected(self, ae):
        with pytest.raises(ValueError):
            ae.encode(torch.rand(1, 3, 62, 64))
        with pytest.raises(ValueError):
            ae.encode(torch.rand(1, 3, 64, 61))

    def test_deterministic(self, ae):
        img = torch.rand(1, 3, 64, 64)
        assert torch.equal(ae.encode(img), ae.encode(img))


class TestDecode:
    def test_plain_shape(self, ae):
        out = ae.decode_plain(torch.randn(2, 4, 16, 16))
        assert out.shape == (2, 3, 64, 64)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_preclamp_available(self, ae):
        z = torch.randn(1, 4, 16, 16) * 3
        raw = ae.decode_plain(z, clamp=False)
        clamped = ae.decode_plain(z)
        # raw decode may exceed [0,1]; the boundary version never does
        assert torch.equal(clamped, raw.clamp(0, 1))
        assert clamped.min() >= 0.0 and clamped.max() <= 1.0

    def test_toggle_has_no_effect_on_plain(self, ae):
        z = torch.randn(1, 4, 16, 16)
        ae.adapters_enabled = False
        a = ae.decode_plain(z)
        ae.adapters_enabled = True
        b = ae.decode_plain(z)
        assert torch.equal(a, b)

    def test_zero_init_identity_bit_exact(self, ae):
        z = torch.randn(2, 4, 16, 16)
        bits = sample_bits(np.random.default_rng(0), 32, batch=2)
        assert torch.equal(ae.decode_watermarked(z, bits), ae.decode_plain(z))

    def test_disabled_adapters_identity_bit_exact(self, ae):
        # poke the adapters away from zero-init, then disable them
        for a in ae.adapters:
            torch.nn.init.normal_(a.conv_block_2.weight, std=0.05)
        ae.adapters_enabled = False
        z = torch.randn(1, 4, 16, 16)
        bits = sample_bits(np.random.default_rng(1), 32)
        assert torch.equal(ae.decode_watermarked(z, bits), ae.decode_plain(z))

    def test_bit_length_mismatch(self, ae):
        z = torch.randn(1, 4, 16, 16)
        with pytest.raises(ValueError):
            ae.decode_watermarked(z, torch.zeros(1, 16))

    def test_trained_adapters_respond_to_bits(self, ae):
        for a in ae.adapters:
            torch.nn.init.normal_(a.conv_block_2.weight, std=0.05)
            torch.nn.init.normal_(a.conv_block_2.bias, std=0.05)
        z = torch.randn(1, 4, 16, 16)
        rng = np.random.default_rng(2)
        b1 = sample_bits(rng, 32)
        b2 = 1.0 - b1
        y1 = ae.decode_watermarked(z, b1)
        y2 = ae.decode_watermarked(z, b2)
        assert float((y1 - y2).abs().max()) > 0.0


class TestAdapter:
    def test_zero_init_identity(self):
        torch.manual_seed(0)
        adapter = WatermarkAdapter(32, 64)
        feat = torch.randn(2, 64, 16, 16)
        bits = sample_bits(np.random.default_rng(0), 32, batch=2)
        assert torch.equal(adapter(feat, bits), feat)

    def test_shape_preserved(self):
        adapter = WatermarkAdapter(32, 64)
        torch.nn.init.normal_(adapter.conv_block_2.weight, std=0.1)
        feat = torch.randn(3, 64, 16, 16)
        bits = sample_bits(np.random.default_rng(0), 32, batch=3)
        assert adapter(feat, bits).shape == feat.shape

    def test_channel_mismatch(self):
        adapter = WatermarkAdapter(32, 64)
        with pytest.raises(ValueError):
            adapter(torch.randn(1, 32, 8, 8), torch.zeros(1, 32))

    def test_gradient_wrt_bits_embedding(self):
        torch.manual_seed(1)
        adapter = WatermarkAdapter(8, 16, adapter_dim=32).double()
        torch.nn.init.normal_(adapter.conv_block_2.weight, std=0.1)
        torch.nn.init.normal_(adapter.conv_block_2.bias, std=0.1)
        feat = torch.randn(1, 16, 4, 4, dtype=torch.float64)
        weights = torch.randn(1, 16, 4, 4, dtype=torch.float64)
        bits = (torch.rand(1, 8) > 0.5).double().requires_grad_(True)

        def loss_of(b):
            return (adapter(feat, b) * weights).sum()

        analytic = torch.autograd.grad(loss_of(bits), bits)[0]
        base = bits.detach().clone()
        numeric = central_diff_grad(lambda: loss_of(base), base)
        assert max_rel_error(analytic, numeric) <= 1e-5


class TestPretrain:
    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError):
            pretrain_autoencoder(torch.zeros(0, 3, 64, 64), PretrainConfig(),
                                 AutoencoderConfig())

    def test_seeded_rerun_bitwise_identical(self):
        corpus = torch.rand(8, 3, 32, 32)
        cfg = PretrainConfig(epochs=2, batch_size=4, seed=3)
        r1 = pretrain_autoencoder(corpus.clone(), cfg, AutoencoderConfig())
        r2 = pretrain_autoencoder(corpus.clone(), cfg, AutoencoderConfig())
        s1, s2 = r1.autoencoder.state_dict(), r2.autoencoder.state_dict()
        assert set(s1) == set(s2)
        for k in s1:
            assert torch.equal(s1[k], s2[k]), k

    def test_smoke_improves_reconstruction(self):
        torch.manual_seed(0)
        corpus = torch.rand(8, 3, 32, 32) * 0.1 + 0.45  # easy, near-constant data
        cfg = PretrainConfig(epochs=8, batch_size=4, seed=0, min_psnr_db=5.0)
        res = pretrain_autoencoder(corpus, cfg, AutoencoderConfig())
        assert res.achieved_psnr_db > 10.0
        assert res.met_criterion
