import math

import pytest
import torch

from holomark.configs import LossConfig
from holomark.losses import (LossReport, dice_loss, pyramid_l1, sim_loss,
                             tamper_loss, total_loss, wbce_loss, wm_loss)

from util import central_diff_grad, max_rel_error


def logit(p):
    return math.log(p / (1 - p))


class TestSimLoss:
    def test_identical_images_zero(self):
        x = torch.rand(2, 3, 16, 16)
        assert float(sim_loss(x, x.clone(), LossConfig())) == 0.0

    def test_constant_offset(self):
        x = torch.rand(1, 3, 32, 32)
        y = x + 0.1
        val = float(sim_loss(x, y, LossConfig()))
        # L1 term 0.1 plus 0.1 per pyramid level
        assert val == pytest.approx(0.1 + 3 * 0.1, abs=1e-6)

    def test_symmetric(self):
        a, b = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
        cfg = LossConfig()
        assert float(sim_loss(a, b, cfg)) == pytest.approx(float(sim_loss(b, a, cfg)), abs=1e-7)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            sim_loss(torch.rand(1, 3, 16, 16), torch.rand(1, 3, 8, 8), LossConfig())

    def test_external_backend_requires_fn(self):
        cfg = LossConfig(ps_backend="external")
        x = torch.rand(1, 3, 16, 16)
        with pytest.raises(ValueError):
            sim_loss(x, x, cfg)
        val = sim_loss(x, x + 0.5, cfg, ps_fn=lambda a, b: torch.tensor(2.0))
        assert float(val) == pytest.approx(2.5, abs=1e-6)

    def test_pyramid_identical_zero(self):
        x = torch.rand(1, 3, 32, 32)
        assert float(pyramid_l1(x, x.clone())) == 0.0


class TestWmLoss:
    def test_saturated(self):
        bits = torch.tensor([1.0, 0.0, 1.0, 0.0])
        logits = torch.tensor([20.0, -20.0, 20.0, -20.0])
        assert float(wm_loss(bits, logits)) <= 1e-8

    def test_zero_logits_ln2(self):
        bits = torch.tensor([1.0, 0.0, 1.0])
        val = float(wm_loss(bits, torch.zeros(3)))
        assert val == pytest.approx(math.log(2.0), abs=1e-6)

    def test_two_bit_example(self):
        bits = torch.tensor([1.0, 0.0], dtype=torch.float64)
        logits = torch.tensor([logit(0.8), logit(0.4)], dtype=torch.float64)
        expected = -(math.log(0.8) + math.log(0.6)) / 2.0
        assert float(wm_loss(bits, logits)) == pytest.approx(expected, abs=1e-9)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            wm_loss(torch.zeros(4), torch.zeros(5))


class TestWbceLoss:
    def test_saturated_background(self):
        mask = torch.zeros(1, 1, 8, 8)
        logits = torch.full((1, 1, 8, 8), -20.0)
        assert float(wbce_loss(mask, logits, LossConfig())) == pytest.approx(0.0, abs=1e-7)

    def test_uniform_logit_closed_form(self):
        # zero logits: loss = (lambda1*q + lambda2*(1-q)) * ln 2
        cfg = LossConfig(lambda1=2.0, lambda2=0.5)
        mask = torch.zeros(1, 1, 4, 4)
        mask[0, 0, :2] = 1.0  # q = 0.5
        val = float(wbce_loss(mask, torch.zeros_like(mask), cfg))
        expected = (2.0 * 0.5 + 0.5 * 0.5) * math.log(2.0)
        assert val == pytest.approx(expected, abs=1e-6)

    @pytest.mark.parametrize("scale", [2.0, 5.0])
    def test_linearity_in_lambda1(self, scale):
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        logits = torch.randn(1, 1, 8, 8)
        base = LossConfig(lambda1=1.0, lambda2=0.0001)
        scaled = LossConfig(lambda1=scale, lambda2=0.0001)
        fg_base = float(wbce_loss(mask, logits, base)) - float(
            wbce_loss(mask, logits, LossConfig(lambda1=1e-12, lambda2=0.0001)))
        fg_scaled = float(wbce_loss(mask, logits, scaled)) - float(
            wbce_loss(mask, logits, LossConfig(lambda1=1e-12, lambda2=0.0001)))
        assert fg_scaled == pytest.approx(scale * fg_base, rel=1e-5)

    def test_linearity_in_lambda2(self):
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        logits = torch.randn(1, 1, 8, 8)
        lo = float(wbce_loss(mask, logits, LossConfig(lambda1=1e-12, lambda2=1.0)))
        hi = float(wbce_loss(mask, logits, LossConfig(lambda1=1e-12, lambda2=3.0)))
        assert hi == pytest.approx(3.0 * lo, rel=1e-5)


class TestDiceLoss:
    def test_perfect_match_zero(self):
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        logits = torch.where(mask > 0.5, torch.tensor(40.0), torch.tensor(-40.0))
        assert float(dice_loss(mask, logits)) == pytest.approx(0.0, abs=1e-5)

    def test_all_ones_uniform_half(self):
        mask = torch.ones(1, 1, 10, 10)
        val = float(dice_loss(mask, torch.zeros_like(mask)))
        # 1 - 2*(0.5N)/(N + 0.25N) = 0.2
        assert val == pytest.approx(0.2, abs=1e-6)

    def test_empty_empty_convention(self):
        mask = torch.zeros(1, 1, 8, 8)
        logits = torch.full_like(mask, -50.0)  # sigmoid ~ 0
        assert float(dice_loss(mask, logits)) == pytest.approx(1.0, abs=1e-4)

    def test_bounds(self):
        for _ in range(20):
            mask = (torch.rand(1, 1, 6, 6) > 0.5).float()
            logits = torch.randn(1, 1, 6, 6) * 5
            val = float(dice_loss(mask, logits))
            assert 0.0 <= val <= 1.0


class TestTamperAndTotal:
    def test_lambda0_extremes(self):
        mask = (torch.rand(1, 1, 8, 8) > 0.5).float()
        logits = torch.randn(1, 1, 8, 8)
        cfg1 = LossConfig(lambda0=1.0)
        cfg0 = LossConfig(lambda0=0.0)
        assert float(tamper_loss(mask, logits, cfg1)) == pytest.approx(
            float(wbce_loss(mask, logits, cfg1)), abs=1e-7)
        assert float(tamper_loss(mask, logits, cfg0)) == pytest.approx(
            float(dice_loss(mask, logits)), abs=1e-7)

    def test_affine_combination(self):
        cfg = LossConfig(lambda0=0.2)
        val = 0.2 * 0.5 + 0.8 * 0.25
        assert val == pytest.approx(0.3)

    def test_total_report(self):
        cfg = LossConfig(lambda0=0.2)
        sim = torch.tensor(0.1)
        wm = torch.tensor(0.693)
        wbce = torch.tensor(0.5)
        dice = torch.tensor(0.25)
        total, report = total_loss(sim, wm, wbce, dice, cfg)
        assert report.tamper == pytest.approx(0.3, abs=1e-6)
        assert report.total == pytest.approx(1.093, abs=1e-6)
        # exact decomposition invariants hold on the float fields
        assert abs(report.tamper - (0.2 * report.wbce + 0.8 * report.dice)) <= 1e-9
        assert abs(report.total - (report.sim + report.wm + report.tamper)) <= 1e-9
        assert float(total) == pytest.approx(report.total, abs=1e-6)
        report.validate(cfg.lambda0)

    def test_total_zero(self):
        z = torch.tensor(0.0)
        total, report = total_loss(z, z, z, z, LossConfig())
        assert report.total == 0.0

    def test_report_rejects_bad_decomposition(self):
        rep = LossReport(sim=0.1, wm=0.1, wbce=0.1, dice=0.1, tamper=0.9, total=1.1)
        with pytest.raises(ValueError):
            rep.validate(0.2)

    def test_report_rejects_nan(self):
        rep = LossReport(sim=float("nan"), wm=0.0, wbce=0.0, dice=0.0, tamper=0.0, total=0.0)
        with pytest.raises(ValueError):
            rep.validate(0.2)


class TestGradients:
    """Analytic gradients vs central differences on small double-precision instances."""

    def _check(self, fn, logits):
        logits = logits.double().requires_grad_(True)
        loss = fn(logits)
        analytic = torch.autograd.grad(loss, logits)[0]
        numeric = central_diff_grad(lambda: fn(logits.detach()), logits.detach().clone())
        # recompute numeric on an independent copy to avoid in-place aliasing
        base = logits.detach().clone()
        numeric = central_diff_grad(lambda: fn(base), base)
        assert max_rel_error(analytic, numeric) <= 1e-5

    def test_wm_loss_grad(self):
        bits = (torch.rand(16) > 0.5).double()
        self._check(lambda z: wm_loss(bits, z), torch.randn(16))

    def test_wbce_grad(self):
        cfg = LossConfig()
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()
        self._check(lambda z: wbce_loss(mask, z, cfg), torch.randn(1, 1, 4, 4))

    def test_dice_grad(self):
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()
        self._check(lambda z: dice_loss(mask, z), torch.randn(1, 1, 4, 4))

    def test_tamper_grad(self):
        cfg = LossConfig()
        mask = (torch.rand(1, 1, 4, 4) > 0.5).double()
        self._check(lambda z: tamper_loss(mask, z, cfg), torch.randn(1, 1, 4, 4))

    def test_sim_grad(self):
        cfg = LossConfig()
        target = torch.randn(1, 3, 8, 8).double()
        self._check(lambda z: sim_loss(z, target, cfg), torch.randn(1, 3, 8, 8) + 0.5)


def test_nonnegativity_random_inputs():
    cfg = LossConfig()
    for _ in range(10):
        mask = (torch.rand(1, 1, 6, 6) > 0.5).float()
        logits = torch.randn(1, 1, 6, 6)
        bits = (torch.rand(8) > 0.5).float()
        assert float(wm_loss(bits, torch.randn(8))) >= 0
        assert float(wbce_loss(mask, logits, cfg)) >= 0
        assert float(dice_loss(mask, logits)) >= 0
        a, b = torch.rand(1, 3, 16, 16), torch.rand(1, 3, 16, 16)
        assert float(sim_loss(a, b, cfg)) >= 0
