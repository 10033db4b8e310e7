"""Loss values against closed-form oracles, mask-exclusion exactness, and
degenerate-mask conventions."""

import math

import numpy as np
import pytest
import torch

from floodgen.errors import DimensionMismatch, LabelOutOfRange, NonFiniteLoss
from floodgen.losses import (
    LossReport,
    domain_adv_loss,
    gan_losses,
    height_l2_loss,
    masked_cycle_loss,
    reconstruction_losses,
    semantic_consistency_loss,
    seg_supervised_loss,
    total_loss,
)


def _rand(shape, seed=0):
    g = torch.Generator().manual_seed(seed)
    return torch.rand(*shape, generator=g)


class TestMaskedCycleLoss:
    def test_identity_is_zero(self):
        x = _rand((1, 3, 4, 4))
        mask = torch.tensor([[0.0, 1.0], [1.0, 0.0]]).repeat_interleave(2, 0).repeat_interleave(2, 1)
        assert masked_cycle_loss(x, x, mask).item() == 0.0

    def test_uniform_error_mask_all_zero(self):
        x = torch.zeros(1, 3, 4, 4)
        x_cycled = torch.full((1, 3, 4, 4), 0.5)
        mask = torch.zeros(4, 4)
        assert masked_cycle_loss(x, x_cycled, mask).item() == pytest.approx(0.5)

    def test_mask_all_one_returns_exact_zero(self):
        x = torch.zeros(1, 3, 4, 4)
        x_cycled = torch.full((1, 3, 4, 4), 0.5)
        mask = torch.ones(4, 4)
        assert masked_cycle_loss(x, x_cycled, mask).item() == 0.0

    def test_exactly_invariant_to_perturbation_inside_mask(self):
        x = _rand((2, 3, 6, 6), seed=1)
        x_cycled = _rand((2, 3, 6, 6), seed=2)
        mask = (torch.arange(36).reshape(6, 6) % 3 == 0).float()
        base = masked_cycle_loss(x, x_cycled, mask).item()
        perturbed = x_cycled + 1000.0 * mask.unsqueeze(0).unsqueeze(0)
        assert masked_cycle_loss(x, perturbed, mask).item() == base

    def test_loss_is_mean_of_kept_pixels(self):
        x = torch.zeros(1, 3, 4, 4)
        x_cycled = _rand((1, 3, 4, 4), seed=3)
        mask = (torch.arange(16).reshape(4, 4) < 6).float()
        per_pixel = x_cycled.abs().mean(dim=1).squeeze(0)
        expected = per_pixel[mask == 0].mean().item()
        assert masked_cycle_loss(x, x_cycled, mask).item() == pytest.approx(expected, rel=1e-6)

    def test_growing_mask_never_increases_uniform_loss(self):
        x = torch.zeros(1, 3, 5, 5)
        x_cycled = torch.full((1, 3, 5, 5), 0.25)
        mask = torch.zeros(5, 5)
        previous = masked_cycle_loss(x, x_cycled, mask).item()
        rng = np.random.default_rng(0)
        for v, u in rng.permutation([(i, j) for i in range(5) for j in range(5)])[:24]:
            mask[v, u] = 1.0
            current = masked_cycle_loss(x, x_cycled, mask).item()
            assert current <= previous + 1e-12
            previous = current

    def test_inside_weight_soft_inclusion(self):
        x = torch.zeros(1, 3, 2, 2)
        x_cycled = torch.tensor([[0.0, 0.0], [1.0, 1.0]]).expand(1, 3, 2, 2).clone()
        mask = torch.tensor([[0.0, 0.0], [1.0, 1.0]])
        assert masked_cycle_loss(x, x_cycled, mask, inside_weight=0.0).item() == 0.0
        assert masked_cycle_loss(x, x_cycled, mask, inside_weight=1.0).item() == pytest.approx(0.5)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            masked_cycle_loss(torch.zeros(1, 3, 4, 4), torch.zeros(1, 3, 4, 4), torch.zeros(3, 3))


class TestSemanticConsistencyLoss:
    def test_matching_confident_scores_near_zero(self):
        # logits built so softmax confidence is exactly 0.999
        k = 10
        p = 0.999
        hi = math.log(p / ((1 - p) / (k - 1)))
        scores = torch.zeros(1, k, 2, 2)
        scores[:, 3] = hi
        loss = semantic_consistency_loss(scores, scores, torch.zeros(2, 2))
        assert loss.item() == pytest.approx(-math.log(p), rel=1e-5)
        assert loss.item() < 2e-3

    def test_uniform_prediction_is_ln_ten(self):
        labels_scores = torch.zeros(1, 10, 3, 3)
        labels_scores[:, 7] = 5.0
        uniform = torch.full((1, 10, 3, 3), 0.1)
        loss = semantic_consistency_loss(labels_scores, uniform, torch.zeros(3, 3))
        assert loss.item() == pytest.approx(math.log(10.0), rel=1e-6)

    def test_mask_all_one_returns_zero(self):
        scores = _rand((1, 10, 4, 4))
        assert semantic_consistency_loss(scores, scores * 2, torch.ones(4, 4)).item() == 0.0

    def test_invariant_to_translated_perturbation_inside_mask(self):
        src = _rand((1, 10, 4, 4), seed=5)
        tr = _rand((1, 10, 4, 4), seed=6)
        mask = (torch.arange(16).reshape(4, 4) % 2).float()
        base = semantic_consistency_loss(src, tr, mask).item()
        tr_perturbed = tr + 50.0 * mask.unsqueeze(0).unsqueeze(0)
        assert semantic_consistency_loss(src, tr_perturbed, mask).item() == pytest.approx(base, abs=1e-7)


class TestGanLosses:
    def test_discriminator_optimum(self):
        real = [torch.ones(1, 1, 4, 4), torch.ones(1, 1, 2, 2)]
        fake = [torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 2, 2)]
        assert gan_losses(real, fake, "discriminator").item() == 0.0

    def test_generator_optimum(self):
        fake = [torch.ones(1, 1, 4, 4)]
        assert gan_losses(None, fake, "generator").item() == 0.0

    def test_generator_half_scores(self):
        fake = torch.full((1, 1, 4, 4), 0.5)
        assert gan_losses(None, fake, "generator").item() == pytest.approx(0.25)

    def test_scale_averaging(self):
        fake = [torch.zeros(1, 1, 4, 4), torch.ones(1, 1, 2, 2)]
        # (0-1)^2 = 1 at the first scale, 0 at the second -> mean 0.5
        assert gan_losses(None, fake, "generator").item() == pytest.approx(0.5)

    def test_bad_role(self):
        with pytest.raises(ValueError):
            gan_losses(None, torch.zeros(1), "referee")


class TestReconstructionLosses:
    def test_perfect_reconstruction(self):
        x, c, s = _rand((1, 3, 4, 4)), _rand((1, 8, 2, 2)), _rand((1, 8))
        out = reconstruction_losses(x, x, c, c, s, s)
        assert all(v.item() == 0.0 for v in out)

    def test_style_off_by_one(self):
        s = torch.zeros(1, 8)
        out = reconstruction_losses(
            torch.zeros(1, 3, 2, 2), torch.zeros(1, 3, 2, 2),
            torch.zeros(1, 4, 1, 1), torch.zeros(1, 4, 1, 1),
            s, s + 1.0,
        )
        assert out[2].item() == pytest.approx(1.0)

    def test_image_off_by_quarter(self):
        x = torch.zeros(1, 3, 2, 2)
        out = reconstruction_losses(x, x + 0.25, x[:, :1], x[:, :1], torch.zeros(1, 2), torch.zeros(1, 2))
        assert out[0].item() == pytest.approx(0.25)


class TestDomainAdvLoss:
    def test_half_probability_is_ln_two(self):
        p = torch.tensor([0.5])
        assert domain_adv_loss(p, "sim").item() == pytest.approx(math.log(2.0), rel=1e-6)
        assert domain_adv_loss(p, "real").item() == pytest.approx(math.log(2.0), rel=1e-6)

    def test_confident_correct_is_small(self):
        p = torch.tensor([0.999], dtype=torch.float64)
        assert domain_adv_loss(p, "sim").item() == pytest.approx(-math.log(0.999), rel=1e-9)

    def test_probability_one_is_clipped_finite(self):
        p = torch.tensor([1.0, 0.0])
        loss = domain_adv_loss(p, torch.tensor([True, False]))
        assert math.isfinite(loss.item())

    def test_per_item_labels(self):
        p = torch.tensor([0.9, 0.1])
        loss = domain_adv_loss(p, torch.tensor([True, False]))
        expected = -(math.log(0.9) + math.log(0.9)) / 2
        assert loss.item() == pytest.approx(expected, rel=1e-6)


class TestSegSupervisedLoss:
    def test_confident_correct_near_zero(self):
        k = 10
        scores = torch.full((1, k, 2, 2), -20.0)
        labels = torch.tensor([[1, 2], [3, 4]]).unsqueeze(0)
        for v in range(2):
            for u in range(2):
                scores[0, labels[0, v, u], v, u] = 20.0
        assert seg_supervised_loss(scores, labels).item() < 1e-6

    def test_uniform_prediction_is_ln_ten(self):
        scores = torch.zeros(1, 10, 3, 3)
        labels = torch.randint(0, 10, (1, 3, 3), generator=torch.Generator().manual_seed(1))
        assert seg_supervised_loss(scores, labels).item() == pytest.approx(math.log(10.0), rel=1e-6)

    def test_label_out_of_range(self):
        scores = torch.zeros(1, 10, 2, 2)
        labels = torch.full((1, 2, 2), 10, dtype=torch.long)
        with pytest.raises(LabelOutOfRange):
            seg_supervised_loss(scores, labels)


class TestHeightL2Loss:
    def test_perfect_prediction(self):
        pred = _rand((1, 4, 4))
        assert height_l2_loss(pred, pred.clone(), torch.zeros(4, 4)).item() == 0.0

    def test_single_kept_pixel(self):
        pred = torch.zeros(1, 2, 2)
        gt = torch.zeros(1, 2, 2)
        pred[0, 1, 1] = 2.0
        sky = torch.ones(2, 2)
        sky[1, 1] = 0.0
        assert height_l2_loss(pred, gt, sky).item() == pytest.approx(4.0)

    def test_all_sky_returns_zero(self):
        pred = _rand((1, 3, 3), seed=2)
        gt = torch.zeros(1, 3, 3)
        assert height_l2_loss(pred, gt, torch.ones(3, 3)).item() == 0.0

    def test_accepts_numpy_and_wrappers(self):
        from floodgen.geometry import HeightMap
        from floodgen.sim_dataset import FloodMask

        pred = torch.full((2, 2), 3.0)
        gt = HeightMap(np.full((2, 2), 1.0))
        sky = FloodMask(np.zeros((2, 2), dtype=np.uint8))
        assert height_l2_loss(pred, gt, sky).item() == pytest.approx(4.0)


class TestTotalLoss:
    def test_all_zero(self):
        assert total_loss(LossReport(), {name: 1.0 for name in LossReport().parts()}) == 0.0

    def test_single_weighted_part(self):
        report = LossReport(cycle_masked=1.0)
        assert total_loss(report, {"cycle_masked": 10.0}) == pytest.approx(10.0)

    def test_nan_part_rejected(self):
        report = LossReport(gan_A=float("nan"))
        with pytest.raises(NonFiniteLoss, match="gan_A"):
            total_loss(report, {"gan_A": 1.0})

    def test_json_line_round_trips(self):
        import json

        line = LossReport(seg_sup=2.0).to_json_line(7)
        record = json.loads(line)
        assert record["step"] == 7
        assert record["seg_sup"] == 2.0
