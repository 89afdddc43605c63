"""Loss function tests with hand-derived reference values."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from turbcast.errors import DegenerateInputError, ValidationError
from turbcast.losses import (
    class_weights,
    combined_loss,
    focal_loss,
    masked_step_mean,
    supervised_loss,
    unsupervised_loss,
    weighted_l2,
)
from turbcast.pseudolabel import dual_ensemble


class TestClassWeights:
    def test_reference_counts(self):
        alpha = class_weights([70, 20, 7, 3])
        expected = np.array([0.026432, 0.092511, 0.264317, 0.616740])
        assert np.allclose(alpha, expected, atol=1e-4)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12)

    def test_rarest_class_weighs_most(self):
        alpha = class_weights([70, 20, 7, 3])
        assert np.all(np.diff(alpha) > 0)

    def test_uniform_counts_give_uniform_weights(self):
        assert np.allclose(class_weights([5, 5, 5, 5]), 0.25)

    def test_zero_count_needs_smoothing(self):
        with pytest.raises(DegenerateInputError):
            class_weights([10, 5, 0, 1])
        alpha = class_weights([10, 5, 0, 1], smooth=True)
        assert np.isfinite(alpha).all() and alpha.sum() == pytest.approx(1.0)
        assert alpha.argmax() == 2

    def test_rejects_bad_input(self):
        with pytest.raises(ValidationError):
            class_weights([1, 2, 3])
        with pytest.raises(ValidationError):
            class_weights([1, -2, 3, 4])


class TestFocalLoss:
    def test_gamma_zero_is_cross_entropy(self):
        gen = torch.Generator().manual_seed(5)
        probs = torch.softmax(torch.randn(50, 4, generator=gen, dtype=torch.float64), dim=-1)
        labels = torch.randint(0, 4, (50,), generator=gen)
        onehot = torch.nn.functional.one_hot(labels, 4).to(probs.dtype)
        ours = focal_loss(probs, onehot, gamma=0.0)
        reference = torch.nn.functional.nll_loss(torch.log(probs), labels, reduction="none")
        assert torch.allclose(ours, reference, atol=1e-9)

    def test_reference_value_gamma_two(self):
        probs = torch.tensor([[0.9, 0.05, 0.03, 0.02]], dtype=torch.float64)
        onehot = torch.tensor([[1.0, 0.0, 0.0, 0.0]], dtype=torch.float64)
        val = float(focal_loss(probs, onehot, gamma=2.0))
        assert val == pytest.approx(1.0536e-3, abs=1e-7)
        assert val == pytest.approx(0.01 * -math.log(0.9), rel=1e-12)

    def test_unlabeled_row_contributes_zero(self):
        probs = torch.full((2, 4), 0.25)
        onehot = torch.zeros(2, 4)
        assert torch.equal(focal_loss(probs, onehot, 2.0), torch.zeros(2))

    def test_rejects_negative_gamma(self):
        with pytest.raises(ValidationError):
            focal_loss(torch.full((4,), 0.25), torch.tensor([1.0, 0, 0, 0]), gamma=-1.0)

    @given(p_true=st.floats(0.01, 0.98), gamma=st.floats(0.1, 5.0))
    @settings(max_examples=50, deadline=None)
    def test_positive_and_below_cross_entropy(self, p_true, gamma):
        rest = (1.0 - p_true) / 3.0
        probs = torch.tensor([p_true, rest, rest, rest], dtype=torch.float64)
        onehot = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        focal = float(focal_loss(probs, onehot, gamma))
        ce = float(focal_loss(probs, onehot, 0.0))
        assert 0.0 < focal <= ce + 1e-12

    def test_decreasing_in_confidence(self):
        onehot = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        values = []
        for p in (0.3, 0.5, 0.7, 0.9, 0.99):
            rest = (1 - p) / 3
            values.append(float(focal_loss(torch.tensor([p, rest, rest, rest], dtype=torch.float64), onehot, 2.0)))
        assert all(a > b for a, b in zip(values, values[1:]))


class TestWeightedL2:
    def test_uniform_alpha_disagreement(self):
        probs = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        target = torch.tensor([0.0, 1.0, 0.0, 0.0], dtype=torch.float64)
        alpha = torch.full((4,), 0.25, dtype=torch.float64)
        # full-precision reference sqrt(0.5) = 0.70710678... (0.7071 rounded)
        assert float(weighted_l2(probs, target, alpha)) == pytest.approx(math.sqrt(0.5), abs=1e-6)
        assert float(weighted_l2(probs, target, alpha)) == pytest.approx(math.sqrt(0.5), rel=1e-12)

    def test_zero_on_agreement(self):
        p = torch.tensor([[0.4, 0.3, 0.2, 0.1]])
        assert float(weighted_l2(p, p.clone(), torch.full((4,), 0.25))) == 0.0

    def test_alpha_scales_per_class(self):
        probs = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)
        target = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64)
        alpha = torch.tensor([0.0, 0.0, 0.0, 1.0], dtype=torch.float64)
        # only the class-3 disagreement counts
        assert float(weighted_l2(probs, target, alpha)) == pytest.approx(1.0, rel=1e-12)

    def test_shape_checks(self):
        with pytest.raises(ValidationError):
            weighted_l2(torch.zeros(2, 4), torch.zeros(3, 4), torch.full((4,), 0.25))
        with pytest.raises(ValidationError):
            weighted_l2(torch.zeros(2, 4), torch.zeros(2, 4), torch.full((3,), 0.25))


class TestMaskedStepMean:
    def test_hand_case(self):
        per_cell = torch.tensor([[[1.0, 3.0]], [[5.0, 7.0]]])  # [B=2, T=1, cells=2]
        mask = torch.tensor([[[True, True]], [[True, False]]])
        # step means: (1+3)/2 = 2 and 5/1 = 5 -> overall 3.5
        assert float(masked_step_mean(per_cell, mask)) == pytest.approx(3.5, rel=1e-12)

    def test_empty_step_contributes_zero(self):
        per_cell = torch.tensor([[[1.0, 3.0]], [[5.0, 7.0]]])
        mask = torch.tensor([[[True, True]], [[False, False]]])
        assert float(masked_step_mean(per_cell, mask)) == pytest.approx(1.0, rel=1e-12)

    def test_insensitive_to_labeled_cell_count(self):
        # one step fully labeled vs one with a single label: each step has equal say
        per_cell = torch.tensor([[[2.0, 2.0, 2.0], [9.0, 0.0, 0.0]]])
        mask = torch.tensor([[[True, True, True], [True, False, False]]])
        assert float(masked_step_mean(per_cell, mask)) == pytest.approx((2.0 + 9.0) / 2, rel=1e-12)

    def test_requires_batch_and_step_axes(self):
        with pytest.raises(ValidationError):
            masked_step_mean(torch.zeros(3, 4), torch.ones(3, 4, dtype=torch.bool))


def random_batch(seed=0, batch=2, steps=2, grid=(3, 3, 2)):
    gen = torch.Generator().manual_seed(seed)
    probs = torch.softmax(torch.randn(batch, steps, *grid, 4, generator=gen, dtype=torch.float64), dim=-1)
    labels = torch.randint(-1, 4, (batch, steps, *grid), generator=gen)
    return probs, labels


class TestSupervisedLoss:
    def test_single_labeled_cell_reference(self):
        probs = torch.full((1, 1, 1, 1, 1, 4), 0.0, dtype=torch.float64)
        probs[..., 0] = 0.9
        probs[..., 1:] = 0.1 / 3
        labels = torch.zeros(1, 1, 1, 1, 1, dtype=torch.int64)
        assert float(supervised_loss(probs, labels, gamma=2.0)) == pytest.approx(1.0536e-3, abs=1e-7)

    def test_all_unlabeled_gives_zero(self):
        probs, _ = random_batch(1)
        labels = torch.full(probs.shape[:-1], -1, dtype=torch.int64)
        assert float(supervised_loss(probs, labels)) == 0.0

    def test_unlabeled_cells_cannot_move_the_loss(self):
        probs, labels = random_batch(2)
        base = supervised_loss(probs, labels)
        perturbed = probs.clone()
        unlabeled = labels < 0
        assert unlabeled.any()
        noise = torch.rand_like(perturbed)
        perturbed[unlabeled] = torch.softmax(noise[unlabeled], dim=-1)
        assert float(supervised_loss(perturbed, labels)) == float(base)

    def test_labeled_cells_do_move_the_loss(self):
        probs, labels = random_batch(3)
        labeled = labels >= 0
        assert labeled.any()
        perturbed = probs.clone()
        perturbed[labeled] = torch.softmax(torch.rand_like(perturbed)[labeled] * 3, dim=-1)
        assert float(supervised_loss(perturbed, labels)) != float(supervised_loss(probs, labels))


class TestUnsupervisedLoss:
    def test_single_cell_product_reference(self):
        # quality 0.6403 from the agreement example, distance 0.7071 from the
        # uniform-alpha example: the loss is their product
        probs = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64).reshape(1, 1, 1, 1, 1, 4)
        pseudo = torch.tensor([0.0, 1.0, 0.0, 0.0], dtype=torch.float64).reshape(1, 1, 1, 1, 1, 4)
        quality = torch.full((1, 1, 1, 1, 1), 0.6403, dtype=torch.float64)
        alpha = torch.full((4,), 0.25, dtype=torch.float64)
        mask = torch.ones(1, 1, 1, 1, 1, dtype=torch.bool)
        val = float(unsupervised_loss(probs, pseudo, quality, alpha, mask))
        assert val == pytest.approx(0.4529, abs=1e-3)
        assert val == pytest.approx(0.6403 * math.sqrt(0.5), rel=1e-10)

    def test_zero_when_no_unlabeled_cells(self):
        probs, _ = random_batch(4)
        pseudo = torch.softmax(torch.randn_like(probs), dim=-1)
        quality = torch.rand(probs.shape[:-1], dtype=torch.float64)
        alpha = torch.full((4,), 0.25, dtype=torch.float64)
        mask = torch.zeros(probs.shape[:-1], dtype=torch.bool)
        assert float(unsupervised_loss(probs, pseudo, quality, alpha, mask)) == 0.0

    def test_pseudo_targets_are_gradient_free(self):
        gen = torch.Generator().manual_seed(11)
        logits = torch.randn(2, 2, 2, 2, 2, 4, generator=gen, dtype=torch.float64, requires_grad=True)
        probs = torch.softmax(logits, dim=-1)
        detect = torch.softmax(torch.randn_like(probs), dim=-1)
        pseudo, quality = dual_ensemble(probs.detach(), detect, tau=0.3, temperature=0.5,
                                        generator=torch.Generator().manual_seed(1))
        mask = torch.ones(probs.shape[:-1], dtype=torch.bool)
        alpha = torch.full((4,), 0.25, dtype=torch.float64)
        loss = unsupervised_loss(probs, pseudo, quality, alpha, mask)
        loss.backward()
        # the only gradient path is the live prediction argument
        assert logits.grad is not None and torch.isfinite(logits.grad).all()
        assert not pseudo.requires_grad and not quality.requires_grad

    def test_labeled_cell_perturbation_leaves_targets_alone(self):
        gen = torch.Generator().manual_seed(13)
        shape = (2, 2, 3, 3, 2)
        forecast = torch.softmax(torch.randn(*shape, 4, generator=gen, dtype=torch.float64), dim=-1)
        detect = torch.softmax(torch.randn(*shape, 4, generator=gen, dtype=torch.float64), dim=-1)
        labels = torch.randint(-1, 4, shape, generator=gen)
        labeled = labels >= 0
        assert labeled.any() and (~labeled).any()
        draws = torch.rand(2, *shape, generator=gen)
        pseudo, _ = dual_ensemble(forecast, detect, 0.3, 0.5, draws=draws)
        bumped_f = forecast.clone()
        bumped_f[labeled] = torch.roll(bumped_f[labeled], 1, dims=-1)
        bumped_d = detect.clone()
        bumped_d[labeled] = torch.roll(bumped_d[labeled], 1, dims=-1)
        pseudo_after, _ = dual_ensemble(bumped_f, bumped_d, 0.3, 0.5, draws=draws)
        assert torch.equal(pseudo[~labeled], pseudo_after[~labeled])


class TestCombinedLoss:
    def test_weighting(self):
        total = combined_loss(torch.tensor(2.0, dtype=torch.float64),
                              torch.tensor(3.0, dtype=torch.float64), 0.4)
        assert float(total) == pytest.approx(3.2, rel=1e-12)

    def test_weight_range(self):
        with pytest.raises(ValidationError):
            combined_loss(torch.tensor(1.0), torch.tensor(1.0), 1.5)
