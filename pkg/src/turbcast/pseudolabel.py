"""Dual label guessing for unlabeled cells.

Two networks each emit per-cell class distributions: the sequence forecaster
and the single-cube detector. For every cell we draw r ~ U(0,1) twice; each
draw picks the detector's distribution when r exceeds a threshold tau and
the forecaster's otherwise, and the two picks are averaged. tau ramps
linearly from 0 to an upper bound over a warmup window measured in epochs,
so early on the (pretrained) detector dominates the guesses and the
forecaster gains weight as it learns. The averaged distribution is
temperature-sharpened into a soft pseudo-label, and each cell gets an
agreement weight exp(-KL(detector || forecaster)).

All tensors here are channels-last: [..., num_classes].
"""

from __future__ import annotations

import torch

from .errors import ConfigurationError, DegenerateInputError, ValidationError

PROB_FLOOR = 1.0e-8


def mix_threshold(epoch: float, ramp_start: float, ramp_end: float, upper_bound: float) -> float:
    """Piecewise-linear schedule: 0 before ramp_start, then a linear climb to
    upper_bound at ramp_end, constant afterwards."""
    if ramp_end <= ramp_start:
        raise ConfigurationError(f"ramp_end ({ramp_end}) must exceed ramp_start ({ramp_start})")
    if not 0.0 <= upper_bound <= 1.0:
        raise ConfigurationError(f"upper_bound must lie in [0,1], got {upper_bound}")
    if epoch < ramp_start:
        return 0.0
    if epoch > ramp_end:
        return upper_bound
    return (epoch - ramp_start) / (ramp_end - ramp_start) * upper_bound


def _check_probs(name: str, probs: torch.Tensor) -> None:
    if probs.ndim < 1 or probs.shape[-1] < 2:
        raise ValidationError(f"{name} must have a class axis last, got shape {tuple(probs.shape)}")
    if not torch.isfinite(probs).all():
        raise ValidationError(f"{name} contains non-finite entries")
    if (probs < 0).any():
        raise ValidationError(f"{name} contains negative probabilities")


def binary_sample(
    p_forecast: torch.Tensor,
    p_detect: torch.Tensor,
    tau: float,
    generator: torch.Generator | None = None,
    draws: torch.Tensor | None = None,
) -> torch.Tensor:
    """One per-cell hard choice between the two distributions.

    Cells whose uniform draw exceeds ``tau`` take ``p_detect``, the rest take
    ``p_forecast``. ``draws`` (shape = batch shape, i.e. probs without the
    class axis) overrides the RNG for deterministic tests.
    """
    if p_forecast.shape != p_detect.shape:
        raise ValidationError(
            f"distribution shapes disagree: {tuple(p_forecast.shape)} vs {tuple(p_detect.shape)}"
        )
    _check_probs("p_forecast", p_forecast)
    _check_probs("p_detect", p_detect)
    batch_shape = p_forecast.shape[:-1]
    if draws is None:
        draws = torch.rand(batch_shape, generator=generator, dtype=p_forecast.dtype,
                           device=p_forecast.device)
    elif tuple(draws.shape) != tuple(batch_shape):
        raise ValidationError(f"draws shape {tuple(draws.shape)} != batch shape {tuple(batch_shape)}")
    take_detect = (draws > tau).unsqueeze(-1)
    return torch.where(take_detect, p_detect, p_forecast)


def sharpen(probs: torch.Tensor, temperature: float) -> torch.Tensor:
    """Raise each class probability to 1/T and renormalize along the last axis.

    T < 1 pushes mass toward the argmax; T = 1 is the identity. Rows that sum
    to zero cannot be normalized and raise DegenerateInputError.
    """
    if temperature <= 0.0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    _check_probs("probs", probs)
    powered = probs.clamp_min(0.0) ** (1.0 / temperature)
    total = powered.sum(dim=-1, keepdim=True)
    if (total == 0).any():
        raise DegenerateInputError("cannot sharpen an all-zero distribution")
    return powered / total


def label_quality(p_detect: torch.Tensor, p_forecast: torch.Tensor) -> torch.Tensor:
    """Agreement weight exp(-KL(p_detect || p_forecast)) per cell, in (0, 1].

    xlogy handles zero entries in p_detect (0 log 0 = 0); the forecaster's
    probabilities are floored at 1e-8 inside the log so a confident
    disagreement yields a small weight instead of NaN.
    """
    if p_detect.shape != p_forecast.shape:
        raise ValidationError(
            f"distribution shapes disagree: {tuple(p_detect.shape)} vs {tuple(p_forecast.shape)}"
        )
    _check_probs("p_detect", p_detect)
    _check_probs("p_forecast", p_forecast)
    kl = (
        torch.special.xlogy(p_detect, p_detect)
        - torch.special.xlogy(p_detect, p_forecast.clamp_min(PROB_FLOOR))
    ).sum(dim=-1)
    return torch.exp(-kl.clamp_min(0.0))


def dual_ensemble(
    p_forecast: torch.Tensor,
    p_detect: torch.Tensor,
    tau: float,
    temperature: float,
    generator: torch.Generator | None = None,
    draws: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Full guessing step: two independent binary samples averaged, then
    sharpened; plus the agreement weight.

    Per cell the result is p_detect with probability (1-tau)^2, p_forecast
    with probability tau^2, and their mean otherwise. ``draws`` stacks the
    two draw fields as [2, *batch_shape] for deterministic tests. Returns
    ``(pseudo_label, quality)`` where pseudo_label keeps the input shape and
    quality drops the class axis. Both are detached from autograd: guessed
    labels act as fixed targets, not gradient paths.
    """
    if draws is None:
        first = second = None
    else:
        if draws.shape[0] != 2:
            raise ValidationError(f"draws must stack two fields, got shape {tuple(draws.shape)}")
        first, second = draws[0], draws[1]
    pick_a = binary_sample(p_forecast, p_detect, tau, generator=generator, draws=first)
    pick_b = binary_sample(p_forecast, p_detect, tau, generator=generator, draws=second)
    guess = sharpen(0.5 * (pick_a + pick_b), temperature)
    quality = label_quality(p_detect, p_forecast)
    return guess.detach(), quality.detach()
