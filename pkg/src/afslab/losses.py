"""Loss kernels with exact logit gradients.

Every loss returns its scalar value together with the closed-form gradient
with respect to the logits, so training never depends on autodiff and the
arithmetic can be pinned against finite differences in tests. All functions
operate on a single sample; batch reductions are plain means taken by the
caller.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError, InvalidInputError

# Probabilities are clamped here before any log.
P_FLOOR = 1e-12

# Difficulty intervals over the predicted target probability p_t.
HSI = "HSI"  # hard:      [0.0, 0.3)
ASI = "ASI"  # ambiguous: [0.3, 0.6]
ESI = "ESI"  # easy:      (0.6, 1.0]

DIFFICULTY_INTERVALS = (HSI, ASI, ESI)


@dataclass(frozen=True)
class LossConfig:
    """Hyper-parameters shared by the loss kernels.

    alpha, gamma scale and shape the focal weighting; mu, sigma place the
    Gaussian bump of the revised focal weight; beta weighs the distillation
    term inside the combined objective; temperature and epsilon shape the
    virtual teacher.
    """

    alpha: float = 0.25
    gamma: float = 2.0
    mu: float = 0.3
    sigma: float = 0.5
    beta: float = 0.1
    temperature: float = 20.0
    epsilon: float = 0.01
    num_classes: int = 10

    def __post_init__(self) -> None:
        if self.sigma <= 0:
            raise InvalidConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 < self.epsilon < 1.0:
            raise InvalidConfigError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.num_classes < 2:
            raise InvalidConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.alpha <= 0:
            raise InvalidConfigError(f"alpha must be positive, got {self.alpha}")
        if self.gamma < 0:
            raise InvalidConfigError(f"gamma must be non-negative, got {self.gamma}")
        if not 0.0 <= self.mu <= 1.0:
            raise InvalidConfigError(f"mu must lie in [0, 1], got {self.mu}")
        if self.beta < 0:
            raise InvalidConfigError(f"beta must be non-negative, got {self.beta}")
        if self.temperature <= 0:
            raise InvalidConfigError(
                f"temperature must be positive, got {self.temperature}"
            )


@dataclass(frozen=True)
class LossOutput:
    """Value, exact logit gradient, and the target probability that drove it."""

    value: float
    grad_logits: np.ndarray
    p_target: float


def softmax_stable(logits: np.ndarray) -> np.ndarray:
    """Softmax with the max logit subtracted first; rejects non-finite input."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size == 0:
        raise InvalidInputError("logits must be a non-empty 1-d vector")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("logits must be finite")
    e = np.exp(z - z.max())
    return e / e.sum()


def classify_difficulty(p_t: float) -> str:
    """Map a target probability to its difficulty interval.

    Hard below 0.3, ambiguous in [0.3, 0.6], easy above 0.6. Both interval
    boundaries belong to the ambiguous bucket.
    """
    if not 0.0 <= p_t <= 1.0:
        raise InvalidInputError(f"p_t must lie in [0, 1], got {p_t}")
    if p_t < 0.3:
        return HSI
    if p_t <= 0.6:
        return ASI
    return ESI


def rfl_weight(p_t: float, alpha: float, mu: float, sigma: float) -> float:
    """Gaussian re-weighting term alpha * exp(-(p_t - mu)^2 / sigma).

    Peaks at p_t = mu and decays symmetrically, so ambiguous samples carry
    the largest weight while confident and hopeless ones are damped.
    """
    if sigma <= 0:
        raise InvalidConfigError(f"sigma must be positive, got {sigma}")
    return alpha * math.exp(-((p_t - mu) ** 2) / sigma)


def _check_target(logits: np.ndarray, target: int) -> None:
    if not isinstance(target, (int, np.integer)):
        raise InvalidInputError(f"target must be an integer, got {target!r}")
    if not 0 <= target < len(logits):
        raise InvalidInputError(
            f"target {target} out of range for {len(logits)} classes"
        )


def ce_loss(logits: np.ndarray, target: int) -> LossOutput:
    """Cross-entropy -log p_t with gradient p - onehot(target)."""
    p = softmax_stable(logits)
    _check_target(p, target)
    p_t = float(p[target])
    value = -math.log(max(p_t, P_FLOOR))
    grad = p.copy()
    grad[target] -= 1.0
    return LossOutput(value=value, grad_logits=grad, p_target=p_t)


def _weighted_ce_output(
    p: np.ndarray, target: int, weight: float, dweight_dp: float
) -> LossOutput:
    """Assemble value and gradient for losses of the form -w(p_t) log p_t.

    dweight_dp is dw/dp_t. The logit gradient follows from the softmax
    Jacobian: d p_t / d z_k = p_t (delta_tk - p_k).
    """
    p_t = float(p[target])
    p_safe = max(p_t, P_FLOOR)
    log_pt = math.log(p_safe)
    value = -weight * log_pt
    # dL/dp_t = -(w'(p_t) log p_t + w(p_t)/p_t); multiply by p_t once so the
    # non-target entries are a single product with -p_k.
    g_common = -(dweight_dp * log_pt * p_t + weight * p_t / p_safe)
    grad = -g_common * p
    grad[target] = g_common * (1.0 - p_t)
    return LossOutput(value=value, grad_logits=grad, p_target=p_t)


def focal_loss(
    logits: np.ndarray, target: int, alpha: float = 0.25, gamma: float = 2.0
) -> LossOutput:
    """Focal loss FL = -alpha * (1 - p_t)^gamma * log(p_t).

    The target-logit gradient works out to
    alpha * Q^gamma * (gamma * p_t * log p_t + p_t - 1) with Q = 1 - p_t.
    """
    if gamma < 0:
        raise InvalidConfigError(f"gamma must be non-negative, got {gamma}")
    p = softmax_stable(logits)
    _check_target(p, target)
    p_t = float(p[target])
    q = 1.0 - p_t
    weight = alpha * q**gamma
    if gamma == 0.0 or (q == 0.0 and gamma < 1.0):
        # w' vanishes at gamma = 0; for gamma < 1 the q^(gamma-1) blow-up at
        # q = 0 is cancelled by log(p_t) = 0, so the limit is 0 as well
        dweight = 0.0
    else:
        dweight = -alpha * gamma * q ** (gamma - 1.0)
    return _weighted_ce_output(p, target, weight, dweight)


def rfl_loss(
    logits: np.ndarray,
    target: int,
    alpha: float = 0.25,
    mu: float = 0.3,
    sigma: float = 0.5,
) -> LossOutput:
    """Revised focal loss RFL = -alpha * exp(-(p_t - mu)^2 / sigma) * log(p_t).

    Unlike the plain focal weight, the Gaussian bump concentrates gradient
    on ambiguous samples (p_t near mu) and shrinks it on both hard and easy
    ones. At p_t = mu the target-logit gradient reduces to -alpha * (1 - p_t).
    """
    p = softmax_stable(logits)
    _check_target(p, target)
    p_t = float(p[target])
    weight = rfl_weight(p_t, alpha, mu, sigma)
    dweight = weight * (-2.0 * (p_t - mu) / sigma)
    return _weighted_ce_output(p, target, weight, dweight)


def virtual_teacher(target: int, num_classes: int, epsilon: float) -> np.ndarray:
    """Smoothed one-hot teacher logits: 1-eps at the target, eps/(C-1) elsewhere."""
    if num_classes < 2:
        raise InvalidConfigError(f"need at least 2 classes, got {num_classes}")
    if not 0.0 < epsilon < 1.0:
        raise InvalidConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 0 <= target < num_classes:
        raise InvalidInputError(
            f"target {target} out of range for {num_classes} classes"
        )
    v = np.full(num_classes, epsilon / (num_classes - 1), dtype=np.float64)
    v[target] = 1.0 - epsilon
    return v


def vkd_loss(
    logits: np.ndarray,
    target: int,
    temperature: float = 20.0,
    epsilon: float = 0.01,
) -> LossOutput:
    """Distillation against a virtual teacher built from the label alone.

    Teacher and student distributions are temperature-softened softmaxes,
    q = softmax(v / T) and p = softmax(z / T); the value is the scaled
    cross-entropy -T^2 * sum_i q_i log p_i and the exact logit gradient is
    T * (p - q). Minimized over the logits exactly when p equals q.
    """
    if temperature <= 0:
        raise InvalidConfigError(f"temperature must be positive, got {temperature}")
    z = np.asarray(logits, dtype=np.float64)
    v = virtual_teacher(target, z.size, epsilon)
    q = softmax_stable(v / temperature)
    p_soft = softmax_stable(z / temperature)
    value = -temperature**2 * float(
        np.sum(q * np.log(np.maximum(p_soft, P_FLOOR)))
    )
    grad = temperature * (p_soft - q)
    p_t = float(softmax_stable(z)[target])
    return LossOutput(value=value, grad_logits=grad, p_target=p_t)


def lsr_loss(logits: np.ndarray, target: int, epsilon: float = 0.01) -> LossOutput:
    """Label-smoothing regularization: the temperature-1 case of vkd_loss."""
    return vkd_loss(logits, target, temperature=1.0, epsilon=epsilon)


def afs_loss(logits: np.ndarray, target: int, config: LossConfig) -> LossOutput:
    """Combined objective: rfl_loss + beta * vkd_loss, gradients added likewise."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size != config.num_classes:
        raise InvalidInputError(
            f"expected {config.num_classes} logits, got shape {z.shape}"
        )
    cls = rfl_loss(z, target, alpha=config.alpha, mu=config.mu, sigma=config.sigma)
    kd = vkd_loss(z, target, temperature=config.temperature, epsilon=config.epsilon)
    return LossOutput(
        value=cls.value + config.beta * kd.value,
        grad_logits=cls.grad_logits + config.beta * kd.grad_logits,
        p_target=cls.p_target,
    )
