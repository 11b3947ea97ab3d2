"""Training objectives for weakly-labeled bags of frames.

Every loss maps a score matrix (T frames x C classes, entries in [0, 1])
and a C-length binary tag vector to a scalar, and also returns its exact
gradient with respect to the score matrix so that any differentiable
frame-scoring model can be trained against it.

Variants:
  * ``fsl``         - every frame of a tagged bag is treated as positive.
  * ``mil_max``     - bag-level cross-entropy on the per-class column max.
  * ``mil_mmm``     - max/mean/min composition per positive class.
  * ``mil_max_cos`` - ``mil_max`` plus a penalty on positive cosine
                      similarity between the score curves of co-positive
                      classes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

# Clamp applied to probabilities before taking logs.
LOG_EPS = 1e-7
# Columns with a smaller norm are treated as zero vectors by the cosine.
NORM_EPS = 1e-8

VARIANTS = ("fsl", "mil_max", "mil_mmm", "mil_max_cos")


@dataclass(frozen=True)
class LossConfig:
    """Selects a loss variant and its constants.

    ``alpha`` only affects ``mil_max_cos``; with ``alpha == 0`` that
    variant reduces to ``mil_max`` exactly.
    """

    variant: str = "mil_max"
    alpha: float = 0.0
    epsilon: float = LOG_EPS

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(
                f"loss.variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        if not self.alpha >= 0.0:
            raise ConfigError(f"loss.alpha must be >= 0, got {self.alpha!r}")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError(
                f"loss.epsilon must be in (0, 0.5), got {self.epsilon!r}"
            )


def bin_ce(y, p, eps: float = LOG_EPS):
    """Binary cross-entropy with clamped probabilities.

    Works elementwise on arrays and accepts fractional targets (used by
    the MMM mean term).

    Returns:
        (value, grad): the loss and its derivative with respect to ``p``.
        The derivative of the clamp is included, so the gradient is zero
        wherever ``p`` lies outside ``[eps, 1 - eps]``.
    """
    y = np.asarray(y, dtype=float)
    p = np.asarray(p, dtype=float)
    p_c = np.clip(p, eps, 1.0 - eps)
    value = -(y * np.log(p_c) + (1.0 - y) * np.log1p(-p_c))
    inside = (p >= eps) & (p <= 1.0 - eps)
    grad = np.where(inside, (p_c - y) / (p_c * (1.0 - p_c)), 0.0)
    if value.ndim == 0:
        return float(value), float(grad)
    return value, grad


def fsl_loss(scores, y, eps: float = LOG_EPS):
    """False-strong-labeling loss: every frame inherits the bag tags.

    Mean over frames and classes of the per-entry cross-entropy.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_shapes(scores, y)
    values, grads = bin_ce(y[None, :], scores, eps)
    return float(values.mean()), grads / scores.size


def mil_max_loss(scores, y, eps: float = LOG_EPS):
    """Max-pooled MIL loss: cross-entropy on each class's best frame.

    Sum over classes of bin_ce(y_c, max_t scores[t, c]). The gradient is
    routed to the argmax frame of each class only; ties break toward the
    earliest frame.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_shapes(scores, y)
    cols = np.arange(scores.shape[1])
    t_star = scores.argmax(axis=0)
    values, g = bin_ce(y, scores[t_star, cols], eps)
    grad = np.zeros_like(scores)
    grad[t_star, cols] = g
    return float(values.sum()), grad


def mmm_loss(scores, y, eps: float = LOG_EPS):
    """Max/mean/min MIL loss.

    Per positive class: bin_ce(1, column max) + bin_ce(0, column min)
    + bin_ce(0.5, column mean), so the best frame is pulled to one, the
    worst to zero and the average toward one half. Per negative class:
    bin_ce(0, column max). Sum over classes. This composition is fixed
    and regression-locked; see the tests.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_shapes(scores, y)
    n_frames, n_classes = scores.shape
    cols = np.arange(n_classes)
    t_max = scores.argmax(axis=0)
    t_min = scores.argmin(axis=0)
    col_max = scores[t_max, cols]
    col_min = scores[t_min, cols]
    col_mean = scores.mean(axis=0)

    total = 0.0
    grad = np.zeros_like(scores)
    for c in range(n_classes):
        v_max, g_max = bin_ce(y[c], col_max[c], eps)
        total += v_max
        grad[t_max[c], c] += g_max
        if y[c] > 0:
            v_min, g_min = bin_ce(0.0, col_min[c], eps)
            v_mean, g_mean = bin_ce(0.5, col_mean[c], eps)
            total += v_min + v_mean
            grad[t_min[c], c] += g_min
            grad[:, c] += g_mean / n_frames
    return float(total), grad


def cosine_sim(a, b, norm_eps: float = NORM_EPS) -> float:
    """Cosine similarity of two curves along the time axis.

    Defined as 0 when either curve has norm below ``norm_eps``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= norm_eps or nb <= norm_eps:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def cos_penalty(scores, y, alpha: float, norm_eps: float = NORM_EPS):
    """Penalty on positive cosine similarity between co-positive classes.

    alpha * sum_c y_c sum_{l != c} y_l * max(0, cos(col_l, col_c)).
    The double sum runs over ordered pairs, so each unordered pair is
    counted twice. Zero whenever fewer than two classes are positive.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_shapes(scores, y)
    grad = np.zeros_like(scores)
    positive = np.flatnonzero(y > 0)
    if alpha == 0.0 or positive.size < 2:
        return 0.0, grad

    norms = np.linalg.norm(scores[:, positive], axis=0)
    total = 0.0
    for i, c in enumerate(positive):
        for j, l in enumerate(positive):
            if l == c:
                continue
            if norms[i] <= norm_eps or norms[j] <= norm_eps:
                continue
            col_c = scores[:, c]
            col_l = scores[:, l]
            denom = norms[i] * norms[j]
            sim = float(np.dot(col_l, col_c) / denom)
            if sim <= 0.0:
                continue
            total += alpha * sim
            grad[:, c] += alpha * (col_l / denom - sim * col_c / norms[i] ** 2)
            grad[:, l] += alpha * (col_c / denom - sim * col_l / norms[j] ** 2)
    return float(total), grad


def mil_max_cos_loss(scores, y, config: LossConfig):
    """Penalized MIL loss: mil_max plus the cosine penalty.

    With ``config.alpha == 0`` the penalty branch is skipped entirely, so
    the result is bit-identical to :func:`mil_max_loss`.
    """
    value, grad = mil_max_loss(scores, y, config.epsilon)
    if config.alpha != 0.0:
        pen_value, pen_grad = cos_penalty(scores, y, config.alpha)
        value += pen_value
        grad = grad + pen_grad
    return value, grad


def evaluate_loss(config: LossConfig, scores, y):
    """Dispatch on ``config.variant``; returns ``(value, grad)``."""
    if config.variant == "fsl":
        return fsl_loss(scores, y, config.epsilon)
    if config.variant == "mil_max":
        return mil_max_loss(scores, y, config.epsilon)
    if config.variant == "mil_mmm":
        return mmm_loss(scores, y, config.epsilon)
    if config.variant == "mil_max_cos":
        return mil_max_cos_loss(scores, y, config)
    raise ConfigError(f"unknown loss variant {config.variant!r}")


def fd_gradient_check(loss_spec, scores, y=None, step: float = 1e-6) -> float:
    """Max relative error between a loss's gradient and finite differences.

    Operates in score space: each score entry is perturbed by ``step``.
    ``loss_spec`` is a :class:`LossConfig` or a callable
    ``scores -> (value, grad)``. Quadratic losses check out to roundoff
    here because central differences are exact for polynomials of degree
    two.
    """
    scores = np.asarray(scores, dtype=float)
    if callable(loss_spec):
        evaluate = lambda s: loss_spec(s)  # noqa: E731
    else:
        evaluate = lambda s: evaluate_loss(loss_spec, s, y)  # noqa: E731
    _, grad = evaluate(scores)
    worst = 0.0
    for idx in np.ndindex(*scores.shape):
        up = scores.copy()
        down = scores.copy()
        up[idx] += step
        down[idx] -= step
        fd = (evaluate(up)[0] - evaluate(down)[0]) / (2.0 * step)
        rel = abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst


def _check_shapes(scores, y):
    if scores.ndim != 2:
        raise ConfigError(f"scores must be 2-d (T, C), got shape {scores.shape}")
    if y.ndim != 1 or y.shape[0] != scores.shape[1]:
        raise ConfigError(
            f"label vector length {y.shape} does not match scores {scores.shape}"
        )
