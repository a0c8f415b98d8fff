"""Classification, distillation, and joint-loss objectives.

The distillation objective blends cross-entropy on ground truth with a
KL divergence between temperature-softened student and teacher
distributions:

    total = (1 - alpha) * CE(softmax(z_s), y)
          + alpha * KL(softmax(z_s / tau) || softmax(z_t / tau))

taken verbatim, with no tau^2 gradient rescaling (a documented divergence
from distillation folklore). tau = 0 selects hard distillation: the KL term
becomes cross-entropy against the teacher's argmax labels. Teacher logits
never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class DistillConfig:
    """Blend ratio and softening temperature; tau = 0 means hard distillation."""

    alpha: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.tau < 0.0:
            raise ConfigError(f"tau must be >= 0, got {self.tau}")


@dataclass
class LossBreakdown:
    """A scalar training loss plus its reportable components.

    `total` stays a graph tensor for backward; `ce_component` and
    `kl_component` are the unweighted term values, so
    total == (1 - alpha) * ce + alpha * kl whenever distillation is active.
    Composite losses nest per-task breakdowns under `parts`.
    """

    total: Tensor
    ce_component: float = 0.0
    kl_component: float = 0.0
    parts: dict = field(default_factory=dict)

    @property
    def value(self) -> float:
        return self.total.item()


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ShapeError(
            f"cross_entropy expects (B, K) logits with (B,) targets, got "
            f"{logits.shape} and {targets.shape}"
        )
    k = logits.shape[1]
    if targets.min() < 0 or targets.max() >= k:
        raise IndexError(f"target id outside [0, {k})")
    ls = T.log_softmax(logits, axis=-1)
    picked = ls[np.arange(targets.shape[0]), targets]
    return -picked.mean()


def distill_loss(z_s: Tensor, z_t: Tensor, targets, cfg: DistillConfig) -> LossBreakdown:
    """The distillation objective; see module docstring for the exact form."""
    if z_s.shape != z_t.shape:
        raise ShapeError(f"student and teacher logits disagree: {z_s.shape} vs {z_t.shape}")
    z_t = z_t.detach()
    ce = None
    kl = None
    if cfg.alpha < 1.0:
        ce = cross_entropy(z_s, targets)
    if cfg.alpha > 0.0:
        if cfg.tau == 0.0:
            kl = cross_entropy(z_s, z_t.data.argmax(axis=-1))
        else:
            inv = 1.0 / cfg.tau
            zs = z_s * inv
            ls_s = T.log_softmax(zs, axis=-1)
            ls_t = T.log_softmax(z_t * inv, axis=-1)
            p_s = T.softmax(zs, axis=-1)
            kl = (p_s * (ls_s - ls_t)).sum(axis=-1).mean()
    if ce is None:
        total = kl * cfg.alpha if cfg.alpha != 1.0 else kl
    elif kl is None:
        total = ce * (1.0 - cfg.alpha) if cfg.alpha != 0.0 else ce
    else:
        total = ce * (1.0 - cfg.alpha) + kl * cfg.alpha
    return LossBreakdown(
        total=total,
        ce_component=ce.item() if ce is not None else 0.0,
        kl_component=kl.item() if kl is not None else 0.0,
    )


def joint_loss(l_img: Tensor, l_txt: Tensor, lam: float) -> Tensor:
    """Weighted sum lam * l_img + (1 - lam) * l_txt."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    return l_img * lam + l_txt * (1.0 - lam)
