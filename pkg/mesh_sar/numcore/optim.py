import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from mesh_sar.exceptions import ValidationError
from mesh_sar.numcore.tensor import Tensor

logger = logging.getLogger(__name__)


class ParamGroup:
    """Named parameters with their Adam moments."""

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.second_moment = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name in self.params:
            arrays[f"adam.m/{name}"] = self.first_moment[name]
            arrays[f"adam.v/{name}"] = self.second_moment[name]
        return arrays

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name in self.params:
            self.first_moment[name] = arrays[f"adam.m/{name}"].copy()
            self.second_moment[name] = arrays[f"adam.v/{name}"].copy()
        self.step_count = int(step_count)


def adam_step(group: ParamGroup, lr: float) -> None:
    """One bias-corrected Adam update of every parameter in ``group``.

    Raises:
        ValidationError: a parameter has no gradient.
    """
    missing = [name for name, p in group.params.items() if p.grad is None]
    if missing:
        raise ValidationError(f"Missing gradients for {missing[:5]}; call backward() first.")

    group.step_count += 1
    t = group.step_count
    correction1 = 1.0 - group.beta1**t
    correction2 = 1.0 - group.beta2**t
    for name, p in group.params.items():
        m, v = group.first_moment[name], group.second_moment[name]
        m *= group.beta1
        m += (1.0 - group.beta1) * p.grad
        v *= group.beta2
        v += (1.0 - group.beta2) * p.grad**2
        p.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + group.eps)


@dataclass(frozen=True)
class PlateauSchedule:
    """Divide the learning rate by ``reduction_factor`` when the loss stops improving.

    An epoch improves when its loss is below ``best - tolerance * |best|``.
    After ``patience_epochs`` consecutive non-improving epochs the rate drops
    and the counter restarts; training stops once the rate is below ``floor_lr``.
    """

    initial_lr: float
    patience_epochs: int
    reduction_factor: float = 10.0
    floor_lr: float = 1e-6
    tolerance: float = 1e-4

    def __post_init__(self):
        if not self.initial_lr > self.floor_lr > 0:
            raise ValidationError(
                f"Need initial_lr > floor_lr > 0, got {self.initial_lr} and {self.floor_lr}"
            )
        if self.reduction_factor <= 1:
            raise ValidationError(f"reduction_factor must be > 1, got {self.reduction_factor}")
        if self.patience_epochs < 1:
            raise ValidationError(f"patience_epochs must be >= 1, got {self.patience_epochs}")

    def should_stop(self, lr: float) -> bool:
        return lr < self.floor_lr * (1.0 - 1e-9)


def plateau_update(schedule: PlateauSchedule, epoch_loss_history: Sequence[float]) -> float:
    """Learning rate after replaying ``epoch_loss_history`` through the schedule."""
    if len(epoch_loss_history) == 0:
        raise ValidationError("Loss history is empty.")
    lr, best, bad_epochs = schedule.initial_lr, np.inf, 0
    for loss in epoch_loss_history:
        if loss < best - schedule.tolerance * abs(best) or not np.isfinite(best):
            best, bad_epochs = loss, 0
        else:
            bad_epochs += 1
        if bad_epochs >= schedule.patience_epochs:
            lr /= schedule.reduction_factor
            bad_epochs = 0
    return lr
