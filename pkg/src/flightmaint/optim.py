import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from flightmaint.tensor import Parameter
from flightmaint.utils import ChoiceEnum, FloatArray


class ScheduleKind(ChoiceEnum):
    COSINE = "cosine"
    CONSTANT = "constant"
    EXPONENTIAL = "exponential"


class LearningRateSchedule(Protocol):
    def __call__(self, step: int) -> float: ...


@dataclass(kw_only=True, frozen=True)
class ConstantSchedule:
    lr0: float

    def __call__(self, step: int) -> float:
        return self.lr0


@dataclass(kw_only=True, frozen=True)
class CosineDecay:
    """Cosine decay from `lr0` to `final_ratio * lr0` over `total_steps`, flat afterwards."""

    lr0: float
    total_steps: int
    final_ratio: float = 0.1

    def __call__(self, step: int) -> float:
        progress = min(step, self.total_steps) / max(self.total_steps, 1)
        return self.lr0 * (self.final_ratio + (1 - self.final_ratio) * 0.5 * (1 + math.cos(math.pi * progress)))


@dataclass(kw_only=True, frozen=True)
class ExponentialDecay:
    lr0: float
    total_steps: int
    final_ratio: float = 0.1

    def __call__(self, step: int) -> float:
        progress = min(step, self.total_steps) / max(self.total_steps, 1)
        return self.lr0 * self.final_ratio**progress


def make_schedule(kind: ScheduleKind, *, lr0: float, total_steps: int, final_ratio: float) -> LearningRateSchedule:
    match kind:
        case ScheduleKind.COSINE:
            return CosineDecay(lr0=lr0, total_steps=total_steps, final_ratio=final_ratio)
        case ScheduleKind.EXPONENTIAL:
            return ExponentialDecay(lr0=lr0, total_steps=total_steps, final_ratio=final_ratio)
        case ScheduleKind.CONSTANT:
            return ConstantSchedule(lr0=lr0)
        case _:  # pragma: no cover
            raise AssertionError(f"Unhandled schedule: {kind}")


@dataclass(kw_only=True)
class AdamState:
    """First/second moments per parameter name plus the shared step counter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step: int = 0
    first_moment: dict[str, FloatArray] = field(default_factory=dict)
    second_moment: dict[str, FloatArray] = field(default_factory=dict)


def zero_grad(params: Sequence[Parameter]) -> None:
    for param in params:
        param.grad = None


def adam_step(params: Sequence[Parameter], state: AdamState, lr: float) -> None:
    """Apply one bias-corrected Adam update in place, reading gradients from `param.grad`.

    Parameters without a gradient are treated as having a zero gradient.

    Args:
        params: Parameters to update.
        state: Optimizer state, advanced by one step.
        lr: Learning rate for this step.
    """
    state.step += 1
    correction1 = 1 - state.beta1**state.step
    correction2 = 1 - state.beta2**state.step
    for param in params:
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        m = state.first_moment.get(param.name)
        v = state.second_moment.get(param.name)
        m = (1 - state.beta1) * grad if m is None else state.beta1 * m + (1 - state.beta1) * grad
        v = (1 - state.beta2) * grad * grad if v is None else state.beta2 * v + (1 - state.beta2) * grad * grad
        state.first_moment[param.name] = m
        state.second_moment[param.name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.data = (param.data - update).astype(param.dtype, copy=False)
