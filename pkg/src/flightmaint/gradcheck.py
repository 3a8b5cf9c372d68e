from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from flightmaint.tensor import Tensor, no_grad, precision
from flightmaint.utils import FloatArray


@dataclass(kw_only=True, frozen=True)
class GradCheckReport:
    max_relative_error: float
    passed: bool
    checked: int
    location: str | None = None


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(
    fn: Callable[[Sequence[Tensor]], Tensor],
    inputs: Sequence[npt.ArrayLike],
    *,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    max_coordinates: int = 64,
    seed: int = 0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of `fn` against central finite differences in 64-bit mode.

    Non-scalar outputs are reduced with a fixed random projection so every output element
    contributes. At most `max_coordinates` input coordinates, drawn at random across all inputs,
    are perturbed.

    Args:
        fn: Function of the input tensors returning a tensor.
        inputs: Input arrays; each becomes a tensor requiring gradients.
        tolerance: Largest accepted relative error |a - n| / max(|a|, |n|, 1e-8).
        step: Finite-difference half-width h.
        max_coordinates: Upper bound on perturbed coordinates.
        seed: Seed for the projection and the coordinate subset.

    Returns:
        The worst relative error and whether it stays within tolerance. Non-finite values anywhere
        fail the check and name their location.
    """
    rng = np.random.default_rng(seed)
    arrays = [np.array(a, dtype=np.float64) for a in inputs]

    with precision(np.float64):
        tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
        out = fn(tensors)
        if not np.all(np.isfinite(out.data)):
            return GradCheckReport(max_relative_error=float("inf"), passed=False, checked=0, location="forward output")
        projection = rng.standard_normal(out.shape) if out.size > 1 else np.ones(out.shape)
        (out * projection).sum().backward()

        analytic: list[FloatArray] = []
        for index, tensor in enumerate(tensors):
            grad = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
            if not np.all(np.isfinite(grad)):
                bad = tuple(int(i) for i in np.argwhere(~np.isfinite(grad))[0])
                return GradCheckReport(
                    max_relative_error=float("inf"), passed=False, checked=0, location=f"input {index} gradient {bad}"
                )
            analytic.append(grad)

        coordinates = [(i, flat) for i, a in enumerate(arrays) for flat in range(a.size)]
        if len(coordinates) > max_coordinates:
            picks = rng.choice(len(coordinates), size=max_coordinates, replace=False)
            coordinates = [coordinates[p] for p in sorted(picks)]

        def evaluate(perturbed: list[FloatArray]) -> float:
            with no_grad():
                return float((fn([Tensor(a) for a in perturbed]).data * projection).sum())

        worst, worst_at = 0.0, None
        for input_index, flat in coordinates:
            values = []
            for sign in (1.0, -1.0):
                perturbed = [a.copy() for a in arrays]
                perturbed[input_index].reshape(-1)[flat] += sign * step
                values.append(evaluate(perturbed))
            numeric = (values[0] - values[1]) / (2 * step)
            position = np.unravel_index(flat, arrays[input_index].shape)
            location = f"input {input_index} at {tuple(int(p) for p in position)}"
            if not np.isfinite(numeric):
                return GradCheckReport(
                    max_relative_error=float("inf"), passed=False, checked=len(coordinates), location=location
                )
            error = _relative_error(float(analytic[input_index].reshape(-1)[flat]), numeric)
            if error > worst:
                worst, worst_at = error, location

    return GradCheckReport(
        max_relative_error=worst, passed=worst <= tolerance, checked=len(coordinates), location=worst_at
    )
