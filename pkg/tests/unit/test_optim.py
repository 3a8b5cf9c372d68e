import numpy as np
import pytest

from flightmaint.optim import AdamState, ScheduleKind, adam_step, make_schedule, zero_grad
from flightmaint.tensor import Parameter


def _param(name: str, values: list[float], grad: list[float] | None = None) -> Parameter:
    param = Parameter(np.array(values, dtype=np.float64), name=name)
    param.grad = None if grad is None else np.array(grad, dtype=np.float64)
    return param


class TestAdamStep:
    def test_zero_gradient_leaves_parameters_unchanged(self) -> None:
        param = _param("w", [1.0, -2.0], [0.0, 0.0])

        adam_step([param], AdamState(), lr=0.1)

        np.testing.assert_array_equal(param.data, [1.0, -2.0])

    def test_first_step_moves_by_learning_rate(self) -> None:
        param = _param("w", [0.5], [1.0])

        adam_step([param], AdamState(), lr=1e-3)

        assert param.data[0] == pytest.approx(0.5 - 1e-3 / (1 + 1e-7), abs=1e-15)

    def test_parameters_update_independently(self) -> None:
        state = AdamState()
        a = _param("a", [0.0], [1.0])
        b = _param("b", [0.0], [-100.0])

        adam_step([a, b], state, lr=0.01)

        assert a.data[0] == pytest.approx(-0.01, rel=1e-5)
        assert b.data[0] == pytest.approx(0.01, rel=1e-5)
        assert set(state.first_moment) == {"a", "b"}
        assert state.step == 1

    def test_missing_gradient_counts_as_zero(self) -> None:
        param = _param("w", [3.0])

        adam_step([param], AdamState(), lr=0.1)

        assert param.data[0] == 3.0

    def test_keeps_parameter_dtype(self) -> None:
        param = Parameter(np.ones(3, dtype=np.float32), name="w")
        param.grad = np.ones(3, dtype=np.float32)

        adam_step([param], AdamState(), lr=0.1)

        assert param.dtype == np.float32


class TestZeroGrad:
    def test_clears_gradients(self) -> None:
        params = [_param("a", [1.0], [1.0]), _param("b", [1.0], [2.0])]

        zero_grad(params)

        assert all(p.grad is None for p in params)


class TestSchedules:
    def test_cosine_decays_to_final_ratio(self) -> None:
        schedule = make_schedule(ScheduleKind.COSINE, lr0=1e-3, total_steps=100, final_ratio=0.1)

        assert schedule(0) == pytest.approx(1e-3)
        assert schedule(50) == pytest.approx(0.55e-3)
        assert schedule(100) == pytest.approx(1e-4)
        assert schedule(500) == pytest.approx(1e-4)

    def test_cosine_is_non_increasing(self) -> None:
        schedule = make_schedule(ScheduleKind.COSINE, lr0=1.0, total_steps=40, final_ratio=0.1)

        rates = [schedule(step) for step in range(41)]

        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_exponential_reaches_final_ratio(self) -> None:
        schedule = make_schedule(ScheduleKind.EXPONENTIAL, lr0=2.0, total_steps=10, final_ratio=0.25)

        assert schedule(5) == pytest.approx(1.0)
        assert schedule(10) == pytest.approx(0.5)

    def test_constant(self) -> None:
        schedule = make_schedule(ScheduleKind.CONSTANT, lr0=0.3, total_steps=10, final_ratio=0.1)

        assert {schedule(step) for step in (0, 5, 100)} == {0.3}

    def test_zero_total_steps_does_not_divide_by_zero(self) -> None:
        schedule = make_schedule(ScheduleKind.COSINE, lr0=1.0, total_steps=0, final_ratio=0.1)

        assert schedule(0) == pytest.approx(1.0)

    def test_parses_kind_from_string(self) -> None:
        assert ScheduleKind.from_string("Cosine") is ScheduleKind.COSINE

    def test_rejects_unknown_kind(self) -> None:
        with pytest.raises(ValueError, match="Must be one of: cosine, constant, exponential"):
            ScheduleKind.from_string("linear")
