import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossview.errors import ConfigError, NumericError
from crossview.optim import OptimState, ScheduleSpec, adam_step, lr_at
from crossview.tensor import Tensor


class TestSchedule:
    spec = ScheduleSpec(1e-4, 1e-6, 40, 4)

    def test_endpoints(self):
        assert lr_at(4, self.spec) == 1e-4
        assert lr_at(40, self.spec) == 1e-6
        assert lr_at(0, self.spec) == 0.0

    def test_midpoint(self):
        assert lr_at(22, self.spec) == pytest.approx((1e-4 + 1e-6) / 2, rel=1e-12)

    def test_warmup_linear(self):
        assert lr_at(1, self.spec) == pytest.approx(0.25e-4)

    def test_continuous_at_warmup(self):
        assert abs(lr_at(4 - 1e-12, self.spec) - lr_at(4, self.spec)) <= 1e-12

    def test_long_schedule_endpoints(self):
        for e, w in ((300, 30), (60, 6)):
            s = ScheduleSpec(1e-4, 1e-6, e, w)
            assert lr_at(w, s) == 1e-4 and lr_at(e, s) == 1e-6

    @settings(max_examples=100, deadline=None)
    @given(st.floats(4, 40), st.floats(4, 40))
    def test_monotone_after_warmup(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert lr_at(lo, self.spec) >= lr_at(hi, self.spec)

    @pytest.mark.parametrize("bad", [dict(warmup=0), dict(warmup=40), dict(lr_min=1e-3)])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ScheduleSpec(**{**dict(lr_max=1e-4, lr_min=1e-6, epochs=40, warmup=4), **bad}).validate()


def _param(value):
    return [("w", Tensor(np.array(value, dtype=np.float64), requires_grad=True))]


class TestAdam:
    def test_first_step_closed_form(self):
        params = _param([1.0, -2.0, 0.5])
        g = np.array([0.3, -4.0, 1e-9])
        params[0][1].grad = g.copy()
        adam_step(params, OptimState(), lr=0.01)
        # step 1: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        expected = np.array([1.0, -2.0, 0.5]) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params[0][1].data, expected, rtol=1e-12)

    def test_zero_gradient_no_change(self):
        params = _param([1.0, 2.0])
        params[0][1].grad = np.zeros(2)
        adam_step(params, OptimState(), lr=0.1)
        assert params[0][1].data.tolist() == [1.0, 2.0]

    def test_non_finite_named(self):
        params = _param([1.0])
        params[0][1].grad = np.array([np.nan])
        with pytest.raises(NumericError, match="'w'"):
            adam_step(params, OptimState(), lr=0.1)

    def _trajectory(self, lr, steps=60):
        params = _param([3.0])
        p = params[0][1]
        state = OptimState()
        losses = []
        for _ in range(steps):
            p.grad = 2 * p.data
            adam_step(params, state, lr)
            losses.append(float(p.data[0] ** 2))
        return losses

    def test_deterministic(self):
        assert self._trajectory(1e-2) == self._trajectory(1e-2)

    @pytest.mark.parametrize("lr", [1e-4, 1e-3, 1e-2])
    def test_quadratic_decreases(self, lr):
        losses = self._trajectory(lr)
        assert all(b < a for a, b in zip(losses, losses[1:]))

    def test_weight_decay_and_clip(self):
        params = _param([1.0])
        params[0][1].grad = np.array([100.0])
        state = OptimState()
        adam_step(params, state, lr=0.1, weight_decay=0.5, grad_clip=1.0)
        assert state.step == 1
        assert params[0][1].data[0] == pytest.approx(0.9, abs=1e-6)
