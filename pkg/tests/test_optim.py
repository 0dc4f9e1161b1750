import numpy as np
import pytest

from tabrep import tensor as T
from tabrep.optim import Adam, MissingGradError, OptimError, ParamSet
from tabrep.tensor import precision


def test_paramset_rejects_duplicates():
    ps = ParamSet()
    ps.register("w", np.zeros(3))
    with pytest.raises(OptimError):
        ps.register("w", np.zeros(3))


def test_paramset_deterministic_order():
    ps = ParamSet()
    for name in ["b", "a", "c"]:
        ps.register(name, np.zeros(1))
    assert ps.names() == ["b", "a", "c"]


def test_state_dict_roundtrip():
    ps = ParamSet()
    ps.register("w", np.arange(4, dtype=np.float32))
    state = ps.state_dict()
    state["w"] += 1
    ps.load_state_dict(state)
    np.testing.assert_array_equal(ps["w"].data, [1, 2, 3, 4])
    with pytest.raises(OptimError):
        ps.load_state_dict({"w": np.zeros(4), "extra": np.zeros(1)})


class TestAdam:
    def test_zero_grads_leave_params_unchanged(self):
        ps = ParamSet()
        w = ps.register("w", np.array([1.0, -2.0], dtype=np.float32))
        ps.zero_grad()
        Adam(ps, lr=0.5).step()
        np.testing.assert_array_equal(w.data, [1.0, -2.0])

    def test_first_step_closed_form(self):
        # f(theta)=theta^2 at theta=1: m_hat=2, v_hat=4, update=lr*2/(2+eps)
        with precision(np.float64):
            ps = ParamSet()
            theta = ps.register("theta", np.array([1.0]))
            opt = Adam(ps, lr=0.1)
            ps.zero_grad()
            T.tsum(T.mul(theta, theta)).backward()
            opt.step()
            assert theta.data[0] == pytest.approx(0.9, abs=1e-8)

    def test_missing_grad_errors(self):
        ps = ParamSet()
        ps.register("w", np.zeros(2))
        with pytest.raises(MissingGradError):
            Adam(ps).step()

    def test_bit_identical_runs(self):
        def run():
            with precision(np.float64):
                ps = ParamSet()
                w = ps.register("w", np.linspace(-1, 1, 8))
                opt = Adam(ps, lr=0.05)
                for _ in range(25):
                    ps.zero_grad()
                    T.tsum(T.mul(T.sub(w, 0.25), T.sub(w, 0.25))).backward()
                    opt.step()
                return w.data.copy()

        a, b = run(), run()
        assert np.array_equal(a, b)

    def test_converges_on_quadratic(self):
        with precision(np.float64):
            ps = ParamSet()
            w = ps.register("w", np.array([5.0, -3.0]))
            opt = Adam(ps, lr=0.2)
            for _ in range(400):
                ps.zero_grad()
                T.tsum(T.mul(w, w)).backward()
                opt.step()
            assert np.abs(w.data).max() < 1e-2

    def test_gradient_accumulation_matches_large_batch(self):
        # two half-weighted micro-batch backwards == one combined backward
        with precision(np.float64):
            xs = [np.array([1.0, 2.0]), np.array([3.0, -1.0])]

            def loss_for(w, x):
                return T.tsum(T.mul(T.sub(w, T.Tensor(x)), T.sub(w, T.Tensor(x))))

            ps1 = ParamSet()
            w1 = ps1.register("w", np.zeros(2))
            ps1.zero_grad()
            for x in xs:
                T.scale(loss_for(w1, x), 0.5).backward()
            g_accum = w1.grad.copy()

            ps2 = ParamSet()
            w2 = ps2.register("w", np.zeros(2))
            ps2.zero_grad()
            both = T.add(loss_for(w2, xs[0]), loss_for(w2, xs[1]))
            T.scale(both, 0.5).backward()
            np.testing.assert_allclose(g_accum, w2.grad, atol=1e-12)
