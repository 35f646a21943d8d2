"""Optimizer state machines against hand-simulated oracles and the
Lookahead wrapper's algebraic edge cases."""

import numpy as np
import pytest

from gliomaseg.errors import ConfigError
from gliomaseg.optim import (
    OPTIMIZER_NAMES,
    Adam,
    Lookahead,
    RAdam,
    SGD,
    make_optimizer,
)

# [DERIVED] Adam on f(theta)=theta^2, theta0=1, lr=0.1, defaults: hand
# simulation of m/v/bias-correction frozen to full float64 precision.
ADAM_TRAJ = (0.9000000005, 0.8004122286917928, 0.7015862729460303)


def quad_grad(theta):
    return 2.0 * theta


class TestAdam:
    def test_hand_simulated_trajectory(self):
        opt = Adam(lr=0.1)
        theta = np.array([1.0])
        for want in ADAM_TRAJ:
            theta = opt.step(theta, quad_grad(theta))
            assert theta[0] == pytest.approx(want, abs=1e-15)

    def test_state_round_trip_bit_exact(self, rng):
        opt = Adam(lr=0.01)
        theta = rng.normal(size=32)
        for _ in range(5):
            theta = opt.step(theta, rng.normal(size=32))
        snap_theta = theta.copy()
        state = {k: (v.copy() if isinstance(v, np.ndarray) else v)
                 for k, v in opt.state_dict().items()}
        grads = [rng.normal(size=32) for _ in range(5)]
        after_a = theta.copy()
        for g in grads:
            after_a = opt.step(after_a, g)
        fresh = Adam(lr=0.01)
        fresh.load_state_dict(state)
        after_b = snap_theta.copy()
        for g in grads:
            after_b = fresh.step(after_b, g)
        assert np.array_equal(after_a, after_b)


class TestRAdam:
    def test_momentum_only_branch_at_t1(self):
        # [DERIVED] at t=1 with beta2=0.999 the rectification term rho_1 = 1
        # <= 4, so the update is lr * mhat with no second-moment scaling.
        opt = RAdam(lr=0.1)
        theta = np.array([1.0])
        out = opt.step(theta, np.array([2.0]))
        # mhat = g, update = -lr * g regardless of g's magnitude.
        assert out[0] == pytest.approx(1.0 - 0.1 * 2.0, abs=1e-12)
        assert opt.rectification(1) <= 4

    def test_variance_branch_engages_later(self):
        opt = RAdam()
        assert opt.rectification(4) <= 4
        assert opt.rectification(5) > 4

    def test_rho_inf(self):
        assert RAdam(beta2=0.999).rho_inf == pytest.approx(1999.0, abs=1e-9)


class TestLookahead:
    def test_alpha_one_equals_inner(self, rng):
        grads = [rng.normal(size=16) for _ in range(100)]
        theta_a = np.ones(16)
        theta_b = np.ones(16)
        inner = Adam(lr=0.01)
        wrapped = Lookahead(Adam(lr=0.01), k=5, alpha=1.0)
        for g in grads:
            theta_a = inner.step(theta_a, g)
            theta_b = wrapped.step(theta_b, g)
        assert np.array_equal(theta_a, theta_b)

    def test_alpha_zero_k1_freezes(self, rng):
        opt = Lookahead(Adam(lr=0.5), k=1, alpha=0.0)
        theta = np.ones(8)
        for _ in range(10):
            theta = opt.step(theta, rng.normal(size=8))
        assert np.array_equal(theta, np.ones(8))

    def test_hand_simulated_alpha_half_k2(self):
        # [DERIVED] SGD inner lr=0.1, grad always 1, theta0=0:
        # fast: -0.1, -0.2 -> sync: slow = 0 + 0.5*(-0.2-0) = -0.1
        # fast: -0.2, -0.3 -> sync: slow = -0.1 + 0.5*(-0.3+0.1) = -0.2
        opt = Lookahead(SGD(lr=0.1), k=2, alpha=0.5)
        theta = np.array([0.0])
        seen = []
        for _ in range(4):
            theta = opt.step(theta, np.array([1.0]))
            seen.append(theta[0])
        assert seen == pytest.approx([-0.1, -0.1, -0.2, -0.2], abs=1e-15)

    def test_state_round_trip(self, rng):
        opt = Lookahead(Adam(lr=0.05), k=3, alpha=0.5)
        theta = rng.normal(size=8)
        for _ in range(4):
            theta = opt.step(theta, rng.normal(size=8))
        state = opt.state_dict()
        grads = [rng.normal(size=8) for _ in range(7)]
        cont = theta.copy()
        for g in grads:
            cont = opt.step(cont, g)
        fresh = Lookahead(Adam(lr=0.05), k=3, alpha=0.5)
        fresh.load_state_dict(state)
        redo = theta.copy()
        for g in grads:
            redo = fresh.step(redo, g)
        assert np.array_equal(cont, redo)


class TestFactory:
    def test_names(self):
        assert OPTIMIZER_NAMES == ("A", "RA", "R", "A+LH")

    def test_routing(self):
        assert isinstance(make_optimizer("A"), Adam)
        assert isinstance(make_optimizer("RA"), RAdam)
        ranger = make_optimizer("R")
        assert isinstance(ranger, Lookahead)
        assert isinstance(ranger.inner, RAdam)
        alh = make_optimizer("A+LH")
        assert isinstance(alh, Lookahead)
        assert isinstance(alh.inner, Adam)

    def test_unknown_rejected(self):
        with pytest.raises(ConfigError):
            make_optimizer("SGDM")

    def test_convergence_on_quadratic(self):
        for name in OPTIMIZER_NAMES:
            opt = make_optimizer(name, lr=0.1)
            theta = np.array([3.0])
            for _ in range(400):
                theta = opt.step(theta, quad_grad(theta))
            assert abs(theta[0]) < 0.05, name
