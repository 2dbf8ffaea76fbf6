import numpy as np
import pytest

from gdod.descent import QuadraticProblem, descent_check
from gdod.errors import InvalidInputError


def test_random_problem_is_psd_and_reproducible():
    a, b = QuadraticProblem.random(3), QuadraticProblem.random(3)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.c, b.c)
    assert all(np.linalg.eigvalsh(A)[0] >= -1e-12 for A in a.A)
    assert a.lipschitz == pytest.approx(np.linalg.eigvalsh(a.A[0] + a.A[1])[-1])


def test_gradients_match_finite_differences():
    p = QuadraticProblem.random(1, dim=4)
    theta = np.array([0.3, -1.0, 2.0, 0.5])
    G = p.gradients(theta)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1e-6
        fd = (p.task_losses(theta + e) - p.task_losses(theta - e)) / 2e-6
        assert np.allclose(G[:, j], fd, atol=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_bound_holds_at_one_over_l(seed):
    trace = descent_check(QuadraticProblem.random(seed), steps=300)
    assert trace.passed
    assert np.all(np.diff(trace.losses) <= 1e-9)
    assert trace.stationarity_holds()


@pytest.mark.parametrize("seed", range(3))
def test_bound_holds_at_half_step(seed):
    p = QuadraticProblem.random(seed)
    assert descent_check(p, 0.5 / p.lipschitz, steps=300).passed


def test_isotropic_problem_converges_towards_the_midpoint():
    p = QuadraticProblem.isotropic(dim=2, offset=1.0)
    trace = descent_check(p, steps=200, theta0=[0.4, 2.0])
    assert trace.passed
    assert np.all(np.diff(trace.losses) <= 1e-12)
    # GDOD stops on the Pareto set, the segment between the centres where the
    # two gradients are exactly opposed; from this start it lands near the midpoint
    x, y = trace.theta
    assert abs(y) <= 1e-8 and abs(x) < 0.25
    g1, g2 = p.gradients(trace.theta)
    assert g1 @ g2 == pytest.approx(-np.linalg.norm(g1) * np.linalg.norm(g2))


def test_zero_steps_trivially_pass():
    trace = descent_check(QuadraticProblem.random(0), steps=0)
    assert trace.passed and len(trace.losses) == 1 and trace.stationarity_holds()


def test_step_size_above_one_over_l_is_rejected():
    p = QuadraticProblem.random(0)
    with pytest.raises(InvalidInputError):
        descent_check(p, 1.01 / p.lipschitz)
    with pytest.raises(InvalidInputError):
        descent_check(p, 0.0)


def test_min_shared_norm_decays_like_one_over_t():
    trace = descent_check(QuadraticProblem.random(4), steps=400)
    sq = np.minimum.accumulate(trace.shared_sq_norms)
    T = np.arange(1, sq.size + 1)
    C = np.max(sq * T)
    assert np.all(sq <= C / T + 1e-12)
    assert C <= 2 * (trace.losses[0] - trace.losses[-1]) / trace.gamma + 1e-9


class _Misreported(QuadraticProblem):
    """Claims a Lipschitz constant ten times too small, so the guard admits long steps."""

    @property
    def lipschitz(self):
        return float(np.linalg.eigvalsh(self.A.sum(axis=0))[-1]) / 10.0


def test_violations_are_detected_when_the_step_is_too_long():
    p = QuadraticProblem.random(2)
    trace = descent_check(_Misreported(p.A, p.c), steps=20)
    assert not trace.passed
    assert trace.violations[0][0] == 0 and trace.violations[0][1] < 0
