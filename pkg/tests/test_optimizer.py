import math

import mpmath
import numpy as np
import pytest

from byzsim.aggregators import AggregatorSpec
from byzsim.attacks import AttackSpec
from byzsim.core import ConfigError
from byzsim.harness.studies import momentum_bound, momentum_variance
from byzsim.optimizer import (
    METRIC_FIELDS, MetricRecord, OptimizerSpec, Simulation, mvr_schedule, mvr_step, server_round,
    thm3_schedule, thm6_schedule, traditional_momentum_step, worker_momentum_step,
)
from byzsim.problems import ProblemSpec, build_problem


def quad(dim=5, sigma=1.0, **kw):
    return build_problem(ProblemSpec("quadratic", dim=dim, sigma=sigma, **kw))


def sim(problem=None, agg="mean", attack="none", n=8, delta=0.0, seed=0, rounds=50, **opt):
    return Simulation(problem or quad(), AggregatorSpec(agg, tau=opt.pop("tau", 100.0)), AttackSpec(attack),
                      OptimizerSpec(**opt), n=n, delta=delta, seed=seed, rounds=rounds)


def trajectory(s):
    state = s.init_state()
    xs = []
    for _ in range(s.rounds):
        s.step(state, record=False)
        xs.append(state.x.copy())
    return np.array(xs)


# update rules

def test_worker_momentum_examples():
    g, m = np.array([3.0]), np.array([2.0])
    assert worker_momentum_step(m, g, 0.0)[0] == 3.0
    assert worker_momentum_step(m, g, 1.0)[0] == 2.0
    assert worker_momentum_step(np.array([2.0]), np.array([0.0]), 0.9)[0] == pytest.approx(1.8, rel=1e-15)


def test_traditional_momentum_examples():
    assert traditional_momentum_step(np.array([5.0]), np.array([3.0]), 0.0)[0] == 3.0
    m = np.zeros(1)
    for _ in range(500):
        m = traditional_momentum_step(m, np.ones(1), 0.9)
    assert m[0] == pytest.approx(10.0, rel=1e-12)


def test_mvr_examples():
    assert mvr_step(np.array([1.0]), np.array([2.0]), np.array([1.5]), 0.5)[0] == 1.75
    d, g = np.array([0.3, -1.0]), np.array([2.0, 4.0])
    assert np.array_equal(mvr_step(d, g, np.array([7.0, 7.0]), 1.0), g)
    # no movement: the correction vanishes
    np.testing.assert_allclose(mvr_step(d, g, g, 0.2), worker_momentum_step(d, g, 0.8), rtol=1e-15, atol=1e-15)


# schedules

def test_thm6_schedule_value():
    eta, alpha = thm6_schedule(1.0, 1.0, 1.0, 10, 0.0, 4000.0, 1000)
    oracle = float(mpmath.sqrt(mpmath.mpf(1) / (20 * 1000 * mpmath.mpf("0.2"))))
    assert abs(eta - oracle) <= 1e-12 * oracle
    assert eta == pytest.approx(0.015811388300841896, rel=1e-12)
    assert alpha == pytest.approx(8 * eta, rel=1e-15)


def test_thm6_schedule_limits():
    assert thm6_schedule(1.0, 2.0, 0.0, 10, 0.1, 4000.0, 100)[0] == 1 / 16
    small = thm6_schedule(1.0, 1.0, 1.0, 10, 0.0, 4000.0, 10**6)[0]
    large = thm6_schedule(1.0, 1.0, 1.0, 10, 0.0, 4000.0, 4 * 10**6)[0]
    assert small / large == pytest.approx(2.0, rel=1e-12)


def test_mvr_schedule_value():
    eta, alpha = mvr_schedule(1.0, 1.0, 1.0, 10, 0.1, 4000.0, 10**6)
    mpmath.mp.dps = 40
    oracle = mpmath.cbrt(mpmath.mpf(1) / (mpmath.mpf(10) ** 6 * 1536 * 401 * mpmath.mpf("400.1")))
    assert abs(eta - float(oracle)) <= 1e-12 * float(oracle)
    assert eta == pytest.approx(1.59502e-5, rel=1e-5)
    assert alpha == pytest.approx(192 * eta**2 * 401, rel=1e-14)


def test_mvr_schedule_limits():
    a = mvr_schedule(1.0, 1.0, 1.0, 10, 0.1, 4000.0, 10**6)[0]
    b = mvr_schedule(1.0, 1.0, 1.0, 10, 0.1, 4000.0, 8 * 10**6)[0]
    assert a / b == pytest.approx(2.0, rel=1e-12)
    eta, alpha = mvr_schedule(1.0, 1.0, 1.0, 10, 0.0, 123.0, 10**6)
    assert alpha == pytest.approx(192 * eta**2, rel=1e-15)
    assert mvr_schedule(1.0, 1.0, 0.0, 10, 0.0, 1.0, 10)[0] == 0.25


def test_thm3_schedule():
    eta, alpha = thm3_schedule(1.0, 1.0, 1.0, 100)
    assert eta == pytest.approx(0.025)
    assert alpha == pytest.approx(0.1)


def test_schedule_alpha_sequence():
    s = sim(quad(dim=3), method="sgdm", schedule="thm6", sigma2=1.0, rounds=100)
    assert s.alpha_at(1) == 1.0
    assert s.alpha_at(2) == s.alpha_at(50) == pytest.approx(8 * s.problem.L * s.eta)


# protocol

def test_plain_gradient_step():
    p = build_problem(ProblemSpec("quadratic", dim=1, L=1.0, mu=1.0, sigma=0.0))
    s = Simulation(p, AggregatorSpec("mean"), AttackSpec(), OptimizerSpec("sgd", lr=0.5), n=3, rounds=1)
    state, rec = server_round(s.init_state(), s)
    assert state.x[0] == 0.5
    assert rec.round == 1 and rec.loss == 0.125


def test_cc_with_huge_radius_matches_mean():
    a = trajectory(sim(agg="mean", method="sgdm", rounds=40))
    b = trajectory(sim(agg="centered-clip", tau=1e300, method="sgdm", rounds=40))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_sgdm_beta_zero_is_sgd_bitwise():
    a = trajectory(sim(method="sgd", rounds=30))
    b = trajectory(sim(method="sgdm", beta=0.0, rounds=30))
    assert np.array_equal(a, b)


def test_traditional_equals_rescaled_ema():
    beta, lr = 0.9, 0.01
    a = trajectory(sim(method="sgdm-traditional", beta=beta, lr=lr, rounds=60))
    b = trajectory(sim(method="sgdm", beta=beta, lr=lr / (1 - beta), rounds=60))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10)


def test_mvr_noiseless_is_exact_gradient():
    s = sim(quad(dim=4, sigma=0.0), method="mvr", alpha=0.3, lr=0.1, rounds=100)
    state = s.init_state()
    for _ in range(100):
        x_prev = state.x.copy()
        s.step(state, record=False)
        assert np.array_equal(state.buffers, np.tile(s.problem.gradient(x_prev), (s.n, 1)))


def test_momentum_unbiased_at_fixed_point():
    p = quad(dim=3)
    x = np.array([1.0, -2.0, 0.5])
    rng = np.random.default_rng(0)
    workers, beta = 4000, 0.9
    m = np.zeros((workers, 3))
    for _ in range(80):
        m = worker_momentum_step(m, p.batch_gradients(x, p.draw_batch(workers, rng)), beta)
    # buffers started at zero: E[m_t] = (1 - beta^t) grad f(x)
    target = (1 - beta**80) * p.gradient(x)
    se = m.std(axis=0) / math.sqrt(workers)
    assert np.all(np.abs(m.mean(axis=0) - target) < 5 * se)


def test_pairwise_momentum_variance_bound():
    for t, dist, bound in momentum_variance(pairs=1000, times=[1, 5, 20, 50], seed=1):
        assert bound == momentum_bound(0.1, 1.0, t)
        assert dist <= 1.2 * bound


def test_local_steps_equal_serial_descent_then_averaging():
    p = quad(dim=4, sigma=0.0)
    k, lr, rounds = 3, 0.2, 10
    s = sim(p, method="sgd", lr=lr, local_steps=k, rounds=rounds)
    x = p.initial_point()
    for _ in range(rounds):
        workers = np.tile(x, (s.n, 1))
        for _ in range(k):
            workers = workers - lr * p.h * workers
        x = workers.mean(axis=0)
    np.testing.assert_allclose(trajectory(s)[-1], x, rtol=1e-13, atol=1e-15)


def test_local_steps_single_matches_plain():
    a = trajectory(sim(method="sgdm", local_steps=1, rounds=20))
    b = trajectory(sim(method="sgdm", rounds=20))
    assert np.array_equal(a, b)


def test_cc_radius_scaled_by_alpha():
    s = sim(agg="centered-clip", tau=100.0, method="sgdm", beta=0.9)
    assert s._aggregator_for_round(3).tau == pytest.approx(10.0)
    s = sim(agg="centered-clip", tau=100.0, method="sgdm-traditional", beta=0.9)
    assert s._aggregator_for_round(3).tau == 100.0


def test_attack_sees_messages_not_gradients():
    # bit-flip on momenta: Byzantine buffers are not negated in state, only the sent copies
    s = sim(attack="bit-flip", n=10, delta=0.2, method="sgdm", rounds=3)
    state = s.init_state()
    rec = s.step(state)
    assert rec.attack_active == 2
    assert rec.agg_error > 0


def test_metric_record_fields():
    assert METRIC_FIELDS == tuple(MetricRecord.__dataclass_fields__)
    assert METRIC_FIELDS[:7] == ("round", "loss", "grad_norm_sq", "agg_error", "suboptimality",
                                 "attack_active", "wall_ms")


def test_run_cadence_and_determinism():
    s = sim(rounds=25)
    _, recs = s.run(cadence=10)
    assert [r.round for r in recs] == [10, 20, 25]
    _, again = sim(rounds=25).run(cadence=10)
    assert [r.loss for r in recs] == [r.loss for r in again]


def test_divergence_is_recorded():
    p = quad(dim=10)
    s = Simulation(p, AggregatorSpec("mean"), AttackSpec("gaussian", sigma_attack=1e8), OptimizerSpec("sgd"),
                   n=10, delta=0.2, rounds=50)
    state, recs = s.run(cadence=10)
    assert state.diverged_at == 1
    assert recs[-1].round == 1


def test_validation():
    with pytest.raises(ConfigError, match="optimizer.method"):
        OptimizerSpec("adam")
    with pytest.raises(ConfigError, match="optimizer.beta"):
        OptimizerSpec(beta=1.0)
    with pytest.raises(ConfigError, match="optimizer.local_steps"):
        OptimizerSpec("mvr", local_steps=2)
    with pytest.raises(ConfigError, match="optimizer.schedule"):
        OptimizerSpec("sgd", schedule="thm6")
    with pytest.raises(ConfigError, match="optimizer.sigma2"):
        sim(build_problem(ProblemSpec("imbalanced-softmax", classes=2, features=2, dataset_size=20)),
            method="sgdm", schedule="thm6")
    with pytest.raises(ConfigError, match="delta"):
        sim(delta=1.0)
