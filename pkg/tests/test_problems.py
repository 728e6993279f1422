import csv
import math

import numpy as np
import pytest

from byzsim.aggregators import coordinate_median
from byzsim.core import ALL_WORKERS, ConfigError, RngStream
from byzsim.problems import (
    ProblemSpec, build_problem, class_counts, heavy_tail_gradient, imbalanced_softmax_batch,
    lower_bound_gradient, rademacher_stream,
)


def draws(problem, x, count, seed=0):
    batch = problem.draw_batch(count, RngStream(seed, ALL_WORKERS, 1).generator())
    return problem.batch_gradients(x, batch)


# scalar lower bound

def test_lower_bound_deterministic_when_p_is_one():
    p = build_problem(ProblemSpec("scalar-lower-bound", mu=2.0, sigma=3.0, shift_prob=1.0))
    for r in range(5):
        assert lower_bound_gradient(p, 1.5, RngStream(0, 0, r)) == 2.0 * 1.5 - 3.0


def test_lower_bound_moments():
    p = build_problem(ProblemSpec("scalar-lower-bound", mu=1.0, sigma=1.0, shift_prob=0.05))
    g = draws(p, np.zeros(1), 10**5)[:, 0]
    se = g.std() / math.sqrt(len(g))
    assert abs(g.mean() - (-math.sqrt(0.05))) < 5 * se
    assert g.var() == pytest.approx(1.0 * (1 - 0.05), rel=0.05)
    np.testing.assert_allclose(p.gradient(p.x_star), 0.0, atol=1e-15)


def test_lower_bound_gap():
    delta = 0.3
    p1 = build_problem(ProblemSpec("scalar-lower-bound", mu=1.0, sigma=1.0, variant=1), delta=delta)
    p2 = build_problem(ProblemSpec("scalar-lower-bound", mu=1.0, sigma=1.0, variant=2), delta=delta)
    assert p1.shift_prob == pytest.approx(delta / 6)
    # mu (G/mu)^2 = sigma^2 p / mu
    gap = p1.mu * (p1.x_star[0] - p2.x_star[0]) ** 2
    assert gap == pytest.approx(delta / 6)
    # suboptimality of problem 1 at problem 2's optimum is half that
    assert p1.loss(p2.x_star) - p1.f_star == pytest.approx(delta / 12)


def test_lower_bound_needs_positive_p():
    with pytest.raises(ConfigError, match="problem.shift_prob"):
        build_problem(ProblemSpec("scalar-lower-bound"), delta=0.0)


# heavy tail

def test_heavy_tail_aggregates():
    p = build_problem(ProblemSpec("heavy-tail-scalar", optimum=1.0))
    noise = draws(p, p.x_star, 10**5)  # gradient at x* is the centered noise
    raw = noise + 1.5
    assert abs(coordinate_median(raw)[0] - 2 ** (1 / 3)) < 0.01
    assert abs(raw.mean() - 1.5) < 0.01
    assert p.gradient(p.x_star)[0] == 0.0


def test_heavy_tail_variance():
    # infinite fourth moment: the sample variance converges slowly, so use 10^7 draws
    p = build_problem(ProblemSpec("heavy-tail-scalar"))
    noise = p.draw_batch(10**7, RngStream(0).generator())
    assert abs(noise.var() - 0.75) < 0.05


def test_heavy_tail_single_draw():
    p = build_problem(ProblemSpec("heavy-tail-scalar", optimum=2.0))
    g = heavy_tail_gradient(p, 2.0, RngStream(0, 0, 1))
    assert g >= -0.5


# rademacher

def test_rademacher_stream():
    r = rademacher_stream(25, RngStream(1))
    assert set(np.unique(r)) <= {-1.0, 1.0}
    assert coordinate_median(r.reshape(-1, 1))[0] in (-1.0, 1.0)
    with pytest.raises(ConfigError):
        rademacher_stream(24, RngStream(1))


def test_rademacher_mean():
    pooled = np.concatenate([rademacher_stream(1001, RngStream(s)) for s in range(100)])
    assert abs(pooled.mean()) < 0.02


# imbalanced softmax

def test_class_counts():
    assert len(set(class_counts(10, 1.0, 400))) == 1
    counts = class_counts(10, 0.5, 409)
    assert counts[:3] == [409, 205, 103]
    assert (counts[0] + counts[1]) / sum(counts) == pytest.approx(0.75, abs=0.01)


def test_softmax_gradient_matches_finite_differences():
    p = build_problem(ProblemSpec("imbalanced-softmax", classes=4, features=5, dataset_size=200, batch_size=3),
                      seed=3)
    rng = np.random.default_rng(0)
    x = rng.standard_normal(p.dim) * 0.3
    idx = rng.integers(0, p.num_examples, size=(1, 3))
    g = p.batch_gradients(x, idx)[0]
    h = 1e-6
    fd = np.empty(p.dim)
    for j in range(p.dim):
        e = np.zeros(p.dim)
        e[j] = h
        fd[j] = (p.minibatch_loss(x + e, idx[0]) - p.minibatch_loss(x - e, idx[0])) / (2 * h)
    assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_softmax_full_gradient_matches_finite_differences():
    p = build_problem(ProblemSpec("imbalanced-softmax", classes=3, features=3, dataset_size=60), seed=1)
    x = np.random.default_rng(1).standard_normal(p.dim) * 0.2
    h = 1e-6
    fd = np.array([(p.loss(x + h * e) - p.loss(x - h * e)) / (2 * h) for e in np.eye(p.dim)])
    assert np.linalg.norm(p.gradient(x) - fd) <= 1e-5 * np.linalg.norm(fd)


def test_softmax_batch_helper_and_errors():
    p = build_problem(ProblemSpec("imbalanced-softmax", classes=2, features=2, dataset_size=20), seed=0)
    g = imbalanced_softmax_batch(p, np.zeros(p.dim), 2, RngStream(0))
    assert g.shape == (p.dim,)
    with pytest.raises(ConfigError, match="problem.batch_size"):
        imbalanced_softmax_batch(p, np.zeros(p.dim), p.num_examples + 1, RngStream(0))
    with pytest.raises(ConfigError, match="problem.batch_size"):
        build_problem(ProblemSpec("imbalanced-softmax", classes=2, features=2, dataset_size=20, batch_size=10**4))


def test_softmax_dataset_is_seeded():
    spec = ProblemSpec("imbalanced-softmax", classes=3, features=4, dataset_size=60)
    a, b, c = build_problem(spec, 5), build_problem(spec, 5), build_problem(spec, 6)
    assert np.array_equal(a.data.features, b.data.features)
    assert not np.array_equal(a.data.features, c.data.features)


def test_softmax_export(tmp_path):
    p = build_problem(ProblemSpec("imbalanced-softmax", classes=2, features=2, dataset_size=10), seed=0)
    path = tmp_path / "data.csv"
    p.export_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["f0", "f1", "label"]
    assert len(rows) == p.num_examples + 1
    assert float(rows[1][0]) == p.data.features[0, 0]


# properties shared by every kind

SPECS = {
    "quadratic": ProblemSpec("quadratic", dim=5, L=2.0, mu=0.5, sigma=1.5),
    "quadratic-power-law": ProblemSpec("quadratic", dim=3, sigma=1.0, noise="power-law"),
    "scalar-lower-bound": ProblemSpec("scalar-lower-bound", mu=1.0, sigma=1.0, shift_prob=0.2),
    "heavy-tail-scalar": ProblemSpec("heavy-tail-scalar"),
    "rademacher-scalar": ProblemSpec("rademacher-scalar"),
    "imbalanced-softmax": ProblemSpec("imbalanced-softmax", classes=3, features=4, dataset_size=90),
}


@pytest.mark.parametrize("name", SPECS)
def test_unbiased_and_bounded_variance(name):
    p = build_problem(SPECS[name], seed=0)
    x = np.random.default_rng(2).standard_normal(p.dim) * 0.5
    n = 20000
    G = draws(p, x, n, seed=3)
    dev = G - p.gradient(x)
    se = dev.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(dev.mean(axis=0)) <= 5 * se + 1e-12)
    if not math.isnan(p.sigma2):
        sq = np.sum(dev**2, axis=1)
        assert sq.mean() <= p.sigma2 + 5 * sq.std() / math.sqrt(n)


@pytest.mark.parametrize("name", ["quadratic", "imbalanced-softmax"])
def test_smoothness(name):
    p = build_problem(SPECS[name], seed=0)
    rng = np.random.default_rng(4)
    for _ in range(50):
        x, y = rng.standard_normal((2, p.dim))
        lhs = np.linalg.norm(p.gradient(x) - p.gradient(y))
        assert lhs <= p.L * np.linalg.norm(x - y) * (1 + 1e-12)


def test_quadratic_known_optimum():
    p = build_problem(SPECS["quadratic"])
    assert p.L == 2.0 and p.mu == 0.5
    assert np.all(p.gradient(p.x_star) == 0) and p.loss(p.x_star) == p.f_star == 0.0
    sigma0 = build_problem(ProblemSpec("quadratic", dim=3, sigma=0.0))
    assert np.all(draws(sigma0, np.ones(3), 4) == sigma0.gradient(np.ones(3)))


def test_spec_validation():
    with pytest.raises(ConfigError, match="problem.kind"):
        ProblemSpec("mnist")
    with pytest.raises(ConfigError, match="problem.mu"):
        ProblemSpec("quadratic", mu=2.0, L=1.0)
    with pytest.raises(ConfigError, match="problem.gamma"):
        ProblemSpec("imbalanced-softmax", gamma=0.0)
    with pytest.raises(ConfigError, match="problem.features"):
        build_problem(ProblemSpec("imbalanced-softmax", classes=10, features=5))
