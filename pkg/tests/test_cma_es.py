import math

import numpy as np
import pytest

from cma_es import cma_es_minimize, default_popsize
from errors import InputDomainError, OptimizationAbort


def sphere(x):
    return float(np.sum(np.asarray(x) ** 2))


def rosenbrock(x):
    x = np.asarray(x)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


def test_default_population_size():
    assert default_popsize(10) == 10
    assert default_popsize(1) == 4


@pytest.mark.parametrize('seed', [0, 3])
def test_sphere_converges(seed):
    best, history = cma_es_minimize(sphere, np.full(5, 3.0), 1.0, max_generations=200, target=1e-8, seed=seed)
    assert sphere(best) < 1e-8
    assert len(history) <= 200
    assert history[-1]['best'] == pytest.approx(sphere(best))


def test_rosenbrock_converges():
    best, history = cma_es_minimize(rosenbrock, np.zeros(2), 0.5, max_generations=500, target=1e-6, seed=1)
    assert rosenbrock(best) < 1e-6
    assert len(history) <= 500
    assert best == pytest.approx([1.0, 1.0], abs=1e-2)


def test_best_value_never_increases():
    _, history = cma_es_minimize(sphere, np.full(3, 2.0), 1.0, max_generations=40, seed=0)
    best = [row['best'] for row in history]
    assert all(b <= a for a, b in zip(best, best[1:]))
    assert [row['generation'] for row in history] == list(range(len(history)))


def test_bounds_are_respected():
    def shifted(x):
        return float(np.sum((np.asarray(x) - 5.0) ** 2))

    bounds = (np.full(2, -1.0), np.full(2, 1.0))
    best, _ = cma_es_minimize(shifted, np.zeros(2), 0.5, bounds=bounds, max_generations=100, seed=1)
    assert np.all(best <= 1.0) and np.all(best >= -1.0)
    assert best == pytest.approx([1.0, 1.0], abs=1e-3)


def test_target_stops_early():
    _, history = cma_es_minimize(sphere, np.ones(2), 0.5, max_generations=500, target=1e-2, seed=0)
    assert history[-1]['best'] <= 1e-2
    assert len(history) < 500


def test_invalid_step_size():
    with pytest.raises(InputDomainError):
        cma_es_minimize(sphere, np.ones(2), 0.0)


def test_all_invalid_generation_aborts():
    with pytest.raises(OptimizationAbort):
        cma_es_minimize(lambda x: math.inf, np.ones(2), 0.5, max_generations=5)


def test_nan_candidates_rank_last():
    def partial(x):
        return math.nan if x[0] > 0 else sphere(x)

    best, _ = cma_es_minimize(partial, np.full(2, -1.0), 0.3, max_generations=30, seed=2)
    assert best[0] <= 0
