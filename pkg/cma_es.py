"""
(mu/mu_w, lambda)-CMA-ES with rank-one and rank-mu covariance updates.

Candidates are projected onto the box bounds before evaluation and the
projected step is what drives the update. Non-finite objective values rank
last; a generation where every value is non-finite aborts the run.
"""
import logging
import math

import numpy as np

from constants import RUNTIME_ERRORS, VALIDATION_ERRORS
from errors import InputDomainError, OptimizationAbort

logger = logging.getLogger(__name__)


def default_popsize(n):
    return 4 + int(math.floor(3.0 * math.log(n)))


class CMAState:
    """Strategy parameters and evolving state for one run."""

    def __init__(self, x0, sigma0, popsize=None):
        self.n = n = len(x0)
        self.lam = popsize or default_popsize(n)
        self.mu = self.lam // 2
        weights = math.log(self.mu + 0.5) - np.log(np.arange(1, self.mu + 1))
        self.weights = weights / weights.sum()
        self.mueff = 1.0 / np.sum(self.weights ** 2)
        self.cc = (4.0 + self.mueff / n) / (n + 4.0 + 2.0 * self.mueff / n)
        self.cs = (self.mueff + 2.0) / (n + self.mueff + 5.0)
        self.c1 = 2.0 / ((n + 1.3) ** 2 + self.mueff)
        self.cmu = min(1.0 - self.c1, 2.0 * (self.mueff - 2.0 + 1.0 / self.mueff) / ((n + 2.0) ** 2 + self.mueff))
        self.damps = 1.0 + 2.0 * max(0.0, math.sqrt((self.mueff - 1.0) / (n + 1.0)) - 1.0) + self.cs
        self.chi_n = math.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))

        self.mean = np.array(x0, dtype=np.float64)
        self.sigma = float(sigma0)
        self.C = np.eye(n)
        self.B = np.eye(n)
        self.D = np.ones(n)
        self.pc = np.zeros(n)
        self.ps = np.zeros(n)
        self.generation = 0

    def decompose(self):
        self.C = np.triu(self.C) + np.triu(self.C, 1).T
        eigenvalues, self.B = np.linalg.eigh(self.C)
        self.D = np.sqrt(np.maximum(eigenvalues, 1e-300))

    def ask(self, rng):
        z = rng.standard_normal((self.lam, self.n))
        return self.mean + self.sigma * (z * self.D) @ self.B.T

    def tell(self, candidates, values):
        order = np.argsort(values, kind='stable')
        steps = (candidates[order[:self.mu]] - self.mean) / self.sigma
        y_w = self.weights @ steps
        self.mean = self.mean + self.sigma * y_w

        inv_sqrt = self.B @ np.diag(1.0 / self.D) @ self.B.T
        self.ps = (1.0 - self.cs) * self.ps + math.sqrt(self.cs * (2.0 - self.cs) * self.mueff) * inv_sqrt @ y_w
        self.generation += 1
        ps_norm = np.linalg.norm(self.ps)
        hsig = ps_norm / math.sqrt(1.0 - (1.0 - self.cs) ** (2 * self.generation)) / self.chi_n < 1.4 + 2.0 / (self.n + 1)
        self.pc = (1.0 - self.cc) * self.pc + hsig * math.sqrt(self.cc * (2.0 - self.cc) * self.mueff) * y_w

        rank_mu = (steps * self.weights[:, None]).T @ steps
        decay = 1.0 - self.c1 - self.cmu + (1.0 - hsig) * self.c1 * self.cc * (2.0 - self.cc)
        self.C = decay * self.C + self.c1 * np.outer(self.pc, self.pc) + self.cmu * rank_mu
        self.sigma *= math.exp((self.cs / self.damps) * (ps_norm / self.chi_n - 1.0))
        self.decompose()


def cma_es_minimize(objective, x0, sigma0, bounds=None, max_generations=200, popsize=None, seed=0,
                    target=None, map_fn=map):
    """Minimize ``objective``; returns (best-ever point, per-generation history rows).

    ``bounds`` is a (lower, upper) pair of arrays or None. ``map_fn`` evaluates a
    list of candidates and may run them in parallel.
    """
    if not sigma0 > 0:
        raise InputDomainError(VALIDATION_ERRORS['SIGMA0'].format(sigma0=sigma0))
    if max_generations < 1:
        raise InputDomainError(f'budget must allow at least one generation (got {max_generations})')
    rng = np.random.default_rng(seed)
    state = CMAState(x0, sigma0, popsize)
    lower, upper = (None, None) if bounds is None else (np.asarray(bounds[0]), np.asarray(bounds[1]))
    if lower is not None:
        state.mean = np.clip(state.mean, lower, upper)

    best_x, best_f = state.mean.copy(), math.inf
    history = []
    evaluations = 0
    invalid = 0
    for generation in range(max_generations):
        candidates = state.ask(rng)
        if lower is not None:
            candidates = np.clip(candidates, lower, upper)
        values = np.array([float(v) for v in map_fn(objective, list(candidates))])
        evaluations += len(values)
        finite = np.isfinite(values)
        if not finite.any():
            raise OptimizationAbort(RUNTIME_ERRORS['ALL_INVALID'].format(generation=generation))
        invalid += int((~finite).sum())
        values = np.where(finite, values, np.inf)

        k = int(np.argmin(values))
        if values[k] < best_f:
            best_f, best_x = float(values[k]), candidates[k].copy()
        history.append({
            'generation': generation, 'evaluations': evaluations, 'generation_best': float(values[k]),
            'best': best_f, 'sigma': state.sigma,
        })
        logger.debug(f"generation {generation}: best {best_f:.3e} sigma {state.sigma:.3e}")
        if target is not None and best_f <= target:
            break
        state.tell(candidates, values)
        if state.sigma * np.max(state.D) < 1e-16:
            break

    if invalid:
        logger.info(f"{invalid} of {evaluations} candidate evaluations were non-finite")
    return best_x, history
