"""Projected gradient descent baseline and a bisection search for its minimal norm.

PGD solves the budgeted problem ``min loss(x + r)  s.t. ||r|| <= eps`` for a
fixed ``eps``.  Turning it into a minimal-norm estimate therefore needs one
PGD run per candidate ``eps``; :func:`pgd_minimal_norm` bisects over ``eps``.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from ._validation import ConfigError
from .attack import AttackOutcome, _check_inputs
from .prox import NormKind, NormTag, norm_value, project_box, project_l2_ball

PGD_NORMS = (NormTag.LINF, NormTag.L2)


@dataclass(frozen=True)
class PgdConfig:
    """PGD knobs.  ``step=None`` means ``epsilon / 10``."""

    norm: NormKind = NormKind(NormTag.LINF)
    epsilon: float = 0.1
    step: float = None
    iterations: int = 100
    random_start: bool = False
    seed: int = 0
    early_stop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if self.norm.tag not in PGD_NORMS:
            raise ConfigError(f"PGD supports linf and l2, not {self.norm}")
        if not self.epsilon >= 0:
            raise ConfigError("epsilon must be non-negative")
        if self.step is not None and not self.step > 0:
            raise ConfigError("step must be positive")
        if int(self.iterations) < 1:
            raise ConfigError("iterations must be at least 1")

    @property
    def step_size(self):
        return self.epsilon / 10.0 if self.step is None else self.step


def _project_ball(norm, r, eps):
    if norm.tag is NormTag.LINF:
        return np.clip(r, -eps, eps)
    return project_l2_ball(r, eps)


def _random_start(norm, shape, eps, rng):
    if norm.tag is NormTag.LINF:
        return rng.uniform(-eps, eps, size=shape)
    d = rng.normal(size=shape)
    n = np.linalg.norm(d)
    return d / n * eps * rng.uniform() if n > 0 else np.zeros(shape)


def pgd_attack(model, x, y, cfg):
    """Budgeted PGD on the logistic margin loss.

    Each step moves against the loss gradient (its sign for linf, its
    l2-normalised direction for l2), then projects onto the ``epsilon`` ball
    and the ``[0, 1]`` box.  Succeeds if any iterate is misclassified; the
    smallest-norm misclassified iterate is reported.
    """
    x, y = _check_inputs(model, x, y)
    norm = cfg.norm
    if model.margin(x, y) < 0:
        return AttackOutcome(True, np.zeros_like(x), 0.0, 0, 0)
    if cfg.epsilon == 0:
        return AttackOutcome(False, None, math.inf, 0, -1)
    rng = np.random.default_rng(cfg.seed)
    r = np.zeros_like(x)
    if cfg.random_start:
        r = project_box(x, _random_start(norm, x.shape, cfg.epsilon, rng))
    step = cfg.step_size
    best, best_norm = None, math.inf
    _, m, g = model._loss_and_gradient(x + r, y)
    used = 0
    for _ in range(cfg.iterations):
        used += 1
        if norm.tag is NormTag.LINF:
            r = r - step * np.sign(g)
        else:
            gn = np.linalg.norm(g)
            if gn > 0:
                r = r - step * g / gn
        r = project_box(x, _project_ball(norm, r, cfg.epsilon))
        _, m, g = model._loss_and_gradient(x + r, y)
        if m < 0:
            n = norm_value(norm, r)
            if n <= best_norm:
                best, best_norm = r.copy(), n
            if cfg.early_stop:
                break
    if best is None:
        return AttackOutcome(False, None, math.inf, used, -1)
    return AttackOutcome(True, best, best_norm, used, 0)


def _upper_radius(norm, dim):
    # any perturbation keeping x + r in the unit box has at most this norm
    return 1.0 if norm.tag is NormTag.LINF else math.sqrt(dim)


def pgd_minimal_norm(model, x, y, norm="linf", bisection_steps=20, inner=None):
    """Smallest ``epsilon`` at which PGD succeeds, found by bisection.

    Every probe reruns PGD from scratch with the same seed and iteration
    budget.  Returns 0 for inputs that are already misclassified and
    ``inf`` when PGD fails even with the whole box as budget.
    """
    if bisection_steps < 1:
        raise ConfigError("bisection_steps must be at least 1")
    norm = NormKind.parse(norm)
    inner = PgdConfig(norm=norm) if inner is None else replace(inner, norm=norm)
    inner = replace(inner, early_stop=True)
    x, y = _check_inputs(model, x, y)
    if model.margin(x, y) < 0:
        return 0.0

    def succeeds(eps):
        return pgd_attack(model, x, y, replace(inner, epsilon=eps)).success

    hi = _upper_radius(norm, x.size)
    if not succeeds(hi):
        return math.inf
    lo = 0.0
    for _ in range(bisection_steps):
        mid = 0.5 * (lo + hi)
        if succeeds(mid):
            hi = mid
        else:
            lo = mid
    return hi


class PGD(BaseEstimator):
    """Estimator wrapper around :func:`pgd_attack` for a batch of inputs."""

    def __init__(self, estimator=None, norm="linf", epsilon=0.1, step=None, iterations=100,
                 random_start=False, random_state=0):
        self.estimator = estimator
        self.norm = norm
        self.epsilon = epsilon
        self.step = step
        self.iterations = iterations
        self.random_state = random_state
        self.random_start = random_start

    def config(self):
        return PgdConfig(norm=self.norm, epsilon=self.epsilon, step=self.step,
                         iterations=self.iterations, random_start=self.random_start,
                         seed=self.random_state)

    def perturb(self, X, y):
        X = check_array(X, dtype=np.float64)
        cfg = self.config()
        return [pgd_attack(self.estimator, X[i], int(y[i]), replace(cfg, seed=[self.random_state, i]))
                for i in range(X.shape[0])]

    def fit(self, X, y):
        self.outcomes_ = self.perturb(X, y)
        self.success_ = np.array([o.success for o in self.outcomes_])
        self.norms_ = np.array([o.norm for o in self.outcomes_])
        return self

    def minimal_norms(self, X, y, bisection_steps=20):
        """Bisection estimate of the minimal PGD norm for every row."""
        X = check_array(X, dtype=np.float64)
        cfg = self.config()
        return np.array([pgd_minimal_norm(self.estimator, X[i], int(y[i]), cfg.norm,
                                          bisection_steps, replace(cfg, seed=[self.random_state, i]))
                         for i in range(X.shape[0])])
