"""Primal-dual minimal-norm attacks.

Two engines share one loop:

* :func:`pdgd_attack` takes Adam steps on ``lam * ||r|| + loss(x + r)``
  (differentiable norms only).
* :func:`pdpgd_attack` takes an Adam step on the loss alone and then applies
  the proximal operator of the norm (proximal Adam), so non-smooth norms and
  the l0 quasi-norm are handled exactly.

In both, the norm weight ``lam = lambda1 / lambda2`` is driven by a dual player
that does multiplicative (log-domain) ascent: ``lambda2`` grows while the
input is still classified correctly and shrinks once it is not.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import ConfigError, as_vector, check_label, check_unit_box
from .prox import NormKind, NormTag, norm_value, project_box, prox

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# lambda2 never drops below ~1e-12, which bounds lambda1 / lambda2
LOG_LAMBDA_BOUND = math.log(1e12)

PDGD_NORMS = frozenset({NormTag.L2})
SCHEDULES = ("exponential", "linear", "constant")


@dataclass(frozen=True)
class AttackConfig:
    norm: NormKind = NormKind(NormTag.L2)
    iterations: int = 500
    primal_lr: float = 0.1
    dual_lr: float = 0.1
    dual_init: float = 0.1
    init_scale: float = 0.5
    restarts: int = 1
    primal_decay_floor: float = 0.01
    dual_decay_floor: float = 0.1
    primal_schedule: str = "exponential"
    dual_schedule: str = "linear"
    ema_decay: float = 0.9
    finetune_iterations: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "norm", NormKind.parse(self.norm))
        if int(self.iterations) < 1:
            raise ConfigError("iterations must be at least 1")
        if int(self.restarts) < 1:
            raise ConfigError("restarts must be at least 1")
        if int(self.finetune_iterations) < 0:
            raise ConfigError("finetune_iterations must be non-negative")
        for name in ("primal_lr", "dual_lr", "dual_init"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.init_scale >= 0:
            raise ConfigError("init_scale must be non-negative")
        for name in ("primal_decay_floor", "dual_decay_floor"):
            if not 0 < getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in (0, 1]")
        if not 0 <= self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in [0, 1)")
        for name in ("primal_schedule", "dual_schedule"):
            if getattr(self, name) not in SCHEDULES:
                raise ConfigError(f"{name} must be one of {SCHEDULES}")


@dataclass(frozen=True)
class DualState:
    """Point ``(lambda1, lambda2)`` of the 2-simplex plus its smoothed norm weight.

    ``log_lambda`` is ``log(lambda2 / lambda1)``, the unconstrained carrier on
    which ascent steps are taken.  ``ema_value`` is an exponential moving
    average of the norm weight ``lambda1 / lambda2``.
    """

    lambda1: float
    lambda2: float
    log_lambda: float
    ema_value: float

    @classmethod
    def initial(cls, norm_weight):
        log_lambda = float(np.clip(-math.log(norm_weight), -LOG_LAMBDA_BOUND, LOG_LAMBDA_BOUND))
        l1, l2 = _simplex_point(log_lambda)
        return cls(l1, l2, log_lambda, math.exp(-log_lambda))

    @property
    def ratio(self):
        """Raw norm weight ``lambda1 / lambda2``."""
        return math.exp(-self.log_lambda)


def _simplex_point(log_lambda):
    # normalising (1, exp(log_lambda)) is the multiplicative-update projection onto the simplex
    l2 = 1.0 / (1.0 + math.exp(-log_lambda))
    return 1.0 - l2, l2


def dual_update(state, constraint_violated, lr, ema_decay=0.9):
    """One log-domain ascent step of the dual player.

    ``constraint_violated`` means the input is still classified correctly, in
    which case the loss weight ``lambda2`` is increased multiplicatively;
    otherwise it is decreased.
    """
    if lr < 0:
        raise ValueError("dual learning rate must be non-negative")
    step = lr if constraint_violated else -lr
    log_lambda = min(max(state.log_lambda + step, -LOG_LAMBDA_BOUND), LOG_LAMBDA_BOUND)
    l1, l2 = _simplex_point(log_lambda)
    ema = ema_decay * state.ema_value + (1.0 - ema_decay) * math.exp(-log_lambda)
    return DualState(l1, l2, log_lambda, ema)


@dataclass
class PerturbationState:
    r: np.ndarray
    r_best: np.ndarray = None
    best_norm: float = math.inf
    adam_m: np.ndarray = None
    adam_v: np.ndarray = None
    step_count: int = 0

    def __post_init__(self):
        self.r = np.array(self.r, dtype=np.float64)
        if self.adam_m is None:
            self.adam_m = np.zeros_like(self.r)
        if self.adam_v is None:
            self.adam_v = np.zeros_like(self.r)


def _adam_moments(state, grad):
    """Advance the moment estimates; returns ``(m, v, direction, denom)``."""
    t = state.step_count + 1
    m = ADAM_BETA1 * state.adam_m + (1.0 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.adam_v + (1.0 - ADAM_BETA2) * grad * grad
    m_hat = m / (1.0 - ADAM_BETA1 ** t)
    v_hat = v / (1.0 - ADAM_BETA2 ** t)
    denom = np.sqrt(v_hat) + ADAM_EPS
    return m, v, m_hat / denom, denom


def adam_step(state, grad, lr):
    """Bias-corrected Adam update of ``state.r``; returns a new state."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.r.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match {state.r.shape}")
    m, v, direction, _ = _adam_moments(state, grad)
    return replace(state, r=state.r - lr * direction, adam_m=m, adam_v=v,
                   step_count=state.step_count + 1)


def schedule_lr(initial, step, total, mode="exponential", floor_fraction=0.01):
    """Learning rate at ``step`` (1-based) decaying to ``floor_fraction * initial`` at ``total``."""
    if total < 1:
        raise ValueError("total must be at least 1")
    if not 1 <= step <= total:
        raise ValueError(f"step {step} outside 1..{total}")
    frac = 0.0 if total == 1 else (step - 1) / (total - 1)
    if mode == "exponential":
        return initial * floor_fraction ** frac
    if mode == "linear":
        return initial * (1.0 - (1.0 - floor_fraction) * frac)
    if mode == "constant":
        return initial
    raise ValueError(f"unknown schedule {mode!r}")


def random_init(shape, scale, seed):
    """I.i.d. uniform draws from ``[-scale, scale]``."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return np.zeros(shape)
    return np.random.default_rng(seed).uniform(-scale, scale, size=shape)


@dataclass
class AttackTrace:
    """Per-iteration record: best norm so far and the dual simplex point."""

    best_norm: list = field(default_factory=list)
    lambda1: list = field(default_factory=list)
    lambda2: list = field(default_factory=list)


@dataclass
class AttackOutcome:
    success: bool
    perturbation: np.ndarray = None
    norm: float = math.inf
    iterations_used: int = 0
    restart_index_of_best: int = -1
    trace: AttackTrace = field(default_factory=AttackTrace, repr=False)


@dataclass
class _RunResult:
    state: PerturbationState
    dual: DualState
    final_loss: float
    iterations: int
    trace: AttackTrace


def _check_inputs(model, x, y):
    x = check_unit_box(as_vector(x, model.n_features_in_))
    y = check_label(y, model.n_classes_)
    return x, y


def _norm_subgradient(r):
    n = np.linalg.norm(r)
    return r / n if n > 0 else np.zeros_like(r)


def _run(model, x, y, cfg, r0, dual, iterations, proximal, state=None):
    """Inner primal-dual loop shared by both engines and the finetune phase."""
    norm = cfg.norm
    if state is None:
        state = PerturbationState(r0)
    else:
        state = replace(state, r=np.array(r0, dtype=np.float64),
                        adam_m=np.zeros_like(r0), adam_v=np.zeros_like(r0), step_count=0)
    trace = AttackTrace()
    loss, m, g = model._loss_and_gradient(x + state.r, y)
    for k in range(1, iterations + 1):
        theta = schedule_lr(cfg.primal_lr, k, iterations, cfg.primal_schedule,
                            cfg.primal_decay_floor)
        eta = schedule_lr(cfg.dual_lr, k, iterations, cfg.dual_schedule, cfg.dual_decay_floor)
        lam = dual.ema_value
        if proximal:
            m1, v1, direction, denom = _adam_moments(state, g)
            r = state.r - theta * direction
            # proximal Adam: the prox is taken in the same diagonal metric as the step
            r = prox(norm, r, lam * theta, metric=denom)
        else:
            m1, v1, direction, _ = _adam_moments(state, lam * _norm_subgradient(state.r) + g)
            r = state.r - theta * direction
        r = project_box(x, r)
        state.r, state.adam_m, state.adam_v = r, m1, v1
        state.step_count += 1
        # the dual player sees the constraint at the iterate the primal step started from
        dual = dual_update(dual, m >= 0.0, eta, cfg.ema_decay)
        loss, m, g = model._loss_and_gradient(x + r, y)
        if m < 0.0:
            n = norm_value(norm, r)
            if n <= state.best_norm:
                state.best_norm = n
                state.r_best = r.copy()
        trace.best_norm.append(state.best_norm)
        trace.lambda1.append(dual.lambda1)
        trace.lambda2.append(dual.lambda2)
    return _RunResult(state, dual, loss, iterations, trace)


def _single(model, x, y, cfg, seed, proximal):
    r0 = project_box(x, random_init(x.shape, cfg.init_scale, seed))
    return _run(model, x, y, cfg, r0, DualState.initial(cfg.dual_init), cfg.iterations,
                proximal)


def _already_misclassified(model, x, y):
    return model.margin(x, y) < 0.0


def _zero_outcome(x):
    return AttackOutcome(True, np.zeros_like(x), 0.0, 0, 0)


def _outcome(result, restart_index, iterations_used):
    st = result.state
    if st.r_best is None:
        return AttackOutcome(False, None, math.inf, iterations_used, -1, result.trace)
    return AttackOutcome(True, st.r_best.copy(), st.best_norm, iterations_used, restart_index,
                         result.trace)


def _restart_seeds(cfg):
    return np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)


def _check_norm(cfg, proximal):
    if not proximal and cfg.norm.tag not in PDGD_NORMS:
        raise ConfigError(f"PDGD needs a differentiable norm; {cfg.norm} is not supported")


def pdgd_attack(model, x, y, cfg):
    """Single run of the primal-dual gradient attack (no restarts, no finetune)."""
    _check_norm(cfg, proximal=False)
    x, y = _check_inputs(model, x, y)
    if _already_misclassified(model, x, y):
        return _zero_outcome(x)
    res = _single(model, x, y, cfg, _restart_seeds(cfg)[0], proximal=False)
    return _outcome(res, 0, res.iterations)


def pdpgd_attack(model, x, y, cfg):
    """Single run of the primal-dual proximal gradient attack (no restarts, no finetune)."""
    _check_norm(cfg, proximal=True)
    x, y = _check_inputs(model, x, y)
    if _already_misclassified(model, x, y):
        return _zero_outcome(x)
    res = _single(model, x, y, cfg, _restart_seeds(cfg)[0], proximal=True)
    return _outcome(res, 0, res.iterations)


def attack_with_restarts(model, x, y, cfg, method="pdpgd"):
    """Best of ``cfg.restarts`` independent runs, followed by a finetune run.

    The finetune run starts from the best perturbation found (or, if none was
    feasible, from the last iterate of the restart with the lowest loss), with
    fresh Adam moments and schedules and the dual state of that restart.
    """
    if method not in ("pdgd", "pdpgd"):
        raise ConfigError(f"unknown attack method {method!r}")
    proximal = method == "pdpgd"
    _check_norm(cfg, proximal)
    x, y = _check_inputs(model, x, y)
    if _already_misclassified(model, x, y):
        return _zero_outcome(x)
    best, best_idx, fallback = None, -1, None
    trace = AttackTrace()
    used = 0
    for i, seed in enumerate(_restart_seeds(cfg)):
        res = _single(model, x, y, cfg, seed, proximal)
        used += res.iterations
        st = res.state
        if st.r_best is not None and (best is None or st.best_norm <= best.state.best_norm):
            best, best_idx = res, i
        if fallback is None or res.final_loss < fallback.final_loss:
            fallback = res
        running = best.state.best_norm if best is not None else math.inf
        trace.best_norm.extend(min(b, running) for b in res.trace.best_norm)
        trace.lambda1.extend(res.trace.lambda1)
        trace.lambda2.extend(res.trace.lambda2)
    if cfg.finetune_iterations > 0:
        source = best if best is not None else fallback
        start = source.state.r_best if best is not None else source.state.r
        carried = PerturbationState(start, source.state.r_best, source.state.best_norm)
        res = _run(model, x, y, cfg, start, source.dual, cfg.finetune_iterations, proximal,
                   state=carried)
        used += res.iterations
        if res.state.r_best is not None and (
                best is None or res.state.best_norm < best.state.best_norm):
            best, best_idx = res, cfg.restarts
        trace.best_norm.extend(res.trace.best_norm)
        trace.lambda1.extend(res.trace.lambda1)
        trace.lambda2.extend(res.trace.lambda2)
    if best is None:
        return AttackOutcome(False, None, math.inf, used, -1, trace)
    out = _outcome(best, best_idx, used)
    out.trace = trace
    return out


class _PrimalDualAttack(BaseEstimator):
    """Estimator wrapper running the attack over a batch of labelled inputs.

    ``fit(X, y)`` attacks every row and stores ``outcomes_``,
    ``perturbations_`` (zero rows where the attack failed), ``norms_`` and
    ``success_``.
    """

    method = None

    def __init__(self, estimator=None, norm="l2", iterations=500, primal_lr=0.1, dual_lr=0.1,
                 dual_init=0.1, init_scale=0.5, restarts=1, finetune_iterations=500,
                 ema_decay=0.9, group_size=1, random_state=0):
        self.estimator = estimator
        self.norm = norm
        self.iterations = iterations
        self.primal_lr = primal_lr
        self.dual_lr = dual_lr
        self.dual_init = dual_init
        self.init_scale = init_scale
        self.restarts = restarts
        self.finetune_iterations = finetune_iterations
        self.ema_decay = ema_decay
        self.group_size = group_size
        self.random_state = random_state

    def config(self, seed=None):
        return AttackConfig(
            norm=NormKind.parse(self.norm, self.group_size), iterations=self.iterations,
            primal_lr=self.primal_lr, dual_lr=self.dual_lr, dual_init=self.dual_init,
            init_scale=self.init_scale, restarts=self.restarts,
            finetune_iterations=self.finetune_iterations, ema_decay=self.ema_decay,
            seed=self.random_state if seed is None else seed)

    def perturb(self, X, y):
        """Attack each row; row ``i`` uses seed ``(random_state, i)``."""
        if self.estimator is None:
            raise ValueError("an attacked estimator is required")
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise ValueError("X and y have inconsistent lengths")
        base = self.config()
        return [attack_with_restarts(self.estimator, X[i], int(y[i]),
                                     replace(base, seed=[self.random_state, i]), self.method)
                for i in range(X.shape[0])]

    def fit(self, X, y):
        outcomes = self.perturb(X, y)
        X = np.asarray(X, dtype=np.float64)
        self.outcomes_ = outcomes
        self.perturbations_ = np.array([o.perturbation if o.success else np.zeros(X.shape[1])
                                        for o in outcomes])
        self.norms_ = np.array([o.norm for o in outcomes])
        self.success_ = np.array([o.success for o in outcomes])
        return self

    def generate(self, X, y):
        """Adversarial examples (unchanged rows where the attack failed)."""
        self.fit(X, y)
        return np.asarray(X, dtype=np.float64) + self.perturbations_

    def success_rate(self):
        check_is_fitted(self, "success_")
        return float(np.mean(self.success_))


class PDGD(_PrimalDualAttack):
    """Primal-dual gradient descent attack (l2 only)."""

    method = "pdgd"


class PDPGD(_PrimalDualAttack):
    """Primal-dual proximal gradient descent attack (linf, l2, l1, l0, group-l0, l1/2, l2/3)."""

    method = "pdpgd"
