"""Brute-force reference solutions used by the tests.

None of these reuse the package's closed forms: prox problems are solved by
exhaustive enumeration or by a dense 1-D grid followed by golden-section
refinement, and projections by enumerating faces of the feasible set.
"""

import itertools
import math

import numpy as np

from pdattack.models import LinearClassifier

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def golden_min(f, lo, hi, tol=1e-13):
    a, b = lo, hi
    c, d = b - GOLDEN * (b - a), a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * max(1.0, abs(a) + abs(b)):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return f(x), x


def grid_min(f, lo, hi, n=20001):
    """Global minimum of a 1-D function: dense grid, then refine every local minimum.

    ``f`` must accept a numpy array of abscissae.
    """
    xs = np.linspace(lo, hi, n)
    ys = f(xs)
    best_val, best_x = float(ys.min()), float(xs[np.argmin(ys)])
    padded = np.concatenate(([np.inf], ys, [np.inf]))
    local = np.nonzero((ys <= padded[:-2]) & (ys <= padded[2:]))[0]
    for i in local:
        val, x = golden_min(lambda t: float(f(np.array([t]))[0]), xs[max(i - 1, 0)],
                            xs[min(i + 1, n - 1)])
        if val < best_val:
            best_val, best_x = val, x
    return best_val, best_x


def objective(penalty, u, x, lam):
    """The prox objective ``penalty(u) + ||u - x||^2 / (2 lam)``."""
    u, x = np.asarray(u, dtype=float), np.asarray(x, dtype=float)
    return penalty(u) + float(np.sum((u - x) ** 2)) / (2.0 * lam)


def separable_oracle(scalar_penalty, x, lam):
    """Minimum of a coordinate-separable prox objective, coordinate by coordinate."""
    total = 0.0
    for xi in np.asarray(x, dtype=float).ravel():
        span = abs(xi) + 1.0
        val, _ = grid_min(lambda u: scalar_penalty(u) + (u - xi) ** 2 / (2.0 * lam), -span, span)
        total += min(val, float(scalar_penalty(np.zeros(1))[0]) + xi * xi / (2.0 * lam))
    return total


def l2_oracle(x, lam):
    # for a fixed ||u|| = s the distance term is smallest along x, so u = s x / ||x||
    x = np.asarray(x, dtype=float)
    nx = float(np.linalg.norm(x))
    val, _ = grid_min(lambda s: s + (s - nx) ** 2 / (2.0 * lam), 0.0, nx + 1.0)
    return min(val, nx * nx / (2.0 * lam))


def linf_oracle(x, lam):
    # for a fixed ||u||_inf = t the closest u is x clipped to [-t, t]
    x = np.asarray(x, dtype=float)
    top = float(np.max(np.abs(x)))

    def f(t):
        t = np.asarray(t, dtype=float)[:, None]
        return t[:, 0] + np.sum((np.clip(x, -t, t) - x) ** 2, axis=1) / (2.0 * lam)

    val, _ = grid_min(f, 0.0, top)
    return min(val, float(f([0.0])[0]), float(f([top])[0]))


def l0_oracle(x, lam):
    """Exhaustive search over supports."""
    x = np.asarray(x, dtype=float)
    best = math.inf
    for mask in itertools.product((False, True), repeat=x.size):
        keep = np.array(mask)
        val = keep.sum() + float(np.sum(x[~keep] ** 2)) / (2.0 * lam)
        best = min(best, val)
    return best


def group_l0_oracle(x, lam, group_size):
    """Exhaustive search over subsets of kept groups."""
    groups = np.asarray(x, dtype=float).reshape(-1, group_size)
    best = math.inf
    for mask in itertools.product((False, True), repeat=groups.shape[0]):
        keep = np.array(mask)
        val = keep.sum() + float(np.sum(groups[~keep] ** 2)) / (2.0 * lam)
        best = min(best, val)
    return best


def l1_ball_projection_oracle(v, radius):
    """Projection onto the l1 ball by enumerating faces.

    Outside the ball the projection lies on the relative interior of a face
    ``{u : u_i = 0 off S, sum_S s_i u_i = radius}`` with ``s = sign(v)``.
    On each face the projection is an affine shift of ``v``; the nearest
    feasible candidate over all supports is the answer.
    """
    v = np.asarray(v, dtype=float)
    if np.abs(v).sum() <= radius:
        return v.copy()
    s = np.where(v >= 0, 1.0, -1.0)
    best, best_d = None, math.inf
    for mask in itertools.product((False, True), repeat=v.size):
        S = np.array(mask)
        if not S.any():
            continue
        u = np.zeros_like(v)
        shift = (np.dot(s[S], v[S]) - radius) / S.sum()
        u[S] = v[S] - shift * s[S]
        if np.any(s[S] * u[S] < -1e-15) or np.abs(u).sum() > radius * (1 + 1e-12):
            continue
        d = float(np.sum((u - v) ** 2))
        if d < best_d:
            best, best_d = u, d
    return best


def simplex_grid_projection(a, b, n=200001):
    """Projection of ``(a, b)`` onto the 2-simplex by grid search on ``t = lambda1``."""
    t = np.linspace(0.0, 1.0, n)
    d = (t - a) ** 2 + (1.0 - t - b) ** 2
    i = int(np.argmin(d))
    val, x = golden_min(lambda s: (s - a) ** 2 + (1.0 - s - b) ** 2,
                        t[max(i - 1, 0)], t[min(i + 1, n - 1)])
    return np.array([x, 1.0 - x])


def linear_instance(rng):
    """A random two-class linear model and a correctly classified input.

    The clean margin is drawn in ``[2, 8]`` and the l2 distance to the
    boundary in ``[0.1, 0.3]``.  Instances whose l2, linf or l1 optimum
    would touch the box (within 0.02) are rejected, so the box-free
    analytic distances are exact.  Returns ``(model, x, margin, w)``.
    """
    while True:
        d = int(rng.integers(2, 21))
        w = rng.normal(size=d)
        x = rng.uniform(0.2, 0.8, size=d)
        dist = rng.uniform(0.1, 0.3)
        w *= rng.uniform(2.0, 8.0) / (dist * np.linalg.norm(w))
        m = dist * np.linalg.norm(w)
        b = m - w @ x
        optima = [-m * w / np.dot(w, w), -m / np.abs(w).sum() * np.sign(w)]
        j = int(np.argmax(np.abs(w)))
        r1 = np.zeros(d)
        r1[j] = -m / w[j]
        optima.append(r1)
        if all(np.all((x + r >= 0.02) & (x + r <= 0.98)) for r in optima):
            model = LinearClassifier.from_weights([np.stack([w / 2, -w / 2]),
                                                   np.array([b / 2, -b / 2])])
            return model, x, model.margin(x, 0), w


def analytic_distances(margin, w):
    """Minimal l2, linf and l1 perturbations that reach a linear boundary."""
    return {
        "l2": margin / np.linalg.norm(w),
        "linf": margin / np.abs(w).sum(),
        "l1": margin / np.abs(w).max(),
    }
