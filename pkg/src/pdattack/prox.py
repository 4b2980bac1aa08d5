"""Norms, projections and proximal operators.

Every ``prox_*`` function returns ``argmin_u  lam * g(u) + ||u - v||^2 / 2``
for its penalty ``g``.  Separable operators also accept an array ``lam`` of
per-coordinate weights, which is how the proximal Adam step applies a
diagonal metric.
"""

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive

ZERO_TOL = 1e-12


class NormTag(str, enum.Enum):
    LINF = "linf"
    L2 = "l2"
    L1 = "l1"
    L0 = "l0"
    GROUP_L0 = "group-l0"
    LP_HALF = "l1/2"
    LP_TWO_THIRDS = "l2/3"


_ALIASES = {
    "inf": NormTag.LINF, "l-inf": NormTag.LINF, "linfinity": NormTag.LINF,
    "groupl0": NormTag.GROUP_L0, "group_l0": NormTag.GROUP_L0,
    "lhalf": NormTag.LP_HALF, "l0.5": NormTag.LP_HALF, "lp-half": NormTag.LP_HALF,
    "l2_3": NormTag.LP_TWO_THIRDS, "lp-two-thirds": NormTag.LP_TWO_THIRDS,
}


@dataclass(frozen=True)
class NormKind:
    """A norm (or quasi-norm) selector.

    ``group_size`` only matters for group-l0 and the lp relaxations, where it
    selects the grouped (per-pixel) operator.
    """

    tag: NormTag
    group_size: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tag", NormTag(self.tag))
        if int(self.group_size) < 1:
            raise ValueError("group_size must be a positive integer")

    @classmethod
    def parse(cls, name, group_size=1):
        if isinstance(name, NormKind):
            return name
        key = str(name).strip().lower()
        tag = _ALIASES.get(key)
        if tag is None:
            try:
                tag = NormTag(key)
            except ValueError:
                raise ValueError(f"unknown norm {name!r}") from None
        grouped = (NormTag.GROUP_L0, NormTag.LP_HALF, NormTag.LP_TWO_THIRDS)
        return cls(tag, group_size if tag in grouped else 1)

    @property
    def p(self):
        """Exponent of the lp relaxations, ``None`` for the other norms."""
        return {NormTag.LP_HALF: 0.5, NormTag.LP_TWO_THIRDS: 2.0 / 3.0}.get(self.tag)

    def __str__(self):
        if self.group_size > 1 or self.tag is NormTag.GROUP_L0:
            return f"{self.tag.value}:{self.group_size}"
        return self.tag.value


@dataclass(frozen=True)
class GroupPartition:
    """Assignment of each coordinate to a group ``0 .. num_groups - 1``."""

    indices: tuple

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValueError("partition must cover at least one coordinate")
        groups = np.unique(idx)
        if groups[0] != 0 or groups[-1] != groups.size - 1:
            raise ValueError("group ids must be exactly 0 .. num_groups - 1")
        object.__setattr__(self, "indices", tuple(int(i) for i in idx))

    @classmethod
    def contiguous(cls, n, group_size):
        """Consecutive blocks of ``group_size`` coordinates (e.g. RGB channels)."""
        if group_size < 1 or n % group_size:
            raise ValueError(f"group size {group_size} does not divide length {n}")
        return cls(tuple(np.arange(n) // group_size))

    @property
    def num_groups(self):
        return max(self.indices) + 1

    def __len__(self):
        return len(self.indices)

    def check(self, n):
        if len(self.indices) != n:
            raise ValueError(f"partition covers {len(self.indices)} coordinates, vector has {n}")

    def group_max(self, v):
        """Largest ``|v_i|`` inside each group."""
        out = np.zeros(self.num_groups)
        np.maximum.at(out, np.asarray(self.indices), np.abs(v))
        return out


def _partition_for(kind, n):
    return GroupPartition.contiguous(n, kind.group_size)


def norm_value(kind, v):
    kind = NormKind.parse(kind)
    v = np.asarray(v, dtype=np.float64).ravel()
    tag = kind.tag
    if tag is NormTag.LINF:
        return float(np.max(np.abs(v))) if v.size else 0.0
    if tag is NormTag.L2:
        return float(np.linalg.norm(v))
    if tag is NormTag.L1:
        return float(np.sum(np.abs(v)))
    if tag is NormTag.L0:
        return float(np.count_nonzero(np.abs(v) > ZERO_TOL))
    if tag is NormTag.GROUP_L0:
        gmax = _partition_for(kind, v.size).group_max(v)
        return float(np.count_nonzero(gmax > ZERO_TOL))
    return float(np.sum(np.abs(v) ** kind.p))


# -- projections ----------------------------------------------------------------


def project_box(x, r, lower=0.0, upper=1.0):
    """Shift ``r`` so that ``x + r`` lies in the box."""
    x = np.asarray(x, dtype=np.float64)
    return np.clip(x + np.asarray(r, dtype=np.float64), lower, upper) - x


def project_simplex(v):
    """Euclidean projection of a pair onto ``{(a, b) : a, b >= 0, a + b = 1}``."""
    a, b = (float(t) for t in np.asarray(v, dtype=np.float64).ravel())
    shift = (1.0 - a - b) / 2.0
    a, b = a + shift, b + shift
    if a < 0.0:
        return np.array([0.0, 1.0])
    if b < 0.0:
        return np.array([1.0, 0.0])
    return np.array([a, 1.0 - a])


def project_l1_ball(v, radius=1.0):
    """Euclidean projection onto ``{u : ||u||_1 <= radius}`` by sort and threshold."""
    radius = check_positive(radius, "radius")
    v = np.asarray(v, dtype=np.float64)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    mu = np.sort(a.ravel())[::-1]
    cssv = np.cumsum(mu) - radius
    ks = np.arange(1, mu.size + 1)
    rho = np.nonzero(mu * ks > cssv)[0][-1]
    theta = cssv[rho] / (rho + 1.0)
    return np.sign(v) * np.maximum(a - theta, 0.0)


def project_l2_ball(v, radius=1.0):
    radius = check_positive(radius, "radius")
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    return v.copy() if n <= radius else v * (radius / n)


def project_linf_ball(v, radius=1.0):
    radius = check_positive(radius, "radius")
    return np.clip(np.asarray(v, dtype=np.float64), -radius, radius)


# -- proximal operators ---------------------------------------------------------


def _weights(lam):
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(~(lam > 0)) or not np.all(np.isfinite(lam)):
        raise ValueError("lambda must be positive and finite")
    return lam


def prox_l1(v, lam):
    """Soft thresholding."""
    lam = _weights(lam)
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def prox_l2(v, lam):
    """Block soft thresholding: ``(1 - lam / ||v||)_+ v``."""
    lam = check_positive(lam, "lambda")
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n <= lam:
        return np.zeros_like(v)
    return (1.0 - lam / n) * v


def prox_linf(v, lam):
    """``v - lam * P(v / lam)`` with ``P`` the projection onto the unit l1 ball."""
    lam = check_positive(lam, "lambda")
    v = np.asarray(v, dtype=np.float64)
    if np.abs(v).sum() <= lam:
        return np.zeros_like(v)
    return v - lam * project_l1_ball(v / lam, 1.0)


def prox_l0(v, lam):
    """Hard thresholding at ``sqrt(2 lam)``; magnitudes equal to the threshold are zeroed."""
    lam = _weights(lam)
    v = np.asarray(v, dtype=np.float64)
    return np.where(np.abs(v) > np.sqrt(2.0 * lam), v, 0.0)


def prox_group_l0(v, lam, part, rule="norm"):
    """Group hard thresholding.

    With ``rule="norm"`` (default) a group is kept iff ``||v_g||_2 > sqrt(2 lam)``,
    which is the exact minimiser of ``lam * (#non-zero groups) + ||u - v||^2 / 2``.
    ``rule="max"`` keeps a group iff its largest magnitude exceeds
    ``sqrt(2 lam)``; it agrees with the exact rule on singleton groups and
    whenever a group has one dominant entry.  Ties are zeroed in both rules.
    ``lam`` may be a scalar or one weight per group.
    """
    v = np.asarray(v, dtype=np.float64)
    part.check(v.size)
    lam = _weights(lam)
    flat = v.ravel()
    if rule == "norm":
        idx = np.asarray(part.indices)
        energy = np.bincount(idx, weights=flat * flat, minlength=part.num_groups)
        keep = energy > 2.0 * lam
    elif rule == "max":
        keep = part.group_max(flat) > np.sqrt(2.0 * lam)
    else:
        raise ValueError(f"unknown group rule {rule!r}")
    return np.where(keep[np.asarray(part.indices)].reshape(v.shape), v, 0.0)


def _largest_cubic_root(p, q):
    """Largest real root of ``t^3 + p t + q = 0`` (vectorised)."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    out = np.empty(np.broadcast(p, q).shape)
    one = disc > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(one, disc, 0.0))
        out_one = np.cbrt(-q / 2.0 + sq) + np.cbrt(-q / 2.0 - sq)
        pm = np.where(one, -1.0, p)
        rad = 2.0 * np.sqrt(-pm / 3.0)
        arg = np.clip(3.0 * q / (pm * rad), -1.0, 1.0)
        out_three = rad * np.cos(np.arccos(arg) / 3.0)
    np.copyto(out, np.where(one, out_one, out_three))
    return out


def _newton_polish(f, df, t, steps=3):
    for _ in range(steps):
        d = df(t)
        step = np.where(np.abs(d) > 0, f(t) / np.where(d == 0, 1.0, d), 0.0)
        t = t - step
    return t


def _lp_candidate(a, lam, p):
    """Stationary point of ``lam u^p + (u - a)^2 / 2`` on ``u > 0`` (``nan`` if none)."""
    if p == 0.5:
        # s = sqrt(u):  s^3 - a s + lam / 2 = 0
        s = _largest_cubic_root(-a, lam / 2.0)
        s = _newton_polish(lambda t: t ** 3 - a * t + lam / 2.0, lambda t: 3 * t ** 2 - a, s)
        return np.where(s > 0, s ** 2, np.nan)
    # s = u^(1/3):  s^4 - a s + c = 0 with c = 2 lam / 3, solved with Ferrari's
    # resolvent cubic 8 m^3 - 8 c m - a^2 = 0
    c = 2.0 * lam / 3.0
    mres = _largest_cubic_root(-c, -(a ** 2) / 8.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        r2m = np.sqrt(2.0 * mres)
        s = (r2m + np.sqrt(-2.0 * mres + 2.0 * a / r2m)) / 2.0
    s = _newton_polish(lambda t: t ** 4 - a * t + c, lambda t: 4 * t ** 3 - a, s)
    return np.where(s > 0, s ** 3, np.nan)


def prox_lp(v, lam, p):
    """Closed-form prox of ``lam |u|^p`` for ``p`` in ``{1/2, 2/3}``.

    The positive stationary point comes from a cubic (``p = 1/2``) or quartic
    (``p = 2/3``) root formula and is kept only when it beats ``u = 0``.
    """
    if np.isclose(p, 0.5):
        p = 0.5
    elif np.isclose(p, 2.0 / 3.0):
        p = 2.0 / 3.0
    else:
        raise ValueError(f"unsupported exponent p={p}; use 1/2 or 2/3")
    lam = _weights(lam)
    v = np.asarray(v, dtype=np.float64)
    a = np.abs(v)
    lam_b = np.broadcast_to(lam, a.shape)
    u = np.zeros_like(a)
    active = a > 0
    if np.any(active):
        cand = _lp_candidate(a[active], lam_b[active], p)
        ok = np.isfinite(cand) & (cand > 0)
        cand = np.where(ok, cand, 0.0)
        obj_cand = lam_b[active] * cand ** p + (cand - a[active]) ** 2 / 2.0
        obj_zero = a[active] ** 2 / 2.0
        u[active] = np.where(ok & (obj_cand < obj_zero), cand, 0.0)
    return np.sign(v) * u


def prox_group_lp(v, lam, p, part):
    """Group version of :func:`prox_lp` for multi-channel inputs.

    The scalar prox is applied to the largest-magnitude coordinate of each
    group.  When that coordinate is thresholded to zero the whole group is
    cleared; otherwise the other coordinates of the group are left as they are.
    """
    v = np.asarray(v, dtype=np.float64)
    part.check(v.size)
    flat = v.ravel().copy()
    idx = np.asarray(part.indices)
    lam = _weights(lam)
    lam = np.broadcast_to(lam, flat.shape) if lam.size > 1 else np.full(flat.shape, float(lam))
    for g in range(part.num_groups):
        members = np.nonzero(idx == g)[0]
        top = members[np.argmax(np.abs(flat[members]))]
        shrunk = prox_lp(flat[top:top + 1], lam[top], p)[0]
        if shrunk == 0.0:
            flat[members] = 0.0
        else:
            flat[top] = shrunk
    return flat.reshape(v.shape)


def prox_l2_metric(v, lam, metric):
    """``argmin_u lam ||u||_2 + sum_i metric_i (u_i - v_i)^2 / 2`` for a positive diagonal metric.

    The minimiser is ``u_i = metric_i v_i / (metric_i + mu)`` where ``mu = lam / ||u||``
    solves the secular equation ``1 / ||a / (metric + mu)|| = mu / lam`` with
    ``a = metric * v``.  Its left side is close to linear in ``mu``, so
    safeguarded Newton steps converge in a handful of iterations.
    """
    lam = check_positive(lam, "lambda")
    v = np.asarray(v, dtype=np.float64)
    d = np.broadcast_to(_weights(metric), v.shape).ravel()
    a = d * v.ravel()
    a2 = np.dot(a, a)
    if a2 <= lam * lam:
        return np.zeros_like(v)
    # F(mu) = 1 / ||a / (d + mu)|| - mu / lam is positive at 0 and negative at hi
    lo, hi = 0.0, lam * (1.0 / np.sqrt(a2) * (d.max() + 1.0)) / (1.0 - lam / np.sqrt(a2))
    hi = max(hi, 1e-300)
    mu = 0.0
    for _ in range(100):
        c = a / (d + mu)
        n2 = np.dot(c, c)
        f = 1.0 / np.sqrt(n2) - mu / lam
        if f > 0:
            lo = mu
        else:
            hi = mu
        df = np.dot(c * c, 1.0 / (d + mu)) / n2 ** 1.5 - 1.0 / lam
        nxt = mu - f / df if df < 0 else 0.5 * (lo + hi)
        if not lo <= nxt <= hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - mu) <= 1e-15 * max(mu, 1e-300):
            mu = nxt
            break
        mu = nxt
    return (a / (d + mu)).reshape(v.shape)


def prox_linf_metric(v, lam, metric):
    """``argmin_u lam ||u||_inf + sum_i metric_i (u_i - v_i)^2 / 2``.

    The minimiser clips ``v`` at a level ``t`` solving
    ``sum_i metric_i (|v_i| - t)_+ = lam``, which is piecewise linear in ``t``.
    """
    lam = check_positive(lam, "lambda")
    v = np.asarray(v, dtype=np.float64)
    d = np.broadcast_to(_weights(metric), v.shape).ravel()
    a = np.abs(v).ravel()
    if np.dot(d, a) <= lam:
        return np.zeros_like(v)
    order = np.argsort(-a)
    a_s, d_s = a[order], d[order]
    cd = np.cumsum(d_s)
    cda = np.cumsum(d_s * a_s)
    # with the k largest entries clipped: t = (cda_k - lam) / cd_k, valid if t >= a_{k+1}
    t = (cda - lam) / cd
    nxt = np.append(a_s[1:], 0.0)
    k = np.nonzero(t >= nxt)[0][0]
    level = max(t[k], 0.0)
    return np.clip(v, -level, level)


def prox(kind, v, lam, metric=None):
    """Prox of ``lam * ||.||`` for the given norm kind, optionally under a diagonal metric.

    With ``metric`` the operator returns
    ``argmin_u lam * ||u|| + sum_i metric_i (u_i - v_i)^2 / 2``.
    """
    kind = NormKind.parse(kind)
    tag = kind.tag
    v = np.asarray(v, dtype=np.float64)
    if metric is None:
        if tag is NormTag.LINF:
            return prox_linf(v, lam)
        if tag is NormTag.L2:
            return prox_l2(v, lam)
        w = lam
    else:
        if tag is NormTag.LINF:
            return prox_linf_metric(v, lam, metric)
        if tag is NormTag.L2:
            return prox_l2_metric(v, lam, metric)
        metric = np.broadcast_to(_weights(metric), v.shape)
        w = lam / metric
    if tag is NormTag.L1:
        return prox_l1(v, w)
    if tag is NormTag.L0:
        return prox_l0(v, w)
    part = _partition_for(kind, v.size)
    if tag is NormTag.GROUP_L0:
        if metric is None:
            return prox_group_l0(v, lam, part)
        # keep a group iff its metric-weighted energy exceeds 2 lam
        scaled = v * np.sqrt(metric)
        keep = prox_group_l0(scaled, lam, part) != 0
        return np.where(keep, v, 0.0)
    return prox_group_lp(v, w, kind.p, part) if kind.group_size > 1 else prox_lp(v, w, kind.p)


def is_separable(kind):
    """Whether the norm's prox acts coordinate by coordinate (or group by group)."""
    return NormKind.parse(kind).tag not in (NormTag.L2, NormTag.LINF)
