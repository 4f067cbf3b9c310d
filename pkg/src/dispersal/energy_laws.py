"""Convex energy densities, their conjugates and the coupled two-species graph.

Every density is defined on the half line r >= 0 and extended by zero to
r <= 0.  The conjugate is taken over r >= 0 only, so it vanishes for q <= 0
and stays finite for the built-in families.  All maps are vectorised over
numpy arrays; spatially varying parameters are arrays indexed by node.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

INF = np.inf


class DomainError(ValueError):
    """Raised when an argument lies outside the effective domain of a map."""


class Interval(NamedTuple):
    lo: float
    hi: float


class DensitySet(NamedTuple):
    """Descriptor of the density set attached to a potential pair.

    ``kind`` is ``"first_only"`` (second density is zero), ``"second_only"``
    or ``"simplex"`` (any nonnegative split whose total lies in ``total``).
    """

    kind: str
    total: Interval


class GraphPoint(NamedTuple):
    r: tuple[float, float]
    d: tuple[float, float]


def _pick(value, x):
    if x is None or np.ndim(value) == 0:
        return value
    return np.asarray(value)[x]


class EnergyLaw:
    """Base class.  Subclasses implement the scalar maps on arrays."""

    family: str = ""

    # -- interface implemented by families ---------------------------------
    def beta(self, r, x=None):
        raise NotImplementedError

    def conjugate(self, q, x=None):
        raise NotImplementedError

    def subdiff(self, r, x=None):
        """Return (lo, hi) arrays describing the subdifferential at r."""
        raise NotImplementedError

    def conjugate_subdiff(self, q, x=None):
        """Return (lo, hi): the set of maximisers r >= 0 of q*r - beta(r)."""
        raise NotImplementedError

    def prox_conjugate(self, s, q, x=None):
        raise NotImplementedError

    def domain_sup(self, x=None):
        """Upper end of the effective domain (inf when unbounded)."""
        return INF

    @property
    def coercivity(self) -> tuple[float, float]:
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError

    # -- shared helpers -------------------------------------------------------
    def project_feasible(self, r1, r2, x=None):
        """Euclidean projection of density pairs onto the effective domain."""
        r1 = np.maximum(np.asarray(r1, dtype=float), 0.0)
        r2 = np.maximum(np.asarray(r2, dtype=float), 0.0)
        cap = self.domain_sup(x)
        if np.all(np.isinf(cap)):
            return r1, r2
        cap = np.broadcast_to(cap, r1.shape)
        over = r1 + r2 > cap
        if np.any(over):
            t = np.clip(0.5 * (r1 - r2 + cap), 0.0, cap)
            r1 = np.where(over, t, r1)
            r2 = np.where(over, cap - t, r2)
        return r1, r2


@dataclass(frozen=True, eq=False)
class PorousMedium(EnergyLaw):
    """beta(r) = r^(m+1)/(m+1) with exponent m >= 1 (scalar or nodal field)."""

    m: float | np.ndarray = 1.0
    family: str = field(default="porous_medium", init=False)

    def __post_init__(self):
        if np.any(np.asarray(self.m) < 1.0) or not np.all(np.isfinite(self.m)):
            raise DomainError("porous-medium exponent must satisfy m >= 1")

    def beta(self, r, x=None):
        r = np.asarray(r, dtype=float)
        m = _pick(self.m, x)
        rp = np.maximum(r, 0.0)
        return rp ** (m + 1.0) / (m + 1.0)

    def conjugate(self, q, x=None):
        q = np.asarray(q, dtype=float)
        m = _pick(self.m, x)
        qp = np.maximum(q, 0.0)
        return m / (m + 1.0) * qp ** ((m + 1.0) / m)

    def subdiff(self, r, x=None):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("subdifferential requested at negative density")
        m = _pick(self.m, x)
        slope = r**m
        lo = np.where(r > 0, slope, -INF)
        return lo, slope * np.ones_like(r)

    def conjugate_subdiff(self, q, x=None):
        q = np.asarray(q, dtype=float)
        m = _pick(self.m, x)
        v = np.maximum(q, 0.0) ** (1.0 / m)
        return v, v

    def prox_conjugate(self, s, q, x=None):
        q = np.asarray(q, dtype=float)
        if np.ndim(self.m) == 0 and self.m == 1.0:
            return np.where(q > 0, q / (1.0 + s), q)
        m = np.broadcast_to(np.asarray(_pick(self.m, x), dtype=float), q.shape)
        s = np.broadcast_to(np.asarray(s, dtype=float), q.shape)
        out = q.copy()
        pos = q > 0
        if not np.any(pos):
            return out
        qp, mp, sp = q[pos], m[pos], s[pos]
        linear = mp == 1.0
        a = np.empty_like(qp)
        a[linear] = qp[linear] / (1.0 + sp[linear])
        nl = ~linear
        if np.any(nl):
            # Positive root r of r^m + s r = q; the prox is a = r^m.
            # Newton from above is monotone for this convex increasing map.
            qn, mn, sn = qp[nl], mp[nl], sp[nl]
            r = np.minimum(qn / sn, qn ** (1.0 / mn))
            for _ in range(100):
                f = r**mn + sn * r - qn
                step = f / (mn * r ** (mn - 1.0) + sn)
                r = r - step
                if np.all(np.abs(step) <= 1e-15 * np.maximum(r, 1e-300)):
                    break
            a[nl] = r**mn
        out[pos] = a
        return out

    @property
    def coercivity(self):
        if np.all(np.asarray(self.m) == 1.0):
            return 0.5, 0.0
        return 1.0 / (float(np.max(self.m)) + 1.0), 1.0

    def to_config(self):
        return {"family": self.family, "params": {"m": _jsonable(self.m)}}


@dataclass(frozen=True, eq=False)
class CrowdMotion(EnergyLaw):
    """Hard congestion: beta is the indicator of [0, cap]."""

    cap: float | np.ndarray = 1.0
    family: str = field(default="crowd_motion", init=False)

    def __post_init__(self):
        if np.any(np.asarray(self.cap) <= 0) or not np.all(np.isfinite(self.cap)):
            raise DomainError("crowd-motion capacity must be positive and finite")

    def beta(self, r, x=None):
        r = np.asarray(r, dtype=float)
        cap = _pick(self.cap, x)
        return np.where(r > cap, INF, 0.0)

    def conjugate(self, q, x=None):
        q = np.asarray(q, dtype=float)
        return _pick(self.cap, x) * np.maximum(q, 0.0)

    def subdiff(self, r, x=None):
        r = np.asarray(r, dtype=float)
        cap = np.broadcast_to(_pick(self.cap, x), r.shape)
        if np.any(r < 0) or np.any(r > cap):
            raise DomainError("density outside [0, cap]")
        lo = np.where(r == 0, -INF, 0.0)
        hi = np.where(r == cap, INF, 0.0)
        return lo, hi

    def conjugate_subdiff(self, q, x=None):
        q = np.asarray(q, dtype=float)
        cap = np.broadcast_to(_pick(self.cap, x), q.shape)
        lo = np.where(q > 0, cap, 0.0)
        hi = np.where(q >= 0, cap, 0.0)
        return lo, hi

    def prox_conjugate(self, s, q, x=None):
        q = np.asarray(q, dtype=float)
        shift = np.asarray(s, dtype=float) * _pick(self.cap, x)
        return np.where(q < 0, q, np.maximum(q - shift, 0.0))

    def domain_sup(self, x=None):
        return _pick(self.cap, x)

    @property
    def coercivity(self):
        return 1.0, float(np.max(self.cap))

    def to_config(self):
        return {"family": self.family, "params": {"cap": _jsonable(self.cap)}}


@dataclass(frozen=True, eq=False)
class QuadraticShifted(EnergyLaw):
    """beta(r) = r^2/2 + c ((r - M)^+)^2, a quadratic that stiffens above M."""

    c: float | np.ndarray = 1.0
    M: float | np.ndarray = 0.0
    family: str = field(default="quadratic_shifted", init=False)

    def __post_init__(self):
        if np.any(np.asarray(self.c) <= 0) or np.any(np.asarray(self.M) < 0):
            raise DomainError("quadratic-shifted law needs c > 0 and M >= 0")

    def beta(self, r, x=None):
        r = np.maximum(np.asarray(r, dtype=float), 0.0)
        c, M = _pick(self.c, x), _pick(self.M, x)
        return 0.5 * r * r + c * np.maximum(r - M, 0.0) ** 2

    def _slope_inverse(self, q, c, M):
        # maximiser of q r - beta(r) over r >= 0
        return np.where(q <= 0, 0.0, np.where(q <= M, q, (q + 2 * c * M) / (1 + 2 * c)))

    def conjugate(self, q, x=None):
        q = np.asarray(q, dtype=float)
        c, M = _pick(self.c, x), _pick(self.M, x)
        r = self._slope_inverse(q, c, M)
        return q * r - self.beta(r, x)

    def subdiff(self, r, x=None):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0):
            raise DomainError("subdifferential requested at negative density")
        c, M = _pick(self.c, x), _pick(self.M, x)
        slope = r + 2 * c * np.maximum(r - M, 0.0)
        return np.where(r > 0, slope, -INF), slope * np.ones_like(r)

    def conjugate_subdiff(self, q, x=None):
        q = np.asarray(q, dtype=float)
        r = self._slope_inverse(q, _pick(self.c, x), _pick(self.M, x))
        return r, r

    def prox_conjugate(self, s, q, x=None):
        q = np.asarray(q, dtype=float)
        s = np.asarray(s, dtype=float)
        c, M = _pick(self.c, x), _pick(self.M, x)
        low = q / (1 + s)
        high = (q * (1 + 2 * c) - 2 * c * s * M) / (1 + 2 * c + s)
        return np.where(q <= 0, q, np.where(low <= M, low, high))

    @property
    def coercivity(self):
        return 0.5 + float(np.min(self.c)), float(np.max(self.M))

    def to_config(self):
        return {"family": self.family, "params": {"c": _jsonable(self.c), "M": _jsonable(self.M)}}


@dataclass(frozen=True, eq=False)
class Tabulated(EnergyLaw):
    """Piecewise-linear convex density through sample points.

    The first sample must be (0, 0).  Beyond the last sample the density is
    either +inf (``extrapolation="infinite"``) or continued with the last
    slope (``"linear"``); in the latter case the conjugate is infinite past
    that slope and evaluating it there raises :class:`DomainError`.
    """

    r_samples: np.ndarray = None
    beta_samples: np.ndarray = None
    extrapolation: str = "infinite"
    family: str = field(default="tabulated", init=False)

    def __post_init__(self):
        r = np.asarray(self.r_samples, dtype=float)
        b = np.asarray(self.beta_samples, dtype=float)
        if r.ndim != 1 or r.shape != b.shape or r.size < 2:
            raise DomainError("tabulated law needs matching 1-D sample arrays")
        if r[0] != 0.0 or b[0] != 0.0:
            raise DomainError("tabulated law must start at (0, 0)")
        if np.any(np.diff(r) <= 0):
            raise DomainError("tabulated sample points must increase")
        slopes = np.diff(b) / np.diff(r)
        if slopes[0] < 0 or np.any(np.diff(slopes) < -1e-12 * (1 + np.abs(slopes[1:]))):
            raise DomainError("tabulated samples are not convex and nondecreasing")
        if self.extrapolation not in ("infinite", "linear"):
            raise DomainError("extrapolation must be 'infinite' or 'linear'")
        object.__setattr__(self, "r_samples", r)
        object.__setattr__(self, "beta_samples", b)
        object.__setattr__(self, "_slopes", slopes)

    @property
    def slopes(self):
        return self._slopes

    def beta(self, r, x=None):
        r = np.asarray(r, dtype=float)
        rs, bs = self.r_samples, self.beta_samples
        val = np.interp(np.maximum(r, 0.0), rs, bs)
        beyond = r > rs[-1]
        if self.extrapolation == "infinite":
            return np.where(beyond, INF, val)
        return np.where(beyond, bs[-1] + self._slopes[-1] * (r - rs[-1]), val)

    def conjugate(self, q, x=None):
        q = np.asarray(q, dtype=float)
        if self.extrapolation == "linear" and np.any(q > self._slopes[-1]):
            raise DomainError("conjugate is infinite beyond the last tabulated slope")
        vals = q[..., None] * self.r_samples - self.beta_samples
        return vals.max(axis=-1)

    def subdiff(self, r, x=None):
        r = np.asarray(r, dtype=float)
        rs, sl = self.r_samples, self._slopes
        if np.any(r < 0) or (self.extrapolation == "infinite" and np.any(r > rs[-1])):
            raise DomainError("density outside the tabulated domain")
        left = np.concatenate(([-INF], sl))
        right = np.concatenate((sl, [INF if self.extrapolation == "infinite" else sl[-1]]))
        j = np.searchsorted(rs, r, side="left")
        on_node = (j < rs.size) & (rs[np.minimum(j, rs.size - 1)] == r)
        jc = np.minimum(j, rs.size - 1)
        seg = np.clip(np.searchsorted(rs, r, side="right") - 1, 0, sl.size - 1)
        lo = np.where(on_node, left[jc], sl[seg])
        hi = np.where(on_node, right[jc], sl[seg])
        return lo, hi

    def conjugate_subdiff(self, q, x=None):
        q = np.asarray(q, dtype=float)
        if self.extrapolation == "linear" and np.any(q > self._slopes[-1]):
            raise DomainError("conjugate is infinite beyond the last tabulated slope")
        rs, sl = self.r_samples, self._slopes
        lo_idx = np.searchsorted(sl, q, side="left")
        hi_idx = np.searchsorted(sl, q, side="right")
        return rs[lo_idx], rs[hi_idx]

    def prox_conjugate(self, s, q, x=None):
        # conjugate is piecewise linear with slope r_j on [slope_{j-1}, slope_j]
        q = np.asarray(q, dtype=float)
        s = np.broadcast_to(np.asarray(s, dtype=float), q.shape)[..., None]
        rs, sl = self.r_samples, self._slopes
        top = INF if self.extrapolation == "infinite" else sl[-1]
        lower = np.concatenate(([-INF], sl))
        upper = np.concatenate((sl, [top]))
        cand = np.clip(q[..., None] - s * rs, lower, upper)
        obj = (cand - q[..., None]) ** 2 / (2 * s) + self.conjugate(cand)
        best = np.argmin(obj, axis=-1)
        return np.take_along_axis(cand, best[..., None], axis=-1)[..., 0]

    def domain_sup(self, x=None):
        return self.r_samples[-1] if self.extrapolation == "infinite" else INF

    @property
    def coercivity(self):
        if self.extrapolation == "infinite":
            return 1.0, float(self.r_samples[-1])
        return 0.0, 0.0

    def to_config(self):
        return {
            "family": self.family,
            "params": {
                "r": self.r_samples.tolist(),
                "beta": self.beta_samples.tolist(),
                "extrapolation": self.extrapolation,
            },
        }


def _jsonable(v):
    return v.tolist() if isinstance(v, np.ndarray) else float(v)


_FAMILIES = {
    "porous_medium": (PorousMedium, {"m"}),
    "crowd_motion": (CrowdMotion, {"cap"}),
    "quadratic_shifted": (QuadraticShifted, {"c", "M"}),
    "quadratic": (PorousMedium, set()),
}


def law_from_config(spec: dict, n_nodes: int | None = None) -> EnergyLaw:
    """Build a law from ``{"family": ..., "params": {...}}``.

    List-valued parameters are accepted as nodal fields when their length
    matches ``n_nodes``.
    """
    if not isinstance(spec, dict) or "family" not in spec:
        raise DomainError("law spec needs a 'family' entry")
    family = spec["family"]
    params = dict(spec.get("params", {}))
    if family == "tabulated":
        return Tabulated(
            np.asarray(params.get("r"), dtype=float),
            np.asarray(params.get("beta"), dtype=float),
            params.get("extrapolation", "infinite"),
        )
    if family not in _FAMILIES:
        raise DomainError(f"unknown law family {family!r}")
    cls, allowed = _FAMILIES[family]
    if family == "quadratic":
        return PorousMedium(1.0)
    unknown = set(params) - allowed
    if unknown:
        raise DomainError(f"unknown parameters for {family}: {sorted(unknown)}")
    kwargs = {}
    for key, val in params.items():
        if isinstance(val, (list, tuple)):
            arr = np.asarray(val, dtype=float)
            if n_nodes is not None and arr.size != n_nodes:
                raise DomainError(f"nodal parameter {key} has {arr.size} entries, expected {n_nodes}")
            kwargs[key] = arr
        else:
            kwargs[key] = float(val)
    return cls(**kwargs)


# -- scalar/array operations --------------------------------------------------

def eval_beta(law: EnergyLaw, x, r):
    return law.beta(r, x)


def eval_conjugate(law: EnergyLaw, x, q):
    return law.conjugate(q, x)


def subdiff_interval(law: EnergyLaw, x, r) -> Interval:
    lo, hi = law.subdiff(r, x)
    if np.ndim(lo) == 0:
        return Interval(float(lo), float(hi))
    return Interval(lo, hi)


def prox_conjugate(law: EnergyLaw, x, s, q):
    if np.any(np.asarray(s) <= 0):
        raise DomainError("prox step must be positive")
    return law.prox_conjugate(s, q, x)


def coupled_objective(law, x, s, q1, q2, a1, a2):
    return ((a1 - q1) ** 2 + (a2 - q2) ** 2) / (2 * s) + law.conjugate(np.maximum(a1, a2), x)


def prox_coupled(law: EnergyLaw, x, s, q1, q2):
    """Minimise |a - q|^2/(2s) + beta*(max(a1, a2)) over pairs a.

    Candidates: only the first entry moves, only the second moves, or both
    are tied at a common value.  The lowest feasible objective wins; near
    ties go to the tied candidate.
    """
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    p1 = law.prox_conjugate(s, q1, x)
    p2 = law.prox_conjugate(s, q2, x)
    t = law.prox_conjugate(0.5 * s, 0.5 * (q1 + q2), x)

    obj_t = ((t - q1) ** 2 + (t - q2) ** 2) / (2 * s) + law.conjugate(t, x)
    obj_1 = np.where(q2 <= p1, (p1 - q1) ** 2 / (2 * s) + law.conjugate(p1, x), INF)
    obj_2 = np.where(q1 <= p2, (p2 - q2) ** 2 / (2 * s) + law.conjugate(p2, x), INF)

    slack = 1e-14 * (1.0 + np.abs(obj_t))
    use1 = obj_1 < obj_t - slack
    use2 = obj_2 < np.where(use1, obj_1, obj_t) - slack
    a1 = np.where(use2, q1, np.where(use1, p1, t))
    a2 = np.where(use2, p2, np.where(use1, q2, t))
    return a1, a2


def select_density(law: EnergyLaw, x, d) -> DensitySet:
    d1, d2 = float(d[0]), float(d[1])
    lo, hi = law.conjugate_subdiff(max(d1, d2), x)
    total = Interval(float(lo), float(hi))
    if d1 < d2:
        return DensitySet("second_only", total)
    if d1 > d2:
        return DensitySet("first_only", total)
    return DensitySet("simplex", total)


@dataclass(frozen=True)
class MembershipReport:
    member: bool
    fenchel_residual: float
    fenchel: bool
    argmax: bool
    complementarity: bool
    max_potential: bool

    @property
    def agree(self) -> bool:
        return self.fenchel == self.argmax == self.complementarity == self.max_potential

    def __bool__(self):
        return self.member


def fenchel_residual(law, x, r1, r2, d1, d2):
    """beta(r1 + r2) + beta*(max d) - r.d, vectorised."""
    total = np.asarray(r1, dtype=float) + np.asarray(r2, dtype=float)
    return law.beta(total, x) + law.conjugate(np.maximum(d1, d2), x) - (r1 * d1 + r2 * d2)


def _in_interval(v, lo, hi, tol):
    return (v >= lo - tol) and (v <= hi + tol)


def coupled_membership(law: EnergyLaw, x, r, d, tol: float = 1e-9,
                       grid_max: float | None = None, grid_points: int = 301) -> MembershipReport:
    """Test whether (r, d) lies on the coupled graph.

    The verdict uses the Fenchel residual.  Three further characterisations
    are evaluated for cross-checking: a brute-force argmax over a square grid
    of density pairs, the complementarity form and the max-potential form
    written with the indicator of the half line.
    """
    r1, r2 = float(r[0]), float(r[1])
    d1, d2 = float(d[0]), float(d[1])
    dmax = max(d1, d2)
    nonneg = r1 >= -tol and r2 >= -tol
    # densities overshooting a finite domain edge by at most tol are pulled back onto it
    rr1, rr2 = max(r1, 0.0), max(r2, 0.0)
    dom_s = float(law.domain_sup(x))
    over = rr1 + rr2 - dom_s
    if 0.0 < over <= tol:
        shrink = dom_s / (rr1 + rr2)
        rr1, rr2 = rr1 * shrink, rr2 * shrink
    if nonneg:
        # rescaled totals can land one ulp past the edge, so beta is taken at the clipped total
        res = float(law.beta(min(rr1 + rr2, dom_s), x) + law.conjugate(dmax, x) - (rr1 * d1 + rr2 * d2))
        res += abs(dmax) * max(over, 0.0)
    else:
        res = INF
    fenchel_ok = bool(nonneg and res <= tol)

    # argmax form
    if grid_max is None:
        # the maximising total lies in the conjugate subdifferential at max d
        reach = float(law.conjugate_subdiff(dmax, x)[1])
        grid_max = 2.0 * max(1.0, r1 + r2, reach if np.isfinite(reach) else 0.0)
        sup = float(law.domain_sup(x))
        if np.isfinite(sup):
            grid_max = max(grid_max, sup)
    s = np.linspace(0.0, grid_max, grid_points)
    dom = law.domain_sup(x)
    if np.isfinite(dom):
        s = np.union1d(s, [float(dom)])
    S1, S2 = np.meshgrid(s, s, indexing="ij")
    with np.errstate(invalid="ignore"):
        vals = S1 * d1 + S2 * d2 - law.beta(S1 + S2, x)
    grid_best = float(np.max(vals))
    if nonneg:
        at_r = float(rr1 * d1 + rr2 * d2 - law.beta(min(rr1 + rr2, dom_s), x))
        argmax_ok = bool(np.isfinite(at_r) and at_r >= grid_best - tol)
    else:
        argmax_ok = False

    # complementarity and max-potential forms
    total = max(r1, 0.0) + max(r2, 0.0)
    if nonneg and total <= dom_s + tol:
        lo, hi = law.subdiff(min(total, dom_s), x)
        lo, hi = float(lo), float(hi)
        if total <= tol:
            lo = -INF
        in_graph = _in_interval(dmax, lo, hi, tol)
        comp = in_graph and r1 * max(d2 - d1, 0.0) <= tol and r2 * max(d1 - d2, 0.0) <= tol
        # d_k - max(d) must lie in the normal cone of [0, inf) at r_k
        cone = all((rk <= tol) or (dk - dmax >= -tol) for rk, dk in ((r1, d1), (r2, d2)))
        maxpot = in_graph and cone
    else:
        comp = maxpot = False

    return MembershipReport(
        member=fenchel_ok,
        fenchel_residual=res,
        fenchel=fenchel_ok,
        argmax=argmax_ok,
        complementarity=bool(comp),
        max_potential=bool(maxpot),
    )
