"""Per-step optimized quintic schedules for a declared input lower bound.

Given the certified singular-value range, each step builds an odd quintic
p(x) = a x + b x^3 + c x^5 that lifts the lower bound as far as the
construction allows while the whole image stays inside a symmetric band
[m, 2 - m].  Two regimes:

* steep (ill-conditioned): the band cap binds at the interior maximum and at
  the safety-extended right endpoint, with the linear-to-quintic coefficient
  ratio pinned at 40/81; the interior dip stays above the lower bound.
* oscillatory (well-conditioned): classical four-point equioscillation
  between m and 2 - m at {left endpoint, both interior extrema, right
  endpoint}.

Constraint domains carry a 1% safety margin: every step shifts the certified
range right by 0.01 * lam and non-final steps additionally scale it by 1.01,
insuring against inputs that slightly exceed the certified bounds.  The final
step composes on the conservatively tracked band without forward inflation,
since no further iteration consumes its output.

The per-type error curves E(k) = 1 - (final certified lower bound) feed the
step-count allocator; isotonic repair makes them strictly decreasing and
discretely convex so the allocator's optimality argument holds by
construction.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .ns_engine import CoefficientSchedule, ConfigurationError

SAFETY = 1.01
STEEP_LINEAR_QUINTIC_RATIO = 40.0 / 81.0
ELL_MIN = 1e-7
MAX_STEPS = 16


@dataclass(frozen=True)
class ScalarTrajectory:
    """Per-step (lower, upper) bounds of the scalar iteration, starting at (ell, 1)."""

    bounds: tuple[tuple[float, float], ...]

    @property
    def final_lower(self) -> float:
        return self.bounds[-1][0]

    @property
    def final_upper(self) -> float:
        return self.bounds[-1][1]


@dataclass(frozen=True)
class ErrorCurve:
    """E(k) = 1 - final lower bound, for k in [k_min, k_max]."""

    k_min: int
    k_max: int
    values: tuple[float, ...]

    def at(self, k: int) -> float:
        if not self.k_min <= k <= self.k_max:
            raise KeyError(f"step count {k} outside [{self.k_min}, {self.k_max}]")
        return self.values[k - self.k_min]

    def gain(self, k: int) -> float:
        """Marginal gain E(k) - E(k+1)."""
        return self.at(k) - self.at(k + 1)


def _poly(x, a, b, c):
    return a * x + b * x**3 + c * x**5


def _interior_extrema(a, b, c, lo, hi):
    """Critical points of p(x) = a x + b x^3 + c x^5 inside (lo, hi)."""
    if c == 0.0:
        if b == 0.0:
            return []
        z = -a / (3.0 * b)
        squares = [z] if z > 0.0 else []
    else:
        disc = 9.0 * b * b - 20.0 * c * a
        if disc < 0.0:
            return []
        root = np.sqrt(disc)
        squares = [(-3.0 * b - root) / (10.0 * c), (-3.0 * b + root) / (10.0 * c)]
    out = []
    for z in squares:
        if z > 0.0:
            t = float(np.sqrt(z))
            if lo < t < hi:
                out.append(t)
    return sorted(out)


def _image(a, b, c, lo, hi):
    xs = [lo, hi] + _interior_extrema(a, b, c, lo, hi)
    vals = [_poly(x, a, b, c) for x in xs]
    return min(vals), max(vals)


def _valid(a, b, c, m, lo, hi) -> bool:
    """Sanity-check a candidate step polynomial against its band."""
    if not np.all(np.isfinite([a, b, c, m])):
        return False
    if not 0.0 < m < 1.0 or a <= 0.0:
        return False
    vmin, vmax = _image(a, b, c, lo, hi)
    slack = 1e-7 * max(1.0, abs(m)) + 1e-9
    return vmin >= m - slack and vmax <= 2.0 - m + slack


def _solve_steep(lo, hi):
    """Cap at the interior max and at hi, ratio a/c pinned; returns (a,b,c,m) or None."""

    def coeffs(t1):
        mat = np.array([
            [lo, lo**3, lo**5, -1.0],
            [t1, t1**3, t1**5, 1.0],
            [1.0, 3.0 * t1**2, 5.0 * t1**4, 0.0],
            [1.0, 0.0, -STEEP_LINEAR_QUINTIC_RATIO, 0.0],
        ])
        return np.linalg.solve(mat, np.array([0.0, 2.0, 0.0, 0.0]))

    ts = np.linspace(lo, hi, 50)[1:-1]
    mats = np.zeros((len(ts), 4, 4))
    mats[:, 0] = [lo, lo**3, lo**5, -1.0]
    mats[:, 1, 0], mats[:, 1, 1], mats[:, 1, 2], mats[:, 1, 3] = ts, ts**3, ts**5, 1.0
    mats[:, 2, 0], mats[:, 2, 1], mats[:, 2, 2] = 1.0, 3.0 * ts**2, 5.0 * ts**4
    mats[:, 3, 0], mats[:, 3, 2] = 1.0, -STEEP_LINEAR_QUINTIC_RATIO
    rhs = np.broadcast_to(np.array([0.0, 2.0, 0.0, 0.0]), (len(ts), 4))
    try:
        sols = np.linalg.solve(mats, rhs[:, :, None])[:, :, 0]
    except np.linalg.LinAlgError:
        return None
    gaps = _poly(hi, sols[:, 0], sols[:, 1], sols[:, 2]) - (2.0 - sols[:, 3])
    sign = np.sign(gaps)
    flips = np.nonzero(sign[:-1] * sign[1:] < 0)[0]

    def gap(t1):
        try:
            a, b, c, m = coeffs(t1)
        except np.linalg.LinAlgError:
            return np.nan
        return _poly(hi, a, b, c) - (2.0 - m)

    for i in flips:
        try:
            t1 = brentq(gap, ts[i], ts[i + 1], xtol=1e-15, rtol=8.9e-16)
            a, b, c, m = coeffs(t1)
        except (ValueError, np.linalg.LinAlgError):
            continue
        extrema = _interior_extrema(a, b, c, lo, hi)
        dips = [_poly(t, a, b, c) for t in extrema]
        # the steep branch is only valid while the dip clears the lower bound
        if dips and min(dips) <= m:
            continue
        if _valid(a, b, c, m, lo, hi):
            return float(a), float(b), float(c), float(m)
    return None


def _graded_row(x, mu):
    w = x * x - mu
    return np.array([x, x * w, x * w * w])


def _graded_deriv(x, mu):
    w = x * x - mu
    return np.array([1.0, 3.0 * x * x - mu, w * (5.0 * x * x - mu)])


def _solve_equioscillation(lo, hi):
    """Four-point alternation m, 2-m, m, 2-m at lo < t1 < t2 < hi.

    Solved in a graded odd basis centered on the interval, which stays well
    conditioned as the interval tightens around 1.
    """
    mu = (0.5 * (lo + hi)) ** 2

    def band(t1, t2):
        mat = np.zeros((4, 4))
        mat[0, :3], mat[0, 3] = _graded_row(lo, mu), -1.0
        mat[1, :3], mat[1, 3] = _graded_row(t1, mu), 1.0
        mat[2, :3], mat[2, 3] = _graded_row(t2, mu), -1.0
        mat[3, :3], mat[3, 3] = _graded_row(hi, mu), 1.0
        return np.linalg.solve(mat, np.array([0.0, 2.0, 0.0, 2.0]))

    def inner_t1(t2):
        def slope(t1):
            b0, b1, b2, _ = band(t1, t2)
            return float(np.dot(_graded_deriv(t1, mu), [b0, b1, b2]))

        span = t2 - lo
        lo1, hi1 = lo + 1e-3 * span, t2 - 1e-3 * span
        try:
            s0, s1 = slope(lo1), slope(hi1)
        except np.linalg.LinAlgError:
            return None
        if not np.isfinite(s0) or not np.isfinite(s1) or s0 * s1 > 0:
            return None
        return brentq(slope, lo1, hi1, xtol=1e-15, rtol=8.9e-16)

    def outer(t2):
        t1 = inner_t1(t2)
        if t1 is None:
            return np.nan
        b0, b1, b2, _ = band(t1, t2)
        return float(np.dot(_graded_deriv(t2, mu), [b0, b1, b2]))

    ts = np.linspace(lo, hi, 26)[1:-1]
    vals = np.array([outer(t) for t in ts])
    for i in range(len(ts) - 1):
        v0, v1 = vals[i], vals[i + 1]
        if np.isnan(v0) or np.isnan(v1) or v0 * v1 > 0:
            continue
        try:
            t2 = ts[i] if v0 == 0.0 else brentq(outer, ts[i], ts[i + 1], xtol=1e-15, rtol=8.9e-16)
        except (ValueError, np.linalg.LinAlgError):
            continue
        t1 = inner_t1(t2)
        if t1 is None:
            continue
        b0, b1, b2, m = band(t1, t2)
        a = b0 - mu * b1 + mu * mu * b2
        b = b1 - 2.0 * mu * b2
        c = b2
        if _valid(a, b, c, m, lo, hi):
            return float(a), float(b), float(c), float(m)
    return None


def _tail_polynomial(lo, hi):
    """Fixed-point fallback for vanishingly tight bands: the classical quintic
    centered on the band, whose fixed point at the center is super-attracting."""
    ctr = 0.5 * (lo + hi)
    a = 15.0 / (8.0 * ctr)
    b = -10.0 / (8.0 * ctr**3)
    c = 3.0 / (8.0 * ctr**5)
    vmin, _ = _image(a, b, c, lo, hi)
    return a, b, c, float(min(vmin, 1.0 - 1e-16))


def _compose_step(lo, hi):
    """Best step polynomial for the constraint domain [lo, hi]."""
    if hi - lo > 1e-5:
        steep = _solve_steep(lo, hi)
        if steep is not None:
            return steep
        equi = _solve_equioscillation(lo, hi)
        if equi is not None:
            return equi
    return _tail_polynomial(lo, hi)


def compose(ell: float, k: int) -> CoefficientSchedule:
    """Build a k-step schedule tuned to inputs with lower bound ell.

    Deterministic: identical (ell, k) produce identical schedules.
    """
    if not ELL_MIN <= ell < 1.0:
        raise ConfigurationError(f"ell must be in [{ELL_MIN}, 1), got {ell}")
    if not 1 <= k <= MAX_STEPS:
        raise ConfigurationError(f"step count must be in [1, {MAX_STEPS}], got {k}")
    triplets = []
    low, up = float(ell), 1.0  # certified range tracked through the actual values
    band_low = float(ell)  # conservative symmetric-band lower bound, normalized
    for step in range(k):
        lam = low / up
        if step == k - 1:
            lo, hi = band_low, 1.0
        else:
            shift = (SAFETY - 1.0) * lam
            lo, hi = SAFETY * (lam + shift), SAFETY * (1.0 + shift)
        a, b, c, m = _compose_step(lo, hi)
        triplets.append((a / up, b / up**3, c / up**5))
        # the step polynomial maps normalized inputs to next-step absolute values
        low, up = _poly(lam, a, b, c), 2.0 - m
        band_low = m / (2.0 - m)
    return CoefficientSchedule.from_floats(triplets, declared_ell=ell)


def simulate(ell: float, schedule: CoefficientSchedule) -> ScalarTrajectory:
    """Exact interval trajectory of the scalar iteration starting at (ell, 1)."""
    if not np.isfinite(ell) or not 0.0 < ell < 1.0:
        raise ConfigurationError(f"ell must be in (0, 1), got {ell}")
    lo, hi = float(ell), 1.0
    bounds = [(lo, hi)]
    for a, b, c in schedule.triplets:
        lo, hi = _image(a, b, c, lo, hi)
        bounds.append((lo, hi))
    return ScalarTrajectory(bounds=tuple(bounds))


def _isotonic_nonincreasing(values):
    """Pool-adjacent-violators for a non-increasing sequence (mean pooling)."""
    blocks = [[v, 1] for v in values]
    out = []
    for blk in blocks:
        out.append(blk)
        while len(out) > 1 and out[-2][0] < out[-1][0]:
            s1, n1 = out[-2]
            s2, n2 = out[-1]
            merged = [(s1 * n1 + s2 * n2) / (n1 + n2), n1 + n2]
            out = out[:-2] + [merged]
    result = []
    for v, n in out:
        result.extend([v] * n)
    return result


def error_curve(ell: float, k_min: int, k_max: int) -> ErrorCurve:
    """Projected error E(k) for k in [k_min, k_max], repaired to be strictly
    decreasing with non-increasing marginal gains."""
    if k_min > k_max:
        raise ConfigurationError(f"k_min {k_min} exceeds k_max {k_max}")
    if k_min < 1:
        raise ConfigurationError("k_min must be >= 1")
    raw = []
    for k in range(k_min, k_max + 1):
        schedule = compose(ell, k)
        traj = simulate(ell, schedule)
        raw.append(max(1.0 - traj.final_lower, 0.0))
    if len(raw) == 1:
        return ErrorCurve(k_min=k_min, k_max=k_max, values=(float(raw[0]),))
    gains = _isotonic_nonincreasing([raw[i] - raw[i + 1] for i in range(len(raw) - 1)])
    # strictly decreasing floor so E stays positive and strictly monotone even
    # when the raw curve has already bottomed out at float precision
    eps = 1e-13
    gains = [max(g, eps * 0.5**j) for j, g in enumerate(gains)]
    head = max(raw[0], sum(gains) + eps)
    values = [float(head)]
    for g in gains:
        values.append(values[-1] - g)
    return ErrorCurve(k_min=k_min, k_max=k_max, values=tuple(values))


def quantize_ell(ell: float, significant_digits: int = 4) -> float:
    """Round ell to a fixed number of significant digits (cache key grain)."""
    if ell <= 0.0:
        raise ConfigurationError("ell must be positive")
    exponent = np.floor(np.log10(ell))
    scale = 10.0 ** (significant_digits - 1 - exponent)
    return float(np.round(ell * scale) / scale)


class ScheduleCache:
    """Memoized composition keyed by (steps, quantized ell).

    Reads are lock-free per CPython dict semantics; inserts are serialized.
    """

    def __init__(self, significant_digits: int = 4):
        self.significant_digits = significant_digits
        self._store: dict[tuple[int, float], CoefficientSchedule] = {}
        self._lock = threading.Lock()

    def get(self, ell: float, k: int) -> CoefficientSchedule:
        key = (k, quantize_ell(ell, self.significant_digits))
        hit = self._store.get(key)
        if hit is not None:
            return hit
        schedule = compose(key[1], k)
        with self._lock:
            return self._store.setdefault(key, schedule)

    def __len__(self) -> int:
        return len(self._store)
