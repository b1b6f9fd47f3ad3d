"""Rate-distortion bounds for an exponential magnitude source under absolute error.

All rates are in bits per parameter and distortions in magnitude units.  The
closed forms are written so that they stay accurate at high rate, where the
naive expressions lose most of their significant digits to cancellation.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numba
import numpy as np
from scipy.signal import lfilter

from coinfer.errors import DomainError

LN2 = math.log(2.0)


def _check_positive(name: str, value: float) -> None:
    if not (value > 0) or not math.isfinite(value):
        raise DomainError(f"{name} must be a positive finite number, got {value!r}")


def _sqrt1p_minus_1(x: float) -> float:
    # sqrt(1 + x) - 1 without cancellation for small x
    return x / (math.sqrt(1.0 + x) + 1.0)


def d_lower(rate: float, lam: float) -> float:
    """Shannon-type lower bound on D(R): ``1 / (lam * 2**(R + 1))``."""
    _check_positive("lambda", lam)
    if not rate >= 0:
        raise DomainError(f"rate must be non-negative, got {rate!r}")
    return 1.0 / (lam * 2.0 ** (rate + 1.0))


def r_lower(distortion: float, lam: float) -> float:
    """Lower bound on R(D), ``-log2(2 lam D)``, clamped at zero."""
    _check_positive("distortion", distortion)
    _check_positive("lambda", lam)
    return max(0.0, -math.log2(2.0 * lam * distortion))


def r_upper(distortion: float, lam: float) -> float:
    """Test-channel upper bound on R(D) from additive Laplacian noise."""
    _check_positive("distortion", distortion)
    _check_positive("lambda", lam)
    x = lam * distortion
    return math.log2(1.0 / x + x / (x + 1.0))


def d_upper(rate: float, lam: float) -> float:
    """Upper bound on D(R); the inverse of :func:`r_upper`.

    Has a pole at ``rate = 0`` so the rate must be strictly positive.
    """
    _check_positive("lambda", lam)
    if not rate > 0 or not math.isfinite(rate):
        raise DomainError(f"d_upper needs rate > 0 (pole at R = 0), got {rate!r}")
    u = math.expm1(rate * LN2)  # 2**R - 1
    return _sqrt1p_minus_1(4.0 / u) / (2.0 * lam)


def d_upper_slope(rate: float, lam: float) -> float:
    """Derivative of :func:`d_upper` with respect to the rate (always negative)."""
    _check_positive("lambda", lam)
    if not rate > 0:
        raise DomainError(f"rate must be positive, got {rate!r}")
    u = math.expm1(rate * LN2)
    # d/dR of (sqrt(1 + 4/u) - 1)/(2 lam) with du/dR = ln2 * (u + 1)
    return -LN2 * (u + 1.0) / (lam * u * u * math.sqrt(1.0 + 4.0 / u))


def expected_abs_sum(lam: float, d: float) -> float:
    """E|Theta + Z| for Theta ~ Exp(lam) and Z a zero-mean Laplacian with E|Z| = d."""
    _check_positive("lambda", lam)
    _check_positive("d", d)
    return 1.0 / lam + lam * d * d / (lam * d + 1.0)


def laplacian_entropy(d: float) -> float:
    """Differential entropy in bits of the zero-mean Laplacian with E|Z| = d."""
    _check_positive("d", d)
    return math.log2(2.0 * math.e * d)


def exponential_entropy(lam: float) -> float:
    """Differential entropy in bits of Exp(lam), ``log2(e / lam)``."""
    _check_positive("lambda", lam)
    return math.log2(math.e / lam)


# Entropies of other noise laws with the same first absolute moment ``d``.
# Used as competitors in the maximum-entropy check.

def gaussian_entropy_at_mean_abs(d: float) -> float:
    """Entropy in bits of N(0, s^2) with E|Z| = d, i.e. s = d * sqrt(pi / 2)."""
    _check_positive("d", d)
    return math.log2(math.pi * math.sqrt(math.e) * d)


def uniform_entropy_at_mean_abs(d: float) -> float:
    """Entropy in bits of U(-2d, 2d), whose mean absolute value is d."""
    _check_positive("d", d)
    return math.log2(4.0 * d)


def two_point_entropy_at_mean_abs(d: float) -> float:
    """A symmetric two-point law at +-d has no density; its entropy is -inf."""
    _check_positive("d", d)
    return -math.inf


# ---------------------------------------------------------------------------
# Curves
# ---------------------------------------------------------------------------


class Provenance(str, enum.Enum):
    LOWER_BOUND = "LowerBound"
    UPPER_BOUND = "UpperBound"
    BLAHUT_ARIMOTO = "BlahutArimoto"


@dataclass(frozen=True)
class RdPoint:
    rate: float
    distortion: float

    def __post_init__(self) -> None:
        if not self.rate >= 0:
            raise DomainError(f"rate must be non-negative, got {self.rate!r}")
        if not self.distortion > 0:
            raise DomainError(f"distortion must be positive, got {self.distortion!r}")


@dataclass
class RdCurve:
    points: list[RdPoint]
    source_lambda: float
    provenance: Provenance
    dropped: int = 0

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate for p in self.points])

    @property
    def distortions(self) -> np.ndarray:
        return np.array([p.distortion for p in self.points])

    def distortion_at(self, rate: float) -> float:
        """Interpolate the curve at ``rate`` (linear in log-distortion)."""
        r = self.rates
        if not r[0] <= rate <= r[-1]:
            raise DomainError(f"rate {rate} outside curve range [{r[0]}, {r[-1]}]")
        return float(np.exp(np.interp(rate, r, np.log(self.distortions))))


def bound_curve(lam: float, rates: Iterable[float], which: Provenance) -> RdCurve:
    fn = {Provenance.LOWER_BOUND: d_lower, Provenance.UPPER_BOUND: d_upper}[which]
    pts = [RdPoint(float(r), fn(float(r), lam)) for r in rates]
    pts.sort(key=lambda p: p.rate)
    return RdCurve(pts, lam, which)


def curves_to_csv(curves: Sequence[RdCurve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rate_bits", "distortion", "provenance"])
    for c in curves:
        for p in c.points:
            w.writerow([f"{p.rate:.17g}", f"{p.distortion:.17g}", c.provenance.value])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Blahut-Arimoto
# ---------------------------------------------------------------------------

# Largest |slope| * grid_step for which the lattice still resolves the
# distortion to within ~1% of the continuous curve.
MAX_SLOPE_TIMES_STEP = 0.45
MIN_SLOPE_OVER_LAMBDA = 1.2


@dataclass
class BaConfig:
    grid_points: int = 1024
    theta_max_multiplier: float = 12.0
    slope_sweep: list[float] | None = None  # negative; None -> default_slopes()
    n_slopes: int = 40
    convergence_tol: float = 1e-9
    max_iters: int = 200_000

    def __post_init__(self) -> None:
        if self.grid_points < 64:
            raise DomainError(f"grid_points must be >= 64, got {self.grid_points}")
        _check_positive("theta_max_multiplier", self.theta_max_multiplier)
        _check_positive("convergence_tol", self.convergence_tol)
        if self.max_iters < 1:
            raise DomainError("max_iters must be positive")
        if self.slope_sweep is not None:
            if not self.slope_sweep or any(not s < 0 for s in self.slope_sweep):
                raise DomainError("slope_sweep must be a non-empty list of negative reals")

    @classmethod
    def from_json(cls, text: str) -> "BaConfig":
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise DomainError(f"unknown BaConfig keys: {sorted(unknown)}")
        return cls(**raw)

    def grid_step(self, lam: float) -> float:
        return self.theta_max_multiplier / lam / (self.grid_points - 1)

    def slopes(self, lam: float) -> list[float]:
        if self.slope_sweep is not None:
            return list(self.slope_sweep)
        return default_slopes(lam, self.grid_step(lam), self.n_slopes)


def default_slopes(lam: float, step: float, n: int = 40) -> list[float]:
    """Log-spaced slopes from the low-rate end up to what the grid can resolve."""
    hi = MAX_SLOPE_TIMES_STEP / step
    lo = MIN_SLOPE_OVER_LAMBDA * lam
    if hi <= lo:
        raise DomainError("grid too coarse for any useful slope; raise grid_points")
    return [-float(s) for s in np.geomspace(lo, hi, n)]


def _toeplitz_exp(a: float, v: np.ndarray) -> np.ndarray:
    """``sum_j a**|i-j| v_j`` via a forward and a backward first-order recursion."""
    den = [1.0, -a]
    fwd = lfilter([1.0], den, v)
    bwd = lfilter([1.0], den, v[::-1])[::-1]
    return fwd + bwd - v


def _toeplitz_lag_exp(a: float, v: np.ndarray) -> np.ndarray:
    """``sum_j |i-j| a**|i-j| v_j``; the causal kernel k a^k is second order."""
    num = [0.0, a]
    den = [1.0, -2.0 * a, a * a]
    fwd = lfilter(num, den, v)
    bwd = lfilter(num, den, v[::-1])[::-1]
    return fwd + bwd


@numba.njit(cache=True)
def _exp_filter(a, v, out):  # pragma: no cover - compiled
    acc = 0.0
    for i in range(v.size):
        acc = a * acc + v[i]
        out[i] = acc
    acc = 0.0
    for i in range(v.size - 1, -1, -1):
        acc = a * acc + v[i]
        out[i] += acc - v[i]


@numba.njit(cache=True)
def _ba_iterate(p, a, q, tol, max_iters):  # pragma: no cover - compiled
    """Blahut-Arimoto updates of the output law ``q`` in place.

    Stops once the Lagrangian ``-sum_i p_i log Z_i`` (rate relative to q minus
    slope times distortion, in nats) moves by less than ``tol``.
    """
    n = q.size
    z = np.empty(n)
    ratio = np.empty(n)
    back = np.empty(n)
    prev = np.inf
    for it in range(1, max_iters + 1):
        _exp_filter(a, q, z)
        lagr = 0.0
        for i in range(n):
            lagr -= p[i] * np.log(z[i])
            ratio[i] = p[i] / z[i]
        _exp_filter(a, ratio, back)
        for i in range(n):
            qi = q[i] * back[i]
            q[i] = qi if qi > 1e-300 else 0.0
        if abs(prev - lagr) < tol:
            return it, True
        prev = lagr
    return max_iters, False


@dataclass
class BaPoint:
    slope: float
    rate: float
    distortion: float
    iterations: int
    converged: bool


def discretized_source(lam: float, config: BaConfig) -> tuple[np.ndarray, np.ndarray]:
    grid = np.linspace(0.0, config.theta_max_multiplier / lam, config.grid_points)
    pmf = np.exp(-lam * grid)
    pmf /= pmf.sum()
    return grid, pmf


def ba_point(lam: float, slope: float, config: BaConfig) -> BaPoint:
    """Run Blahut-Arimoto at one Lagrange slope on the discretized source.

    The reconstruction alphabet is the source grid and d(i, j) = |theta_i - theta_j|.
    Because the grid is uniform the channel kernel exp(slope * d) is a symmetric
    Toeplitz matrix with geometric decay, so every product with it is done by
    recursive filtering in O(n) instead of a dense matvec.
    """
    if not slope < 0:
        raise DomainError(f"slope must be negative, got {slope!r}")
    grid, p = discretized_source(lam, config)
    step = grid[1] - grid[0]
    a = math.exp(slope * step)
    n = grid.size
    q = np.full(n, 1.0 / n)
    it, converged = _ba_iterate(p, a, q, config.convergence_tol, config.max_iters)

    z = _toeplitz_exp(a, q)
    distortion = step * float(np.dot(p / z, _toeplitz_lag_exp(a, q)))
    # output marginal of the final channel
    m = q * _toeplitz_exp(a, p / z)
    rate_vs_q = slope * distortion - float(np.dot(p, np.log(z)))
    nz = m > 0
    kl = float(np.dot(m[nz], np.log(m[nz] / q[nz])))
    rate = max(0.0, (rate_vs_q - kl) / LN2)
    return BaPoint(slope, rate, distortion, it, converged)


def ba_distortion_rate(lam: float, config: BaConfig | None = None) -> RdCurve:
    """Numerical distortion-rate curve of the discretized exponential source."""
    _check_positive("lambda", lam)
    config = config or BaConfig()
    pts: list[RdPoint] = []
    dropped = 0
    for s in config.slopes(lam):
        bp = ba_point(lam, s, config)
        if not bp.converged or not bp.distortion > 0:
            dropped += 1
            continue
        pts.append(RdPoint(bp.rate, bp.distortion))
    pts.sort(key=lambda pt: pt.rate)
    # keep a strictly monotone curve
    clean: list[RdPoint] = []
    for pt in pts:
        if clean and (pt.rate <= clean[-1].rate or pt.distortion >= clean[-1].distortion):
            continue
        clean.append(pt)
    return RdCurve(clean, lam, Provenance.BLAHUT_ARIMOTO, dropped=dropped)
