"""Sign-preserving magnitude quantizers and the L1 parameter distortion.

A bit-width ``b_hat`` counts the sign bit, so magnitudes get ``b_hat - 1``
bits, i.e. ``2**(b_hat - 1)`` levels.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass

import numpy as np

from coinfer.errors import DomainError, ShapeError

B_MAX_SUPPORTED = 32
DEFAULT_CLIP_PERCENTILE = 99.9


class QuantKind(str, enum.Enum):
    UNIFORM = "uniform"
    POT_LOG = "pot-log"


@dataclass(frozen=True)
class QuantScheme:
    kind: QuantKind
    bit_width_total: int
    theta_max: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", QuantKind(self.kind))
        if not 1 <= self.bit_width_total <= B_MAX_SUPPORTED:
            raise DomainError(f"bit width must lie in [1, {B_MAX_SUPPORTED}], got {self.bit_width_total}")
        if not self.theta_max > 0 or not math.isfinite(self.theta_max):
            raise DomainError(f"theta_max must be positive, got {self.theta_max!r}")

    @property
    def magnitude_bits(self) -> int:
        return self.bit_width_total - 1

    @property
    def n_levels(self) -> int:
        return 2 ** self.magnitude_bits

    @property
    def step(self) -> float:
        """Uniform step size; only meaningful for the uniform quantizer."""
        return self.theta_max / self.n_levels


def clip_magnitude(weights, percentile: float = DEFAULT_CLIP_PERCENTILE) -> float:
    """Default clipping magnitude: a high percentile of |w|.

    Falls back to the maximum if the percentile is zero (mostly-zero tensors).
    """
    mags = np.abs(np.asarray(weights, dtype=np.float64)).ravel()
    t = float(np.percentile(mags, percentile))
    if not t > 0:
        t = float(mags.max())
    if not t > 0:
        raise DomainError("cannot pick a clipping magnitude for an all-zero tensor")
    return t


def quantize_uniform(weights, scheme: QuantScheme) -> np.ndarray:
    """Mid-rise uniform quantizer with bin-center reconstruction.

    Magnitudes above ``theta_max`` land in the top bin; ``b_hat = 1`` leaves no
    magnitude bits and maps everything to zero. The grid has no zero level, so
    an exact zero decodes to ``+step / 2`` (sign bit clear, magnitude index 0).
    """
    if scheme.kind is not QuantKind.UNIFORM:
        raise DomainError(f"expected a uniform scheme, got {scheme.kind.value}")
    w = np.asarray(weights, dtype=np.float64)
    if scheme.bit_width_total == 1:
        return np.zeros_like(w)
    step = scheme.step
    idx = np.minimum(np.floor(np.abs(w) / step), scheme.n_levels - 1)
    return np.where(w < 0, -1.0, 1.0) * (idx + 0.5) * step


def pot_levels(scheme: QuantScheme) -> np.ndarray:
    """Magnitude levels ``{0} U {theta_max * 2**-k : k = 0 .. 2**(b-1) - 2}``, ascending."""
    k_max = scheme.n_levels - 2
    return np.concatenate(([0.0], scheme.theta_max * 2.0 ** -np.arange(k_max, -1, -1, dtype=np.float64)))


def quantize_pot_log(weights, scheme: QuantScheme) -> np.ndarray:
    """Power-of-two quantizer: nearest level in the log2 domain.

    Bin edges between adjacent powers of two are their geometric means, and
    magnitudes below ``smallest_level / sqrt(2)`` go to zero.
    """
    if scheme.kind is not QuantKind.POT_LOG:
        raise DomainError(f"expected a pot-log scheme, got {scheme.kind.value}")
    if scheme.bit_width_total < 2:
        raise DomainError("pot-log needs at least 2 bits (1 magnitude bit)")
    w = np.asarray(weights, dtype=np.float64)
    mag = np.abs(w)
    k_max = scheme.n_levels - 2
    out = np.zeros_like(mag)
    pos = mag > 0
    with np.errstate(divide="ignore", over="ignore"):
        r = np.log2(scheme.theta_max / mag[pos])
    k = np.clip(np.floor(r + 0.5), 0, k_max)
    q = np.ldexp(scheme.theta_max, -k.astype(np.int64))
    q[r > k_max + 0.5] = 0.0
    out[pos] = q
    return np.sign(w) * out


def quantize(weights, scheme: QuantScheme) -> np.ndarray:
    if scheme.kind is QuantKind.UNIFORM:
        return quantize_uniform(weights, scheme)
    return quantize_pot_log(weights, scheme)


@dataclass(frozen=True)
class QuantReport:
    total_l1: float
    mean_l1: float
    n_params: int

    def to_json(self) -> str:
        return json.dumps({"total_l1": self.total_l1, "mean_l1": self.mean_l1,
                           "n_params": self.n_params}, sort_keys=True)


def param_distortion(original, quantized) -> QuantReport:
    """Entrywise L1 distance between a weight tensor and its quantized copy."""
    a = np.asarray(original, dtype=np.float64).ravel()
    b = np.asarray(quantized, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ShapeError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ShapeError("need at least one parameter")
    total = float(np.sum(np.abs(a - b)))
    return QuantReport(total, total / a.size, int(a.size))
