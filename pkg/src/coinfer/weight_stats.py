"""Load parameter magnitudes and fit the exponential magnitude model."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from coinfer.errors import DegenerateFitError, DomainError, EmptyInputError, ParseError

FORMATS = ("raw-f32-le", "csv")


@dataclass(frozen=True)
class MagnitudeSample:
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or v.size == 0:
            raise EmptyInputError("a magnitude sample needs at least one value")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise DomainError("magnitudes must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def count(self) -> int:
        return int(self.values.size)

    @classmethod
    def from_weights(cls, weights) -> "MagnitudeSample":
        return cls(np.abs(np.asarray(weights, dtype=np.float64)).ravel())


@dataclass(frozen=True)
class WeightStats:
    lam: float
    mean_magnitude: float
    n_params: int
    differential_entropy_bits: float

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "mean_magnitude": self.mean_magnitude,
            "n_params": self.n_params,
            "differential_entropy_bits": self.differential_entropy_bits,
        }


def _parse_raw_f32(data: bytes) -> np.ndarray:
    tail = len(data) % 4
    if tail:
        raise ParseError(f"raw float32 stream length {len(data)} is not a multiple of 4",
                         len(data) - tail)
    values = np.frombuffer(data, dtype="<f4").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise ParseError(f"non-finite value {values[bad[0]]!r}", int(bad[0]) * 4)
    return values


def _parse_csv(data: bytes) -> np.ndarray:
    out: list[float] = []
    offset = 0
    for line in data.splitlines(keepends=True):
        text = line.strip()
        if text:
            try:
                text_s = text.decode("ascii")
                v = float(text_s)
            except (UnicodeDecodeError, ValueError):
                raise ParseError(f"cannot parse {text[:32]!r} as a number", offset) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite value {text_s!r}", offset)
            out.append(v)
        offset += len(line)
    return np.asarray(out, dtype=np.float64)


def load_magnitudes(data: bytes, fmt: str) -> MagnitudeSample:
    """Parse a byte stream of weights and return their absolute values.

    ``fmt`` is ``"raw-f32-le"`` (headerless little-endian float32) or ``"csv"``
    (one value per line; blank lines are ignored).
    """
    if fmt not in FORMATS:
        raise DomainError(f"unknown format {fmt!r}; expected one of {FORMATS}")
    if not data:
        raise EmptyInputError("empty input stream")
    values = _parse_raw_f32(data) if fmt == "raw-f32-le" else _parse_csv(data)
    if values.size == 0:
        raise EmptyInputError("input stream holds no values")
    return MagnitudeSample(np.abs(values))


def format_for_path(path: str) -> str:
    lower = path.lower()
    if lower.endswith(".f32") or lower.endswith(".bin"):
        return "raw-f32-le"
    if lower.endswith(".csv") or lower.endswith(".txt"):
        return "csv"
    raise DomainError(f"cannot infer format from {path!r}; pass it explicitly")


def fit_exponential(sample: MagnitudeSample) -> WeightStats:
    """Maximum-likelihood exponential fit, ``lambda = n / sum(values)``."""
    total = float(np.sum(sample.values))
    if not total > 0:
        raise DegenerateFitError("all magnitudes are zero; the exponential fit is undefined")
    n = sample.count
    lam = n / total
    return WeightStats(lam, total / n, n, math.log2(math.e / lam))


def histogram(sample: MagnitudeSample, bins: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Density histogram over ``[0, max]``; returns (bin centers, densities)."""
    if bins < 2:
        raise DomainError(f"need at least 2 bins, got {bins}")
    top = float(sample.values.max())
    rng = (0.0, top) if top > 0 else None
    density, edges = np.histogram(sample.values, bins=bins, range=rng, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, density


def histogram_csv(centers: np.ndarray, density: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_center", "density"])
    for c, d in zip(centers, density):
        w.writerow([f"{c:.17g}", f"{d:.17g}"])
    return buf.getvalue()
