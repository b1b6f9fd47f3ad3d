"""Delay and energy of the two-stage (agent then server) inference pipeline.

Everything is SI internally: Hz, seconds, joules, FLOP.  Only computation is
charged; transmission is outside the model.
"""
from __future__ import annotations

from dataclasses import dataclass

from coinfer.errors import DomainError


def _positive(obj: object, *names: str) -> None:
    for n in names:
        v = getattr(obj, n)
        if not v > 0:
            raise DomainError(f"{type(obj).__name__}.{n} must be > 0, got {v!r}")


@dataclass(frozen=True)
class DeviceProfile:
    f_max: float  # Hz
    flops_per_cycle: float
    pue: float
    power_coeff: float  # W / (cycle/s)^3

    def __post_init__(self) -> None:
        _positive(self, "f_max", "flops_per_cycle", "pue", "power_coeff")


@dataclass(frozen=True)
class ServerProfile:
    f_max: float
    flops_per_cycle: float
    pue: float
    power_coeff: float

    def __post_init__(self) -> None:
        _positive(self, "f_max", "flops_per_cycle", "pue", "power_coeff")


@dataclass(frozen=True)
class Workload:
    agent_flops: float  # full-precision on-agent FLOPs
    server_flops: float
    native_bits: int = 16
    b_max: int = 16

    def __post_init__(self) -> None:
        _positive(self, "agent_flops", "server_flops", "native_bits", "b_max")
        if not 1 <= self.b_max <= self.native_bits:
            raise DomainError(
                f"need 1 <= b_max <= native_bits, got b_max={self.b_max}, native_bits={self.native_bits}"
            )


def agent_cycles(b_hat: float, w: Workload, d: DeviceProfile) -> float:
    """Cycles of on-agent work; FLOPs scale linearly with the bit-width."""
    return b_hat * w.agent_flops / (w.native_bits * d.flops_per_cycle)


def server_cycles(w: Workload, s: ServerProfile) -> float:
    return w.server_flops / s.flops_per_cycle


def _check_bits(b_hat: float, w: Workload) -> None:
    if not 1 <= b_hat <= w.b_max:
        raise DomainError(f"bit-width must lie in [1, {w.b_max}], got {b_hat!r}")


def _check_freq(f: float, f_max: float, name: str) -> None:
    if not f > 0:
        raise DomainError(f"{name} must be > 0, got {f!r}")
    if f > f_max:
        raise DomainError(f"{name}={f!r} exceeds its maximum {f_max!r}")


def agent_delay(b_hat: float, f: float, w: Workload, d: DeviceProfile) -> float:
    _check_bits(b_hat, w)
    _check_freq(f, d.f_max, "f")
    return agent_cycles(b_hat, w, d) / f


def server_delay(f_tilde: float, w: Workload, s: ServerProfile) -> float:
    _check_freq(f_tilde, s.f_max, "f_tilde")
    return server_cycles(w, s) / f_tilde


def agent_energy(b_hat: float, f: float, w: Workload, d: DeviceProfile) -> float:
    _check_bits(b_hat, w)
    _check_freq(f, d.f_max, "f")
    return d.pue * agent_cycles(b_hat, w, d) * d.power_coeff * f * f


def server_energy(f_tilde: float, w: Workload, s: ServerProfile) -> float:
    _check_freq(f_tilde, s.f_max, "f_tilde")
    return s.pue * server_cycles(w, s) * s.power_coeff * f_tilde * f_tilde


def total_delay(b_hat: float, f: float, f_tilde: float, w: Workload,
                d: DeviceProfile, s: ServerProfile) -> float:
    return agent_delay(b_hat, f, w, d) + server_delay(f_tilde, w, s)


def total_energy(b_hat: float, f: float, f_tilde: float, w: Workload,
                 d: DeviceProfile, s: ServerProfile) -> float:
    return agent_energy(b_hat, f, w, d) + server_energy(f_tilde, w, s)
