"""Joint bit-width / frequency planning under delay and energy budgets.

The objective is the width of the distortion interval at magnitude rate
``b_hat - 1`` (one bit is the sign).  That gap shrinks monotonically with the
bit-width while the workload grows with it, so the best plan is the largest
bit-width whose frequencies can be set to meet both budgets.

Two solvers are provided: :func:`sca_plan`, the relax-linearize-round scheme
(successive convex approximation over a continuous bit-width and an auxiliary
reciprocal variable), and :func:`brute_force_plan`, an exact integer scan used
as the reference.
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.optimize import brentq

from coinfer import cost_model as cm
from coinfer.cost_model import DeviceProfile, ServerProfile, Workload
from coinfer.errors import CoinferError, DomainError, SchemaError
from coinfer.rate_distortion import LN2, d_lower, d_upper, d_upper_slope


class Status(str, enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"


class SubproblemInfeasible(CoinferError):
    pass


@dataclass(frozen=True)
class PlanProblem:
    workload: Workload
    device: DeviceProfile
    server: ServerProfile
    lam: float
    t0: float  # seconds
    e0: float  # joules

    def __post_init__(self) -> None:
        for name in ("lam", "t0", "e0"):
            v = getattr(self, name)
            if not v > 0:
                raise DomainError(f"{name} must be > 0, got {v!r}")

    def with_budgets(self, t0: float | None = None, e0: float | None = None) -> "PlanProblem":
        return PlanProblem(self.workload, self.device, self.server, self.lam,
                           self.t0 if t0 is None else t0, self.e0 if e0 is None else e0)


@dataclass
class Plan:
    status: Status
    b_hat: int | None = None
    f: float | None = None
    f_tilde: float | None = None
    delay: float | None = None
    energy: float | None = None
    d_upper_bound: float | None = None
    d_lower_bound: float | None = None
    objective_gap: float | None = None
    magnitude_rate: int | None = None  # b_hat - 1, the sign bit is not counted

    @property
    def feasible(self) -> bool:
        return self.status is Status.OPTIMAL

    def gap_or_inf(self) -> float:
        return self.objective_gap if self.feasible else math.inf

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["status"] = self.status.value
        return d


@dataclass
class ScaIterate:
    b_tilde: float
    b_tilde_prime: float
    f: float
    f_tilde: float
    objective: float


@dataclass
class ScaTrace:
    threshold: float
    iterations: list[ScaIterate] = field(default_factory=list)
    converged: bool = False

    @property
    def objectives(self) -> list[float]:
        return [it.objective for it in self.iterations]

    def is_monotone(self) -> bool:
        obj = self.objectives
        return all(b <= a for a, b in zip(obj, obj[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "converged": self.converged,
            "iterations": [asdict(it) for it in self.iterations],
        }


# ---------------------------------------------------------------------------
# Objective and its SCA majorizer
# ---------------------------------------------------------------------------


def objective_gap(b_tilde: float, lam: float) -> float:
    """``D_U(b - 1) - D_L(b - 1)``, the width of the distortion interval."""
    if not b_tilde > 1:
        raise DomainError(f"bit-width must exceed 1, got {b_tilde!r}")
    return d_upper(b_tilde - 1.0, lam) - d_lower(b_tilde - 1.0, lam)


def _tangent_coeff(anchor: float, lam: float) -> float:
    return 1.0 / (lam * 2.0 ** anchor)


def linearized_objective(b_tilde: float, anchor: float, lam: float) -> float:
    """Convex majorizer of :func:`objective_gap` that is tight at ``anchor``.

    The subtracted lower-bound term ``1/(lam 2^b)`` is convex, so replacing it
    by its tangent at the anchor can only increase the objective.
    """
    if not anchor > 1:
        raise DomainError(f"anchor must exceed 1, got {anchor!r}")
    if not b_tilde > 1:
        raise DomainError(f"bit-width must exceed 1, got {b_tilde!r}")
    c = _tangent_coeff(anchor, lam)
    tangent = c - c * LN2 * (b_tilde - anchor)
    return d_upper(b_tilde - 1.0, lam) - tangent


def _linearized_slope(b_tilde: float, anchor: float, lam: float) -> float:
    return d_upper_slope(b_tilde - 1.0, lam) + _tangent_coeff(anchor, lam) * LN2


# ---------------------------------------------------------------------------
# Frequencies for a given bit-width
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FreqSolution:
    f: float
    f_tilde: float
    delay: float
    energy: float


def _min_energy_frequencies(b: float, p: PlanProblem) -> FreqSolution | None:
    """Cheapest (f, f_tilde) meeting the delay budget at a real bit-width ``b``.

    Energy rises with both frequencies, so at the optimum the delay budget is
    met with equality and f_tilde is a function of f.  Energy along that curve
    is convex in f and its stationary point has the fixed ratio
    ``f_tilde / f = (pue psi / (pue~ psi~))**(1/3)``, so the constrained
    minimizer is that point clamped to the admissible interval of f.
    """
    w, d, s = p.workload, p.device, p.server
    a = cm.agent_cycles(b, w, d)
    bs = cm.server_cycles(w, s)
    slack = p.t0 - bs / s.f_max
    if not slack > 0:
        return None
    f_lo = a / slack  # below this the server would need more than f_max
    if f_lo > d.f_max:
        return None
    ratio = (d.pue * d.power_coeff / (s.pue * s.power_coeff)) ** (1.0 / 3.0)
    f_star = (a + bs / ratio) / p.t0
    f = min(max(f_star, f_lo), d.f_max)
    f_tilde = min(bs / (p.t0 - a / f), s.f_max)
    delay = a / f + bs / f_tilde
    energy = d.pue * a * d.power_coeff * f * f + s.pue * bs * s.power_coeff * f_tilde * f_tilde
    return FreqSolution(f, f_tilde, delay, energy)


def frequency_feasibility(b_hat: float, problem: PlanProblem) -> FreqSolution | None:
    """Minimum-energy frequencies meeting the delay budget, or None if the
    budgets cannot both be met at this bit-width."""
    sol = _min_energy_frequencies(b_hat, problem)
    if sol is None or sol.energy > problem.e0:
        return None
    return sol


def max_feasible_bits(problem: PlanProblem, lo: float = 2.0, rtol: float = 1e-14) -> float | None:
    """Largest real bit-width that is frequency-feasible (may exceed b_max).

    Feasibility is monotone in the bit-width because the agent workload is.
    Returns None if ``lo`` itself is infeasible.
    """
    if frequency_feasibility(lo, problem) is None:
        return None
    w, d, s = problem.workload, problem.device, problem.server
    slack = problem.t0 - cm.server_cycles(w, s) / s.f_max
    # delay floor at f = f_max caps the bit-width
    hi = slack * d.f_max * w.native_bits * d.flops_per_cycle / w.agent_flops
    if frequency_feasibility(hi, problem) is not None:
        return hi
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if frequency_feasibility(mid, problem) is None:
            hi = mid
        else:
            lo = mid
    return lo


def _plan_from(b_hat: int, sol: FreqSolution, lam: float) -> Plan:
    du = d_upper(b_hat - 1.0, lam)
    dl = d_lower(b_hat - 1.0, lam)
    return Plan(Status.OPTIMAL, b_hat, sol.f, sol.f_tilde, sol.delay, sol.energy,
                du, dl, du - dl, b_hat - 1)


# ---------------------------------------------------------------------------
# Solvers
# ---------------------------------------------------------------------------


def brute_force_plan(problem: PlanProblem) -> Plan:
    """Exact reference: the largest feasible integer bit-width wins."""
    for b in range(problem.workload.b_max, 1, -1):
        sol = frequency_feasibility(b, problem)
        if sol is not None:
            return _plan_from(b, sol, problem.lam)
    return Plan(Status.INFEASIBLE)


@dataclass(frozen=True)
class SubproblemSolution:
    b_tilde: float
    b_tilde_prime: float
    f: float
    f_tilde: float
    value: float


def solve_subproblem(anchor_b: float, anchor_bprime: float, problem: PlanProblem,
                     b_feas: float | None = None) -> SubproblemSolution:
    """Solve the convexified problem around ``(anchor_b, anchor_bprime)``.

    The auxiliary variable ``b' `` stands for ``1/b`` in the workload terms, so
    the delay/energy constraints only ask ``1/b' <= b_feas``.  Taking the
    smallest admissible ``b'`` loosens the linearized coupling
    ``b <= 2/b'_k - b'/b'_k**2`` the most, after which the problem is a 1-D
    convex minimization of the majorizer over ``(1, upper]``.

    ``b_feas`` may be passed in to avoid recomputing it on every iteration.
    """
    if not anchor_b > 1:
        raise DomainError(f"anchor_b must exceed 1, got {anchor_b!r}")
    if not anchor_bprime > 0:
        raise DomainError(f"anchor_bprime must be positive, got {anchor_bprime!r}")
    lam = problem.lam
    if b_feas is None:
        b_feas = max_feasible_bits(problem, lo=1.0 + 1e-9)
    if b_feas is None:
        raise SubproblemInfeasible("no frequency-feasible workload")
    bp = 1.0 / b_feas
    upper = min(float(problem.workload.b_max),
                2.0 / anchor_bprime - bp / (anchor_bprime * anchor_bprime))
    if not upper > 1:
        raise SubproblemInfeasible(f"linearized coupling leaves no bit-width above 1 (upper={upper})")

    if _linearized_slope(upper, anchor_b, lam) <= 0:
        b = upper
    else:
        lo = 1.0 + 1e-12
        b = brentq(_linearized_slope, lo, upper, args=(anchor_b, lam), xtol=1e-14, rtol=1e-15)
    sol = _min_energy_frequencies(b_feas, problem)
    assert sol is not None
    return SubproblemSolution(b, bp, sol.f, sol.f_tilde, linearized_objective(b, anchor_b, lam))


def _round_bits(b_star: float, problem: PlanProblem) -> tuple[int, FreqSolution] | None:
    b_max = problem.workload.b_max
    b = int(min(max(math.floor(b_star + 0.5), 2), b_max))
    while b >= 2:
        sol = frequency_feasibility(b, problem)
        if sol is not None:
            return b, sol
        b -= 1
    return None


def sca_plan(problem: PlanProblem, delta: float = 1e-6, max_iters: int = 50) -> tuple[Plan, ScaTrace]:
    """Successive convex approximation over the relaxed bit-width.

    Stops when the objective decrease falls below ``delta`` relative to the
    current objective, then rounds to the nearest integer bit-width (rounding
    down if the rounded-up value breaks a budget) and re-solves frequencies.
    """
    if not delta > 0:
        raise DomainError("delta must be positive")
    trace = ScaTrace(threshold=delta)
    start = frequency_feasibility(2.0, problem)
    if start is None:
        return Plan(Status.INFEASIBLE), trace
    b_feas = max_feasible_bits(problem)
    assert b_feas is not None

    b, bp = 2.0, 0.5
    obj = objective_gap(b, problem.lam)
    trace.iterations.append(ScaIterate(b, bp, start.f, start.f_tilde, obj))
    for _ in range(max_iters):
        try:
            sub = solve_subproblem(b, bp, problem, b_feas=b_feas)
        except SubproblemInfeasible:
            break
        new_obj = objective_gap(sub.b_tilde, problem.lam)
        trace.iterations.append(ScaIterate(sub.b_tilde, sub.b_tilde_prime, sub.f, sub.f_tilde, new_obj))
        decrease = obj - new_obj
        b, bp, obj = sub.b_tilde, sub.b_tilde_prime, new_obj
        if decrease < delta * obj:
            trace.converged = True
            break

    rounded = _round_bits(b, problem)
    if rounded is None:
        return Plan(Status.INFEASIBLE), trace
    b_hat, sol = rounded
    return _plan_from(b_hat, sol, problem.lam), trace


# ---------------------------------------------------------------------------
# Baselines
# ---------------------------------------------------------------------------


def fixed_frequency_plan(problem: PlanProblem) -> Plan:
    """Both processors pinned at their maximum clock; only the bit-width moves."""
    w, d, s = problem.workload, problem.device, problem.server
    for b in range(w.b_max, 1, -1):
        delay = cm.total_delay(b, d.f_max, s.f_max, w, d, s)
        energy = cm.total_energy(b, d.f_max, s.f_max, w, d, s)
        if delay <= problem.t0 and energy <= problem.e0:
            return _plan_from(b, FreqSolution(d.f_max, s.f_max, delay, energy), problem.lam)
    return Plan(Status.INFEASIBLE)


def random_plan(problem: PlanProblem, trials: int = 400, seed: int = 0) -> Plan:
    """Best of ``trials`` uniformly sampled bit-widths, each with optimized frequencies."""
    rng = np.random.default_rng(seed)
    samples = rng.integers(2, problem.workload.b_max + 1, size=trials)
    best: Plan = Plan(Status.INFEASIBLE)
    for b in sorted(set(int(x) for x in samples), reverse=True):
        sol = frequency_feasibility(b, problem)
        if sol is not None:
            best = _plan_from(b, sol, problem.lam)
            break
    return best


METHODS = ("sca", "oracle", "fixed-freq", "random")


def plan_with(method: str, problem: PlanProblem, seed: int = 0) -> Plan:
    if method == "sca":
        return sca_plan(problem)[0]
    if method == "oracle":
        return brute_force_plan(problem)
    if method == "fixed-freq":
        return fixed_frequency_plan(problem)
    if method == "random":
        return random_plan(problem, seed=seed)
    raise DomainError(f"unknown method {method!r}; choose from {METHODS}")


# ---------------------------------------------------------------------------
# JSON document
# ---------------------------------------------------------------------------

_UNIT_KEYS = {
    # key in document -> (field, multiplier to SI)
    "agent_gflops": ("agent_flops", 1e9),
    "agent_flops": ("agent_flops", 1.0),
    "server_gflops": ("server_flops", 1e9),
    "server_flops": ("server_flops", 1.0),
    "f_max_ghz": ("f_max", 1e9),
    "f_max_hz": ("f_max", 1.0),
}


def _section(doc: Mapping[str, Any], name: str, required: dict[str, type],
             problems: list[str]) -> dict[str, Any]:
    raw = doc.get(name)
    if not isinstance(raw, Mapping):
        problems.append(f"{name}: missing or not an object")
        return {}
    out: dict[str, Any] = {}
    seen: set[str] = set()
    for key, value in raw.items():
        field_name, mult = _UNIT_KEYS.get(key, (key, 1.0))
        if field_name not in required:
            problems.append(f"{name}.{key}: unknown field")
            continue
        if field_name in seen:
            problems.append(f"{name}.{key}: duplicate of another unit for {field_name}")
            continue
        seen.add(field_name)
        want = required[field_name]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{name}.{key}: expected a number, got {value!r}")
            continue
        if want is int and not float(value).is_integer():
            problems.append(f"{name}.{key}: expected an integer, got {value!r}")
            continue
        if not value > 0:
            problems.append(f"{name}.{key}: must be > 0, got {value!r}")
            continue
        out[field_name] = int(value) if want is int else float(value) * mult
    for field_name in required:
        if field_name not in seen:
            problems.append(f"{name}.{field_name}: required")
    return out


def problem_from_dict(doc: Mapping[str, Any]) -> PlanProblem:
    """Build a problem from the JSON document, listing every schema violation."""
    problems: list[str] = []
    if not isinstance(doc, Mapping):
        raise SchemaError(["document must be a JSON object"])
    wl = _section(doc, "workload", {"agent_flops": float, "server_flops": float,
                                    "native_bits": int, "b_max": int}, problems)
    proc = {"f_max": float, "flops_per_cycle": float, "pue": float, "power_coeff": float}
    dev = _section(doc, "device", proc, problems)
    srv = _section(doc, "server", proc, problems)
    scalars = {}
    for key in ("lambda", "t0_s", "e0_j"):
        v = doc.get(key)
        if v is None:
            problems.append(f"{key}: required")
        elif isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            problems.append(f"{key}: must be a positive number, got {v!r}")
        else:
            scalars[key] = float(v)
    extra = set(doc) - {"workload", "device", "server", "lambda", "t0_s", "e0_j"}
    problems.extend(f"{k}: unknown field" for k in sorted(extra))
    if not problems and not 1 <= wl["b_max"] <= wl["native_bits"]:
        problems.append("workload.b_max: must satisfy 1 <= b_max <= native_bits")
    if problems:
        raise SchemaError(problems)
    return PlanProblem(Workload(**wl), DeviceProfile(**dev), ServerProfile(**srv),
                       scalars["lambda"], scalars["t0_s"], scalars["e0_j"])


def problem_to_dict(p: PlanProblem) -> dict[str, Any]:
    w, d, s = p.workload, p.device, p.server
    return {
        "workload": {"agent_gflops": w.agent_flops / 1e9, "server_gflops": w.server_flops / 1e9,
                     "native_bits": w.native_bits, "b_max": w.b_max},
        "device": {"f_max_ghz": d.f_max / 1e9, "flops_per_cycle": d.flops_per_cycle,
                   "pue": d.pue, "power_coeff": d.power_coeff},
        "server": {"f_max_ghz": s.f_max / 1e9, "flops_per_cycle": s.flops_per_cycle,
                   "pue": s.pue, "power_coeff": s.power_coeff},
        "lambda": p.lam,
        "t0_s": p.t0,
        "e0_j": p.e0,
    }
