"""Asymptotic secret-key-rate lower bound under collective attacks.

The probe state consistent with an observed QBER Q is parameterized by one
free weight ``lambda4`` in [0, Q]; the bound is the infimum of the rate over
that family, found by a coarse grid followed by golden-section refinement.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import quantum_sim as qs
from .errors import ContractViolation

_LAMBDA_TOL = 1e-12
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class LambdaVector:
    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float

    def __post_init__(self) -> None:
        vals = self.as_tuple()
        if any(v < 0.0 for v in vals):
            raise ContractViolation(f"negative weight in {vals}")
        if abs(sum(vals) - 1.0) > _LAMBDA_TOL:
            raise ContractViolation(f"weights sum to {sum(vals)!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3, self.lambda4)

    @property
    def qber(self) -> float:
        return self.lambda3 + self.lambda4


@dataclass(frozen=True)
class KeyRatePoint:
    q: float
    rate: float
    lambda4_star: float


def lambda_from(q: float, lambda4: float) -> LambdaVector:
    """lambda1 = 1 + lambda4 - 2Q, lambda2 = lambda3 = Q - lambda4."""
    if not 0.0 <= q <= 0.5:
        raise ContractViolation(f"QBER {q!r} outside [0, 0.5]")
    if not 0.0 <= lambda4 <= q:
        raise ContractViolation(f"lambda4 {lambda4!r} outside [0, {q}]")
    l1 = 1.0 + lambda4 - 2.0 * q
    l23 = q - lambda4
    l1, l23 = max(l1, 0.0), max(l23, 0.0)
    return LambdaVector(l1, l23, l23, lambda4)


def probe_states(a: int, lam: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    """Probe kets (theta^{a,0}, theta^{a,1}) in the v_1..v_4 basis, each with the 1/sqrt(2) prefactor."""
    l1, l2, l3, l4 = (math.sqrt(max(x, 0.0)) for x in lam)
    sign = 1.0 if a == 0 else -1.0
    s = 1.0 / math.sqrt(2.0)
    return (
        s * np.array([l1, sign * l2, 0.0, 0.0]),
        s * np.array([0.0, 0.0, l3, sign * l4]),
    )


def sigma_tp(a: int, lam) -> qs.DensityMatrix:
    """Probe density operator conditioned on Alice's bit ``a``.

    Built as the sum of the two conditional probe projectors renormalized by
    P(a) = 1/2.
    """
    if a not in (0, 1):
        raise ContractViolation(f"Alice's bit must be 0 or 1, got {a!r}")
    vals = lam.as_tuple() if isinstance(lam, LambdaVector) else tuple(lam)
    t0, t1 = probe_states(a, vals)
    rho = 2.0 * (np.outer(t0, t0) + np.outer(t1, t1))
    return qs.DensityMatrix(rho.astype(np.complex128))


def rate_from_lambdas(q: float, lam) -> float:
    """(S(E|U) - S(E)) - (H(B|U) - H(B)) with H(B|U) = h(Q), H(B) = 1."""
    s0 = sigma_tp(0, lam)
    s1 = sigma_tp(1, lam)
    s_e_given_u = 0.5 * qs.von_neumann_entropy(s0) + 0.5 * qs.von_neumann_entropy(s1)
    s_e = qs.von_neumann_entropy(0.5 * (s0.matrix + s1.matrix))
    return (s_e_given_u - s_e) - (qs.binary_entropy(q) - 1.0)


def rate_given_lambda(q: float, lambda4: float) -> float:
    if q == 0.0:
        return 1.0
    return rate_from_lambdas(q, lambda_from(q, lambda4))


def golden_section_min(f: Callable[[float], float], lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Minimize a unimodal ``f`` on [lo, hi] to bracket width ``tol``; returns (x, f(x))."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    x = 0.5 * (a + b)
    return x, f(x)


def minimize_rate(q: float, coarse_steps: int = 201, refine_tol: float = 1e-7) -> KeyRatePoint:
    """Infimum of the rate over lambda4 in [0, q]."""
    if not 0.0 <= q <= 0.5:
        raise ContractViolation(f"QBER {q!r} outside [0, 0.5]")
    if q == 0.0:
        return KeyRatePoint(0.0, 1.0, 0.0)
    if coarse_steps < 2:
        raise ContractViolation("coarse_steps must be at least 2")

    def f(x: float) -> float:
        return rate_given_lambda(q, min(max(x, 0.0), q))

    grid = np.linspace(0.0, q, coarse_steps)
    values = [f(float(x)) for x in grid]
    k = int(np.argmin(values))
    lo = float(grid[max(k - 1, 0)])
    hi = float(grid[min(k + 1, coarse_steps - 1)])
    x, fx = golden_section_min(f, lo, hi, refine_tol)
    if values[k] < fx:
        x, fx = float(grid[k]), values[k]
    return KeyRatePoint(q, fx, x)


def find_threshold(tol: float = 5e-4, lo: float = 0.0, hi: float = 0.25, **minimize_kw) -> float:
    """QBER at which the minimized rate crosses zero, by bisection."""
    if tol <= 0.0:
        raise ContractViolation("tol must be positive")
    f_lo = minimize_rate(lo, **minimize_kw).rate
    f_hi = minimize_rate(hi, **minimize_kw).rate
    if not (f_lo > 0.0 > f_hi):
        raise ContractViolation(f"no sign change on [{lo}, {hi}]: rates {f_lo}, {f_hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if minimize_rate(mid, **minimize_kw).rate > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def curve_grid(q_min: float, q_max: float, step: float) -> list[float]:
    if not (0.0 <= q_min < q_max <= 0.5) or step <= 0.0:
        raise ContractViolation(f"invalid range min={q_min} max={q_max} step={step}")
    n = int(math.floor((q_max - q_min) / step + 1e-9)) + 1
    return [round(q_min + i * step, 12) for i in range(n)]


def export_curve(q_min: float, q_max: float, step: float, threads: int = 1, **minimize_kw) -> list[KeyRatePoint]:
    """Minimized rate on a regular QBER grid, rates clamped at -1."""
    qs_ = curve_grid(q_min, q_max, step)

    def point(q: float) -> KeyRatePoint:
        p = minimize_rate(q, **minimize_kw)
        return KeyRatePoint(p.q, max(p.rate, -1.0), p.lambda4_star)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(point, qs_))
    return [point(q) for q in qs_]


def curve_csv(points: Sequence[KeyRatePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["qber", "rate", "lambda4_star"])
    for p in points:
        w.writerow([f"{p.q:.9f}", f"{p.rate:.9f}", f"{p.lambda4_star:.9f}"])
    return buf.getvalue()
