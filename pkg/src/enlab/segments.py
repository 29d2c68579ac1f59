"""Analytic segment algebra for piecewise path descriptions.

Every process in the two jump-market models is, between events, a finite sum
of terms ``p(t - t0) * exp(r * (t - t0))`` with ``deg p`` small.  This family
is closed under addition, multiplication, differentiation and integration, so
path integrals reduce to closed forms.  A callable fallback segment covers
the ruin-function compositions that leave the family; those are integrated
by adaptive quadrature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import quad

__all__ = [
    "PolyExpTerm",
    "AnalyticSegment",
    "FunctionSegment",
    "Segment",
    "constant",
    "linear",
    "exponential",
    "as_segment",
]

_ZERO_COEFF_TOL = 0.0  # coefficients are kept verbatim; trimming only drops exact zeros


@dataclass(frozen=True)
class PolyExpTerm:
    """One term ``p(t - t0) * exp(rate * (t - t0))``, coeffs in ascending powers."""

    coeffs: tuple[float, ...]
    rate: float = 0.0
    t0: float = 0.0

    def __call__(self, t):
        if np.ndim(t) == 0:
            s = float(t) - self.t0
            p = 0.0
            for c in reversed(self.coeffs):
                p = p * s + c
            return p * math.exp(self.rate * s)
        s = np.asarray(t, dtype=float) - self.t0
        p = np.zeros_like(s)
        for c in reversed(self.coeffs):
            p = p * s + c
        return p * np.exp(self.rate * s)

    def shifted(self, new_t0: float) -> "PolyExpTerm":
        """Re-express around a new origin; same function of t."""
        h = new_t0 - self.t0
        # p(s + h) expanded in powers of s, then scale by exp(rate*h)
        n = len(self.coeffs)
        shifted = [0.0] * n
        for k, c in enumerate(self.coeffs):
            # c * (s + h)^k
            for j in range(k + 1):
                shifted[j] += c * math.comb(k, j) * h ** (k - j)
        scale = math.exp(self.rate * h)
        return PolyExpTerm(tuple(c * scale for c in shifted), self.rate, new_t0)

    def mul(self, other: "PolyExpTerm") -> "PolyExpTerm":
        o = other.shifted(self.t0)
        a, b = self.coeffs, o.coeffs
        prod = [0.0] * (len(a) + len(b) - 1)
        for i, ca in enumerate(a):
            for j, cb in enumerate(b):
                prod[i + j] += ca * cb
        return PolyExpTerm(tuple(prod), self.rate + o.rate, self.t0)

    def scaled(self, c: float) -> "PolyExpTerm":
        return PolyExpTerm(tuple(c * x for x in self.coeffs), self.rate, self.t0)

    def derivative(self) -> tuple["PolyExpTerm", ...]:
        dp = tuple((k + 1) * c for k, c in enumerate(self.coeffs[1:]))
        out = []
        if dp:
            out.append(PolyExpTerm(dp, self.rate, self.t0))
        if self.rate != 0.0:
            out.append(self.scaled(self.rate))
        return tuple(out) if out else (PolyExpTerm((0.0,), 0.0, self.t0),)

    def integral(self, lo: float, hi: float) -> float:
        """Exact ``int_lo^hi p(u - t0) exp(rate (u - t0)) du``."""
        a = lo - self.t0
        b = hi - self.t0
        r = self.rate
        scale = max(abs(a), abs(b), 1.0)
        if abs(r) * scale < 1e-3:
            # near-degenerate exponential: the recurrence cancels badly, the
            # series in r converges to machine precision in a few terms
            total = 0.0
            for k, c in enumerate(self.coeffs):
                if c == 0.0:
                    continue
                acc = 0.0
                rj = 1.0
                for j in range(18):
                    p = k + j + 1
                    acc += rj * (b**p - a**p) / (math.factorial(j) * p)
                    rj *= r
                total += c * acc
            return total
        # I_k(x) = x^k e^{rx}/r - (k/r) I_{k-1}(x); evaluate I_k(b) - I_k(a)
        ea, eb = math.exp(r * a), math.exp(r * b)
        total = 0.0
        ik = math.exp(r * a) * math.expm1(r * (b - a)) / r  # k = 0
        if self.coeffs:
            total += self.coeffs[0] * ik
        for k in range(1, len(self.coeffs)):
            ik = (b**k * eb - a**k * ea) / r - (k / r) * ik
            total += self.coeffs[k] * ik
        return total


@dataclass(frozen=True)
class AnalyticSegment:
    """Finite sum of poly-exp terms; closed under the path calculus."""

    terms: tuple[PolyExpTerm, ...]

    def __call__(self, t):
        if np.ndim(t) == 0:
            return sum(term(float(t)) for term in self.terms)
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for term in self.terms:
            out = out + term(t)
        return out

    def __add__(self, other: "AnalyticSegment") -> "AnalyticSegment":
        return AnalyticSegment(self.terms + other.terms)

    def __mul__(self, other: "AnalyticSegment") -> "AnalyticSegment":
        prods = tuple(a.mul(b) for a in self.terms for b in other.terms)
        return AnalyticSegment(prods)

    def scaled(self, c: float) -> "AnalyticSegment":
        return AnalyticSegment(tuple(t.scaled(c) for t in self.terms))

    def derivative(self) -> "AnalyticSegment":
        out: list[PolyExpTerm] = []
        for t in self.terms:
            out.extend(t.derivative())
        return AnalyticSegment(tuple(out))

    def integral(self, lo: float, hi: float) -> float:
        return sum(t.integral(lo, hi) for t in self.terms)

    def is_constant(self, tol: float = 0.0) -> bool:
        for t in self.terms:
            if t.rate != 0.0 and any(abs(c) > tol for c in t.coeffs):
                return False
            if any(abs(c) > tol for c in t.coeffs[1:]):
                return False
        return True

    def to_json(self) -> list[dict]:
        return [
            {"coeffs": list(t.coeffs), "rate": t.rate, "t0": t.t0} for t in self.terms
        ]

    @classmethod
    def from_json(cls, data: list[dict]) -> "AnalyticSegment":
        return cls(
            tuple(PolyExpTerm(tuple(d["coeffs"]), d["rate"], d["t0"]) for d in data)
        )


@dataclass(frozen=True)
class FunctionSegment:
    """Arbitrary smooth-by-parts segment; integrals fall back to quadrature.

    The tabulated-ruin compositions are piecewise linear with closely spaced
    knots, so the adaptive integrator may hit its subdivision cap while being
    far more accurate than the statistical tolerances; the cap warning is
    suppressed.
    """

    fn: Callable
    label: str = ""

    def __call__(self, t):
        if np.ndim(t) == 0:
            return float(self.fn(float(t)))
        return np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)

    def integral(self, lo: float, hi: float) -> float:
        if hi <= lo:
            return 0.0
        import warnings
        from scipy.integrate import IntegrationWarning

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IntegrationWarning)
            val, _ = quad(lambda u: float(self.fn(u)), lo, hi, limit=300)
        return val


Segment = AnalyticSegment | FunctionSegment


def constant(c: float) -> AnalyticSegment:
    return AnalyticSegment((PolyExpTerm((float(c),)),))


def linear(intercept: float, slope: float, t0: float = 0.0) -> AnalyticSegment:
    """``intercept + slope * (t - t0)``."""
    return AnalyticSegment((PolyExpTerm((float(intercept), float(slope)), 0.0, t0),))


def exponential(amplitude: float, rate: float, t0: float = 0.0) -> AnalyticSegment:
    """``amplitude * exp(rate * (t - t0))``."""
    return AnalyticSegment((PolyExpTerm((float(amplitude),), float(rate), t0),))


def as_segment(value) -> Segment:
    if isinstance(value, (AnalyticSegment, FunctionSegment)):
        return value
    if callable(value):
        return FunctionSegment(value)
    return constant(float(value))


def product(a: Segment, b: Segment) -> Segment:
    """Product segment; analytic when both factors are."""
    if isinstance(a, AnalyticSegment) and isinstance(b, AnalyticSegment):
        return a * b
    return FunctionSegment(lambda t: np.asarray(a(t)) * np.asarray(b(t)))
