"""Focusing nonlinearities f(z) = g(|z|^2) z with primitive F and real-linear
differential df, plus structural checks of the standing hypotheses (A1)-(A3).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad


class Nonlinearity:
    """Base interface: subclasses provide g, g' and the primitive F.

    g must satisfy g(0) = 0 and s g'(s) -> 0 as s -> 0 (assumption (A1));
    the built-in families do.  Custom g's supply derivative callables so the
    profile machinery can Taylor-expand them.
    """

    dim: int = 1

    def g(self, s):
        raise NotImplementedError

    def dg(self, s):
        raise NotImplementedError

    def F(self, s):
        """Primitive F(s) = int_0^s g(sigma^2) sigma dsigma for amplitudes s >= 0."""
        raise NotImplementedError

    def g_derivs(self, s, order: int) -> list:
        """[g(s), g'(s), ..., g^(order)(s)] evaluated elementwise.

        Needed up to order N0 by the profile construction.
        """
        raise NotImplementedError

    # -- pointwise operations shared by all families ------------------------

    def f(self, z):
        """f(z) = g(|z|^2) z."""
        z = np.asarray(z, dtype=np.complex128)
        return self.g(np.abs(z) ** 2) * z

    def eval_F(self, s):
        s = np.asarray(s, dtype=float)
        if np.any(s < 0):
            raise ValueError("F is defined for amplitudes s >= 0")
        return self.F(s)

    def df(self, z, w):
        """Real-linear Jacobian action df(z).w = g(|z|^2) w + 2 Re(z conj(w)) g'(|z|^2) z.

        Not C-linear in w.  The g' term is extended by 0 at z = 0, which is
        the continuous extension forced by s g'(s) -> 0.
        """
        z = np.asarray(z, dtype=np.complex128)
        w = np.asarray(w, dtype=np.complex128)
        s = np.abs(z) ** 2
        out = self.g(s) * w
        mask = s > 0
        if np.ndim(z) == 0:
            if s > 0:
                out = out + 2.0 * np.real(z * np.conj(w)) * self.dg(s) * z
            return out
        term = np.zeros_like(out)
        sm = s[mask]
        term[mask] = 2.0 * np.real(z[mask] * np.conj(w[mask])) * self.dg(sm) * z[mask]
        return out + term


@dataclass(frozen=True)
class PurePower(Nonlinearity):
    """f(z) = |z|^(p-1) z, i.e. g(s) = s^((p-1)/2)."""

    p: float
    dim: int = 1

    def __post_init__(self):
        if self.p <= 1:
            raise ValueError("need p > 1")

    @property
    def q(self) -> float:
        return 0.5 * (self.p - 1.0)

    def g(self, s):
        s = np.asarray(s, dtype=float)
        return s**self.q

    def dg(self, s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.q * s ** (self.q - 1.0)
        return np.where(s > 0, out, 0.0 if self.q >= 1 else np.inf)

    def F(self, s):
        return np.asarray(s, dtype=float) ** (self.p + 1.0) / (self.p + 1.0)

    def g_derivs(self, s, order):
        s = np.asarray(s, dtype=float)
        out = [self.g(s)]
        coef = 1.0
        for m in range(1, order + 1):
            coef *= self.q - (m - 1)
            e = self.q - m
            if coef == 0.0:
                out.append(np.zeros_like(s))
            elif e == 0.0:
                out.append(np.full_like(s, coef))
            elif e > 0:
                out.append(coef * s**e)
            else:
                # fractional exponents blow up at s = 0; extend by 0 there
                with np.errstate(divide="ignore", invalid="ignore"):
                    val = coef * s**e
                out.append(np.where(s > 0, val, 0.0))
        return out


@dataclass(frozen=True)
class CubicQuintic(Nonlinearity):
    """g(s) = c3 s + c5 s^2, the cubic-quintic family."""

    c3: float
    c5: float
    dim: int = 1

    def g(self, s):
        s = np.asarray(s, dtype=float)
        return self.c3 * s + self.c5 * s**2

    def dg(self, s):
        s = np.asarray(s, dtype=float)
        return self.c3 + 2.0 * self.c5 * s

    def F(self, s):
        s = np.asarray(s, dtype=float)
        return self.c3 * s**4 / 4.0 + self.c5 * s**6 / 6.0

    def g_derivs(self, s, order):
        s = np.asarray(s, dtype=float)
        out = [self.g(s), self.dg(s)]
        if order >= 2:
            out.append(np.full_like(s, 2.0 * self.c5))
        for _ in range(3, order + 1):
            out.append(np.zeros_like(s))
        return out[: order + 1]


@dataclass(frozen=True)
class CustomG(Nonlinearity):
    """Extension point for user-supplied g with its derivatives and primitive.

    g_higher, when given, maps (s, m) -> g^(m)(s) for m >= 2 and is required
    by the profile construction.
    """

    g_fn: Callable
    dg_fn: Callable
    F_fn: Callable
    g_higher: Optional[Callable] = None
    dim: int = 1

    def g(self, s):
        return self.g_fn(np.asarray(s, dtype=float))

    def dg(self, s):
        return self.dg_fn(np.asarray(s, dtype=float))

    def F(self, s):
        return self.F_fn(np.asarray(s, dtype=float))

    def g_derivs(self, s, order):
        s = np.asarray(s, dtype=float)
        out = [self.g(s), self.dg(s)]
        for m in range(2, order + 1):
            if self.g_higher is None:
                raise ValueError("custom nonlinearity needs g_higher for Taylor expansion")
            out.append(np.asarray(self.g_higher(s, m)))
        return out[: order + 1]


@dataclass(frozen=True)
class AssumptionReport:
    a1: bool
    a2: bool
    a3_witness: Optional[float]

    @property
    def a3(self) -> bool:
        return self.a3_witness is not None


def _subcritical(p: float, dim: int) -> bool:
    if dim <= 2:
        return p > 1
    return 1 < p < 1 + 4.0 / (dim - 2)


def check_assumptions(nl: Nonlinearity) -> AssumptionReport:
    """Check (A1) regularity, (A2) growth/subcriticality, (A3) focusing witness.

    (A1) and (A2) are decided structurally per family; (A3) by scanning a log
    grid of amplitudes s in [1e-3, 1e3] for F(s) > s^2/2 and returning the
    first witness found.
    """
    if isinstance(nl, PurePower):
        a1 = nl.p > 1
        a2 = _subcritical(nl.p, nl.dim)
    elif isinstance(nl, CubicQuintic):
        a1 = True
        # effective growth exponent: p = 3 if c5 == 0, else p = 5
        p_eff = 3.0 if nl.c5 == 0.0 else 5.0
        a2 = _subcritical(p_eff, nl.dim) if (nl.c3 or nl.c5) else True
    else:
        a1 = True  # custom families are trusted to document their own regularity
        a2 = True
    witness = None
    for s in np.logspace(-3, 3, 400):
        if nl.eval_F(s) > 0.5 * s**2:
            witness = float(s)
            break
    return AssumptionReport(a1=a1, a2=a2, a3_witness=witness)


def quadrature_F(nl: Nonlinearity, s: float) -> float:
    """Independent quadrature of the primitive, for cross-checks."""
    val, _ = quad(lambda sig: float(np.real(nl.g(sig**2))) * sig, 0.0, s, limit=200)
    return val
