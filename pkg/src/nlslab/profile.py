"""Exponential-order approximation profiles around an unstable soliton.

Around a bound state with unstable eigenvalue lambda = rho + i theta the
perturbation equation dW/dt + L W = M(W) is solved order by order with the
trig-exponential ansatz

    W(t, x) = sum_{k=1}^{N0} e^{-rho k t} sum_{j=0}^{k}
              ( A_{j,k}(x) cos(j theta t) + B_{j,k}(x) sin(j theta t) ),

seeded at level one by a times the linear solution, the remaining levels
coming from resolvent solves against the multinomial expansion of the
nonlinear remainder.  Coefficients are grid functions; the time dependence
stays symbolic, so the PDE residual of the reconstructed approximate
solution carries no time-discretization error.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import grid as gridmod
from .grid import Field, GridSpec
from .boundstate import BoundState
from .linearization import BlockOperator, ResolventError, Spectrum, resolvent_solve
from .nonlinearity import Nonlinearity


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrigPoly:
    """One decay grade of a trig polynomial in t: frequencies j <= decay_order,
    evaluated as sum_j (A_j cos(j theta t) + B_j sin(j theta t)) e^{-kappa rho t}.

    Coefficients are R^2-valued grid functions stored as (2, *shape) arrays.
    """

    decay_order: int
    terms: dict  # j -> (A, B)

    def eval(self, t: float, rho: float, theta: float) -> np.ndarray:
        out = None
        for j, (A, B) in self.terms.items():
            val = A * math.cos(j * theta * t) + B * math.sin(j * theta * t)
            out = val if out is None else out + val
        if out is None:
            raise ProfileError("empty trig polynomial")
        return math.exp(-self.decay_order * rho * t) * out

    def max_frequency(self) -> int:
        return max(self.terms) if self.terms else 0


@dataclass
class Profile:
    """Coefficient tables A_{j,k}, B_{j,k} for 0 <= j <= k <= order."""

    order: int
    a: float
    rho: float
    theta: float
    omega: float
    grid: GridSpec
    coeff_A: dict = field(repr=False)   # (j, k) -> (2, *shape) real array
    coeff_B: dict = field(repr=False)
    level_residuals: dict = field(default_factory=dict)
    levels_read: dict = field(default_factory=dict)  # k -> max source level used


# ---------------------------------------------------------------------------
# linear solution Y


def build_Y(spec: Spectrum, t: float):
    """Y(t) = e^{-rho t}(cos(theta t) Y1 + sin(theta t) Y2), Y1 = Re Z, Y2 = Im Z."""
    Y = Y_array(spec, t)
    g = spec.grid
    return (Field(g, Y[0].astype(np.complex128), t),
            Field(g, Y[1].astype(np.complex128), t))


def Y_array(spec: Spectrum, t: float) -> np.ndarray:
    Z = spec.Zvec()
    Y1, Y2 = Z.real, Z.imag
    return math.exp(-spec.rho * t) * (
        math.cos(spec.theta * t) * Y1 + math.sin(spec.theta * t) * Y2)


def linear_flow_defect(op: BlockOperator, spec: Spectrum, t: float,
                       dt: float = 1e-4) -> float:
    """||dY/dt + L Y||_L2 with the time derivative by central differences."""
    Yp = Y_array(spec, t + dt)
    Ym = Y_array(spec, t - dt)
    dY = (Yp - Ym) / (2.0 * dt)
    defect = dY + op.apply(Y_array(spec, t))
    g = spec.grid
    return float(np.linalg.norm(defect.ravel()) * g.dx ** (g.dim / 2.0))


# ---------------------------------------------------------------------------
# pointwise Taylor tables of the nonlinear remainder


def direct_remainder(nl: Nonlinearity, b: BoundState, V: np.ndarray) -> np.ndarray:
    """M(v) = i [ f(Phi + v) - f(Phi) - df(Phi).v ] evaluated pointwise,
    for V an R^2-valued perturbation of shape (2, *shape)."""
    phi = b.profile.values
    vc = V[0] + 1j * V[1]
    Mc = 1j * (nl.f(phi + vc) - nl.f(phi) - nl.df(phi, vc))
    return np.stack([Mc.real, Mc.imag])


def _poly_mul(P1: dict, P2: dict, cap: int) -> dict:
    out = {}
    for (a1, b1), c1 in P1.items():
        for (a2, b2), c2 in P2.items():
            a, b = a1 + a2, b1 + b2
            if a + b > cap:
                continue
            key = (a, b)
            prod = c1 * c2
            out[key] = out.get(key, 0.0) + prod
    return out


def taylor_coeffs(nl: Nonlinearity, b: BoundState, order: int):
    """Tables P_{j,m}, Q_{j,m}: coefficients of (v+)^j (v-)^{m-j} in the two
    components of M(v), for 2 <= m <= order, computed by exact Taylor
    expansion of the g family around s = Phi^2.

    The degree-0 and degree-1 coefficients of f(Phi + v) are exactly f(Phi)
    and df(Phi), so dropping them realizes the subtraction with valuation 2
    built in.
    """
    if order > 6:
        raise ProfileError("expansion order capped at 6 (combinatorial growth)")
    phi = b.profile.values.real
    s0 = phi**2
    gders = nl.g_derivs(s0, order)

    sigma = {(1, 0): 2.0 * phi, (2, 0): 1.0, (0, 2): 1.0}   # |Phi+v|^2 - Phi^2
    gpoly = {(0, 0): np.asarray(gders[0], dtype=float)}
    spow = {(0, 0): 1.0}
    fact = 1.0
    for m in range(1, order + 1):
        spow = _poly_mul(spow, sigma, order)
        fact *= m
        gm = np.asarray(gders[m], dtype=float)
        if not np.any(gm):
            continue
        for key, c in spow.items():
            gpoly[key] = gpoly.get(key, 0.0) + (gm / fact) * c

    f_re = _poly_mul(gpoly, {(0, 0): phi, (1, 0): 1.0}, order)
    f_im = _poly_mul(gpoly, {(0, 1): 1.0}, order)

    P, Q = {}, {}
    shape = b.grid.shape
    for m in range(2, order + 1):
        for j in range(0, m + 1):
            key = (j, m - j)
            xm = f_im.get(key, 0.0)   # M+ = -X-,  M- = X+
            xp = f_re.get(key, 0.0)
            P[(j, m)] = -np.broadcast_to(np.asarray(xm, dtype=float), shape).copy() \
                if np.ndim(xm) or xm else np.zeros(shape)
            Q[(j, m)] = np.broadcast_to(np.asarray(xp, dtype=float), shape).copy() \
                if np.ndim(xp) or xp else np.zeros(shape)
    return P, Q


# ---------------------------------------------------------------------------
# graded trig-polynomial arithmetic
#
# a "graded" polynomial is {kappa: {j: [cos_coeff, sin_coeff]}} with scalar
# (one-component) ndarray coefficients; decay grades add under multiplication
# and everything above the cap is discarded.


def _dg_add_term(dg: dict, kappa: int, j: int, c, s):
    lv = dg.setdefault(kappa, {})
    if j == 0:
        s = 0.0  # sin(0) contributes nothing; keep the representation canonical
    if j in lv:
        lv[j][0] = lv[j][0] + c
        lv[j][1] = lv[j][1] + s
    else:
        lv[j] = [c + 0.0, s + 0.0]


def _dg_mul(X: dict, Y: dict, cap: int) -> dict:
    out = {}
    for k1, terms1 in X.items():
        for k2, terms2 in Y.items():
            kappa = k1 + k2
            if kappa > cap:
                continue
            for j1, (c1, s1) in terms1.items():
                for j2, (c2, s2) in terms2.items():
                    jp, jm = j1 + j2, abs(j1 - j2)
                    sgn = 1.0 if j1 >= j2 else -1.0  # sin((j1-j2)x) parity
                    cc, ss = c1 * c2, s1 * s2
                    cs, sc = c1 * s2, s1 * c2
                    # cos cos = (cos(jm) + cos(jp))/2 ; sin sin = (cos(jm) - cos(jp))/2
                    _dg_add_term(out, kappa, jm, 0.5 * (cc + ss), 0.0)
                    _dg_add_term(out, kappa, jp, 0.5 * (cc - ss), 0.0)
                    # sin cos = (sin(jp) + sin(j1-j2))/2 ; cos sin = (sin(jp) - sin(j1-j2))/2
                    _dg_add_term(out, kappa, jp, 0.0, 0.5 * (sc + cs))
                    _dg_add_term(out, kappa, jm, 0.0, 0.5 * sgn * (sc - cs))
    return out


def _dg_scale(X: dict, w) -> dict:
    return {k: {j: [w * c, w * s] for j, (c, s) in terms.items()}
            for k, terms in X.items()}


def _dg_accumulate(target: dict, X: dict):
    for k, terms in X.items():
        for j, (c, s) in terms.items():
            _dg_add_term(target, k, j, c, s)


def _component_dg(coeff_A: dict, coeff_B: dict, comp: int, max_level: int) -> dict:
    dg = {}
    for (j, k), A in coeff_A.items():
        if k > max_level:
            continue
        B = coeff_B[(j, k)]
        if not (np.any(A[comp]) or np.any(B[comp])):
            continue
        _dg_add_term(dg, k, j, A[comp], B[comp])
    return dg


def expand_nonlinear(coeff_A: dict, coeff_B: dict, taylor, max_level: int,
                     order: int) -> dict:
    """Multinomial expansion of M(W) for W built from coefficients up to
    `max_level`, bucketed by decay grade kappa = 2..order.

    Returns {kappa: TrigPoly}; grades above `order` are discarded, which is
    exactly the O(e^{-(N0+1) rho t}) truncation.
    """
    P, Q = taylor
    Wp = _component_dg(coeff_A, coeff_B, 0, max_level)
    Wm = _component_dg(coeff_A, coeff_B, 1, max_level)

    one = {0: {0: [1.0, 0.0]}}
    pow_p, pow_m = [one], [one]
    for n in range(1, order + 1):
        pow_p.append(_dg_mul(pow_p[-1], Wp, order))
        pow_m.append(_dg_mul(pow_m[-1], Wm, order))

    M1, M2 = {}, {}
    for m in range(2, order + 1):
        for n in range(0, m + 1):
            prod = _dg_mul(pow_p[n], pow_m[m - n], order)
            if not prod:
                continue
            _dg_accumulate(M1, _dg_scale(prod, P[(n, m)]))
            _dg_accumulate(M2, _dg_scale(prod, Q[(n, m)]))

    shape = None
    for (jk, arr) in coeff_A.items():
        shape = arr.shape[1:]
        break
    out = {}
    for kappa in range(2, order + 1):
        terms = {}
        js = set(M1.get(kappa, {})) | set(M2.get(kappa, {}))
        for j in sorted(js):
            if j > kappa:
                raise ProfileError(f"frequency {j} exceeds decay grade {kappa}")
            c1, s1 = M1.get(kappa, {}).get(j, [0.0, 0.0])
            c2, s2 = M2.get(kappa, {}).get(j, [0.0, 0.0])
            A = np.stack([np.broadcast_to(np.asarray(c1, dtype=float), shape),
                          np.broadcast_to(np.asarray(c2, dtype=float), shape)])
            B = np.stack([np.broadcast_to(np.asarray(s1, dtype=float), shape),
                          np.broadcast_to(np.asarray(s2, dtype=float), shape)])
            if not (np.any(A) or np.any(B)):
                continue
            terms[j] = (A, B)
        out[kappa] = TrigPoly(decay_order=kappa, terms=terms)
    return out


# ---------------------------------------------------------------------------
# level solves and the full induction


def solve_level(op: BlockOperator, spec: Spectrum, k: int, tildes: TrigPoly):
    """Solve the level-k coefficient system

        L A_{j,k} + j theta B_{j,k} - k rho A_{j,k} = Atilde_{j,k}
        L B_{j,k} - j theta A_{j,k} - k rho B_{j,k} = Btilde_{j,k}

    via X = (L - (k rho + i j theta))^{-1} (Atilde + i Btilde), A = Re X,
    B = Im X.  Valid for k >= 2 by maximality of rho.
    """
    if k < 2:
        raise ProfileError("level solves start at k = 2; level 1 is the seed")
    g = op.grid
    shape = (2,) + g.shape
    coeffs = {}
    for j in range(0, k + 1):
        if j in tildes.terms:
            At, Bt = tildes.terms[j]
            rhs = At + 1j * Bt
            mu = k * spec.rho + 1j * j * spec.theta
            try:
                X = resolvent_solve(op, mu, rhs, spec=spec)
            except ResolventError as exc:
                raise ProfileError(
                    f"spectral maximality violated at level {k} (j={j}): {exc}")
            A, B = X.real.copy(), X.imag.copy()
            res = op.apply(A) + j * spec.theta * B - k * spec.rho * A - At
            resn = float(np.linalg.norm(res.ravel()) * g.dx ** (g.dim / 2.0))
        else:
            A, B = np.zeros(shape), np.zeros(shape)
            resn = 0.0
        coeffs[(j, k)] = (A, B, resn)
    return coeffs


def build_profile(nl: Nonlinearity, b: BoundState, op: BlockOperator,
                  spec: Spectrum, order: int, a: float) -> Profile:
    """Induction k = 1..order: seed A_{1,1} = a Y1, B_{1,1} = a Y2, then each
    level solves against the grade-k bucket of the expanded remainder built
    from levels <= k-1."""
    if spec.rho <= 0:
        raise ProfileError("profile construction needs an unstable eigenvalue (rho > 0)")
    if order < 1:
        raise ProfileError("order must be >= 1")
    g = b.grid
    shape = (2,) + g.shape
    Z = spec.Zvec()
    coeff_A = {(0, 1): np.zeros(shape), (1, 1): a * Z.real.copy()}
    coeff_B = {(0, 1): np.zeros(shape), (1, 1): a * Z.imag.copy()}
    level_res = {1: 0.0}
    levels_read = {}
    taylor = taylor_coeffs(nl, b, order) if order >= 2 else None
    for k in range(2, order + 1):
        buckets = expand_nonlinear(coeff_A, coeff_B, taylor, max_level=k - 1,
                                   order=k)
        levels_read[k] = max((kk for (_, kk) in coeff_A), default=0)
        solved = solve_level(op, spec, k, buckets[k])
        worst = 0.0
        for (j, kk), (A, B, resn) in solved.items():
            coeff_A[(j, kk)] = A
            coeff_B[(j, kk)] = B
            worst = max(worst, resn)
        level_res[k] = worst
    return Profile(order=order, a=a, rho=spec.rho, theta=spec.theta,
                   omega=b.omega, grid=g, coeff_A=coeff_A, coeff_B=coeff_B,
                   level_residuals=level_res, levels_read=levels_read)


# ---------------------------------------------------------------------------
# evaluation and the PDE residual


def profile_eval(p: Profile, t: float) -> np.ndarray:
    """W(t) as an R^2-valued array (2, *shape)."""
    out = np.zeros((2,) + p.grid.shape)
    for (j, k), A in p.coeff_A.items():
        B = p.coeff_B[(j, k)]
        ek = math.exp(-p.rho * k * t)
        out += ek * (A * math.cos(j * p.theta * t) + B * math.sin(j * p.theta * t))
    return out


def profile_dt_eval(p: Profile, t: float) -> np.ndarray:
    """Exact time derivative of the trig-exponential ansatz."""
    out = np.zeros((2,) + p.grid.shape)
    for (j, k), A in p.coeff_A.items():
        B = p.coeff_B[(j, k)]
        ek = math.exp(-p.rho * k * t)
        c, s = math.cos(j * p.theta * t), math.sin(j * p.theta * t)
        out += ek * ((-k * p.rho * A + j * p.theta * B) * c
                     + (-k * p.rho * B - j * p.theta * A) * s)
    return out


def profile_complex(p: Profile, t: float) -> np.ndarray:
    W = profile_eval(p, t)
    return W[0] + 1j * W[1]


def approximate_solution(p: Profile, b: BoundState, t: float) -> Field:
    """U(t) = R(t) + e^{i omega t} W(t) in the soliton rest frame."""
    phase = np.exp(1j * p.omega * t)
    U = phase * (b.profile.values + profile_complex(p, t))
    return Field(b.grid, U, t)


def residual_err(p: Profile, b: BoundState, nl: Nonlinearity, t: float) -> Field:
    """Err(t) = i dU/dt + Delta U + f(U) with the time derivative taken
    analytically from the trig-exponential form."""
    g = b.grid
    phase = np.exp(1j * p.omega * t)
    Wc = profile_complex(p, t)
    dWc = profile_dt_eval(p, t)
    dWc = dWc[0] + 1j * dWc[1]
    U = phase * (b.profile.values + Wc)
    dU = 1j * p.omega * U + phase * dWc
    lap = np.fft.ifftn(-g.ksq() * np.fft.fftn(U))
    return Field(g, 1j * dU + lap + nl.f(U), t)


def deviation_from_linear(p: Profile, spec: Spectrum, t: float) -> float:
    """||W(t) - a Y(t)||_L2: decays at rate 2 rho."""
    W = profile_eval(p, t)
    D = W - p.a * Y_array(spec, t)
    g = p.grid
    return float(np.linalg.norm(D.ravel()) * g.dx ** (g.dim / 2.0))


def expansion_defect(p: Profile, b: BoundState, nl: Nonlinearity, t: float) -> float:
    """||M(W(t)) - sum_kappa e^{-kappa rho t} TrigPoly_kappa(t)||_L2, the
    direct-evaluation oracle of the trig expansion."""
    taylor = taylor_coeffs(nl, b, p.order)
    buckets = expand_nonlinear(p.coeff_A, p.coeff_B, taylor,
                               max_level=p.order, order=p.order)
    W = profile_eval(p, t)
    direct = direct_remainder(nl, b, W)
    approx = np.zeros_like(direct)
    for kappa, tp in buckets.items():
        if tp.terms:
            approx += tp.eval(t, p.rho, p.theta)
    g = p.grid
    return float(np.linalg.norm((direct - approx).ravel()) * g.dx ** (g.dim / 2.0))


# ---------------------------------------------------------------------------
# serialization: a directory with a manifest plus one snapshot per coefficient


def save_profile(p: Profile, dirpath):
    os.makedirs(dirpath, exist_ok=True)
    manifest = {"order": p.order, "a": p.a, "rho": p.rho, "theta": p.theta,
                "omega": p.omega, "dim": p.grid.dim, "n": p.grid.n,
                "ell": p.grid.ell,
                "levels": sorted({k for (_, k) in p.coeff_A})}
    with open(os.path.join(dirpath, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    for (j, k), A in sorted(p.coeff_A.items()):
        B = p.coeff_B[(j, k)]
        # pack the R^2 pair as one complex snapshot per table: re = "+", im = "-"
        fa = Field(p.grid, A[0] + 1j * A[1], 0.0)
        fb = Field(p.grid, B[0] + 1j * B[1], 0.0)
        gridmod.write_snapshot(fa, os.path.join(dirpath, f"A_{j}_{k}.nlsf"))
        gridmod.write_snapshot(fb, os.path.join(dirpath, f"B_{j}_{k}.nlsf"))


def load_profile(dirpath) -> Profile:
    with open(os.path.join(dirpath, "manifest.json")) as fh:
        m = json.load(fh)
    g = GridSpec(m["dim"], m["n"], m["ell"])
    coeff_A, coeff_B = {}, {}
    for name in sorted(os.listdir(dirpath)):
        if not name.endswith(".nlsf"):
            continue
        stem = name[:-5]
        kind, j, k = stem.split("_")
        f = gridmod.read_snapshot(os.path.join(dirpath, name))
        arr = np.stack([f.values.real, f.values.imag])
        (coeff_A if kind == "A" else coeff_B)[(int(j), int(k))] = arr
    return Profile(order=m["order"], a=m["a"], rho=m["rho"], theta=m["theta"],
                   omega=m["omega"], grid=g, coeff_A=coeff_A, coeff_B=coeff_B)
