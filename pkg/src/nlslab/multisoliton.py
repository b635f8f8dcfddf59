"""Solitons, soliton sums, and the experiments built on them: backward
construction of multi-solitons, coercivity of the boosted action Hessian,
modulation distance to the soliton family, and instability runs seeded by
the exponential-order profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import gamma as gamma_fn

from . import grid as gridmod
from .grid import Field, GridSpec
from .boundstate import BoundState
from .evolution import CutoffFamily, Integrator, conserved, evolve, localized_quantities
from .linearization import Spectrum, fit_log_slope
from .nonlinearity import Nonlinearity
from .profile import Profile, approximate_solution, Y_array


class DirectionSearchError(RuntimeError):
    pass


class RateFitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# solitons and ensembles


@dataclass(frozen=True)
class SolitonParams:
    """Parameters of the travelling wave built on a bound state."""

    state: BoundState
    gamma: float = 0.0
    v: tuple = (0.0,)
    x0: tuple = (0.0,)

    def __post_init__(self):
        v = tuple(float(c) for c in np.atleast_1d(self.v))
        x0 = tuple(float(c) for c in np.atleast_1d(self.x0))
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "x0", x0)
        if len(v) != self.state.grid.dim or len(x0) != self.state.grid.dim:
            raise ValueError("v and x0 must match the grid dimension")
        if self.state.omega <= 0:
            raise ValueError("omega must be positive")

    @property
    def omega(self) -> float:
        return self.state.omega


def direction_alpha(dim: int, N: int) -> float:
    """The transversality constant sin(sqrt(pi) Gamma((d-1)/2) / (N^2 Gamma(d/2))).

    In one dimension the unit sphere is {-1, +1} and any admissible direction
    realizes the full inner product, so the constant saturates at 1.
    """
    if dim == 1:
        return 1.0
    arg = math.sqrt(math.pi) * gamma_fn((dim - 1) / 2.0) / (N**2 * gamma_fn(dim / 2.0))
    return math.sin(min(arg, 0.5 * math.pi))


def claim_alpha_bound(dim: int, N: int) -> float:
    """The weaker N(N-1) threshold under which a valid direction must exist."""
    if dim == 1:
        return 1.0
    arg = math.sqrt(math.pi) * gamma_fn((dim - 1) / 2.0) / (N * (N - 1) * gamma_fn(dim / 2.0))
    return math.sin(min(arg, 0.5 * math.pi))


@dataclass(frozen=True)
class EnsembleConfig:
    """Solitons ordered by increasing first velocity coordinate, with the
    derived constants of the high-speed estimates.

    N = 1 is allowed as the degenerate ensemble (no pair constraints,
    v_star = inf): every multi-soliton operation then reduces to its
    single-soliton counterpart on the same code path.
    """

    solitons: tuple

    def __post_init__(self):
        sols = tuple(sorted(self.solitons, key=lambda p: p.v[0]))
        if len(sols) < 1:
            raise ValueError("an ensemble needs at least one soliton")
        object.__setattr__(self, "solitons", sols)
        vs = np.array([p.v for p in sols])
        gaps = [np.linalg.norm(vs[j] - vs[k])
                for j in range(len(sols)) for k in range(j + 1, len(sols))]
        if gaps and min(gaps) <= 0:
            raise ValueError("all pairwise relative velocities must be nonzero")

    @property
    def N(self) -> int:
        return len(self.solitons)

    @property
    def dim(self) -> int:
        return self.solitons[0].state.grid.dim

    @property
    def omega_star(self) -> float:
        return 0.5 * min(p.omega for p in self.solitons)

    @property
    def v_star(self) -> float:
        if self.N == 1:
            return math.inf
        vs = [np.asarray(p.v) for p in self.solitons]
        return min(float(np.linalg.norm(vs[j] - vs[k]))
                   for j in range(self.N) for k in range(j + 1, self.N)) / 9.0

    @property
    def alpha(self) -> float:
        return direction_alpha(self.dim, self.N)

    def decay_exponent(self) -> float:
        """alpha * sqrt(omega_star) * v_star, the rate in the uniform estimate."""
        return self.alpha * math.sqrt(self.omega_star) * self.v_star

    def cutoffs(self) -> CutoffFamily:
        return CutoffFamily(tuple(p.v[0] for p in self.solitons))


def quantize_speed(v, ell: float):
    """Snap each component to the 2*pi/ell lattice so the Galilean phase is
    periodic on the box."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    unit = 2.0 * math.pi / ell
    return tuple(unit * np.round(v / unit))


def soliton_field(p: SolitonParams, grid: GridSpec, t: float) -> Field:
    """R(t,x) = Phi(x - v t - x0) e^{i(v.x/2 - |v|^2 t/4 + omega t + gamma)}.

    The profile is translated spectrally on its native grid (band-limited
    exact, periodic wrap); the phase uses the unwrapped box coordinates.
    """
    v = np.asarray(p.v)
    x0 = np.asarray(p.x0)
    center = v * t + x0
    if p.state.grid == grid:
        prof = gridmod.shift(p.state.profile, center)
    else:
        if p.state.radial is None:
            raise ValueError("profile grid mismatch and no radial table to resample")
        xs = grid.coords()
        half = np.array([grid.ell] * grid.dim)
        ys = [((x - c + grid.ell) % (2 * grid.ell)) - grid.ell
              for x, c in zip(xs, center)]
        r = np.sqrt(sum(y**2 for y in ys))
        prof = Field(grid, p.state.radial(r).astype(np.complex128), t)
    xs = grid.coords()
    phase = sum(0.5 * vi * x for vi, x in zip(v, xs)) \
        - 0.25 * float(v @ v) * t + p.omega * t + p.gamma
    return Field(grid, prof.values * np.exp(1j * phase), t)


def soliton_sum(ensemble: EnsembleConfig, grid: GridSpec, t: float) -> Field:
    out = np.zeros(grid.shape, dtype=np.complex128)
    for p in ensemble.solitons:
        out += soliton_field(p, grid, t).values
    return Field(grid, out, t)


def soliton_nls_residual(nl: Nonlinearity, p: SolitonParams, grid: GridSpec,
                         t: float) -> float:
    """L-infinity defect of the sampled soliton in the stationary identity
    -Delta R + (omega + |v|^2/4) R - f(R) + i v . grad R = 0, equivalent to
    the NLS residual with the time derivative taken analytically."""
    R = soliton_field(p, grid, t)
    v = np.asarray(p.v)
    lap = gridmod.laplacian(R)
    grads = gridmod.gradient(R)
    vdotgrad = sum(vi * gf.values for vi, gf in zip(v, grads))
    res = -lap.values + (p.omega + 0.25 * float(v @ v)) * R.values \
        - nl.f(R.values) + 1j * vdotgrad
    return float(np.max(np.abs(res)))


# ---------------------------------------------------------------------------
# direction selection


def _fibonacci_sphere(m: int) -> np.ndarray:
    i = np.arange(m) + 0.5
    phi = math.pi * (3.0 - math.sqrt(5.0)) * i
    z = 1.0 - 2.0 * i / m
    r = np.sqrt(np.maximum(0.0, 1.0 - z**2))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _pair_directions(velocities) -> np.ndarray:
    vs = [np.atleast_1d(np.asarray(v, dtype=float)) for v in velocities]
    out = []
    for j in range(len(vs)):
        for k in range(j + 1, len(vs)):
            d = vs[j] - vs[k]
            nd = np.linalg.norm(d)
            if nd == 0:
                raise ValueError("coincident velocities have no direction gap")
            out.append(d / nd)
    return np.asarray(out)


def _min_ratio(cands: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    return np.abs(cands @ pairs.T).min(axis=1)


def select_direction(velocities, alpha: float):
    """Deterministic quasi-uniform sphere sweep for a unit vector e1 with
    |(v_j - v_k, e1)| >= alpha |v_j - v_k| for every pair, refined locally
    to near-maximin resolution and completed to an orthonormal basis.
    """
    pairs = _pair_directions(velocities)
    dim = pairs.shape[1]
    if dim == 1:
        e1 = np.array([1.0])
        if alpha > 1.0:
            raise DirectionSearchError("alpha too large for configuration")
        return np.array([[1.0]])
    if dim == 2:
        th = np.arange(0.0, math.pi, 1e-3)
        cands = np.stack([np.cos(th), np.sin(th)], axis=1)
    else:
        cands = _fibonacci_sphere(20000)
    q = _min_ratio(cands, pairs)
    best = cands[int(np.argmax(q))]
    # local refinement: shrink a tangent patch around the incumbent
    span = 0.05 if dim == 3 else 1e-3
    while span > 2e-5:
        basis = scipy.linalg.null_space(best[None, :])
        steps = np.linspace(-span, span, 9)
        if dim == 2:
            patch = best[None, :] + steps[:, None] * basis[:, 0][None, :]
        else:
            uu, vv = np.meshgrid(steps, steps, indexing="ij")
            patch = (best[None, :] + uu.ravel()[:, None] * basis[:, 0][None, :]
                     + vv.ravel()[:, None] * basis[:, 1][None, :])
        patch = patch / np.linalg.norm(patch, axis=1, keepdims=True)
        qp = _min_ratio(patch, pairs)
        i = int(np.argmax(qp))
        if qp[i] > _min_ratio(best[None, :], pairs)[0]:
            best = patch[i]
        span /= 4.0
    qbest = float(_min_ratio(best[None, :], pairs)[0])
    if qbest < alpha:
        raise DirectionSearchError(
            f"alpha too large for configuration: best min-ratio {qbest:.4f} < {alpha:.4f}")
    # canonical sign, then near-optimal lexicographic tie-break
    e1 = best if best[np.argmax(np.abs(best) > 1e-12)] > 0 else -best
    nz = np.nonzero(np.abs(e1) > 1e-12)[0][0]
    if e1[nz] < 0:
        e1 = -e1
    return _complete_basis(e1)


def _complete_basis(e1: np.ndarray) -> np.ndarray:
    dim = e1.size
    basis = [e1 / np.linalg.norm(e1)]
    for k in range(dim):
        cand = np.zeros(dim)
        cand[k] = 1.0
        for b in basis:
            cand = cand - (cand @ b) * b
        n = np.linalg.norm(cand)
        if n > 1e-8:
            basis.append(cand / n)
        if len(basis) == dim:
            break
    return np.asarray(basis)


def brute_force_maximin(velocities, samples: int, seed: int = 0) -> float:
    """Monte-Carlo sphere oracle: best achievable min-ratio over `samples`
    uniform directions."""
    pairs = _pair_directions(velocities)
    dim = pairs.shape[1]
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(samples, dim))
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return float(_min_ratio(pts, pairs).max())


# ---------------------------------------------------------------------------
# backward construction (approximate multi-solitons)


def backward_construct(nl: Nonlinearity, ensemble: EnsembleConfig, grid: GridSpec,
                       dt: float, Tn: float, T0: float, sample_every: int = 20):
    """Solve backward from u(Tn) = R(Tn) down to T0, recording the H1 error
    against the soliton sum and the localized functionals."""
    if not (0 < T0 < Tn):
        raise ValueError("need 0 < T0 < Tn")
    u_end = soliton_sum(ensemble, grid, Tn)
    intg = Integrator(dt=dt, direction=-1)
    cut = ensemble.cutoffs()
    ens_params = [(p.omega, p.v) for p in ensemble.solitons]

    def err_h1(f):
        R = soliton_sum(ensemble, grid, f.time)
        return gridmod.norm_h1(Field(grid, f.values - R.values, f.time))

    def err_l2(f):
        R = soliton_sum(ensemble, grid, f.time)
        return gridmod.norm_l2(Field(grid, f.values - R.values, f.time))

    observers = {"err_h1": err_h1, "err_l2": err_l2,
                 "mass": lambda f: conserved(nl, f)[1],
                 "energy": lambda f: conserved(nl, f)[0],
                 "script_S": lambda f: sum(
                     localized_quantities(cut, nl, f, j + 1, om, v).S
                     for j, (om, v) in enumerate(ens_params))}
    for j, (om, v) in enumerate(ens_params):
        observers[f"M_{j + 1}"] = (lambda f, jj=j + 1, om=om, v=v:
                                   localized_quantities(cut, nl, f, jj, om, v).M)
        observers[f"S_{j + 1}"] = (lambda f, jj=j + 1, om=om, v=v:
                                   localized_quantities(cut, nl, f, jj, om, v).S)
    final, series = evolve(intg, nl, u_end, T0, observers=observers,
                           sample_every=sample_every)
    return {"final": final, "series": series, "ensemble": ensemble}


def weighted_error_sup(series: dict, rate: float) -> float:
    """sup_t err_h1(t) * e^{+rate * t}: at most 1 when the uniform estimate
    holds with constant one."""
    t = series["t"]
    return float(np.max(series["err_h1"] * np.exp(rate * t)))


def error_decay_rate(series: dict, floor_factor: float = 30.0):
    """Fitted decay rate of the backward error above its discretization floor.

    The floor is read off the late-time plateau (where the genuine error has
    decayed below the splitting noise); the fit uses the early window where
    the recorded error exceeds floor_factor times that plateau.
    """
    t = np.asarray(series["t"], dtype=float)
    e = np.asarray(series["err_h1"], dtype=float)
    order = np.argsort(t)
    t, e = t[order], e[order]
    mid = 0.5 * (t[0] + t[-1])
    plateau = e[(t > mid) & (e > 0)]
    floor = float(np.median(plateau)) if plateau.size else 0.0
    mask = e >= max(floor_factor * floor, 1e-14)
    if mask.sum() < 4:
        raise RateFitError("not enough samples above the noise floor")
    slope, _, r2 = fit_log_slope(t[mask], e[mask])
    return -slope, r2, floor


def soliton_discretization_error(nl: Nonlinearity, p: SolitonParams,
                                 grid: GridSpec, dt: float, t0: float,
                                 t1: float, sample_every: int = 20):
    """Reference forward run of one exact soliton: the recorded H1 deviation
    is pure discretization error (splitting + grid truncation)."""
    u0 = soliton_field(p, grid, t0)
    intg = Integrator(dt=dt, direction=1 if t1 >= t0 else -1)

    def err(f):
        R = soliton_field(p, grid, f.time)
        return gridmod.norm_h1(Field(grid, f.values - R.values, f.time))

    final, series = evolve(intg, nl, u0, t1, observers={"err_h1": err},
                           sample_every=sample_every)
    return {"final": final, "series": series, "max_err": float(series["err_h1"].max())}


# ---------------------------------------------------------------------------
# coercivity (boosted action Hessian)


@dataclass(frozen=True)
class CoercivityData:
    K0: float
    nu0: int
    directions: list          # nu0 complex Fields, unit L2 norm
    negative_eigenvalues: np.ndarray
    threshold: float
    first_kept: float


def _hessian_dense(nl: Nonlinearity, b: BoundState) -> np.ndarray:
    """Dense symmetric matrix of the unboosted Hessian quadratic form
    on (Re z, Im z) grid pairs."""
    g = b.grid
    if g.dim != 1:
        raise NotImplementedError("dense coercivity eigensolve is 1D at desk scale")
    phi = b.profile.values
    pp, pm = phi.real, phi.imag
    s = np.abs(phi) ** 2
    gval = np.real(nl.g(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        gpr = np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)
    n = g.n
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=g.dx)
    F = np.fft.fft(np.eye(n), axis=0)
    D2 = np.fft.ifft(-(k**2)[:, None] * F, axis=0).real
    D2 = 0.5 * (D2 + D2.T)
    A11 = -D2 + np.diag(b.omega - gval - 2.0 * gpr * pp**2)
    A22 = -D2 + np.diag(b.omega - gval - 2.0 * gpr * pm**2)
    A12 = np.diag(-2.0 * gpr * pp * pm)
    return np.block([[A11, A12], [A12, A22]])


def coercivity_data(nl: Nonlinearity, p: SolitonParams, threshold: float) -> CoercivityData:
    """Eigenpairs of the Hessian operator below `threshold` < omega: the
    finitely many directions on which the quadratic form is not coercive."""
    b = p.state
    if threshold >= b.omega:
        raise ValueError("threshold must sit below omega (essential spectrum edge)")
    H = _hessian_dense(nl, b)
    ev, V = scipy.linalg.eigh(H)
    g = b.grid
    below = ev < threshold
    nu0 = int(below.sum())
    dirs = []
    for i in np.nonzero(below)[0]:
        vec = V[:, i] / (np.linalg.norm(V[:, i]) * g.dx ** (g.dim / 2.0))
        z = vec[: g.size].reshape(g.shape) + 1j * vec[g.size:].reshape(g.shape)
        dirs.append(Field(g, z, 0.0))
    first_kept = float(ev[~below][0]) if (~below).any() else float("inf")
    K0 = 1.0 / max(first_kept, 1e-12)
    return CoercivityData(K0=K0, nu0=nu0, directions=dirs,
                          negative_eigenvalues=ev[below].copy(),
                          threshold=threshold, first_kept=first_kept)


def coercivity_form_tilde(nl: Nonlinearity, b: BoundState, z: Field) -> float:
    """Unboosted form: ||grad z||^2 + omega ||z||^2
    - int ( g(|Phi|^2)|z|^2 + 2 g'(|Phi|^2) Re(Phi conj(z))^2 )."""
    g = z.grid
    dv = g.dx**g.dim
    grads = gridmod.gradient(z)
    kin = sum(gridmod.norm_l2(gf) ** 2 for gf in grads)
    phi = b.profile.values
    s = np.abs(phi) ** 2
    gval = np.real(nl.g(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        gpr = np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)
    pot = gval * np.abs(z.values) ** 2 + 2.0 * gpr * np.real(phi * np.conj(z.values)) ** 2
    return kin + b.omega * gridmod.norm_l2(z) ** 2 - float(np.sum(pot)) * dv


def coercivity_form(nl: Nonlinearity, p: SolitonParams, t: float, w: Field) -> float:
    """Boosted form H0(t, w) with the moving soliton supplying the potentials."""
    g = w.grid
    v = np.asarray(p.v)
    dv = g.dx**g.dim
    R0 = soliton_field(p, g, t)
    grads = gridmod.gradient(w)
    kin = sum(gridmod.norm_l2(gf) ** 2 for gf in grads)
    mom = np.array([float(np.sum(np.imag(gf.values * np.conj(w.values)))) * dv
                    for gf in grads])
    s = np.abs(R0.values) ** 2
    gval = np.real(nl.g(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        gpr = np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)
    pot = gval * np.abs(w.values) ** 2 + 2.0 * gpr * np.real(R0.values * np.conj(w.values)) ** 2
    return (kin + (p.omega + 0.25 * float(v @ v)) * gridmod.norm_l2(w) ** 2
            - float(v @ mom) - float(np.sum(pot)) * dv)


def boost_to_frame(p: SolitonParams, z: Field, t: float) -> Field:
    """w(x) = e^{i(v.x/2 - |v|^2 t/4 + omega t + gamma)} z(x - v t - x0):
    transports a rest-frame test function onto the moving soliton."""
    g = z.grid
    v = np.asarray(p.v)
    moved = gridmod.shift(z, np.asarray(p.v) * t + np.asarray(p.x0))
    xs = g.coords()
    phase = sum(0.5 * vi * x for vi, x in zip(v, xs)) \
        - 0.25 * float(v @ v) * t + p.omega * t + p.gamma
    return Field(g, moved.values * np.exp(1j * phase), t)


# ---------------------------------------------------------------------------
# modulation distance


@dataclass(frozen=True)
class FamilyDistance:
    dist: float
    y: np.ndarray
    theta: float


def _parabolic_offset(vals, idx):
    """Sub-grid vertex offset (in grid steps) of the parabola through the
    three samples around idx, with periodic neighbors."""
    n = len(vals)
    y0, y1, y2 = vals[(idx - 1) % n], vals[idx], vals[(idx + 1) % n]
    denom = y0 - 2 * y1 + y2
    if abs(denom) < 1e-300:
        return 0.0
    return float(np.clip(0.5 * (y0 - y2) / denom, -1.0, 1.0))


def family_distance(u: Field, b: BoundState, mode: str = "global",
                    ball_radius: float | None = None, ball_center=None) -> FamilyDistance:
    """inf over shifts y and phases theta of ||u - Phi(. - y) e^{i theta}||,
    globally or restricted to a ball.

    Grid shifts are scanned by FFT cross-correlation, the optimal phase is
    closed form (theta* = arg <u, Phi(.-y)>), and the winning shift gets a
    quadratic sub-grid refinement before the distance is recomputed exactly
    with a spectral translation.
    """
    g = u.grid
    phi = b.profile
    if phi.grid != g:
        raise ValueError("bound state must live on the field's grid")
    dv = g.dx**g.dim
    uhat = np.fft.fftn(u.values)
    phihat = np.fft.fftn(phi.values)
    if mode == "global":
        corr = np.fft.ifftn(uhat * np.conj(phihat)) * dv
        Mu = gridmod.norm_l2(u) ** 2
        Mphi = gridmod.norm_l2(phi) ** 2
        objective = Mu + Mphi - 2.0 * np.abs(corr)
        window = None
    elif mode == "ball":
        if ball_radius is None:
            raise ValueError("ball mode needs a radius")
        center = np.zeros(g.dim) if ball_center is None else np.atleast_1d(
            np.asarray(ball_center, dtype=float))
        xs = g.coords()
        half = 2.0 * g.ell
        rel = [((x - c + g.ell) % half) - g.ell for x, c in zip(xs, center)]
        window = (sum(r**2 for r in rel) <= ball_radius**2).astype(float)
        t1 = float(np.sum(window * np.abs(u.values) ** 2)) * dv
        t2 = np.fft.ifftn(np.fft.fftn(window) * np.conj(np.fft.fftn(np.abs(phi.values) ** 2))).real * dv
        corr = np.fft.ifftn(np.fft.fftn(window * u.values) * np.conj(phihat)) * dv
        objective = t1 + t2 - 2.0 * np.abs(corr)
        window = window
    else:
        raise ValueError(f"unknown mode {mode!r}")

    idx = np.unravel_index(int(np.argmin(objective)), objective.shape)
    # correlation index m corresponds to a displacement of m grid steps
    y = np.empty(g.dim)
    for ax in range(g.dim):
        sl = list(idx)
        m = idx[ax]
        sl[ax] = slice(None)
        sub = _parabolic_offset(objective[tuple(sl)], m)
        delta = (m + sub) * g.dx
        y[ax] = ((delta + g.ell) % (2.0 * g.ell)) - g.ell

    def eval_at(yy):
        shifted = gridmod.shift(phi, yy)
        if window is None:
            ip = complex(np.vdot(shifted.values, u.values)) * dv
            diff = u.values - np.exp(1j * np.angle(ip)) * shifted.values
        else:
            ip = complex(np.vdot(shifted.values * window, u.values * window)) * dv
            diff = (u.values - np.exp(1j * np.angle(ip)) * shifted.values) * np.sqrt(window)
        return float(np.linalg.norm(diff.ravel())) * dv**0.5, float(np.angle(ip))

    # iterated coordinate-wise quadratic polish on the exact objective
    h = g.dx
    for _ in range(4):
        for ax in range(g.dim):
            probes = []
            for off in (-h, 0.0, h):
                yy = y.copy()
                yy[ax] += off
                probes.append(eval_at(yy)[0] ** 2)
            y[ax] += _parabolic_offset(probes, 1) * h
        h /= 8.0
    dist, theta = eval_at(y)
    return FamilyDistance(dist=dist, y=y, theta=theta)


def multi_family_distance(u: Field, ensemble: EnsembleConfig, t: float,
                          ball_radius: float | None = None, sweeps: int = 2):
    """Coordinate descent over per-soliton (y_j, theta_j) with the model
    Phi_j(x - y_j) e^{i (v_j . x / 2 + theta_j)}, each fit windowed on a ball
    around the soliton track; returns the global L2 residual and parameters."""
    g = u.grid
    if ball_radius is None:
        ball_radius = 6.0 / math.sqrt(min(p.omega for p in ensemble.solitons))
    xs = g.coords()
    models = [np.zeros(g.shape, dtype=complex) for _ in ensemble.solitons]
    fits = [None] * ensemble.N
    for _ in range(sweeps):
        for j, p in enumerate(ensemble.solitons):
            v = np.asarray(p.v)
            center = (np.asarray(p.x0) + v * t + g.ell) % (2 * g.ell) - g.ell
            others = sum(models[k] for k in range(ensemble.N) if k != j)
            resid = u.values - others
            boost = np.exp(1j * sum(0.5 * vi * x for vi, x in zip(v, xs)))
            unboosted = Field(g, resid * np.conj(boost), t)
            fd = family_distance(unboosted, p.state, mode="ball",
                                 ball_radius=ball_radius, ball_center=center)
            fits[j] = fd
            model = gridmod.shift(p.state.profile, fd.y).values \
                * np.exp(1j * fd.theta) * boost
            models[j] = model
    diff = u.values - sum(models)
    dist = float(np.linalg.norm(diff.ravel())) * g.dx ** (g.dim / 2.0)
    return {"dist": dist, "fits": fits}


# ---------------------------------------------------------------------------
# instability experiments


def reversed_profile_state(p: Profile, b: BoundState, s: float) -> Field:
    """conj(U(s)) placed at local time 0: the time-flip + conjugation that
    turns the decaying profile into a growing perturbation forward in time.

    The reversed field tracks the soliton with phase offset gamma = -omega s
    (a constant phase, itself a symmetry of the flow)."""
    U = approximate_solution(p, b, s)
    return Field(b.grid, np.conj(U.values), 0.0)


def instability_run(nl: Nonlinearity, b: BoundState, spec: Spectrum,
                    prof: Profile, dt: float, S: float, T0: float = 0.5,
                    sample_every: int = 20, saturation: float = 0.1,
                    floor: float = 0.0):
    """Forward run of the time-reversed profile solution: the component along
    the unstable mode grows like e^{rho t} until nonlinear saturation.

    Records the H1 distance to the soliton, the deviation from the reversed
    profile reference, and the modulation distance; fits the growth rate on
    the window between `floor` and `saturation * ||Phi||_H1`.
    """
    g = b.grid
    u0 = reversed_profile_state(prof, b, S)
    intg = Integrator(dt=dt, direction=1)
    phi_h1 = gridmod.norm_h1(b.profile)
    p_rev = SolitonParams(state=b, gamma=-b.omega * S)

    def pert(f):
        R = soliton_field(p_rev, g, f.time)
        return gridmod.norm_h1(Field(g, f.values - R.values, f.time))

    def dev(f):
        ref = np.conj(approximate_solution(prof, b, S - f.time).values)
        return gridmod.norm_h1(Field(g, f.values - ref, f.time))

    def fam(f):
        return family_distance(f, b).dist

    final, series = evolve(intg, nl, u0, S - T0,
                           observers={"pert_h1": pert, "dev_profile": dev,
                                      "family_dist": fam},
                           sample_every=sample_every)
    t, y = series["t"], series["pert_h1"]
    lo = max(floor, 0.0)
    mask = (y > lo) & (y < saturation * phi_h1)
    fitted = None
    if mask.sum() >= 4:
        slope, _, r2 = fit_log_slope(t[mask], y[mask])
        fitted = {"rate": slope, "r2": r2, "window": (float(t[mask][0]), float(t[mask][-1]))}
    return {"series": series, "final": final, "fit": fitted, "S": S,
            "phi_h1": phi_h1}


def forward_profile_run(nl: Nonlinearity, b: BoundState, prof: Profile,
                        dt: float, T0: float, T1: float, sample_every: int = 20):
    """Evolve u(T0) = U(T0) forward: the perturbation decays like a Y(t), so
    pairs of such runs exhibit the non-uniqueness separation bound."""
    g = b.grid
    u0 = approximate_solution(prof, b, T0)
    intg = Integrator(dt=dt, direction=1)

    def pert(f):
        R = soliton_field(SolitonParams(state=b), g, f.time)
        return gridmod.norm_h1(Field(g, f.values - R.values, f.time))

    snaps = {}

    def snap(f):
        snaps[round(f.time, 10)] = f
        return 0.0

    final, series = evolve(intg, nl, u0, T1,
                           observers={"pert_h1": pert, "_snap": snap},
                           sample_every=sample_every)
    del series["_snap"]
    return {"series": series, "final": final, "snapshots": snaps}


def glued_instability_run(nl: Nonlinearity, ensemble: EnsembleConfig,
                          b1: BoundState, spec: Spectrum, prof: Profile,
                          grid: GridSpec, dt: float, S: float,
                          T0: float = 0.5, sample_every: int = 40,
                          ball_radius: float | None = None,
                          floor: float = 0.0, saturation: float = 0.1,
                          profile_state: BoundState | None = None):
    """Reversed-profile solution for the resting soliton glued to the other
    travelling solitons: w(0) = conj(U(S)) + sum_{j>=2} R_j(0).

    The profile may live on a smaller box than the experiment grid (same
    spacing); its reversed state is then zero-padded into place.
    """
    movers = [p for p in ensemble.solitons if p.state is not b1]
    if len(movers) != ensemble.N - 1:
        movers = list(ensemble.solitons[1:])
    rev = reversed_profile_state(prof, profile_state or b1, S)
    if rev.grid != grid:
        rev = gridmod.embed(rev, grid)
    u0_vals = rev.values.copy()
    for p in movers:
        u0_vals += soliton_field(p, grid, 0.0).values
    u0 = Field(grid, u0_vals, 0.0)
    intg = Integrator(dt=dt, direction=1)
    p1 = SolitonParams(state=b1, gamma=-b1.omega * S)
    phi_h1 = gridmod.norm_h1(b1.profile)
    if ball_radius is None:
        ball_radius = 6.0 / math.sqrt(min(p.omega for p in ensemble.solitons))

    def interaction(f):
        # overlap of the tracked (soliton-1) part with each travelling soliton
        mover_sum = sum(soliton_field(p, grid, f.time).values for p in movers)
        tracked = f.values - mover_sum
        total = 0.0
        for p in movers:
            R = soliton_field(p, grid, f.time)
            total += gridmod.norm_l2(Field(grid, tracked * R.values, f.time))
        return total

    def pert1(f):
        xs = grid.coords()
        window = (sum(((x - 0.0 + grid.ell) % (2 * grid.ell) - grid.ell)**2
                      for x in xs) <= ball_radius**2)
        R1 = soliton_field(p1, grid, f.time)
        diff = (f.values - R1.values) * window
        return float(np.linalg.norm(diff.ravel())) * grid.dx ** (grid.dim / 2.0)

    def multifam(f):
        return multi_family_distance(f, ensemble, f.time, ball_radius=ball_radius)["dist"]

    final, series = evolve(intg, nl, u0, S - T0,
                           observers={"interaction": interaction, "pert1": pert1,
                                      "multi_family": multifam},
                           sample_every=sample_every)
    t, y = series["t"], series["pert1"]
    mask = (y > floor) & (y < saturation * phi_h1)
    fitted = None
    if mask.sum() >= 4:
        slope, _, r2 = fit_log_slope(t[mask], y[mask])
        fitted = {"rate": slope, "r2": r2}
    return {"series": series, "final": final, "fit": fitted, "S": S}
