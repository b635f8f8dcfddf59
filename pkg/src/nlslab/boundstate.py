"""Ground and excited states of -Delta Phi + omega Phi = f(Phi).

The radial profile is found by shooting on the initial amplitude Phi(0),
then polished on the periodic grid by a spectral Newton iteration.  These
profiles are the building blocks of every soliton in the package.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
import scipy.linalg
import scipy.sparse.linalg as spla

from . import grid as gridmod
from .grid import Field, GridSpec
from .nonlinearity import Nonlinearity

AMPLITUDE_GUARD = 1e-6  # reject candidates this small: excludes the zero solution


class NoProfileError(RuntimeError):
    pass


class NewtonDivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RadialProfile:
    """Samples of a radial candidate on a uniform mesh r in [0, r_max]."""

    r: np.ndarray
    phi: np.ndarray
    omega: float
    amplitude: float  # shooting parameter Phi(0)

    def __call__(self, radii):
        spline = CubicSpline(self.r, self.phi, bc_type="clamped")
        out = np.where(np.asarray(radii) <= self.r[-1], spline(radii), 0.0)
        return out


@dataclass(frozen=True)
class BoundState:
    """A refined solution of the stationary equation on the periodic grid."""

    omega: float
    profile: Field             # real-valued, radially symmetric up to sampling
    node_count: int
    residual_linf: float
    action: float
    radial: RadialProfile | None = None

    @property
    def grid(self) -> GridSpec:
        return self.profile.grid

    def boundary_ratio(self) -> float:
        """|Phi| at the box boundary relative to max |Phi| (tail truncation)."""
        v = np.abs(self.profile.values)
        edge = v[0] if self.profile.grid.dim == 1 else v[(0,) * self.profile.grid.dim]
        return float(edge / v.max())


def _shoot_once(nl: Nonlinearity, omega: float, dim: int, amplitude: float,
                r_max: float, rtol=1e-11, atol=1e-13):
    """Integrate the radial ODE from the center; return the trajectory and
    its sign-change count before divergence."""

    def rhs(r, y):
        u, w = y
        fu = float(np.real(nl.f(u + 0j)))
        if r == 0.0:
            return [w, (omega * u - fu) / dim]
        return [w, -(dim - 1) / r * w + omega * u - fu]

    blow = 3.0 * abs(amplitude) + 1.0

    def diverged(r, y):
        return abs(y[0]) - blow

    diverged.terminal = True
    # series start avoids the (d-1)/r singularity at the origin
    eps = 1e-8
    f0 = float(np.real(nl.f(amplitude + 0j)))
    u0 = amplitude + eps**2 * (omega * amplitude - f0) / (2 * dim)
    w0 = eps * (omega * amplitude - f0) / dim
    sol = solve_ivp(rhs, (eps, r_max), [u0, w0], rtol=rtol, atol=atol,
                    dense_output=True, events=diverged, max_step=r_max / 50)
    r_end = sol.t[-1]
    rr = np.linspace(eps, r_end, 2000)
    uu = sol.sol(rr)[0]
    # hysteresis count: a sign change is credited only once the trajectory
    # reaches a credible amplitude on the new side, so integrator noise in
    # the exponentially small tail cannot register as a node
    theta = 1e-3 * abs(amplitude)
    credible = np.sign(uu[np.abs(uu) >= theta])
    crossings = int(np.sum(credible[1:] * credible[:-1] < 0))
    return sol, crossings, r_end


def shoot_radial(nl: Nonlinearity, omega: float, nodes: int, dim: int,
                 mesh_points: int = 4096) -> RadialProfile:
    """Bisection on Phi(0) for a radial solution with exactly `nodes` sign
    changes decaying at r_max = 12/sqrt(omega).

    The count of interior zeros is monotone in the amplitude; the bound
    state sits on the boundary between `nodes` and `nodes + 1` crossings.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if nodes < 0 or dim not in (1, 2, 3):
        raise ValueError("need nodes >= 0 and dim in {1,2,3}")
    r_max = 12.0 / np.sqrt(omega)

    # bracket the node boundary on a multiplicative amplitude scan
    amps = np.sqrt(omega) * np.logspace(-0.5, 2.5, 61)
    lo = hi = None
    prev_a, prev_c = None, None
    for a in amps:
        _, c, _ = _shoot_once(nl, omega, dim, a, r_max, rtol=1e-8, atol=1e-10)
        if prev_a is not None and prev_c <= nodes and c >= nodes + 1:
            lo, hi = prev_a, a
            break
        prev_a, prev_c = a, c
    if lo is None:
        raise NoProfileError(
            f"no profile in bracket: amplitude scan up to {amps[-1]:.3g} never "
            f"crossed from <= {nodes} to >= {nodes + 1} sign changes")

    for _ in range(80):
        mid = 0.5 * (lo + hi)
        _, c, _ = _shoot_once(nl, omega, dim, mid, r_max, rtol=1e-10, atol=1e-12)
        if c <= nodes:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14 * hi:
            break
    # integrate the non-crossing endpoint: its trajectory follows the bound
    # state until the bracket-width perturbation blows up in the far tail
    amplitude = lo
    sol, _, r_end = _shoot_once(nl, omega, dim, amplitude, r_max)
    rr = np.linspace(0.0, r_max, mesh_points)
    phi = np.empty_like(rr)
    inside = rr <= r_end
    phi[inside] = sol.sol(np.clip(rr[inside], sol.t[0], r_end))[0]
    phi[~inside] = 0.0
    phi[0] = amplitude

    # graft a clean exponential tail from the trust radius: past it the
    # bracket-width perturbation outgrows the true e^{-sqrt(omega) r} envelope.
    # search only beyond the nodal region (interior zeros also dip to 0)
    tail_level = abs(amplitude) * np.exp(-0.9 * np.sqrt(omega) * r_max)
    big = np.nonzero(np.abs(phi) >= 0.02 * abs(amplitude))[0]
    start = big[-1] + 1 if big.size else 1
    small = np.abs(phi) < tail_level
    small[:start] = False
    if not small.any():
        raise NoProfileError(
            f"no profile in bracket: candidate at amplitude {amplitude:.6g} "
            f"never decays below {tail_level:.2e} before r_max (last bracket "
            f"[{lo:.6g}, {hi:.6g}])")
    i0 = max(int(np.argmax(small)), 2)
    anchor = phi[i0 - 1] if phi[i0 - 1] != 0 else tail_level
    phi[i0:] = anchor * np.exp(-np.sqrt(omega) * (rr[i0:] - rr[i0 - 1]))

    crossings = _count_radial_nodes(phi, amplitude)
    if crossings != nodes:
        raise NoProfileError(
            f"no profile in bracket: candidate has {crossings} sign changes, "
            f"wanted {nodes}")
    return RadialProfile(rr, phi, omega, amplitude)


def _count_radial_nodes(phi, amplitude) -> int:
    credible = np.sign(phi[np.abs(phi) >= 1e-3 * abs(amplitude)])
    return int(np.sum(credible[1:] * credible[:-1] < 0))


def radial_to_field(radial: RadialProfile, grid: GridSpec) -> Field:
    """Sample a radial profile onto the periodic grid by radial lookup."""
    xs = grid.coords()
    r = np.sqrt(sum(x**2 for x in xs))
    return Field(grid, radial(r).astype(np.complex128), 0.0)


def _dense_laplacian(grid: GridSpec) -> np.ndarray:
    """Dense spectral Laplacian matrix (1D grids only)."""
    n = grid.n
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.dx)
    F = np.fft.fft(np.eye(n), axis=0)
    return np.fft.ifft(-(k**2)[:, None] * F, axis=0).real


def stationary_residual(nl: Nonlinearity, phi: Field, omega: float) -> Field:
    """G(Phi) = -Delta Phi + omega Phi - f(Phi) on the grid."""
    lap = gridmod.laplacian(phi)
    return phi.with_values(-lap.values + omega * phi.values - nl.f(phi.values))


def newton_refine(nl: Nonlinearity, guess: Field, omega: float,
                  tol: float = 1e-10, max_iter: int = 50) -> BoundState:
    """Spectral Newton iteration on G(Phi) = -Delta Phi + omega Phi - f(Phi).

    The Jacobian -Delta + omega - df(Phi) restricted to real perturbations is
    -Delta + omega - I_plus(Phi); it is solved densely in 1D and by MINRES
    (matrix-free, symmetric indefinite) in higher dimensions.
    """
    if np.max(np.abs(guess.values.imag)) > 1e-12 * max(np.max(np.abs(guess.values)), 1.0):
        raise ValueError("newton_refine expects a real-valued guess")
    phi = guess.values.real.copy()
    g = guess.grid
    if float(np.max(np.abs(phi))) < AMPLITUDE_GUARD:
        raise NewtonDivergenceError("guess below amplitude guard (zero solution rejected)")

    ksq = g.ksq()

    def G(ph):
        lap = np.fft.ifftn(-ksq * np.fft.fftn(ph)).real
        return -lap + omega * ph - np.real(nl.f(ph.astype(np.complex128)))

    def iplus(ph):
        s = ph**2
        return np.real(nl.g(s)) + 2.0 * s * np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)

    res = G(phi)
    res_linf = float(np.max(np.abs(res)))
    grow = 0
    dense_lap = _dense_laplacian(g) if g.dim == 1 else None
    for _ in range(max_iter):
        if res_linf <= tol:
            break
        ip = iplus(phi)
        if g.dim == 1:
            # the Jacobian is near-singular along the translation mode at
            # convergence; truncated least squares keeps the step out of
            # that kernel so the iterate cannot drift sideways
            J = -dense_lap + np.diag(omega - ip)
            delta = scipy.linalg.lstsq(J, res, cond=1e-10,
                                       lapack_driver="gelsd")[0]
        else:
            def matvec(v):
                vv = v.reshape(g.shape)
                lap = np.fft.ifftn(-ksq * np.fft.fftn(vv)).real
                return (-lap + (omega - ip) * vv).ravel()

            op = spla.LinearOperator((g.size, g.size), matvec=matvec, dtype=float)
            delta, info = spla.minres(op, res.ravel(), rtol=1e-12, maxiter=2000)
            if info != 0:
                raise NewtonDivergenceError(f"Jacobian solve stagnated (minres info={info})")
            delta = delta.reshape(g.shape)
        # backtrack if the full step overshoots
        step = 1.0
        for _ in range(4):
            trial = phi - step * delta
            tres = G(trial)
            tl = float(np.max(np.abs(tres)))
            if tl < res_linf or res_linf <= tol:
                break
            step *= 0.5
        phi, res = trial, tres
        new_linf = float(np.max(np.abs(res)))
        grow = grow + 1 if new_linf > res_linf else 0
        res_linf = new_linf
        if grow >= 3:
            raise NewtonDivergenceError(
                f"Newton residual grew 3 consecutive steps (now {res_linf:.3e})")
        if float(np.max(np.abs(phi))) < AMPLITUDE_GUARD:
            raise NewtonDivergenceError("iterate collapsed below amplitude guard")

    field = Field(g, phi.astype(np.complex128), 0.0)
    return BoundState(
        omega=omega,
        profile=field,
        node_count=_count_nodes(field),
        residual_linf=res_linf,
        action=action(nl, field, omega),
        radial=None,
    )


def _count_nodes(f: Field) -> int:
    """Sign changes of the radial profile, read along the positive first axis."""
    g = f.grid
    vals = f.values.real
    if g.dim == 1:
        line = vals[g.n // 2:]
    else:
        idx = (slice(g.n // 2, None),) + (g.n // 2,) * (g.dim - 1)
        line = vals[idx]
    signs = np.sign(line)
    signs[np.abs(line) < 1e-8 * np.max(np.abs(line))] = 0
    nz = signs[signs != 0]
    return int(np.sum(nz[1:] * nz[:-1] < 0))


def action(nl: Nonlinearity, phi: Field, omega: float) -> float:
    """S0(Phi) = 1/2 ||grad Phi||^2 + (omega/2) ||Phi||^2 - int F(Phi)."""
    grads = gridmod.gradient(phi)
    kin = 0.5 * sum(gridmod.norm_l2(gf) ** 2 for gf in grads)
    mass = gridmod.norm_l2(phi) ** 2
    pot = float(np.sum(nl.eval_F(np.abs(phi.values)))) * phi.grid.dx**phi.grid.dim
    return kin + 0.5 * omega * mass - pot


def compute_bound_state(nl: Nonlinearity, omega: float, nodes: int,
                        grid: GridSpec, tol: float = 1e-10) -> BoundState:
    """Shoot, sample onto the grid, refine: the one-call construction."""
    radial = shoot_radial(nl, omega, nodes, grid.dim)
    guess = radial_to_field(radial, grid)
    state = newton_refine(nl, guess, omega, tol=tol)
    if state.node_count != nodes:
        raise NoProfileError(
            f"refined state has {state.node_count} nodes, expected {nodes}")
    return BoundState(
        omega=state.omega, profile=state.profile, node_count=state.node_count,
        residual_linf=state.residual_linf, action=state.action, radial=radial)


def save_bound_state(state: BoundState, snapshot_path, sidecar_path):
    gridmod.write_snapshot(state.profile, snapshot_path)
    with open(sidecar_path, "w") as fh:
        json.dump({"omega": state.omega, "nodes": state.node_count,
                   "residual": state.residual_linf, "action": state.action}, fh,
                  indent=2, sort_keys=True)


def load_bound_state(snapshot_path, sidecar_path) -> BoundState:
    profile = gridmod.read_snapshot(snapshot_path)
    with open(sidecar_path) as fh:
        meta = json.load(fh)
    return BoundState(omega=meta["omega"], profile=profile,
                      node_count=meta["nodes"], residual_linf=meta["residual"],
                      action=meta["action"], radial=None)
