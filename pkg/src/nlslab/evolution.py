"""Split-step time integration of i u_t + Delta u + f(u) = 0 and the
localized conservation-law machinery for multi-soliton estimates.

The Strang step alternates the exact free flow in Fourier space with the
exact pointwise phase rotation of the nonlinear flow; both substeps
preserve mass to rounding and the composition is time reversible, so
backward integration is the same scheme with dt negated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import grid as gridmod
from .grid import Field, GridSpec
from .nonlinearity import Nonlinearity

BLOWUP_FACTOR = 1e3


class BlowupError(RuntimeError):
    """Blow-up or instability detected; carries the last finite state."""

    def __init__(self, message, last_state: Field):
        super().__init__(message)
        self.last_state = last_state


@dataclass
class Integrator:
    """Strang splitting with fixed step; direction +1 forward, -1 backward."""

    dt: float
    direction: int = 1
    scheme: str = "strang"
    _half_kinetic: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive; use direction=-1 to go backward")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.scheme != "strang":
            raise ValueError(f"unknown scheme {self.scheme!r}")

    def signed_dt(self) -> float:
        return self.direction * self.dt

    def half_kinetic(self, grid: GridSpec, dt_signed: float) -> np.ndarray:
        key = (grid, round(dt_signed, 18))
        if key not in self._half_kinetic:
            self._half_kinetic[key] = np.exp(-0.5j * grid.ksq() * dt_signed)
        return self._half_kinetic[key]


def step(intg: Integrator, nl: Nonlinearity, u: Field, dt_signed=None) -> Field:
    """One Strang step: half kinetic, full nonlinear phase rotation, half kinetic."""
    h = intg.signed_dt() if dt_signed is None else dt_signed
    mult = intg.half_kinetic(u.grid, h)
    v = np.fft.ifftn(mult * np.fft.fftn(u.values))
    v = np.exp(1j * np.real(nl.g(np.abs(v) ** 2)) * h) * v
    v = np.fft.ifftn(mult * np.fft.fftn(v))
    if not np.all(np.isfinite(v.view(np.float64))):
        raise BlowupError(f"blow-up or instability detected at t={u.time}", u)
    return Field(u.grid, v, u.time + h)


def evolve(intg: Integrator, nl: Nonlinearity, u0: Field, t_end: float,
           observers=None, sample_every: int = 1):
    """March u0 to t_end (the last partial step is shortened), sampling the
    observer callables every `sample_every` steps.

    Returns (final field, series dict with key 't' plus one per observer).
    """
    h = intg.signed_dt()
    span = t_end - u0.time
    if span * h < 0:
        raise ValueError(f"t_end={t_end} is behind u0.time={u0.time} for this direction")
    observers = observers or {}
    series = {"t": []}
    for name in observers:
        series[name] = []

    def sample(f):
        series["t"].append(f.time)
        for name, fn in observers.items():
            series[name].append(fn(f))

    n_steps = int(np.floor(abs(span) / intg.dt + 1e-12))
    u = u0
    max0 = gridmod.norm_linf(u0)
    sample(u)
    for i in range(n_steps):
        u = step(intg, nl, u)
        if gridmod.norm_linf(u) > BLOWUP_FACTOR * max(max0, 1e-12):
            raise BlowupError(f"amplitude guard tripped at t={u.time}", u)
        if (i + 1) % sample_every == 0 or i == n_steps - 1:
            sample(u)
    rem = t_end - u.time
    if abs(rem) > 1e-12 * max(1.0, abs(t_end)):
        u = step(intg, nl, u, dt_signed=rem)
        sample(u)
    series = {k: np.asarray(v) for k, v in series.items()}
    return u, series


def conserved(nl: Nonlinearity, u: Field):
    """(E, M, P): energy, mass, momentum of the flow."""
    grads = gridmod.gradient(u)
    kin = 0.5 * sum(gridmod.norm_l2(gf) ** 2 for gf in grads)
    dv = u.grid.dx**u.grid.dim
    pot = float(np.sum(nl.eval_F(np.abs(u.values)))) * dv
    E = kin - pot
    M = gridmod.norm_l2(u) ** 2
    P = np.array([float(np.sum(np.imag(np.conj(u.values) * gf.values))) * dv
                  for gf in grads])
    return E, M, P


# ---------------------------------------------------------------------------
# moving cutoffs and localized functionals


def smoothstep(s):
    """C-infinity monotone step: 0 for s <= -1, 1 for s >= 1, max slope 1."""
    s = np.asarray(s, dtype=float)
    tau = np.clip(0.5 * (s + 1.0), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(tau > 0, np.exp(-1.0 / np.maximum(tau, 1e-300)), 0.0)
        b = np.where(tau < 1, np.exp(-1.0 / np.maximum(1.0 - tau, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class CutoffFamily:
    """Moving partition of unity separating solitons by first-coordinate speed.

    psi_1 = 1 and psi_j(t,x) = psi((x1 - m_j t)/sqrt(t)) for j >= 2 with m_j
    the midpoint of consecutive sorted speeds; phi_j = psi_j - psi_{j+1},
    phi_N = psi_N.
    """

    velocities_first_coord: tuple

    def __post_init__(self):
        v = tuple(float(x) for x in self.velocities_first_coord)
        if any(v[i + 1] <= v[i] for i in range(len(v) - 1)):
            raise ValueError("first-coordinate velocities must be strictly increasing")
        object.__setattr__(self, "velocities_first_coord", v)

    @property
    def count(self) -> int:
        return len(self.velocities_first_coord)

    def midpoint(self, j: int) -> float:
        v = self.velocities_first_coord
        return 0.5 * (v[j - 2] + v[j - 1])  # m_j for j = 2..N (1-based)

    def psi_j(self, j: int, t: float, grid: GridSpec) -> np.ndarray:
        if t <= 0:
            raise ValueError("cutoffs are defined for t > 0")
        if j == 1:
            return np.ones(grid.shape)
        x1 = grid.coords()[0]
        return smoothstep((x1 - self.midpoint(j) * t) / np.sqrt(t))

    def phi_j(self, j: int, t: float, grid: GridSpec) -> np.ndarray:
        if j == self.count:
            return self.psi_j(j, t, grid)
        return self.psi_j(j, t, grid) - self.psi_j(j + 1, t, grid)


@dataclass(frozen=True)
class LocalizedQuantities:
    M: float
    P: np.ndarray
    E: float
    S: float
    H: float | None = None


def localized_quantities(cut: CutoffFamily, nl: Nonlinearity, u: Field, j: int,
                         omega_j: float, v_j, w: Field | None = None,
                         R_j: Field | None = None) -> LocalizedQuantities:
    """phi_j-weighted mass, momentum, energy and action; optionally the
    localized linearized form H_j evaluated on a test field w with the
    soliton R_j supplying the potentials."""
    g = u.grid
    v_j = np.atleast_1d(np.asarray(v_j, dtype=float))
    phi = cut.phi_j(j, u.time, g)
    dv = g.dx**g.dim
    grads = gridmod.gradient(u)
    gradsq = sum(np.abs(gf.values) ** 2 for gf in grads)
    M = float(np.sum(np.abs(u.values) ** 2 * phi)) * dv
    P = np.array([float(np.sum(np.imag(gf.values * np.conj(u.values)) * phi)) * dv
                  for gf in grads])
    E = 0.5 * float(np.sum(gradsq * phi)) * dv \
        - float(np.sum(nl.eval_F(np.abs(u.values)) * phi)) * dv
    S = E + 0.5 * (omega_j + 0.25 * float(v_j @ v_j)) * M - 0.5 * float(v_j @ P)
    H = None
    if w is not None:
        if R_j is None:
            raise ValueError("H_j needs the soliton field R_j for its potentials")
        H = localized_linearized(cut, nl, w, j, omega_j, v_j, R_j)
    return LocalizedQuantities(M=M, P=P, E=E, S=S, H=H)


def localized_linearized(cut: CutoffFamily, nl: Nonlinearity, w: Field, j: int,
                         omega_j: float, v_j, R_j: Field) -> float:
    g = w.grid
    v_j = np.atleast_1d(np.asarray(v_j, dtype=float))
    phi = cut.phi_j(j, w.time, g)
    dv = g.dx**g.dim
    grads = gridmod.gradient(w)
    gradsq = sum(np.abs(gf.values) ** 2 for gf in grads)
    s = np.abs(R_j.values) ** 2
    gval = np.real(nl.g(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        gpr = np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)
    pot = gval * np.abs(w.values) ** 2 + 2.0 * gpr * np.real(R_j.values * np.conj(w.values)) ** 2
    mom = np.array([float(np.sum(np.imag(gf.values * np.conj(w.values)) * phi)) * dv
                    for gf in grads])
    return (float(np.sum(gradsq * phi)) * dv
            - float(np.sum(pot * phi)) * dv
            + (omega_j + 0.25 * float(v_j @ v_j)) * float(np.sum(np.abs(w.values) ** 2 * phi)) * dv
            - float(v_j @ mom))


def action_like(cut: CutoffFamily, nl: Nonlinearity, u: Field, ensemble) -> float:
    """The multi-soliton functional: sum of localized actions S_j.

    `ensemble` provides (omega_j, v_j) per soliton, ordered by increasing
    first-coordinate velocity as in the cutoff family.
    """
    return sum(localized_quantities(cut, nl, u, j + 1, om, v).S
               for j, (om, v) in enumerate(ensemble))


def action_like_via_energy(cut: CutoffFamily, nl: Nonlinearity, u: Field,
                           ensemble) -> float:
    """Identity route: E(u) + sum_j [ (omega_j + |v_j|^2/4) M_j / 2 - v_j . P_j / 2 ];
    agrees with summing S_j because the phi_j sum to one."""
    E, _, _ = conserved(nl, u)
    total = E
    for j, (om, v) in enumerate(ensemble):
        q = localized_quantities(cut, nl, u, j + 1, om, v)
        v = np.atleast_1d(np.asarray(v, dtype=float))
        total += 0.5 * (om + 0.25 * float(v @ v)) * q.M - 0.5 * float(v @ q.P)
    return total


def central_difference_series(ts: np.ndarray, ys: np.ndarray):
    """(t_mid, dy/dt) by central differences on a recorded series."""
    ts = np.asarray(ts, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if ts.size < 3:
        raise ValueError("need at least 3 samples for central differences")
    d = (ys[2:] - ys[:-2]) / (ts[2:] - ts[:-2])
    return ts[1:-1], d


def dS_dt_estimate(ts: np.ndarray, Ss: np.ndarray, t: float,
                   max_stride: float | None = None) -> float:
    """Finite-difference d(script S)/dt at the recorded time nearest t."""
    tm, d = central_difference_series(ts, Ss)
    if max_stride is not None:
        strides = np.diff(np.asarray(ts, dtype=float))
        if strides.max() > max_stride:
            raise ValueError(
                f"series stride {strides.max():.3g} too coarse (limit {max_stride:.3g})")
    i = int(np.argmin(np.abs(tm - t)))
    return float(d[i])
