"""Linearized operator around a bound state, its spectrum, and the radial
Helmholtz kernels controlling eigenfunction decay.

The complex perturbation equation is written on (Re w, Im w), giving the
real-entry block operator

    L (v+, v-) = [[ J,            Delta - omega + I- ],
                  [ -Delta + omega - I+,          -J ]] (v+, v-)

with J = 2 Phi+ Phi- g'(|Phi|^2) and I(+/-) = g(|Phi|^2) + 2 (Phi(+/-))^2 g'(|Phi|^2).
For real profiles J vanishes and the operator decouples into the classical
L+/L- pair.  Complexified, L acts on C^2-valued grid functions with the same
real matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
import scipy.sparse.linalg as spla
from scipy.special import hankel1

from . import grid as gridmod
from .grid import Field, GridSpec
from .boundstate import BoundState
from .nonlinearity import Nonlinearity

DENSE_LIMIT = 4096  # largest n^d we are willing to assemble densely


class EigensolveError(RuntimeError):
    pass


class ResolventError(RuntimeError):
    pass


class DecayFitError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# block operator


@dataclass
class BlockOperator:
    """Matrix-free linearized operator on pairs of grid functions."""

    grid: GridSpec
    omega: float
    J: np.ndarray
    Iplus: np.ndarray
    Iminus: np.ndarray
    _dense: np.ndarray | None = field(default=None, repr=False)
    _lu_cache: dict = field(default_factory=dict, repr=False)

    @property
    def assembled_dim(self) -> int:
        return 2 * self.grid.size

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Apply to X of shape (2, *grid.shape), real or complex."""
        vp, vm = X[0], X[1]
        ksq = self.grid.ksq()
        lap_p = np.fft.ifftn(-ksq * np.fft.fftn(vp))
        lap_m = np.fft.ifftn(-ksq * np.fft.fftn(vm))
        if not np.iscomplexobj(X):
            lap_p, lap_m = lap_p.real, lap_m.real
        top = self.J * vp + lap_m - self.omega * vm + self.Iminus * vm
        bot = -lap_p + self.omega * vp - self.Iplus * vp - self.J * vm
        return np.stack([top, bot])

    def dense(self) -> np.ndarray:
        """Assemble the 2 n^d x 2 n^d real matrix (cached)."""
        if self._dense is None:
            g = self.grid
            if g.size > DENSE_LIMIT:
                raise EigensolveError(
                    f"grid size {g.size} exceeds dense limit {DENSE_LIMIT}; "
                    "use shift-invert mode")
            n = g.size
            if g.dim == 1:
                k = 2.0 * np.pi * np.fft.fftfreq(g.n, d=g.dx)
                F = np.fft.fft(np.eye(g.n), axis=0)
                D2 = np.fft.ifft(-(k**2)[:, None] * F, axis=0).real
            else:
                D2 = np.empty((n, n))
                ksq = g.ksq()
                eye = np.eye(n)
                for j in range(n):
                    col = eye[:, j].reshape(g.shape)
                    D2[:, j] = np.fft.ifftn(-ksq * np.fft.fftn(col)).real.ravel()
            w = self.omega
            Jd = np.diag(self.J.ravel())
            top = np.hstack([Jd, D2 - w * np.eye(n) + np.diag(self.Iminus.ravel())])
            bot = np.hstack([-D2 + w * np.eye(n) - np.diag(self.Iplus.ravel()), -Jd])
            self._dense = np.vstack([top, bot])
        return self._dense


def assemble(nl: Nonlinearity, b: BoundState) -> BlockOperator:
    phi = b.profile.values
    pp, pm = phi.real, phi.imag
    s = np.abs(phi) ** 2
    gval = np.real(nl.g(s))
    with np.errstate(divide="ignore", invalid="ignore"):
        gpr = np.where(s > 0, np.real(nl.dg(np.maximum(s, 1e-300))), 0.0)
    J = 2.0 * pp * pm * gpr
    Iplus = gval + 2.0 * pp**2 * gpr
    Iminus = gval + 2.0 * pm**2 * gpr
    return BlockOperator(grid=b.grid, omega=b.omega, J=J, Iplus=Iplus, Iminus=Iminus)


class ConjugatedOperator:
    """L' = i P L P^{-1} with P = [[1, i], [1, -i]]; Sp(L') = i Sp(L)."""

    def __init__(self, parent):
        self.parent = parent
        self.grid = parent.grid

    @property
    def assembled_dim(self) -> int:
        return self.parent.assembled_dim

    @staticmethod
    def _P(X):
        return np.stack([X[0] + 1j * X[1], X[0] - 1j * X[1]])

    @staticmethod
    def _Pinv(X):
        return np.stack([0.5 * (X[0] + X[1]), -0.5j * (X[0] - X[1])])

    def apply(self, X: np.ndarray) -> np.ndarray:
        return 1j * self._P(self.parent.apply(self._Pinv(np.asarray(X, dtype=complex))))

    def dense(self) -> np.ndarray:
        n = self.grid.size
        A = self.parent.dense().astype(complex)
        eye = np.eye(n)
        P = np.block([[eye, 1j * eye], [eye, -1j * eye]])
        Pinv = np.block([[0.5 * eye, 0.5 * eye], [-0.5j * eye, 0.5j * eye]])
        return 1j * (P @ A @ Pinv)


def conjugate_to_Lprime(op: BlockOperator) -> ConjugatedOperator:
    return ConjugatedOperator(op)


# ---------------------------------------------------------------------------
# spectrum


@dataclass(frozen=True)
class Spectrum:
    """Computed eigenvalues with the maximal-real-part pair resolved."""

    eigenvalues: np.ndarray          # the `count` largest-real-part eigenvalues
    all_eigenvalues: np.ndarray      # every eigenvalue of the discretization
    rho: float
    theta: float
    Z: tuple                         # (Z+, Z-) complex Fields, ||Z||_L2 = 1
    residual: float
    grid: GridSpec

    @property
    def max_real_pair(self):
        return (complex(self.rho, self.theta), self.Z)

    def Zvec(self) -> np.ndarray:
        return np.stack([self.Z[0].values, self.Z[1].values])


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    i = int(np.argmax(np.abs(vec)))
    ph = vec[i] / abs(vec[i])
    out = vec / ph
    # a simple real eigenvalue of a real matrix admits a real eigenvector;
    # scrub the rounding-level imaginary residue so Y2 vanishes exactly
    if np.max(np.abs(out.imag)) < 1e-9 * np.max(np.abs(out.real)):
        out = out.real.astype(complex)
    return out


def spectrum(op, count: int = 8, shifts=None, nev_per_shift: int = 8) -> Spectrum:
    """Eigenvalues of largest real part of the discretized operator.

    Dense solve when the grid allows it, otherwise shift-invert Arnoldi
    around user-provided shifts.  The eigenvector of the maximal-real-part
    eigenvalue is L2-normalized with its largest-magnitude entry made real
    positive, so downstream profile seeds are reproducible.
    """
    g = op.grid
    if g.size <= DENSE_LIMIT:
        A = op.dense()
        ev, V = scipy.linalg.eig(A)
    else:
        if not shifts:
            raise EigensolveError(
                "grid too large for dense eigensolve; provide shift-invert shifts")
        ev_list, V_list = [], []
        N = op.assembled_dim
        for sigma in shifts:
            lam, vec = _shift_invert(op, complex(sigma), nev_per_shift)
            ev_list.append(lam)
            V_list.append(vec)
        ev = np.concatenate(ev_list)
        V = np.hstack(V_list)

    order = np.lexsort((np.abs(ev.imag), -ev.real))
    ev_sorted = ev[order]
    top = ev_sorted[:count]
    lam = ev_sorted[0]
    vec = V[:, order[0]]
    vec = _fix_phase(vec)
    # L2 normalization with grid weights
    nrm = np.linalg.norm(vec) * g.dx ** (g.dim / 2.0)
    vec = vec / nrm
    X = vec.reshape(2, *g.shape)
    resid = op.apply(X) - lam * X
    rel = _l2_norm_pair(resid, g) / _l2_norm_pair(X, g)
    if rel > 1e-6:
        raise EigensolveError(f"eigenpair residual {rel:.2e} exceeds 1e-6")
    Zp = Field(g, X[0], 0.0)
    Zm = Field(g, X[1], 0.0)
    return Spectrum(eigenvalues=top, all_eigenvalues=ev_sorted,
                    rho=float(lam.real), theta=float(lam.imag),
                    Z=(Zp, Zm), residual=float(rel), grid=g)


def _l2_norm_pair(X: np.ndarray, g: GridSpec) -> float:
    return float(np.linalg.norm(X.ravel())) * g.dx ** (g.dim / 2.0)


def _shift_invert(op, sigma: complex, nev: int):
    """Arnoldi on (L - sigma)^{-1} with GMRES inner solves."""
    N = op.assembled_dim
    g = op.grid

    def solve_shifted(b):
        B = b.reshape(2, *g.shape)

        def mv(x):
            X = x.reshape(2, *g.shape)
            return (op.apply(X) - sigma * X).ravel()

        A = spla.LinearOperator((N, N), matvec=mv, dtype=complex)
        x, info = spla.gmres(A, B.ravel(), rtol=1e-10, restart=80, maxiter=400)
        if info != 0:
            raise EigensolveError(f"inner GMRES failed at shift {sigma} (info={info})")
        return x

    OP = spla.LinearOperator((N, N), matvec=solve_shifted, dtype=complex)
    w, V = spla.eigs(OP, k=nev, which="LM")
    lam = sigma + 1.0 / w
    return lam, V


def eigenpair_near(op, spec: Spectrum, target: complex):
    """Extract the normalized eigenpair whose eigenvalue is nearest `target`
    from the dense factorization (dense path only)."""
    A = op.dense()
    ev, V = scipy.linalg.eig(A)
    i = int(np.argmin(np.abs(ev - target)))
    vec = _fix_phase(V[:, i])
    g = op.grid
    vec = vec / (np.linalg.norm(vec) * g.dx ** (g.dim / 2.0))
    X = vec.reshape(2, *g.shape)
    return ev[i], (Field(g, X[0], 0.0), Field(g, X[1], 0.0))


def quadruple_symmetry_defect(eigenvalues: np.ndarray, floor: float = 1e-8) -> float:
    """Worst distance from closure under mu -> -mu, conj(mu), -conj(mu),
    restricted to eigenvalues with |Re mu| > floor."""
    worst = 0.0
    sig = eigenvalues[np.abs(eigenvalues.real) > floor]
    for mu in sig:
        for m2 in (-mu, np.conj(mu), -np.conj(mu)):
            worst = max(worst, float(np.min(np.abs(eigenvalues - m2))))
    return worst


def resolvent_solve(op, mu: complex, A: np.ndarray, spec: Spectrum | None = None,
                    cond_limit: float = 1e12) -> np.ndarray:
    """Solve (L - mu) X = A for A of shape (2, *grid.shape).

    Dense LU with a 1-norm condition estimate; factorizations are cached per
    shift so profile levels reuse them.
    """
    g = op.grid
    if spec is not None and np.min(np.abs(spec.all_eigenvalues - mu)) <= 1e-6:
        raise ResolventError(f"mu={mu} is within 1e-6 of the computed spectrum")
    key = complex(mu)
    cache = getattr(op, "_lu_cache", None)
    if cache is not None and key in cache:
        lu, piv = cache[key]
    else:
        M = op.dense().astype(complex) - mu * np.eye(op.assembled_dim)
        anorm = np.linalg.norm(M, 1)
        lu, piv = scipy.linalg.lu_factor(M)
        rcond, _ = lapack.zgecon(lu, anorm, norm="1")
        if rcond < 1.0 / cond_limit:
            raise ResolventError(
                f"mu too close to spectrum: condition estimate {1.0 / max(rcond, 1e-300):.2e}")
        if cache is not None:
            cache[key] = (lu, piv)
    x = scipy.linalg.lu_solve((lu, piv), np.asarray(A, dtype=complex).ravel())
    X = x.reshape(2, *g.shape)
    rhs_norm = _l2_norm_pair(np.asarray(A, dtype=complex), g)
    if rhs_norm > 0:
        resid = op.apply(X) - mu * X - A
        if _l2_norm_pair(resid, g) > 1e-8 * rhs_norm:
            raise ResolventError("resolvent solve residual exceeds 1e-8 relative")
    return X


# ---------------------------------------------------------------------------
# decay-rate fitting


def decay_rate_fit(Z, band=(0.4, 0.8), r2_min: float = 0.9):
    """Least-squares fit of log(|Z+| + |Z-|) against |x| over the radial band
    [band] * ell.  Returns (alpha, C, r2) with alpha = -slope.
    """
    Zp, Zm = Z
    g = Zp.grid
    xs = g.coords()
    r = np.sqrt(sum(x**2 for x in xs)).ravel()
    mag = (np.abs(Zp.values) + np.abs(Zm.values)).ravel()
    lo, hi = band[0] * g.ell, band[1] * g.ell
    mask = (r >= lo) & (r <= hi) & (mag > 1e-280)
    if mask.sum() < 8:
        raise DecayFitError("tail underflowed: not enough usable points in band")
    rr, yy = r[mask], np.log(mag[mask])
    slope, intercept = np.polyfit(rr, yy, 1)
    pred = slope * rr + intercept
    ss_res = float(np.sum((yy - pred) ** 2))
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    if r2 < r2_min:
        raise DecayFitError(f"no clean exponential tail (r^2 = {r2:.3f})")
    return float(-slope), float(np.exp(intercept)), float(r2)


def fit_log_slope(t: np.ndarray, y: np.ndarray) -> tuple:
    """Slope/intercept/r^2 of log(y) vs t, ignoring non-positive samples."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    mask = y > 0
    tt, yy = t[mask], np.log(y[mask])
    if tt.size < 3:
        raise DecayFitError("not enough positive samples for a rate fit")
    slope, intercept = np.polyfit(tt, yy, 1)
    pred = slope * tt + intercept
    ss_tot = float(np.sum((yy - yy.mean()) ** 2))
    r2 = 1.0 - float(np.sum((yy - pred) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return float(slope), float(np.exp(intercept)), float(r2)


# ---------------------------------------------------------------------------
# fundamental solutions of (-Delta - mu) g = delta_0


def branch_sqrt(mu: complex) -> complex:
    """sqrt with the cut on the positive real axis: mu = r e^{i theta},
    theta in [0, 2 pi), sqrt(mu) = r^{1/2} e^{i theta / 2}.

    This branch makes the kernels square integrable for mu off R+.
    """
    r = abs(mu)
    theta = np.angle(mu) % (2.0 * np.pi)
    return complex(np.sqrt(r) * np.exp(0.5j * theta))


def _on_positive_real_axis(mu: complex) -> bool:
    return mu.imag == 0.0 and mu.real >= 0.0


class _KernelRep:
    """Closed-form representation c_m(1/r)-polynomial combinations.

    Odd dimensions: (sum_m c_m r^-m) e^{i s r}.
    Even dimensions: (sum_m a_m r^-m) H1_0(s r) + (sum_m b_m r^-m) H1_1(s r).
    Both families are stable under d/dr, which is what the dimension
    recurrence g_{d+2} = -(d/dr g_d) / (2 pi r) consumes.
    """

    def __init__(self, s: complex, exp_coeffs=None, h0_coeffs=None, h1_coeffs=None):
        self.s = s
        self.exp_coeffs = dict(exp_coeffs or {})
        self.h0_coeffs = dict(h0_coeffs or {})
        self.h1_coeffs = dict(h1_coeffs or {})

    def derivative(self) -> "_KernelRep":
        s = self.s
        e, h0, h1 = {}, {}, {}

        def add(d, m, c):
            d[m] = d.get(m, 0.0) + c

        for m, c in self.exp_coeffs.items():
            add(e, m, 1j * s * c)
            add(e, m + 1, -m * c)
        for m, c in self.h0_coeffs.items():
            add(h0, m + 1, -m * c)
            add(h1, m, -s * c)          # H0' = -H1
        for m, c in self.h1_coeffs.items():
            add(h1, m + 1, -m * c)
            add(h0, m, s * c)           # H1'(z) = H0(z) - H1(z)/z
            add(h1, m + 1, -c)
        return _KernelRep(s, e, h0, h1)

    def scaled_by_inv_r(self, factor: float) -> "_KernelRep":
        shift1 = lambda d: {m + 1: factor * c for m, c in d.items()}
        return _KernelRep(self.s, shift1(self.exp_coeffs),
                          shift1(self.h0_coeffs), shift1(self.h1_coeffs))

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros(r.shape, dtype=complex)
        if self.exp_coeffs:
            poly = sum(c * r**(-float(m)) for m, c in self.exp_coeffs.items())
            out = out + poly * np.exp(1j * self.s * r)
        z = self.s * r
        if self.h0_coeffs:
            poly = sum(c * r**(-float(m)) for m, c in self.h0_coeffs.items())
            out = out + poly * hankel1(0, z)
        if self.h1_coeffs:
            poly = sum(c * r**(-float(m)) for m, c in self.h1_coeffs.items())
            out = out + poly * hankel1(1, z)
        return out


@dataclass(frozen=True)
class FundamentalSolution:
    """Radial kernel g^d_mu of the Helmholtz operator (-Delta - mu) in R^d."""

    dim: int
    mu: complex

    def __post_init__(self):
        if self.dim < 1 or self.dim > 9:
            raise ValueError("dimension out of supported range 1..9")
        if _on_positive_real_axis(complex(self.mu)):
            raise ValueError("mu on the positive real axis is excluded")

    @property
    def sqrt_mu(self) -> complex:
        return branch_sqrt(complex(self.mu))

    def _rep(self) -> _KernelRep:
        s = self.sqrt_mu
        if self.dim % 2 == 1:
            rep = _KernelRep(s, exp_coeffs={0: 1j / (2.0 * s)})   # d = 1 seed
            d = 1
        else:
            rep = _KernelRep(s, h0_coeffs={0: 0.25j})             # d = 2 seed
            d = 2
        while d < self.dim:
            rep = rep.derivative().scaled_by_inv_r(-1.0 / (2.0 * np.pi))
            d += 2
        return rep

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r <= 0):
            raise ValueError("fundamental solutions are evaluated at r > 0")
        return self._rep()(r)


def fundamental_eval(fs: FundamentalSolution, r):
    return fs(r)


def helmholtz_residual(fs: FundamentalSolution, r, h: float = 1e-4):
    """|(-Delta - mu) g| at radius r by radial central differences."""
    g0 = fs(r)
    gp = fs(np.asarray(r) + h)
    gm = fs(np.asarray(r) - h)
    d2 = (gp - 2 * g0 + gm) / h**2
    d1 = (gp - gm) / (2 * h)
    lap = d2 + (fs.dim - 1) / np.asarray(r) * d1
    return np.abs(-lap - fs.mu * g0)


def domination_rate(mu: complex) -> float:
    """tau with sqrt(tau) = |mu|^{1/2} sin(theta/2): the constructive decay
    rate dominating |g^d_mu| by a multiple of g^d_{-tau}."""
    r = abs(mu)
    theta = np.angle(mu) % (2.0 * np.pi)
    return float(r * np.sin(0.5 * theta) ** 2)
