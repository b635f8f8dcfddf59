"""Periodic-grid fields with FFT-based differential calculus.

Everything downstream (bound states, linearized operators, split-step
evolution) works on complex fields sampled on the uniform periodic box
[-ell, ell)^d.  Conventions fixed repo-wide: row-major value layout,
unnormalized forward FFT / normalized inverse FFT (numpy default).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

SNAPSHOT_MAGIC = b"NLSF"
SNAPSHOT_VERSION = 1


class GridMismatchError(ValueError):
    """Raised when two fields living on different grids are combined."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on [-ell, ell)^d with n points per axis."""

    dim: int
    n: int
    ell: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 8 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"n must be a power of two >= 8, got {self.n}")
        if self.ell <= 0:
            raise ValueError("box half-length must be positive")

    @property
    def dx(self) -> float:
        return 2.0 * self.ell / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def axis_coords(self) -> np.ndarray:
        """Physical coordinates along one axis."""
        return -self.ell + self.dx * np.arange(self.n)

    def coords(self) -> list:
        """d coordinate arrays broadcast to the full grid shape."""
        x = self.axis_coords()
        return list(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def wavenumbers(self) -> list:
        """d spectral wavenumber arrays broadcast to the full grid shape."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.dx)
        return list(np.meshgrid(*([k] * self.dim), indexing="ij"))

    def ksq(self) -> np.ndarray:
        """|k|^2 multiplier array."""
        ks = self.wavenumbers()
        out = ks[0] ** 2
        for k in ks[1:]:
            out = out + k**2
        return out


@dataclass(frozen=True)
class Field:
    """A complex-valued state u(t, x) sampled on a periodic grid.

    Values are stored row-major with shape (n,)*dim.  Fields are treated
    as immutable; operations return new instances.
    """

    grid: GridSpec
    values: np.ndarray = field(repr=False)
    time: float = 0.0

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.complex128)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v.view(np.float64))):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "values", v)

    def with_values(self, values, time=None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.time)


def zeros(grid: GridSpec, time: float = 0.0) -> Field:
    return Field(grid, np.zeros(grid.shape, dtype=np.complex128), time)


def from_function(grid: GridSpec, fn, time: float = 0.0) -> Field:
    """Sample fn(x1, ..., xd) on the grid."""
    return Field(grid, np.asarray(fn(*grid.coords()), dtype=np.complex128), time)


def _check_same_grid(f: Field, g: Field):
    if f.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


def apply_multiplier(f: Field, mult: np.ndarray) -> Field:
    """Apply a Fourier multiplier: ifft(mult * fft(f))."""
    return f.with_values(np.fft.ifftn(mult * np.fft.fftn(f.values)))


def laplacian(f: Field) -> Field:
    return apply_multiplier(f, -f.grid.ksq())


def gradient(f: Field) -> list:
    """Spectral first derivatives along each axis."""
    fh = np.fft.fftn(f.values)
    return [f.with_values(np.fft.ifftn(1j * k * fh)) for k in f.grid.wavenumbers()]


def inner_l2(f: Field, g: Field) -> complex:
    """Discrete L2 pairing sum f conj(g) dx^d; real part is the real pairing."""
    _check_same_grid(f, g)
    return complex(np.vdot(g.values, f.values) * f.grid.dx**f.grid.dim)


def norm_l2(f: Field) -> float:
    return float(np.linalg.norm(f.values.ravel())) * f.grid.dx ** (f.grid.dim / 2.0)


def norm_h1(f: Field) -> float:
    """sqrt(||f||^2 + ||grad f||^2) via the spectral multiplier 1 + |k|^2."""
    fh = np.fft.fftn(f.values)
    w = (1.0 + f.grid.ksq()) * np.abs(fh) ** 2
    # Parseval: sum_x |f|^2 dx^d = sum_k |fh|^2 dx^d / n^d
    return float(np.sqrt(w.sum() * f.grid.dx**f.grid.dim / f.grid.size))


def norm_hs(f: Field, s: float) -> float:
    """Sobolev norm with multiplier (1 + |k|^2)^s."""
    fh = np.fft.fftn(f.values)
    w = (1.0 + f.grid.ksq()) ** s * np.abs(fh) ** 2
    return float(np.sqrt(w.sum() * f.grid.dx**f.grid.dim / f.grid.size))


def norm_linf(f: Field) -> float:
    return float(np.max(np.abs(f.values)))


def galilean_boost(f: Field, v, t: float) -> Field:
    """Multiply pointwise by exp(i(v.x/2 - |v|^2 t/4)), turning a standing
    profile into one travelling at speed v."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.size != f.grid.dim:
        raise ValueError(f"velocity dim {v.size} != grid dim {f.grid.dim}")
    xs = f.grid.coords()
    phase = sum(0.5 * vi * xi for vi, xi in zip(v, xs)) - 0.25 * float(v @ v) * t
    return f.with_values(f.values * np.exp(1j * phase))


def shift(f: Field, delta) -> Field:
    """Spectral (band-limited exact) translation f(. - delta) with periodic wrap."""
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    fh = np.fft.fftn(f.values)
    for k, d in zip(f.grid.wavenumbers(), delta):
        fh = fh * np.exp(-1j * k * d)
    return f.with_values(np.fft.ifftn(fh))


def embed(f: Field, target: GridSpec) -> Field:
    """Place a field from a smaller box centered into a larger one with the
    same spacing, padding with zeros.  Sensible only when the field has
    decayed below tolerance at its own box edge."""
    if target.dim != f.grid.dim:
        raise GridMismatchError("embedding requires matching dimension")
    if abs(target.dx - f.grid.dx) > 1e-12 * target.dx:
        raise GridMismatchError(
            f"embedding requires matching spacing ({f.grid.dx} vs {target.dx})")
    if target.n < f.grid.n:
        raise GridMismatchError("target grid is smaller than the source")
    out = np.zeros(target.shape, dtype=np.complex128)
    off = (target.n - f.grid.n) // 2
    sl = tuple(slice(off, off + f.grid.n) for _ in range(f.grid.dim))
    out[sl] = f.values
    return Field(target, out, f.time)


def write_snapshot(f: Field, path):
    """Binary snapshot: magic 'NLSF', u16 version, u8 dim, u64 n, f64 ell,
    f64 t, then n^d little-endian (re, im) f64 pairs in row-major order."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<HBQdd", SNAPSHOT_VERSION, f.grid.dim, f.grid.n,
                             f.grid.ell, f.time))
        pairs = np.empty(f.grid.size * 2, dtype="<f8")
        pairs[0::2] = f.values.real.ravel()
        pairs[1::2] = f.values.imag.ravel()
        fh.write(pairs.tobytes())


def read_snapshot(path) -> Field:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError(f"bad snapshot magic {magic!r}")
        version, dim, n, ell, t = struct.unpack("<HBQdd", fh.read(struct.calcsize("<HBQdd")))
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version {version}")
        count = 2 * n**dim
        pairs = np.frombuffer(fh.read(count * 8), dtype="<f8")
        if pairs.size != count:
            raise ValueError("truncated snapshot")
    values = (pairs[0::2] + 1j * pairs[1::2]).reshape((n,) * dim)
    return Field(GridSpec(dim, n, ell), values, t)
