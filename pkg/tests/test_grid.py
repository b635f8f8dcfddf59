import numpy as np
import pytest
from hypothesis import given, strategies as st

from nlslab import grid as gm
from nlslab.grid import Field, GridSpec


@pytest.fixture(scope="module")
def g():
    return GridSpec(1, 256, 20.0)


def random_field(g, seed):
    rng = np.random.default_rng(seed)
    vals = rng.normal(size=g.shape) + 1j * rng.normal(size=g.shape)
    return Field(g, vals)


def test_gridspec_invariants():
    g = GridSpec(2, 64, 10.0)
    assert g.dx * g.n == pytest.approx(2 * g.ell, abs=1e-12)
    with pytest.raises(ValueError):
        GridSpec(1, 100, 10.0)   # not a power of two
    with pytest.raises(ValueError):
        GridSpec(1, 4, 10.0)     # too small
    with pytest.raises(ValueError):
        GridSpec(4, 16, 10.0)    # dim out of range


def test_field_rejects_nan(g):
    vals = np.zeros(g.shape, dtype=complex)
    vals[3] = np.nan
    with pytest.raises(ValueError):
        Field(g, vals)


def test_laplacian_constant(g):
    f = Field(g, np.full(g.shape, 2.3 + 0.4j))
    assert np.max(np.abs(gm.laplacian(f).values)) < 1e-12


def test_laplacian_grid_sine():
    g = GridSpec(1, 256, 20.0)
    f = gm.from_function(g, lambda x: np.sin(np.pi * x / g.ell))
    expected = -((np.pi / g.ell) ** 2) * f.values
    assert np.max(np.abs(gm.laplacian(f).values - expected)) <= 1e-10


def test_laplacian_fourier_mode(g):
    k = 2 * np.pi / (2 * g.ell) * 7
    f = gm.from_function(g, lambda x: np.exp(1j * k * x))
    assert np.max(np.abs(gm.laplacian(f).values + k**2 * f.values)) < 1e-10


def test_gradient_examples():
    g = GridSpec(1, 512, 20.0)
    const = Field(g, np.full(g.shape, 1.0 + 0j))
    assert np.max(np.abs(gm.gradient(const)[0].values)) < 1e-12
    k = 2 * np.pi / (2 * g.ell) * 5
    f = gm.from_function(g, lambda x: np.exp(1j * k * x))
    assert np.max(np.abs(gm.gradient(f)[0].values - 1j * k * f.values)) < 1e-10
    sech = gm.from_function(g, lambda x: 1 / np.cosh(x))
    exact = gm.from_function(g, lambda x: -np.tanh(x) / np.cosh(x))
    err = np.abs(gm.gradient(sech)[0].values - exact.values)
    # the outermost points carry the ~4e-9 periodization seam of sech itself
    interior = np.abs(g.axis_coords()) <= 0.9 * g.ell
    assert np.max(err[interior]) <= 1e-9


def test_inner_l2_examples():
    g = GridSpec(1, 512, 20.0)
    f = random_field(g, 0)
    ip = gm.inner_l2(f, f)
    assert ip.imag == pytest.approx(0.0, abs=1e-12 * abs(ip))
    assert ip.real >= 0
    m1 = gm.from_function(g, lambda x: np.exp(1j * 2 * np.pi * 3 * x / (2 * g.ell)))
    m2 = gm.from_function(g, lambda x: np.exp(1j * 2 * np.pi * 5 * x / (2 * g.ell)))
    assert abs(gm.inner_l2(m1, m2)) < 1e-12
    sech = gm.from_function(g, lambda x: np.sqrt(2) / np.cosh(x))
    assert gm.inner_l2(sech, sech).real == pytest.approx(4.0, abs=1e-8)


def test_inner_l2_grid_mismatch():
    f = random_field(GridSpec(1, 256, 10.0), 1)
    h = random_field(GridSpec(1, 256, 12.0), 2)
    with pytest.raises(gm.GridMismatchError):
        gm.inner_l2(f, h)


def test_norm_h1_examples():
    g = GridSpec(1, 512, 20.0)
    assert gm.norm_h1(gm.zeros(g)) == 0.0
    f = random_field(g, 3)
    assert gm.norm_h1(f) >= gm.norm_l2(f)
    sech = gm.from_function(g, lambda x: np.sqrt(2) / np.cosh(x))
    assert gm.norm_h1(sech) == pytest.approx(np.sqrt(4 + 4 / 3), abs=1e-6)


@given(st.integers(0, 1000))
def test_parseval(seed):
    g = GridSpec(1, 128, 10.0)
    f = random_field(g, seed)
    phys = gm.norm_l2(f) ** 2
    spec = float(np.sum(np.abs(np.fft.fftn(f.values)) ** 2)) * g.dx**g.dim / g.size
    assert abs(phys - spec) <= 1e-10 * phys


@given(st.integers(0, 1000))
def test_boost_preserves_modulus_and_mass(seed):
    g = GridSpec(1, 128, 10.0)
    f = random_field(g, seed)
    rng = np.random.default_rng(seed + 1)
    v, t = rng.normal(), rng.normal()
    b = gm.galilean_boost(f, [v], t)
    assert np.max(np.abs(np.abs(b.values) - np.abs(f.values))) < 1e-12
    assert abs(gm.norm_l2(b) - gm.norm_l2(f)) < 1e-12
    ident = gm.galilean_boost(f, [0.0], t)
    assert np.max(np.abs(ident.values - f.values)) == 0.0


def test_laplacian_squared_is_k4_multiplier():
    g = GridSpec(1, 256, 15.0)
    f = random_field(g, 4)
    twice = gm.laplacian(gm.laplacian(f))
    direct = gm.apply_multiplier(f, g.ksq() ** 2)
    denom = np.max(np.abs(direct.values))
    assert np.max(np.abs(twice.values - direct.values)) <= 1e-9 * denom


def test_divergence_of_gradient_is_laplacian():
    g = GridSpec(2, 64, 8.0)
    f = random_field(g, 5)
    grads = gm.gradient(f)
    div = sum(gm.gradient(gf)[i].values for i, gf in enumerate(grads))
    lap = gm.laplacian(f).values
    assert np.max(np.abs(div - lap)) <= 1e-9 * np.max(np.abs(lap))


def test_inner_conjugate_symmetry():
    g = GridSpec(1, 128, 9.0)
    f, h = random_field(g, 6), random_field(g, 7)
    assert gm.inner_l2(f, h) == pytest.approx(np.conj(gm.inner_l2(h, f)), abs=1e-13)


def test_snapshot_roundtrip_bitwise(tmp_path):
    g = GridSpec(2, 16, 5.0)
    f = random_field(g, 8).with_values(random_field(g, 8).values, time=1.75)
    path = tmp_path / "f.nlsf"
    gm.write_snapshot(f, path)
    back = gm.read_snapshot(path)
    assert back.grid == f.grid
    assert back.time == f.time
    assert np.array_equal(back.values, f.values)


def test_snapshot_bad_magic(tmp_path):
    path = tmp_path / "bad.nlsf"
    path.write_bytes(b"XXXX" + b"\0" * 64)
    with pytest.raises(ValueError):
        gm.read_snapshot(path)


def test_spectral_shift_exact_on_modes():
    g = GridSpec(1, 128, 10.0)
    k = 2 * np.pi / (2 * g.ell) * 3
    f = gm.from_function(g, lambda x: np.exp(1j * k * x))
    sh = gm.shift(f, [1.234])
    exact = gm.from_function(g, lambda x: np.exp(1j * k * (x - 1.234)))
    assert np.max(np.abs(sh.values - exact.values)) < 1e-12


def test_embed_places_values():
    small = GridSpec(1, 64, 4.0)
    big = GridSpec(1, 128, 8.0)
    f = gm.from_function(small, lambda x: np.exp(-x**2))
    e = gm.embed(f, big)
    xb = big.axis_coords()
    inside = np.abs(xb) < 3.9
    assert np.max(np.abs(e.values[inside] - np.exp(-xb[inside] ** 2))) < 1e-12
    with pytest.raises(gm.GridMismatchError):
        gm.embed(f, GridSpec(1, 128, 10.0))
