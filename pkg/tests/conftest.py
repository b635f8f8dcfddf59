import numpy as np
import pytest
from hypothesis import settings

from nlslab.grid import GridSpec
from nlslab.nonlinearity import PurePower
from nlslab import boundstate as bs
from nlslab import linearization as lin
from nlslab import profile as prof

settings.register_profile("ci", derandomize=True, max_examples=25, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def nl3():
    return PurePower(p=3.0, dim=1)


@pytest.fixture(scope="session")
def nl7():
    return PurePower(p=7.0, dim=1)


@pytest.fixture(scope="session")
def grid_p3():
    return GridSpec(1, 512, 20.0)


@pytest.fixture(scope="session")
def grid_p7():
    return GridSpec(1, 512, 24.0)


@pytest.fixture(scope="session")
def state_p3(nl3, grid_p3):
    return bs.compute_bound_state(nl3, 1.0, 0, grid_p3)


@pytest.fixture(scope="session")
def state_p7(nl7, grid_p7):
    return bs.compute_bound_state(nl7, 1.0, 0, grid_p7)


@pytest.fixture(scope="session")
def op_p7(nl7, state_p7):
    return lin.assemble(nl7, state_p7)


@pytest.fixture(scope="session")
def spec_p7(op_p7):
    return lin.spectrum(op_p7, count=8)


@pytest.fixture(scope="session")
def op_p3(nl3, state_p3):
    return lin.assemble(nl3, state_p3)


@pytest.fixture(scope="session")
def spec_p3(op_p3):
    return lin.spectrum(op_p3, count=8)


@pytest.fixture(scope="session")
def profile_factory(nl7, state_p7, op_p7, spec_p7):
    cache = {}

    def build(order, a):
        key = (order, a)
        if key not in cache:
            cache[key] = prof.build_profile(nl7, state_p7, op_p7, spec_p7, order, a)
        return cache[key]

    return build


@pytest.fixture(scope="session")
def internal_mode(nl3, grid_p3):
    """A genuine oscillatory eigenpair: the p=4 soliton carries a discrete
    purely imaginary eigenvalue inside the spectral gap."""
    nl4 = PurePower(p=4.0, dim=1)
    state = bs.compute_bound_state(nl4, 1.0, 0, GridSpec(1, 512, 20.0))
    op = lin.assemble(nl4, state)
    spec = lin.spectrum(op, count=8)
    gap = spec.all_eigenvalues[
        (np.abs(spec.all_eigenvalues.real) < 1e-7)
        & (np.abs(spec.all_eigenvalues.imag) > 0.05)
        & (np.abs(spec.all_eigenvalues.imag) < 0.999)]
    assert gap.size >= 2, "expected an internal mode for p=4"
    target = gap[np.argmax(gap.imag)]
    lam, Z = lin.eigenpair_near(op, spec, target)
    mode_spec = lin.Spectrum(
        eigenvalues=np.array([lam]), all_eigenvalues=spec.all_eigenvalues,
        rho=float(lam.real), theta=float(lam.imag), Z=Z,
        residual=spec.residual, grid=op.grid)
    return op, mode_spec
