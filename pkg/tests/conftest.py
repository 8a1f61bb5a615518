import numpy as np
import pytest

from hybridjump import (
    FluorParams,
    HybridOperator,
    HybridSuperop,
    build,
    build_hybrid,
    build_plain,
    initial_hybrid,
    initial_plain,
)


@pytest.fixture(scope="session")
def params():
    return FluorParams(omega=1.0, eta=0.8)


@pytest.fixture(scope="session")
def hybrid_gens(params):
    return build(build_hybrid(params))


@pytest.fixture(scope="session")
def plain_gens(params):
    return build(build_plain(params))


@pytest.fixture(scope="session")
def rho0_hybrid():
    return initial_hybrid()


@pytest.fixture(scope="session")
def rho0_plain():
    return initial_plain()


def random_hybrid(rng, n_c, d, hermitian=False, state=False):
    b = rng.normal(size=(n_c, d, d)) + 1j * rng.normal(size=(n_c, d, d))
    if state:
        b = np.einsum("rij,rkj->rik", b, b.conj())
        b /= np.einsum("rii->", b).real
        return HybridOperator(b)
    if hermitian:
        b = 0.5 * (b + b.conj().transpose(0, 2, 1))
    return HybridOperator(b)


def random_superop(rng, n_c, d, scale=1.0):
    size = n_c * d * d
    m = scale * (rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size)))
    return HybridSuperop(m, n_c, d)
