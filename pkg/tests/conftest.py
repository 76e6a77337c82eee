from __future__ import annotations

import numpy as np
import pytest

from gradlab import spaces as sp


@pytest.fixture(scope="session")
def basis_64():
    return sp.make_space(sp.Domain(1), 64)


@pytest.fixture(scope="session")
def basis_128():
    return sp.make_space(sp.Domain(1), 128)


@pytest.fixture(scope="session")
def basis_256():
    return sp.make_space(sp.Domain(1), 256)


@pytest.fixture(scope="session")
def basis_3d():
    return sp.make_space(sp.Domain(3), 8)


def reconstruct(field: sp.Field, x: np.ndarray) -> np.ndarray:
    """Evaluate a sine-basis field at arbitrary points, independently of
    the package's transform stack (test oracle)."""
    n = field.basis.n
    k = np.arange(1, n + 1)
    return np.sin(np.outer(x + np.pi, k / 2.0)) @ field.coeffs


def quad_inner(f: sp.Field, g: sp.Field, n_quad: int = 20001) -> float:
    """L2 inner product by dense trapezoid quadrature of reconstructed
    functions (test oracle, independent of coefficient identities)."""
    x = np.linspace(-np.pi, np.pi, n_quad)
    return float(np.trapezoid(reconstruct(f, x) * reconstruct(g, x), x))


def smooth_random_field(basis: sp.Basis, rng, scale: float = 0.5) -> sp.Field:
    """Random field with a decaying spectrum; keeps losses O(1) so central
    differences are not destroyed by cancellation."""
    decay = (1.0 + np.abs(basis.eigenvalues)) ** -2
    return sp.Field(scale * rng.standard_normal(basis.size) * decay, basis)
