"""Parametrized model families mapping parameter vectors into the target
space, with analytic Jacobians and tangent-kernel diagnostics.

Shipped kinds:

* ``affine``    -- offset + sum_k w_k * b_k over fixed basis fields.
* ``sinusoid``  -- w_0 + sum_i w_{2i} * sin(w_{2i-1} * x) on a 1-D sine
  basis, M = 2a + 1 for ``a`` frequency/amplitude pairs.  Both amplitudes
  and frequencies are free reals; terms are projected onto the basis by
  Gauss quadrature.
* ``spiral``    -- the one-parameter plane curve (w sin w, w cos w).
* ``curve``     -- offset + sum_j q_j(w) * b_j for fixed 1-D polynomials
  q_j and fields b_j; a one-parameter family used to build synthetic loss
  landscapes (monomials, double wells) from the quadratic problem.

The Gram matrix of Jacobian rows under a chosen metric is the computable
control on the model-set geometry; its nonzero spectrum coincides with the
spectrum of the rank-<=M tangent kernel operator acting on the target
space, which ``spectral_consistency`` verifies by two independent
eigensolves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spaces
from .errors import ConfigurationError, ShapeError, UnsupportedOperationError
from .spaces import Basis, Field, SobolevOrder


@dataclass(frozen=True)
class ParamVector:
    """Active parameters plus the expansion level that produced them."""

    values: np.ndarray
    level: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 1:
            raise ShapeError("parameter vector must be a non-empty 1-D array")
        if not np.all(np.isfinite(values)):
            raise ShapeError("parameters must be finite")
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class ArchitectureSpec:
    """A model family; ``structure`` holds the kind-specific payload."""

    kind: str  # "affine" | "sinusoid" | "spiral" | "curve"
    target_basis: Basis
    structure: tuple = ()

    @property
    def n_params(self) -> int:
        if self.kind == "affine":
            fields, _ = self.structure
            return len(fields)
        if self.kind == "sinusoid":
            (a,) = self.structure
            return 2 * a + 1
        if self.kind in ("spiral", "curve"):
            return 1
        raise ConfigurationError(f"unknown architecture kind '{self.kind}'")

    @property
    def pair_count(self) -> int:
        if self.kind != "sinusoid":
            raise UnsupportedOperationError("pair_count is sinusoid-only")
        return self.structure[0]


def affine_architecture(
    fields: list[Field], offset: Field | None = None
) -> ArchitectureSpec:
    if not fields:
        raise ConfigurationError("affine architecture needs at least one field")
    basis = fields[0].basis
    for f in fields:
        if f.basis != basis:
            raise ShapeError("affine basis fields live on different bases")
    if offset is None:
        offset = spaces.zero_field(basis)
    return ArchitectureSpec("affine", basis, (tuple(fields), offset))


def sinusoid_architecture(basis: Basis, a: int) -> ArchitectureSpec:
    if basis.kind != "sine" or basis.dimension != 1:
        raise ConfigurationError("sinusoid architecture needs a 1-D sine basis")
    if a < 1:
        raise ConfigurationError("sinusoid needs at least one pair")
    return ArchitectureSpec("sinusoid", basis, (a,))


def spiral_architecture() -> ArchitectureSpec:
    return ArchitectureSpec("spiral", spaces.make_euclidean(2), ())


def curve_architecture(
    components: list[tuple[list[float], Field]], offset: Field | None = None
) -> ArchitectureSpec:
    """One-parameter family offset + sum_j q_j(w) b_j (q_j as ascending
    polynomial coefficients)."""
    if not components:
        raise ConfigurationError("curve architecture needs at least one component")
    basis = components[0][1].basis
    comps = []
    for poly, b in components:
        if b.basis != basis:
            raise ShapeError("curve component fields live on different bases")
        comps.append((tuple(float(c) for c in poly), b))
    if offset is None:
        offset = spaces.zero_field(basis)
    return ArchitectureSpec("curve", basis, (tuple(comps), offset))


def monomial_architecture(power: int, b: Field) -> ArchitectureSpec:
    """A(w) = w**power * b, the simplest degenerate one-parameter family."""
    poly = [0.0] * power + [1.0]
    return curve_architecture([(poly, b)])


def _check_params(a: ArchitectureSpec, w: ParamVector):
    if w.size != a.n_params:
        raise ShapeError(
            f"architecture '{a.kind}' expects {a.n_params} parameters, got {w.size}"
        )


# ---------------------------------------------------------------------------
# Evaluation and Jacobians (coefficient-matrix core)
# ---------------------------------------------------------------------------


def compile_model_jac(a: ArchitectureSpec):
    """Build a closure values -> (model, jac) with fixed structures
    precomputed; the fast path for flow right-hand sides."""
    if a.kind == "affine":
        fields, offset = a.structure
        jac = np.stack([f.coeffs for f in fields])
        off = offset.coeffs

        def rows(values):
            return off + values @ jac, jac

        return rows
    if a.kind == "sinusoid":
        basis = a.target_basis
        pairs = a.pair_count
        nodes = spaces.quadrature_nodes_1d(basis)
        one = spaces.project_values_1d(basis, np.ones_like(nodes))
        _, proj = spaces._gauss_projection_1d(basis.n)

        def rows(values):
            freqs = values[1::2]
            amps = values[2::2]
            phase = np.outer(freqs, nodes)
            sin_rows = np.sin(phase) @ proj
            cos_rows = (nodes * np.cos(phase)) @ proj
            model = values[0] * one + amps @ sin_rows
            jac = np.empty((2 * pairs + 1, basis.size))
            jac[0] = one
            jac[1::2] = amps[:, None] * cos_rows
            jac[2::2] = sin_rows
            return model, jac

        return rows
    if a.kind == "spiral":

        def rows(values):
            t = values[0]
            s, c = np.sin(t), np.cos(t)
            model = np.array([t * s, t * c])
            jac = np.array([[s + t * c, c - t * s]])
            return model, jac

        return rows
    if a.kind == "curve":
        comps, offset = a.structure
        polys = [np.asarray(poly) for poly, _ in comps]
        dpolys = [np.polynomial.polynomial.polyder(p) for p in polys]
        bmat = np.stack([b.coeffs for _, b in comps])  # (n_comp, size)
        off = offset.coeffs

        def rows(values):
            wval = values[0]
            q = np.array([np.polynomial.polynomial.polyval(wval, p) for p in polys])
            dq = np.array(
                [
                    np.polynomial.polynomial.polyval(wval, dp) if dp.size else 0.0
                    for dp in dpolys
                ]
            )
            return off + q @ bmat, (dq @ bmat)[None, :]

        return rows
    raise ConfigurationError(f"unknown architecture kind '{a.kind}'")


def model_and_jacobian(a: ArchitectureSpec, w: ParamVector):
    """Model coefficients and the (M, n) Jacobian coefficient matrix."""
    _check_params(a, w)
    return compile_model_jac(a)(w.values)


def evaluate(a: ArchitectureSpec, w: ParamVector) -> Field:
    """The model field produced by parameters ``w``."""
    model, _ = model_and_jacobian(a, w)
    return Field(model, a.target_basis)


def jacobian(a: ArchitectureSpec, w: ParamVector) -> list[Field]:
    """Analytic partial derivatives of the model, one field per parameter."""
    _, jac = model_and_jacobian(a, w)
    return [Field(row, a.target_basis) for row in jac]


# ---------------------------------------------------------------------------
# Kernel diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelDiagnostics:
    """Gram matrix of Jacobian rows with its spectral summary.

    ``min_nonzero_eig`` is the smallest eigenvalue above the numerical-rank
    tolerance (M * machine-eps * max eigenvalue), or 0.0 when everything is
    below it, in which case ``degenerate`` is set.
    """

    gram: np.ndarray
    eigenvalues: np.ndarray  # ascending
    min_nonzero_eig: float
    numerical_rank: int
    rank_tolerance: float
    degenerate: bool = False


def _diagnostics_from_gram(gram: np.ndarray) -> KernelDiagnostics:
    eigs = np.linalg.eigvalsh(gram)
    lam_max = float(eigs[-1]) if eigs.size else 0.0
    tol = gram.shape[0] * np.finfo(np.float64).eps * max(lam_max, 0.0)
    active = eigs[eigs > tol]
    if active.size == 0:
        return KernelDiagnostics(gram, eigs, 0.0, 0, tol, degenerate=True)
    return KernelDiagnostics(gram, eigs, float(active[0]), int(active.size), tol)


def gram_from_jacobian(
    jac: np.ndarray, basis: Basis, metric: SobolevOrder
) -> np.ndarray:
    w = spaces._metric_weights(basis, metric)
    return (jac * w) @ jac.T


def tangent_gram(
    a: ArchitectureSpec, w: ParamVector, metric: SobolevOrder = SobolevOrder.L2
) -> KernelDiagnostics:
    """Gram matrix of the Jacobian rows under ``metric`` plus its spectrum."""
    _, jac = model_and_jacobian(a, w)
    gram = gram_from_jacobian(jac, a.target_basis, metric)
    gram = 0.5 * (gram + gram.T)
    return _diagnostics_from_gram(gram)


def kernel_apply(
    a: ArchitectureSpec,
    w: ParamVector,
    g: Field,
    metric: SobolevOrder = SobolevOrder.L2,
) -> Field:
    """Apply the rank-<=M tangent kernel: sum_k <J_k, g> J_k."""
    if g.basis != a.target_basis:
        raise ShapeError("field is not on the architecture's target basis")
    _, jac = model_and_jacobian(a, w)
    mw = spaces._metric_weights(a.target_basis, metric)
    pairings = (jac * mw) @ g.coeffs
    return Field(pairings @ jac, a.target_basis)


@dataclass(frozen=True)
class SpectralConsistencyReport:
    gram_eigenvalues: np.ndarray
    operator_eigenvalues: np.ndarray  # nonzero part, descending-matched
    max_relative_mismatch: float
    rank_gram: int
    rank_operator: int
    passed: bool


def spectral_consistency(
    a: ArchitectureSpec,
    w: ParamVector,
    metric: SobolevOrder = SobolevOrder.L2,
    tolerance: float = 1e-8,
    max_dense_size: int = 4096,
) -> SpectralConsistencyReport:
    """Check that the Gram matrix and the dense tangent-kernel operator
    share their nonzero spectrum.

    The operator is assembled on the full n-dimensional coefficient space
    (symmetrized with the metric square root) and eigensolved independently
    of the M x M Gram eigensolve.
    """
    basis = a.target_basis
    if basis.size > max_dense_size:
        raise UnsupportedOperationError(
            f"dense operator assembly capped at {max_dense_size}, basis has {basis.size}"
        )
    diag = tangent_gram(a, w, metric)
    _, jac = model_and_jacobian(a, w)
    mw = spaces._metric_weights(basis, metric)
    scaled = jac * np.sqrt(mw)  # (M, n)
    operator = scaled.T @ scaled  # (n, n), similar to the kernel operator
    op_eigs = np.linalg.eigvalsh(operator)
    lam_max = float(op_eigs[-1]) if op_eigs.size else 0.0
    # one shared threshold for both sides, with margin over the dense
    # eigensolve's noise floor, so "nonzero" means the same thing twice
    thr = 10.0 * max(
        diag.rank_tolerance, basis.size * np.finfo(np.float64).eps * max(lam_max, 0.0)
    )
    op_nonzero = np.sort(op_eigs[op_eigs > thr])[::-1]
    gram_nonzero = np.sort(diag.eigenvalues[diag.eigenvalues > thr])[::-1]
    rank_g, rank_o = gram_nonzero.size, op_nonzero.size
    if rank_g == rank_o and rank_g > 0:
        mismatch = float(
            np.max(np.abs(gram_nonzero - op_nonzero) / np.abs(gram_nonzero))
        )
    elif rank_g == rank_o:
        mismatch = 0.0
    else:
        mismatch = np.inf
    return SpectralConsistencyReport(
        gram_eigenvalues=diag.eigenvalues,
        operator_eigenvalues=op_nonzero,
        max_relative_mismatch=mismatch,
        rank_gram=rank_g,
        rank_operator=rank_o,
        passed=bool(mismatch <= tolerance),
    )
