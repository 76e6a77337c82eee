"""Problem definitions: residual maps, losses, gradients, coercivity probes.

A problem bundles a residual map F acting on the discretized target space
with the loss L[g] = 0.5 * <F[g], F[g]>_L2 and a gradient metric.  The
returned gradient is always the representative in that metric, obtained by
converting the L2 representative with ``metric_sharp``.

Shipped problems:

* ``quadratic``  -- F[g] = g - phi, so L is half the squared L2 distance.
* ``npbe``       -- F[g] = -laplacian(g) + sinh(g) + h, the nonlinear
  Poisson-Boltzmann residual, evaluated pseudo-spectrally.  The data field
  h is manufactured from a chosen solution phi as h = laplacian(phi) -
  sinh(phi), which makes phi an exact zero of the discrete residual.

Custom problems (used heavily in tests) supply their own residual and
L2-gradient callables.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import spaces
from .errors import ConfigurationError, DivergenceError
from .spaces import Field, SobolevOrder


@dataclass(frozen=True)
class Problem:
    """A residual map with its loss convention and gradient metric.

    ``residual_map(g) -> Field`` evaluates F.  ``l2_gradient_map(g, F(g))
    -> Field`` returns the L2 Frechet representative of DL at g; the
    public gradient applies the metric conversion on top of it.
    ``clamp_probe(g) -> bool`` reports whether the overflow clamp engaged.
    """

    name: str
    residual_map: object
    l2_gradient_map: object
    loss_kind: str  # "half-residual-norm" | "quadratic-distance"
    gradient_metric: SobolevOrder
    basis: spaces.Basis
    known_solution: Field | None = None
    data_field: Field | None = None
    clamp: float = spaces.DEFAULT_CLAMP
    clamp_probe: object = None
    # optional raw-coefficient closure coeffs -> (loss, dl_l2_coeffs,
    # clamped); must agree with the Field path, used by flow inner loops
    compiled_loss: object = None

    def __post_init__(self):
        if self.known_solution is not None:
            check = nominal_loss(self, self.known_solution)
            if check.value > 1e-20:
                raise ConfigurationError(
                    f"known solution of '{self.name}' has loss {check.value:.3e}"
                )


@dataclass(frozen=True)
class LossEval:
    """Loss value, gradient representative, and residual norm at a point."""

    value: float
    gradient: Field
    residual_norm: float
    clamped: bool = False


def residual(p: Problem, g: Field) -> Field:
    """Evaluate the residual map F at g."""
    if g.basis != p.basis:
        raise ConfigurationError(f"field is not on the basis of '{p.name}'")
    return p.residual_map(g)


def nominal_loss(p: Problem, g: Field) -> LossEval:
    """Loss 0.5 * |F[g]|^2_L2 with its gradient in the problem metric."""
    if g.basis != p.basis:
        raise ConfigurationError(f"field is not on the basis of '{p.name}'")
    res = p.residual_map(g)
    value = 0.5 * spaces.inner_product(res, res, SobolevOrder.L2)
    dl_l2 = p.l2_gradient_map(g, res)
    if not np.isfinite(value) or not np.all(np.isfinite(dl_l2.coeffs)):
        raise DivergenceError(
            f"non-finite loss evaluation in '{p.name}'", last_finite=g
        )
    grad = spaces.metric_sharp(dl_l2, p.gradient_metric)
    clamped = bool(p.clamp_probe(g)) if p.clamp_probe is not None else False
    return LossEval(
        value=value,
        gradient=grad,
        residual_norm=float(np.sqrt(2.0 * value)),
        clamped=clamped,
    )


def gradient_norm(p: Problem, ev: LossEval) -> float:
    return spaces.norm(ev.gradient, p.gradient_metric)


# ---------------------------------------------------------------------------
# Shipped problem constructors
# ---------------------------------------------------------------------------


def quadratic_problem(
    basis: spaces.Basis,
    phi: Field,
    metric: SobolevOrder = SobolevOrder.L2,
    name: str = "quadratic",
) -> Problem:
    """L[g] = 0.5 * |g - phi|^2_L2 with gradient in ``metric``."""

    def res(g: Field) -> Field:
        return g - phi

    def dl(g: Field, r: Field) -> Field:
        return r

    return Problem(
        name=name,
        residual_map=res,
        l2_gradient_map=dl,
        loss_kind="quadratic-distance",
        gradient_metric=metric,
        basis=basis,
        known_solution=phi,
    )


def npbe_problem(
    basis: spaces.Basis,
    phi: Field,
    metric: SobolevOrder = SobolevOrder.W22,
    clamp: float = spaces.DEFAULT_CLAMP,
    name: str = "npbe",
) -> Problem:
    """Nonlinear Poisson-Boltzmann residual with a manufactured solution.

    F[g] = -laplacian(g) + sinh(g) + h, with h = laplacian(phi) - sinh(phi).
    The L2 gradient representative is (-laplacian + cosh(g) *) applied to
    F[g]; the cosh multiplication happens in nodal space with the same
    transform pair as the residual, so the analytic gradient is the exact
    derivative of the discrete loss.  Nodal values are clamped to |v| <=
    clamp before sinh/cosh (the clamp zeroes the local derivative, keeping
    gradient and loss consistent).
    """
    if basis.kind != "sine":
        raise ConfigurationError("npbe requires a sine-spectral basis")
    sinh_phi, _ = spaces.apply_pointwise(phi, np.sinh, clamp=clamp)
    h = spaces.laplacian(phi) - sinh_phi

    def res(g: Field) -> Field:
        vals, mask, _ = spaces.nodal_values_clamped(g, clamp=clamp)
        sinh_g = spaces.from_nodal(np.sinh(vals), basis)
        return -spaces.laplacian(g) + sinh_g + h

    def dl(g: Field, r: Field) -> Field:
        vals, mask, _ = spaces.nodal_values_clamped(g, clamp=clamp)
        multiplier = np.cosh(vals) * mask
        return -spaces.laplacian(r) + spaces.multiply_pointwise(multiplier, r)

    def probe(g: Field) -> bool:
        return spaces.nodal_values_clamped(g, clamp=clamp)[2]

    n, d = basis.n, basis.dimension
    eigs = basis.eigenvalues
    h_coeffs = h.coeffs
    l2_weight = spaces.HALF_WIDTH ** d

    def fast_loss(coeffs: np.ndarray):
        vals = spaces._to_nodal_raw(coeffs, n, d, 2)
        mask = np.abs(vals) <= clamp
        clamped = not bool(mask.all())
        if clamped:
            vals = np.clip(vals, -clamp, clamp)
        res_c = -eigs * coeffs + spaces._from_nodal_raw(np.sinh(vals), n, d, 2) + h_coeffs
        loss = 0.5 * l2_weight * float(np.dot(res_c, res_c))
        res_vals = spaces._to_nodal_raw(res_c, n, d, 2)
        dl = -eigs * res_c + spaces._from_nodal_raw(
            np.cosh(vals) * mask * res_vals, n, d, 2
        )
        return loss, dl, clamped

    return Problem(
        name=name,
        residual_map=res,
        l2_gradient_map=dl,
        loss_kind="half-residual-norm",
        gradient_metric=metric,
        basis=basis,
        known_solution=phi,
        data_field=h,
        clamp=clamp,
        clamp_probe=probe,
        compiled_loss=fast_loss,
    )


def custom_problem(
    basis: spaces.Basis,
    residual_map,
    l2_gradient_map,
    metric: SobolevOrder = SobolevOrder.L2,
    known_solution: Field | None = None,
    name: str = "custom",
) -> Problem:
    """Assemble a problem from explicit residual/gradient callables."""
    return Problem(
        name=name,
        residual_map=residual_map,
        l2_gradient_map=l2_gradient_map,
        loss_kind="half-residual-norm",
        gradient_metric=metric,
        basis=basis,
        known_solution=known_solution,
    )


# ---------------------------------------------------------------------------
# Coercivity probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoercivityReport:
    epsilon: float
    n_rays: int
    radius_max: float
    exit_radii: np.ndarray
    bounded: bool
    inconclusive: bool


def coercivity_probe(
    p: Problem,
    epsilon: float,
    n_rays: int = 16,
    radius_max: float = 100.0,
    seed: int = 0,
    scan_points: int = 256,
) -> CoercivityReport:
    """Probe whether the sublevel set {g: L[g] < epsilon} looks bounded.

    Rays start at the known solution (or the zero field) in random
    L2-normalized directions.  Along each ray the largest radius with loss
    below epsilon is located by an outward grid scan plus bisection of the
    final crossing.  ``bounded`` holds when every exit radius is strictly
    inside ``radius_max``; rays still below epsilon at ``radius_max`` leave
    the probe inconclusive.
    """
    if epsilon < 0:
        raise ConfigurationError("epsilon must be >= 0")
    center = p.known_solution if p.known_solution is not None else spaces.zero_field(p.basis)
    rng = np.random.default_rng(seed)
    exit_radii = np.zeros(n_rays)
    inconclusive = False
    if epsilon == 0.0:
        # empty sublevel set: trivially bounded
        return CoercivityReport(epsilon, n_rays, radius_max, exit_radii, True, False)
    for i in range(n_rays):
        direction = Field(rng.standard_normal(p.basis.size), p.basis)
        direction = direction * (1.0 / spaces.norm(direction, SobolevOrder.L2))

        def loss_at(r: float) -> float:
            res = p.residual_map(center + r * direction)
            return 0.5 * spaces.inner_product(res, res, SobolevOrder.L2)

        radii = np.linspace(0.0, radius_max, scan_points + 1)
        below = np.array([loss_at(r) < epsilon for r in radii])
        if below[-1]:
            exit_radii[i] = radius_max
            inconclusive = True
            continue
        if not below.any():
            exit_radii[i] = 0.0
            continue
        last = int(np.nonzero(below)[0][-1])
        lo, hi = radii[last], radii[last + 1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if loss_at(mid) < epsilon:
                lo = mid
            else:
                hi = mid
        exit_radii[i] = 0.5 * (lo + hi)
    bounded = bool(np.all(exit_radii < radius_max)) and not inconclusive
    return CoercivityReport(epsilon, n_rays, radius_max, exit_radii, bounded, inconclusive)
