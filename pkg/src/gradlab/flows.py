"""Time integrators for the descent flows, with trace recording.

Three flows are provided:

* ``integrate_nominal``     -- d/dt g = -grad L[g] on the target space.
* ``integrate_parametric``  -- d/dt w = -grad of (L composed with the
  architecture), the M-dimensional pullback system.
* ``integrate_annealed``    -- the parametric system plus annealed Gaussian
  noise, alpha(t) = sqrt(c / log(2 + t)), integrated by fixed-step
  Euler-Maruyama and fully reproducible from the seed.

Deterministic flows ride scipy's adaptive RK45 stepper; sampling, stall
detection, and termination are handled here on the recorded sample grid.
Traces are immutable once terminal and safe to analyze concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from . import architectures as arch_mod
from . import problems as prob_mod
from . import spaces
from .architectures import ArchitectureSpec, ParamVector
from .errors import ConfigurationError, DivergenceError
from .problems import Problem
from .spaces import Field, SobolevOrder

TERMINAL_REASONS = ("grad_stop", "stall", "t_end", "divergence")


@dataclass(frozen=True)
class FlowConfig:
    """Integration horizon, tolerances, and termination thresholds.

    ``stall_rel_change`` bounds the relative loss decrease over a window of
    ``stall_window`` recorded samples; a flow whose loss has flattened while
    the gradient is still above ``grad_stop`` is declared stalled.  A second
    stall signature fires when the gradient drops below ``stall_grad_level``
    while the loss sits above ``stall_loss_floor`` (an equilibrium that is
    not a solution).  ``anneal_c`` and ``noise_beta`` only matter for the
    annealed flow, as does ``sde_step``.
    """

    t_end: float = 10.0
    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    grad_stop: float = 1e-10
    stall_window: int = 50
    stall_rel_change: float = 1e-10
    stall_grad_level: float = 1e-8
    stall_loss_floor: float = 1e-10
    record_every: float | None = None
    seed: int = 0
    anneal_c: float = 2.0
    noise_beta: float = 0.0
    sde_step: float = 1e-3
    record_params: bool = True
    max_steps: int = 500_000
    loss_cap: float = 1e60

    def __post_init__(self):
        if self.t_end <= 0:
            raise ConfigurationError("t_end must be > 0")
        for name in ("rel_tol", "abs_tol", "sde_step"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.stall_rel_change < 0:
            raise ConfigurationError("stall_rel_change must be >= 0")
        if self.record_every is not None and self.record_every <= 0:
            raise ConfigurationError("record_every must be > 0")

    @property
    def sample_interval(self) -> float:
        return self.record_every if self.record_every is not None else self.t_end / 500.0


@dataclass(frozen=True)
class FlowEvent:
    t: float
    kind: str  # stall | clamp | expand | prune | stop
    detail: str = ""


@dataclass(frozen=True)
class FlowTrace:
    """Samples, events, and the terminal state of one flow run.

    Sample columns are parallel arrays; ``min_nonzero_eig`` and
    ``model_error`` are present only where meaningful (parametric flows,
    problems with a known solution).  ``params`` stacks parameter snapshots
    row per sample when recorded.
    """

    kind: str  # nominal | parametric | annealed
    t: np.ndarray
    loss: np.ndarray
    grad_norm: np.ndarray
    terminal_reason: str
    terminal_state: object
    config: FlowConfig
    min_nonzero_eig: np.ndarray | None = None
    model_error: np.ndarray | None = None
    params: np.ndarray | None = None
    events: tuple[FlowEvent, ...] = ()

    def __post_init__(self):
        if self.terminal_reason not in TERMINAL_REASONS:
            raise ConfigurationError(f"unknown terminal reason {self.terminal_reason}")
        if np.any(np.diff(self.t) <= 0):
            raise ConfigurationError("sample times must be strictly increasing")
        if not np.all(np.isfinite(self.loss)):
            raise ConfigurationError("recorded losses must be finite")

    @property
    def n_samples(self) -> int:
        return self.t.size

    @property
    def deterministic(self) -> bool:
        return self.kind != "annealed"


# ---------------------------------------------------------------------------
# Objectives: fast value/gradient closures over (problem, architecture)
# ---------------------------------------------------------------------------


def _curve_scalar_closure(arch: ArchitectureSpec, phi: np.ndarray):
    """Pure-python loss/derivative for 1-parameter curves on tiny Euclidean
    targets; keeps the Euler-Maruyama inner loop off numpy overhead."""
    comps, offset = arch.structure
    polys = [list(poly) for poly, _ in comps]
    rows = [list(b.coeffs) for _, b in comps]
    off = [float(o - p) for o, p in zip(offset.coeffs, phi)]
    size = len(off)

    def value_and_deriv(w: float):
        qs, dqs = [], []
        for poly in polys:
            q = 0.0
            dq = 0.0
            for c in reversed(poly):
                dq = dq * w + q
                q = q * w + c
            qs.append(q)
            dqs.append(dq)
        loss = 0.0
        deriv = 0.0
        for k in range(size):
            rk = off[k]
            drk = 0.0
            for j in range(len(polys)):
                rk += qs[j] * rows[j][k]
                drk += dqs[j] * rows[j][k]
            loss += rk * rk
            deriv += rk * drk
        return 0.5 * loss, deriv

    return value_and_deriv


class ParametricObjective:
    """Loss, Euclidean gradient, and diagnostics of w -> L[model(w)].

    The gradient components are the L2 pairings of the Jacobian rows with
    the L2 representative of DL, which is the chain rule regardless of the
    problem's gradient metric; the metric still governs the recorded
    kernel diagnostics.
    """

    def __init__(self, problem: Problem, arch: ArchitectureSpec):
        if arch.target_basis != problem.basis:
            raise ConfigurationError("architecture and problem bases differ")
        self.problem = problem
        self.arch = arch
        self.basis = problem.basis
        self._l2w = spaces._metric_weights(self.basis, SobolevOrder.L2)
        self._quadratic = problem.loss_kind == "quadratic-distance"
        self._phi = (
            problem.known_solution.coeffs if problem.known_solution is not None else None
        )
        self._rows = arch_mod.compile_model_jac(arch)
        self._scalar = None
        if (
            self._quadratic
            and arch.kind == "curve"
            and self.basis.size <= 8
            and np.allclose(self._l2w, 1.0)
        ):
            self._scalar = _curve_scalar_closure(arch, self._phi)

    def model_and_jacobian(self, values: np.ndarray):
        return self._rows(np.asarray(values, dtype=np.float64))

    def value_and_grad(self, values: np.ndarray):
        """Returns (loss, gradient vector, clamped flag)."""
        if self._scalar is not None:
            loss, dg = self._scalar(float(values[0]))
            return loss, np.array([dg]), False
        model, jac = self._rows(values)
        if self._quadratic:
            r = model - self._phi
            wr = self._l2w * r
            return 0.5 * float(np.dot(wr, r)), jac @ wr, False
        if self.problem.compiled_loss is not None:
            loss, dl_coeffs, clamped = self.problem.compiled_loss(model)
            return loss, jac @ (self._l2w * dl_coeffs), clamped
        g = Field(model, self.basis)
        res = self.problem.residual_map(g)
        loss = 0.5 * spaces.inner_product(res, res, SobolevOrder.L2)
        dl = self.problem.l2_gradient_map(g, res)
        grad = jac @ (self._l2w * dl.coeffs)
        clamped = (
            bool(self.problem.clamp_probe(g))
            if self.problem.clamp_probe is not None
            else False
        )
        return float(loss), grad, clamped

    def min_nonzero_eig(self, values: np.ndarray) -> float:
        diag = arch_mod.tangent_gram(
            self.arch, ParamVector(values), self.problem.gradient_metric
        )
        return diag.min_nonzero_eig

    def model_error(self, values: np.ndarray) -> float | None:
        if self._phi is None:
            return None
        model, _ = self.model_and_jacobian(values)
        d = model - self._phi
        return float(np.sqrt(np.dot(self._l2w * d, d)))


class NominalObjective:
    """Loss and metric gradient of the flow directly on the target space."""

    def __init__(self, problem: Problem):
        self.problem = problem
        self.basis = problem.basis
        self._phi = (
            problem.known_solution.coeffs if problem.known_solution is not None else None
        )
        self._l2w = spaces._metric_weights(self.basis, SobolevOrder.L2)

    def value_and_grad(self, coeffs: np.ndarray):
        """Returns (loss, gradient coeffs in the problem metric, grad_norm,
        clamped)."""
        g = Field(coeffs, self.basis)
        ev = prob_mod.nominal_loss(self.problem, g)
        gnorm = spaces.norm(ev.gradient, self.problem.gradient_metric)
        return ev.value, ev.gradient.coeffs, gnorm, ev.clamped

    def model_error(self, coeffs: np.ndarray) -> float | None:
        if self._phi is None:
            return None
        d = coeffs - self._phi
        return float(np.sqrt(np.dot(self._l2w * d, d)))


# ---------------------------------------------------------------------------
# Shared recording machinery
# ---------------------------------------------------------------------------


class _TraceBuilder:
    def __init__(self, kind: str, cfg: FlowConfig, with_mu: bool, with_params: bool):
        self.kind = kind
        self.cfg = cfg
        self.t: list[float] = []
        self.loss: list[float] = []
        self.grad: list[float] = []
        self.mu: list[float] | None = [] if with_mu else None
        self.err: list[float] | None = None
        self.params: list[np.ndarray] | None = [] if with_params else None
        self.events: list[FlowEvent] = []
        self.clamp_active = False

    def add(self, t, loss, grad_norm, mu=None, model_error=None, params=None, clamped=False):
        self.t.append(float(t))
        self.loss.append(float(loss))
        self.grad.append(float(grad_norm))
        if self.mu is not None:
            self.mu.append(float(mu) if mu is not None else np.nan)
        if model_error is not None:
            if self.err is None:
                self.err = [np.nan] * (len(self.t) - 1)
            self.err.append(float(model_error))
        elif self.err is not None:
            self.err.append(np.nan)
        if self.params is not None:
            self.params.append(np.array(params, dtype=np.float64))
        if clamped != self.clamp_active:
            self.clamp_active = clamped
            word = "entered" if clamped else "left"
            self.events.append(FlowEvent(float(t), "clamp", f"{word} clamp region"))

    def stalled(self) -> str | None:
        cfg = self.cfg
        i = len(self.t) - 1
        if self.grad[i] < cfg.stall_grad_level and self.loss[i] > cfg.stall_loss_floor:
            return (
                f"gradient {self.grad[i]:.3e} below {cfg.stall_grad_level:.1e} "
                f"with loss {self.loss[i]:.3e}"
            )
        if i >= cfg.stall_window:
            then = self.loss[i - cfg.stall_window]
            rel = (then - self.loss[i]) / max(abs(then), 1e-300)
            if rel < cfg.stall_rel_change and self.grad[i] >= cfg.grad_stop:
                return (
                    f"relative loss change {rel:.3e} over {cfg.stall_window} samples"
                )
        return None

    def finish(self, reason: str, terminal_state, detail: str = "") -> FlowTrace:
        self.events.append(FlowEvent(self.t[-1], "stop", detail or reason))
        return FlowTrace(
            kind=self.kind,
            t=np.array(self.t),
            loss=np.array(self.loss),
            grad_norm=np.array(self.grad),
            min_nonzero_eig=np.array(self.mu) if self.mu is not None else None,
            model_error=np.array(self.err) if self.err is not None else None,
            params=np.stack(self.params) if self.params else None,
            events=tuple(self.events),
            terminal_reason=reason,
            terminal_state=terminal_state,
            config=self.cfg,
        )


def _run_deterministic(kind, y0, cfg, rhs_fn, eval_sample, make_state):
    """Drive scipy RK45 over y' = rhs_fn(y), recording on a fixed grid.

    ``rhs_fn`` is the bare drift (called at every integrator stage);
    ``eval_sample(y) -> (loss, grad_norm, extras)`` adds the per-sample
    diagnostics and is only called on the recording grid.  ``make_state``
    wraps the terminal state.
    """

    builder = None  # assigned below; closed over by record()

    def rhs(t, y):
        return rhs_fn(y)

    try:
        sample0 = eval_sample(np.asarray(y0, dtype=np.float64))
    except DivergenceError:
        raise ConfigurationError("initial state already has non-finite loss")

    def record(t, y, sample):
        loss, gnorm, extras = sample
        if not np.isfinite(loss) or loss > cfg.loss_cap:
            raise DivergenceError("loss diverged", last_finite=None)
        builder.add(t, loss, gnorm, **extras)

    builder_kwargs = sample0[2]
    builder = _TraceBuilder(
        kind,
        cfg,
        with_mu="mu" in builder_kwargs,
        with_params=builder_kwargs.get("params") is not None,
    )

    try:
        record(0.0, y0, sample0)
    except DivergenceError:
        raise ConfigurationError("initial state already has non-finite loss")

    if sample0[1] < cfg.grad_stop:
        return builder.finish("grad_stop", make_state(np.asarray(y0)))

    dt = cfg.sample_interval
    stepper = RK45(
        rhs,
        0.0,
        np.asarray(y0, dtype=np.float64),
        t_bound=cfg.t_end,
        rtol=cfg.rel_tol,
        atol=cfg.abs_tol,
    )
    next_t = dt
    n_steps = 0
    h_floor = 1e-13 * max(cfg.t_end, 1.0)
    while stepper.status == "running":
        try:
            stepper.step()
        except (DivergenceError, FloatingPointError, OverflowError):
            return builder.finish("divergence", make_state(stepper.y), "rhs diverged")
        if stepper.status == "failed":
            return builder.finish(
                "divergence", make_state(stepper.y), "integrator step failure"
            )
        if not np.all(np.isfinite(stepper.y)):
            return builder.finish(
                "divergence", make_state(stepper.y_old), "non-finite state"
            )
        n_steps += 1
        dense = stepper.dense_output()
        while next_t <= stepper.t + 1e-12 * max(1.0, abs(stepper.t)):
            ts = min(next_t, stepper.t)
            ys = dense(ts)
            try:
                sample = eval_sample(ys)
                record(ts, ys, sample)
            except DivergenceError:
                return builder.finish("divergence", make_state(ys), "loss diverged")
            if sample[1] < cfg.grad_stop:
                return builder.finish("grad_stop", make_state(ys))
            stall = builder.stalled()
            if stall is not None:
                builder.events.append(FlowEvent(ts, "stall", stall))
                return builder.finish("stall", make_state(ys), stall)
            next_t += dt
        if n_steps >= cfg.max_steps or stepper.h_abs < h_floor:
            return builder.finish(
                "divergence",
                make_state(stepper.y),
                f"step budget exhausted at t={stepper.t:.3e} (h={stepper.h_abs:.1e})",
            )
    # clean t_end arrival: record the final point if the grid missed it
    if builder.t[-1] < cfg.t_end - 1e-12 * cfg.t_end:
        try:
            sample = eval_sample(stepper.y)
            record(cfg.t_end, stepper.y, sample)
        except DivergenceError:
            return builder.finish("divergence", make_state(stepper.y), "loss diverged")
    return builder.finish("t_end", make_state(stepper.y))


# ---------------------------------------------------------------------------
# Public integrators
# ---------------------------------------------------------------------------


def integrate_nominal(p: Problem, g0: Field, cfg: FlowConfig) -> FlowTrace:
    """Descend the loss directly on the target space from g0."""
    if g0.basis != p.basis:
        raise ConfigurationError("initial field is not on the problem basis")
    obj = NominalObjective(p)

    def rhs_fn(y):
        return -obj.value_and_grad(y)[1]

    def eval_sample(y):
        loss, _, gnorm, clamped = obj.value_and_grad(y)
        extras = {"model_error": obj.model_error(y), "clamped": clamped}
        return loss, gnorm, extras

    def make_state(y):
        return Field(np.where(np.isfinite(y), y, 0.0), p.basis, p.gradient_metric)

    return _run_deterministic("nominal", g0.coeffs, cfg, rhs_fn, eval_sample, make_state)


def integrate_parametric(
    p: Problem, a: ArchitectureSpec, w0: ParamVector, cfg: FlowConfig
) -> FlowTrace:
    """Descend the parametric loss from w0; records kernel diagnostics."""
    obj = ParametricObjective(p, a)
    level = w0.level

    def rhs_fn(y):
        return -obj.value_and_grad(y)[1]

    def eval_sample(y):
        loss, grad, clamped = obj.value_and_grad(y)
        extras = {
            "mu": obj.min_nonzero_eig(y),
            "model_error": obj.model_error(y),
            "clamped": clamped,
        }
        if cfg.record_params:
            extras["params"] = y
        return loss, float(np.linalg.norm(grad)), extras

    def make_state(y):
        return ParamVector(np.where(np.isfinite(y), y, 0.0), level=level)

    return _run_deterministic("parametric", w0.values, cfg, rhs_fn, eval_sample, make_state)


def integrate_annealed(
    p: Problem, a: ArchitectureSpec, w0: ParamVector, cfg: FlowConfig
) -> FlowTrace:
    """Fixed-step Euler-Maruyama with the logarithmic annealing envelope.

    Noise scale per step is alpha(t) * beta * sqrt(h) with
    alpha(t) = sqrt(c / log(2 + t)).  Bit-identical traces for a fixed
    seed; beta = 0 degenerates to plain Euler descent.
    """
    if cfg.noise_beta < 0:
        raise ConfigurationError("noise_beta must be >= 0")
    obj = ParametricObjective(p, a)
    level = w0.level
    h = cfg.sde_step
    sqrt_h = np.sqrt(h)
    n_steps = int(np.ceil(cfg.t_end / h))
    record_stride = max(1, int(round(cfg.sample_interval / h)))
    rng = np.random.default_rng(cfg.seed)
    m = w0.size

    builder = _TraceBuilder("annealed", cfg, with_mu=True, with_params=cfg.record_params)

    def sample_at(t, y):
        loss, grad, clamped = obj.value_and_grad(y)
        if not np.isfinite(loss) or loss > cfg.loss_cap:
            raise DivergenceError("loss diverged", last_finite=None)
        builder.add(
            t,
            loss,
            float(np.linalg.norm(grad)),
            mu=obj.min_nonzero_eig(y),
            model_error=obj.model_error(y),
            params=y if cfg.record_params else None,
            clamped=clamped,
        )

    y = w0.values.copy()
    try:
        sample_at(0.0, y)
    except DivergenceError:
        raise ConfigurationError("initial state already has non-finite loss")
    chunk = 8192
    noise = None
    noise_pos = chunk
    t = 0.0
    beta = cfg.noise_beta
    c_anneal = cfg.anneal_c
    value_and_grad = obj.value_and_grad
    for step in range(n_steps):
        _, grad, _ = value_and_grad(y)
        if beta > 0.0:
            if noise_pos >= chunk:
                noise = rng.standard_normal((chunk, m))
                noise_pos = 0
            xi = noise[noise_pos]
            noise_pos += 1
            scale = beta * sqrt_h * math.sqrt(c_anneal / math.log(2.0 + t))
            y = y - h * grad + scale * xi
        else:
            y = y - h * grad
        t = (step + 1) * h
        if (step + 1) % record_stride == 0 or step == n_steps - 1:
            if not np.all(np.isfinite(y)):
                return builder.finish(
                    "divergence", ParamVector(np.zeros(m), level), "non-finite state"
                )
            try:
                sample_at(t, y)
            except DivergenceError:
                return builder.finish(
                    "divergence",
                    ParamVector(np.where(np.isfinite(y), y, 0.0), level),
                    "loss diverged",
                )
    return builder.finish("t_end", ParamVector(y, level))


def lyapunov_check(trace: FlowTrace, tolerance: float) -> list[int] | None:
    """Indices where the loss rose by more than ``tolerance`` between
    consecutive samples; empty list means the descent property held.

    Annealed traces are exempt (noise may raise the loss); the marker
    ``None`` is returned for them.
    """
    if not trace.deterministic:
        return None
    rises = np.diff(trace.loss) > tolerance
    return [int(i) for i in np.nonzero(rises)[0]]
