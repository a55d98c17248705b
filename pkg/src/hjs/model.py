"""Tonelli Lagrangians, their derivatives, and the Legendre-dual view.

Three model forms are supported:

* ``quadratic_kinetic`` -- L(x,v) = 1/2 <A v, v> with A symmetric positive
  definite; the dual Hamiltonian is 1/2 <A^-1 p, p>.
* ``mechanical``        -- L(x,v) = 1/2 <A (v-b), (v-b)> - V(x); the dual is
  1/2 <A^-1 p, p> + <b, p> + V(x).
* ``custom``            -- L given as a formula over x1..xn, v1..vn in the
  restricted expression grammar; derivatives come from symbolic
  differentiation of the parsed formula, and the dual solve is a damped
  Newton iteration on L_v(x, v) = p.

Every model carries superlinearity witnesses: a nondecreasing ``theta(r)``,
a constant ``c0 >= 0`` and a growth factor ``c1(x, R) >= 0``.  They are
user-declared (scenario input) with documented per-form defaults; the
sampling check ``check_tonelli`` can only falsify them, never prove them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DualSolveError
from .expressions import ScalarField, ScalarFunction1D

_DEFAULT_NEWTON_TOL = 1e-11
_DEFAULT_NEWTON_MAXITER = 60


def _as_point(x, dim: int, name: str = "x") -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[-1] != dim:
        raise ValueError(f"{name} has dimension {x.shape[-1]}, model expects {dim}")
    return x


def _quad(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    """<M w, w> over the last axis, batched."""
    return np.einsum("...i,ij,...j->...", w, M, w)


class LagrangianModel:
    """A Tonelli Lagrangian with closed-form or formula-backed derivatives."""

    def __init__(self, form, dim, *, A=None, drift=None, potential=None,
                 potential_grad=None, expr=None, theta=None, c0=None, c1=None):
        self.form = form
        self.dim = int(dim)
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        self.A = None
        self.A_inv = None
        self.drift = None
        self._V = None
        self._V_x = None
        self._field = None

        if form in ("quadratic_kinetic", "mechanical"):
            A = np.eye(self.dim) if A is None else np.asarray(A, dtype=float)
            if A.shape != (self.dim, self.dim):
                raise ValueError(f"A must be {self.dim}x{self.dim}")
            if not np.allclose(A, A.T, atol=1e-12):
                raise ValueError("A must be symmetric")
            eigs = np.linalg.eigvalsh(A)
            if eigs[0] <= 0:
                raise ValueError("A must be positive definite")
            self.A = A
            self.A_inv = np.linalg.inv(A)
            self._kappa = float(eigs[0])
            self._Anorm = float(eigs[-1])
        if form == "quadratic_kinetic":
            if drift is not None or potential is not None:
                raise ValueError("quadratic_kinetic takes only A")
            self.drift = np.zeros(self.dim)
        elif form == "mechanical":
            self.drift = (np.zeros(self.dim) if drift is None
                          else _as_point(drift, self.dim, "drift").astype(float))
            self._V, self._V_x = self._build_potential(potential, potential_grad)
        elif form == "custom":
            if expr is None:
                raise ValueError("custom form needs an expression for L")
            self._field = expr if isinstance(expr, ScalarField) else ScalarField(
                expr, self.dim, with_velocity=True)
        else:
            raise ValueError(f"unknown model form {form!r}")

        self.theta, self.theta_text = self._build_theta(theta)
        self.c0 = self._default_c0() if c0 is None else float(c0)
        self.c1, self.c1_text = self._build_c1(c1)

    # -- construction helpers -------------------------------------------------

    @classmethod
    def quadratic_kinetic(cls, A, **kw):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls("quadratic_kinetic", A.shape[0], A=A, **kw)

    @classmethod
    def mechanical(cls, A, potential=None, drift=None, potential_grad=None, **kw):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        return cls("mechanical", A.shape[0], A=A, potential=potential,
                   potential_grad=potential_grad, drift=drift, **kw)

    @classmethod
    def custom(cls, expr, dim, **kw):
        return cls("custom", dim, expr=expr, **kw)

    def _build_potential(self, potential, potential_grad):
        dim = self.dim
        if potential is None:
            return (lambda x: np.zeros(np.shape(np.asarray(x))[:-1]),
                    lambda x: np.zeros(np.shape(np.asarray(x))))
        if isinstance(potential, (int, float)):
            c = float(potential)
            return (lambda x: np.full(np.shape(np.asarray(x))[:-1], c),
                    lambda x: np.zeros(np.shape(np.asarray(x))))
        if isinstance(potential, str):
            f = ScalarField(potential, dim)
            return (lambda x: f(x), lambda x: f.gradient_x(x))
        if callable(potential):
            if potential_grad is None:
                raise ValueError("callable potential needs potential_grad")
            return potential, potential_grad
        raise ValueError("potential must be None, a number, a formula or a callable")

    def _build_theta(self, theta):
        if theta is None:
            kappa = getattr(self, "_kappa", 1.0)
            if self.form == "quadratic_kinetic":
                a = 0.25 * kappa
            elif self.form == "mechanical":
                a = 0.125 * kappa
            else:
                a = 0.25
            text = f"{a}*(r^2 + r) + 1"
            return (lambda r: a * (np.asarray(r, dtype=float) ** 2
                                   + np.asarray(r, dtype=float)) + 1.0, text)
        if isinstance(theta, str):
            f = ScalarFunction1D(theta, "r")
            return (lambda r: f(r), theta)
        if callable(theta):
            return theta, None
        raise ValueError("theta must be a formula in r or a callable")

    def _default_c0(self) -> float:
        if self.form == "quadratic_kinetic":
            return 1.0 + self._kappa / 16.0
        if self.form == "mechanical":
            # desk-scale potential bound, sampled on [-10, 10]^n
            grid = np.linspace(-10.0, 10.0, 41)
            pts = np.stack(np.meshgrid(*([grid] * self.dim), indexing="ij"),
                           axis=-1).reshape(-1, self.dim)
            v_sup = float(np.max(self._V(pts)))
            bnorm = float(np.linalg.norm(self.drift))
            return 1.0 + self._kappa / 32.0 + 0.5 * self._kappa * bnorm ** 2 \
                + max(v_sup, 0.0)
        return 1.0

    def _build_c1(self, c1):
        if c1 is None:
            if self.form == "quadratic_kinetic":
                val = 4.0 * self._Anorm / self._kappa + 1.0
            elif self.form == "mechanical":
                grid = np.linspace(-10.0, 10.0, 41)
                pts = np.stack(np.meshgrid(*([grid] * self.dim), indexing="ij"),
                               axis=-1).reshape(-1, self.dim)
                vx_sup = float(np.max(np.linalg.norm(self._V_x(pts), axis=-1)))
                bnorm = float(np.linalg.norm(self.drift))
                val = vx_sup + self._Anorm * bnorm + 8.0 * self._Anorm / self._kappa + 1.0
            else:
                val = 10.0
            return (lambda x, R: val), f"{val}"
        if isinstance(c1, (int, float)):
            val = float(c1)
            return (lambda x, R: val), f"{val}"
        if isinstance(c1, str):
            f = ScalarFunction1D(c1, "R")
            return (lambda x, R: float(f(R))), c1
        if callable(c1):
            return c1, None
        raise ValueError("c1 must be a number, a formula in R, or a callable")

    # -- evaluations (batched over leading axes) ------------------------------

    def lagrangian(self, x, v):
        x = _as_point(x, self.dim, "x")
        v = _as_point(v, self.dim, "v")
        if self.form == "quadratic_kinetic":
            return 0.5 * _quad(self.A, v)
        if self.form == "mechanical":
            w = v - self.drift
            return 0.5 * _quad(self.A, w) - self._V(x)
        return self._field(x, v)

    def lagrangian_v(self, x, v):
        x = _as_point(x, self.dim, "x")
        v = _as_point(v, self.dim, "v")
        if self.form == "quadratic_kinetic":
            return v @ self.A
        if self.form == "mechanical":
            return (v - self.drift) @ self.A
        return self._field.gradient_v(x, v)

    def lagrangian_x(self, x, v):
        x = _as_point(x, self.dim, "x")
        v = _as_point(v, self.dim, "v")
        if self.form == "quadratic_kinetic":
            return np.zeros(np.shape(x))
        if self.form == "mechanical":
            return -self._V_x(x)
        return self._field.gradient_x(x, v)

    def lagrangian_vv(self, x, v):
        x = _as_point(x, self.dim, "x")
        v = _as_point(v, self.dim, "v")
        if self.form in ("quadratic_kinetic", "mechanical"):
            return np.broadcast_to(self.A, x.shape[:-1] + (self.dim, self.dim)).copy()
        return self._field.hessian_v(x, v)

    def min_lagrangian_velocity(self, x):
        """argmin_v L(x, v), used for constant-curve bounds."""
        if self.form == "quadratic_kinetic":
            return np.zeros(self.dim)
        if self.form == "mechanical":
            return self.drift.copy()
        hview = HamiltonianView(self)
        _, v = hview.legendre(x, np.zeros(self.dim))
        return v


class HamiltonianView:
    """Legendre-dual view of a model: H, H_p, H_x and the dual solve."""

    def __init__(self, model: LagrangianModel, newton_tol: float = _DEFAULT_NEWTON_TOL):
        self.model = model
        self.newton_tol = newton_tol

    @property
    def dim(self) -> int:
        return self.model.dim

    def dual_velocity(self, x, p):
        """Solve L_v(x, v) = p for v (closed form or damped Newton)."""
        m = self.model
        x = _as_point(x, m.dim, "x")
        p = _as_point(p, m.dim, "p")
        if m.form == "quadratic_kinetic":
            return p @ m.A_inv
        if m.form == "mechanical":
            return p @ m.A_inv + m.drift
        return self._newton_dual(x, p)

    def _newton_dual(self, x, p):
        squeeze = x.ndim == 1
        X = np.atleast_2d(x)
        P = np.atleast_2d(p)
        V = P.copy()  # v0 = p: exact for L = |v|^2/2, harmless otherwise
        scale = 1.0 + np.linalg.norm(P, axis=-1)
        for _ in range(_DEFAULT_NEWTON_MAXITER):
            res = self.model.lagrangian_v(X, V) - P
            err = np.linalg.norm(res, axis=-1)
            if np.all(err <= self.newton_tol * scale):
                break
            H = self.model.lagrangian_vv(X, V)
            try:
                step = np.linalg.solve(H, res[..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise DualSolveError(f"singular velocity Hessian: {exc}") from exc
            # backtrack rows whose residual would grow
            alpha = np.ones(len(V))
            for _bt in range(25):
                Vn = V - alpha[:, None] * step
                rn = np.linalg.norm(self.model.lagrangian_v(X, Vn) - P, axis=-1)
                worse = rn > err * (1 - 1e-4 * alpha)
                if not np.any(worse):
                    break
                alpha[worse] *= 0.5
            V = V - alpha[:, None] * step
        else:
            raise DualSolveError(
                "dual Newton solve did not converge (possible (L1) violation)")
        return V[0] if squeeze else V

    def legendre(self, x, p):
        """Return (H(x,p), v*) with L_v(x, v*) = p."""
        v = self.dual_velocity(x, p)
        x = _as_point(x, self.dim, "x")
        p = _as_point(p, self.dim, "p")
        H = np.einsum("...i,...i->...", p, v) - self.model.lagrangian(x, v)
        return H, v

    def hamiltonian(self, x, p):
        m = self.model
        x = _as_point(x, m.dim, "x")
        p = _as_point(p, m.dim, "p")
        if m.form == "quadratic_kinetic":
            return 0.5 * _quad(m.A_inv, p)
        if m.form == "mechanical":
            return 0.5 * _quad(m.A_inv, p) + p @ m.drift + m._V(x)
        H, _ = self.legendre(x, p)
        return H

    def h_p(self, x, p):
        return self.dual_velocity(x, p)

    def h_x(self, x, p):
        m = self.model
        x = _as_point(x, m.dim, "x")
        p = _as_point(p, m.dim, "p")
        if m.form == "quadratic_kinetic":
            return np.zeros(np.shape(x))
        if m.form == "mechanical":
            return m._V_x(x)
        v = self.dual_velocity(x, p)
        return -m.lagrangian_x(x, v)


def eval_lagrangian(model: LagrangianModel, x, v) -> float:
    """L(x, v) with dimension validation."""
    return float(model.lagrangian(x, v))


def legendre(model: LagrangianModel, x, p, newton_tol: float = _DEFAULT_NEWTON_TOL):
    """Return (H(x,p), v*) for the model's dual Hamiltonian."""
    H, v = HamiltonianView(model, newton_tol).legendre(x, p)
    return float(H), v


@dataclass
class TonelliReport:
    """Sampled falsification report for conditions (L1)-(L2)."""

    nsamples: int
    hessian_violations: list = field(default_factory=list)
    lower_bound_violations: list = field(default_factory=list)
    growth_violations: list = field(default_factory=list)
    theta_monotone: bool = True
    min_hessian_eig: float = np.inf
    worst_lower_margin: float = np.inf
    worst_growth_margin: float = np.inf

    @property
    def passed(self) -> bool:
        return (self.theta_monotone and not self.hessian_violations
                and not self.lower_bound_violations and not self.growth_violations)


def check_tonelli(model: LagrangianModel, region, nsamples: int = 1000,
                  seed: int = 0, vmax: float = 10.0) -> TonelliReport:
    """Sample (L1) positive-definiteness and the (L2) inequalities on a box.

    ``region`` is a pair (lo, hi) of length-dim arrays.  The report lists
    violations; it never raises.
    """
    lo, hi = (np.asarray(a, dtype=float) for a in region)
    if lo.shape != (model.dim,) or hi.shape != (model.dim,) or np.any(hi < lo):
        raise ValueError("region must be a nonempty box (lo, hi) of model dimension")
    rng = np.random.default_rng(seed)
    report = TonelliReport(nsamples=nsamples)

    xs = rng.uniform(lo, hi, size=(nsamples, model.dim))
    dirs = rng.normal(size=(nsamples, model.dim))
    dirs /= np.maximum(np.linalg.norm(dirs, axis=-1, keepdims=True), 1e-300)
    # half the radii near zero, half spread to vmax, to probe both regimes
    radii = np.concatenate([
        rng.uniform(0.0, 1.0, nsamples // 2),
        rng.uniform(0.0, vmax, nsamples - nsamples // 2),
    ])
    vs = dirs * radii[:, None]

    r_grid = np.linspace(0.0, vmax, 256)
    th = model.theta(r_grid)
    report.theta_monotone = bool(np.all(np.diff(th) >= -1e-12))

    eigs = np.linalg.eigvalsh(model.lagrangian_vv(xs, vs))
    mins = eigs[..., 0]
    report.min_hessian_eig = float(np.min(mins))
    for i in np.nonzero(mins <= 0)[0][:20]:
        report.hessian_violations.append(
            {"x": xs[i].tolist(), "v": vs[i].tolist(), "min_eig": float(mins[i])})

    margin = model.lagrangian(xs, vs) - (model.theta(radii) - model.c0)
    report.worst_lower_margin = float(np.min(margin))
    for i in np.nonzero(margin < -1e-10)[0][:20]:
        report.lower_bound_violations.append(
            {"x": xs[i].tolist(), "v": vs[i].tolist(), "margin": float(margin[i])})

    center = 0.5 * (lo + hi)
    R = 0.5 * float(np.linalg.norm(hi - lo)) + 1e-12
    c1_val = float(model.c1(center, R))
    lhs = (np.linalg.norm(model.lagrangian_x(xs, vs), axis=-1)
           + np.linalg.norm(model.lagrangian_v(xs, vs), axis=-1))
    gmargin = c1_val * model.theta(radii) - lhs
    report.worst_growth_margin = float(np.min(gmargin))
    for i in np.nonzero(gmargin < -1e-10)[0][:20]:
        report.growth_violations.append(
            {"x": xs[i].tolist(), "v": vs[i].tolist(), "margin": float(gmargin[i])})
    return report
