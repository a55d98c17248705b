"""Fundamental solution A_t(x,y) by direct minimization plus Hamiltonian refinement.

The boundary-value problem is solved in two phases.  Phase one is a
first-order descent on the node positions of the trapezoidal discrete action
(only engaged when needed -- for quadratic-like kernels the straight segment
already sits in the right basin).  Phase two refines to a true extremal by a
damped Newton shooting solve on the initial momentum of the Hamiltonian flow
(n <= 3, so the shooting Jacobian is a tiny finite-difference matrix).  The
returned trajectory then satisfies the Euler-Lagrange equation to integrator
accuracy, which is what the endpoint-derivative formulas and the energy
conservation checks need.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .errors import ActionSolveError, DerivativeCheckError
from .model import HamiltonianView, LagrangianModel

MIN_CURVE_NODES = 8


@dataclass(frozen=True)
class Curve:
    """Discretized arc on a uniform time grid with its dual (momentum) arc."""

    t_end: float
    nodes: np.ndarray      # (N+1, n)
    dual_arc: np.ndarray   # (N+1, n), p(s_i) = L_v(xi(s_i), xi'(s_i))

    def __post_init__(self):
        if self.t_end <= 0:
            raise ValueError("curve duration must be positive")
        if self.nodes.shape[0] - 1 < MIN_CURVE_NODES:
            raise ValueError(f"curve needs at least {MIN_CURVE_NODES} segments")
        if self.nodes.shape != self.dual_arc.shape:
            raise ValueError("nodes and dual arc shapes differ")

    @property
    def n_segments(self) -> int:
        return self.nodes.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end, self.nodes.shape[0])

    @property
    def step(self) -> float:
        return self.t_end / self.n_segments

    @property
    def velocities(self) -> np.ndarray:
        """Midpoint difference quotients, shape (N, n)."""
        return np.diff(self.nodes, axis=0) / self.step

    def velocity_lipschitz(self) -> float:
        """Discrete Lipschitz constant of the midpoint velocities."""
        v = self.velocities
        if len(v) < 2:
            return 0.0
        return float(np.max(np.linalg.norm(np.diff(v, axis=0), axis=-1)) / self.step)


@dataclass
class ActionResult:
    """Value and minimizer of A_t(x,y) with endpoint derivatives and energy."""

    value: float
    minimizer: Curve
    grad_x: np.ndarray
    grad_y: np.ndarray
    grad_t: float
    energy: float
    el_residual: float
    energy_std: float = 0.0
    shoot_residual: float = 0.0
    node_el_defect: float = 0.0
    multimodal: bool = False
    restarts_used: int = 1

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "energy": self.energy,
            "el_residual": self.el_residual,
            "grad_x": np.asarray(self.grad_x).tolist(),
            "grad_y": np.asarray(self.grad_y).tolist(),
            "grad_t": self.grad_t,
            "nodes": np.asarray(self.minimizer.nodes).tolist(),
        }


# -- Hamiltonian flow ---------------------------------------------------------

def _flow_eval(hview: HamiltonianView, X: np.ndarray, P: np.ndarray):
    """Batched vector field (dx, dp, dA) of the extended Hamiltonian system.

    dx = H_p, dp = -H_x = L_x(x, H_p), dA = L(x, H_p): the running action.
    """
    m = hview.model
    v = hview.h_p(X, P)
    lx = m.lagrangian_x(X, v)
    dA = m.lagrangian(X, v)
    return v, lx, dA


def get_flow(hview: HamiltonianView):
    """Specialized (and cached) RHS for the extended Hamiltonian flow.

    Closed-form models skip all argument validation in the hot loop; custom
    models go through the generic dual-solve path.
    """
    flow = getattr(hview, "_flow_rhs", None)
    if flow is not None:
        return flow
    m = hview.model
    if m.form == "quadratic_kinetic":
        Ainv = m.A_inv

        def flow(X, P):
            v = P @ Ainv
            dA = 0.5 * np.einsum("...i,...i->...", P, v)
            return v, np.zeros_like(X), dA
    elif m.form == "mechanical":
        Ainv, b = m.A_inv, m.drift
        V, Vx = m._V, m._V_x

        def flow(X, P):
            w = P @ Ainv
            dA = 0.5 * np.einsum("...i,...i->...", P, w) - V(X)
            return w + b, -Vx(X), dA
    else:
        def flow(X, P):
            return _flow_eval(hview, X, P)
    hview._flow_rhs = flow
    return flow


def _rk4_batch(flow, X, P, A, h, nsteps):
    """Advance a batch of (X, P, A) states by nsteps RK4 steps of size h."""
    for _ in range(nsteps):
        k1x, k1p, k1a = flow(X, P)
        k2x, k2p, k2a = flow(X + 0.5 * h * k1x, P + 0.5 * h * k1p)
        k3x, k3p, k3a = flow(X + 0.5 * h * k2x, P + 0.5 * h * k2p)
        k4x, k4p, k4a = flow(X + h * k3x, P + h * k3p)
        X = X + (h / 6.0) * (k1x + 2 * k2x + 2 * k3x + k4x)
        P = P + (h / 6.0) * (k1p + 2 * k2p + 2 * k3p + k4p)
        A = A + (h / 6.0) * (k1a + 2 * k2a + 2 * k3a + k4a)
    return X, P, A


def integrate_hamiltonian(hview: HamiltonianView, x0, p0, t: float,
                          nnodes: int, substeps: int = 1):
    """Integrate the flow (x' = H_p, p' = -H_x) recording nnodes+1 node states.

    Returns (xs, ps, action) where action is the running Lagrangian integral.
    Negative ``t`` integrates the flow backward in time.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    flow = get_flow(hview)
    h = t / (nnodes * substeps)
    xs = np.empty((nnodes + 1,) + x0.shape[1:])
    ps = np.empty_like(xs)
    X, P, A = x0.copy(), p0.copy(), np.zeros(x0.shape[0])
    xs[0], ps[0] = X[0], P[0]
    for i in range(nnodes):
        X, P, A = _rk4_batch(flow, X, P, A, h, substeps)
        xs[i + 1], ps[i + 1] = X[0], P[0]
    return xs, ps, float(A[0])


def _shoot_endpoints(hview, x, P0, t, nsteps):
    """Final (X, P, A) of the flow for a batch of initial momenta P0."""
    m = P0.shape[0]
    X = np.broadcast_to(x, (m, x.shape[-1])).copy()
    A = np.zeros(m)
    h = t / nsteps
    X, P, A = _rk4_batch(get_flow(hview), X, P0.copy(), A, h, nsteps)
    return X, P, A


def _newton_shoot(hview, x, y, t, p0, nsteps, tol, max_iter, J0=None):
    """Newton on p0 so that the flow from (x, p0) reaches y at time t.

    A caller-supplied Jacobian ``J0`` is tried first (quasi-Newton reuse for
    warm-started repeated solves); it is rebuilt by finite differences when
    progress stalls.  Returns (p0, err, J) with the last Jacobian used.
    """
    n = x.shape[-1]
    scale = 1.0 + float(np.linalg.norm(y - x))
    Xe, _, _ = _shoot_endpoints(hview, x, p0[None], t, nsteps)
    res = Xe[0] - y
    err = float(np.linalg.norm(res))
    J = J0
    fresh = False
    for _ in range(max_iter):
        if err <= tol * scale:
            return p0, err, J
        if J is None:
            eps = 1e-7 * (1.0 + float(np.linalg.norm(p0)))
            batch = np.vstack([p0[None] + eps * np.eye(n)])
            Xp, _, _ = _shoot_endpoints(hview, x, batch, t, nsteps)
            J = (Xp - Xe[0]).T / eps
            fresh = True
        try:
            step = np.linalg.solve(J, res)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(J, res, rcond=None)
        alpha = 1.0
        progressed = False
        for _bt in range(16):
            p_try = p0 - alpha * step
            Xt, _, _ = _shoot_endpoints(hview, x, p_try[None], t, nsteps)
            res_try = Xt[0] - y
            err_try = float(np.linalg.norm(res_try))
            if err_try < err * (1.0 - 1e-4 * alpha) or err_try <= tol * scale:
                progressed = True
                break
            alpha *= 0.5
        if not progressed:
            if fresh:
                return p0, err, J  # stagnated with an up-to-date Jacobian
            J = None               # stale Jacobian: rebuild and retry
            continue
        if alpha < 1.0:
            fresh = False
        p0, res, err, Xe = p_try, res_try, err_try, Xt
    return p0, err, J


# -- phase one: discrete action descent ---------------------------------------

def _discrete_action_grad(model, nodes, h):
    """Trapezoidal discrete action and its gradient at interior nodes."""
    seg_v = np.diff(nodes, axis=0) / h
    xa, xb = nodes[:-1], nodes[1:]
    La = model.lagrangian(xa, seg_v)
    Lb = model.lagrangian(xb, seg_v)
    S = 0.5 * h * float(np.sum(La + Lb))
    Lxa = model.lagrangian_x(xa, seg_v)
    Lxb = model.lagrangian_x(xb, seg_v)
    Lva = model.lagrangian_v(xa, seg_v)
    Lvb = model.lagrangian_v(xb, seg_v)
    g = (0.5 * h * (Lxb[:-1] + Lxa[1:])
         + 0.5 * (Lva[:-1] + Lvb[:-1]) - 0.5 * (Lva[1:] + Lvb[1:]))
    return S, g


def _descent_phase(model, x, y, t, N, nodes0=None, maxiter=300):
    """L-BFGS on interior nodes of the discrete action; returns full node array."""
    h = t / N
    if nodes0 is None:
        s = np.linspace(0.0, 1.0, N + 1)[:, None]
        nodes0 = x[None, :] * (1 - s) + y[None, :] * s
    interior0 = nodes0[1:-1].ravel()

    def fg(z):
        nodes = np.vstack([x[None], z.reshape(N - 1, -1), y[None]])
        S, g = _discrete_action_grad(model, nodes, h)
        return S, g.ravel()

    out = scipy_minimize(fg, interior0, jac=True, method="L-BFGS-B",
                         options={"maxiter": maxiter, "ftol": 1e-14, "gtol": 1e-10})
    nodes = np.vstack([x[None], out.x.reshape(N - 1, -1), y[None]])
    return nodes, float(out.fun)


def _p0_from_nodes(model, nodes, h):
    """Second-order initial momentum estimate from a discrete curve."""
    w0 = (nodes[1] - nodes[0]) / h
    return (model.lagrangian_v(nodes[0], w0)
            - 0.5 * h * model.lagrangian_x(nodes[0], w0))


# -- main entry ---------------------------------------------------------------

def minimize_action(model: LagrangianModel, x, y, t: float, N: int = 64,
                    restarts: int = 5, seed: int = 0, p0_guess=None,
                    residual_tol: float = 1e-10, el_tol: float = 1e-6,
                    max_newton: int = 30, hview: HamiltonianView | None = None,
                    diagnostics: bool = True, shoot_jacobian=None) -> ActionResult:
    """Compute A_t(x,y), its minimizer, endpoint derivatives and energy.

    ``restarts`` perturbed initializations guard against non-uniqueness for
    larger t; the best value is returned and near-ties with distinct curves
    are flagged as multimodal.  ``diagnostics=False`` skips the step-doubling
    defect estimate and node-defect scan (inner-loop use, where only the
    value and endpoint momenta matter).
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (model.dim,) or y.shape != (model.dim,):
        raise ValueError("endpoint dimension mismatch with model")
    N = max(int(N), MIN_CURVE_NODES)
    hview = hview or HamiltonianView(model)
    rng = np.random.default_rng(seed)
    h = t / N

    v_line = (y - x) / t
    p_base = np.asarray(p0_guess, dtype=float) if p0_guess is not None \
        else np.asarray(model.lagrangian_v(x, v_line), dtype=float)
    candidates = [p_base]
    sigma = 0.5 + 0.5 * float(np.linalg.norm(p_base))
    for k in range(1, max(restarts, 1)):
        candidates.append(p_base + sigma * (k / max(restarts - 1, 1))
                          * rng.standard_normal(model.dim))

    solutions = []
    last_nodes = None
    jac = shoot_jacobian if shoot_jacobian is None else shoot_jacobian.get("J")
    for idx, p0 in enumerate(candidates):
        p_fit, err, jac = _newton_shoot(hview, x, y, t, p0.copy(), N,
                                        residual_tol, max_newton, J0=jac)
        if err > 1e-6 * (1.0 + float(np.linalg.norm(y - x))) and idx == 0:
            # fall back to discrete descent for a basin, then reshoot
            nodes, _ = _descent_phase(model, x, y, t, N)
            last_nodes = nodes
            p_retry = _p0_from_nodes(model, nodes, h)
            p_fit, err, jac = _newton_shoot(hview, x, y, t, p_retry, N,
                                            residual_tol, max_newton, J0=None)
        if err > 1e-6 * (1.0 + float(np.linalg.norm(y - x))):
            continue
        xs, ps, act = integrate_hamiltonian(hview, x, p_fit, t, N)
        solutions.append({"p0": p_fit, "value": act, "nodes": xs, "ps": ps,
                          "residual": err})
    if shoot_jacobian is not None:
        shoot_jacobian["J"] = jac

    if not solutions:
        curve = None
        if last_nodes is not None and N >= MIN_CURVE_NODES:
            seg_v = np.diff(last_nodes, axis=0) / h
            dual = np.vstack([
                model.lagrangian_v(last_nodes[:-1], seg_v),
                model.lagrangian_v(last_nodes[-1], seg_v[-1])[None],
            ])
            curve = Curve(t, last_nodes, dual)
        raise ActionSolveError(
            f"action solve from {x} to {y} at t={t} did not converge",
            last_iterate=curve)

    best = min(solutions, key=lambda s: s["value"])
    multimodal = False
    for a in solutions:
        for b in solutions:
            dv = abs(a["value"] - b["value"])
            dc = float(np.max(np.linalg.norm(a["nodes"] - b["nodes"], axis=-1)))
            if dv > 1e-6 and dc > 1e-2:
                multimodal = True

    xs, ps = best["nodes"].copy(), best["ps"].copy()
    shoot_residual = float(np.linalg.norm(xs[-1] - y))
    xs[0], xs[-1] = x, y  # endpoints are prescribed exactly

    energies = hview.hamiltonian(xs, ps)
    energy = float(np.mean(energies))
    energy_std = float(np.std(energies))

    if diagnostics:
        # defect estimate by step doubling of the refined trajectory
        xs2, ps2, _ = integrate_hamiltonian(hview, x, best["p0"], t, N, substeps=2)
        grid_err = float(np.max(np.linalg.norm(xs - xs2, axis=-1)
                                + np.linalg.norm(ps - ps2, axis=-1)))
        el_residual = (16.0 / 15.0) * grid_err / t + shoot_residual / t
        # O(h^2) central-difference defect of the sampled nodes, for reporting
        dp = (ps[2:] - ps[:-2]) / (2 * h)
        lx = model.lagrangian_x(xs[1:-1], hview.h_p(xs[1:-1], ps[1:-1]))
        node_defect = float(np.max(np.linalg.norm(dp - lx, axis=-1))) if len(dp) else 0.0
    else:
        el_residual = shoot_residual / t
        node_defect = 0.0

    curve = Curve(t, xs, ps)
    return ActionResult(
        value=float(best["value"]),
        minimizer=curve,
        grad_x=-ps[0].copy(),
        grad_y=ps[-1].copy(),
        grad_t=-energy,
        energy=energy,
        el_residual=el_residual,
        energy_std=energy_std,
        shoot_residual=shoot_residual,
        node_el_defect=node_defect,
        multimodal=multimodal,
        restarts_used=len(solutions),
    )


@dataclass
class DerivativeCheck:
    grad_x: np.ndarray
    grad_y: np.ndarray
    grad_t: float
    rel_err_x: float
    rel_err_y: float
    rel_err_t: float

    def __iter__(self):
        return iter((self.grad_x, self.grad_y, self.grad_t))


def action_derivatives(model: LagrangianModel, result: ActionResult,
                       rel_tol: float = 1e-4, fd_scale: float = 1e-3,
                       el_tol: float = 1e-5, check: bool = True) -> DerivativeCheck:
    """Endpoint/time derivatives of A_t from the refined curve, FD-verified.

    grad_y = L_v at the arrival endpoint, grad_x = -L_v at departure,
    grad_t = -energy.  With ``check`` enabled each is compared against a
    central finite difference of the value function; disagreement beyond
    ``rel_tol`` (relative) raises, signalling an under-resolved curve.
    """
    if result.el_residual > el_tol:
        raise DerivativeCheckError(
            f"el_residual {result.el_residual:.2e} above tolerance {el_tol:.2e}")
    curve = result.minimizer
    x, y, t = curve.nodes[0], curve.nodes[-1], curve.t_end
    N = curve.n_segments
    p0 = -np.asarray(result.grad_x)

    if not check:
        return DerivativeCheck(result.grad_x, result.grad_y, result.grad_t,
                               0.0, 0.0, 0.0)

    def value(xa, ya, ta):
        r = minimize_action(model, xa, ya, ta, N=N, restarts=1,
                            p0_guess=p0)
        return r.value

    n = model.dim
    dx = fd_scale * (1.0 + float(np.linalg.norm(x)))
    dy = fd_scale * (1.0 + float(np.linalg.norm(y)))
    dt = fd_scale * t
    fd_x = np.array([(value(x + dx * e, y, t) - value(x - dx * e, y, t)) / (2 * dx)
                     for e in np.eye(n)])
    fd_y = np.array([(value(x, y + dy * e, t) - value(x, y - dy * e, t)) / (2 * dy)
                     for e in np.eye(n)])
    fd_t = (value(x, y, t + dt) - value(x, y, t - dt)) / (2 * dt)

    rel_x = float(np.linalg.norm(result.grad_x - fd_x)
                  / (1.0 + np.linalg.norm(result.grad_x)))
    rel_y = float(np.linalg.norm(result.grad_y - fd_y)
                  / (1.0 + np.linalg.norm(result.grad_y)))
    rel_t = abs(result.grad_t - fd_t) / (1.0 + abs(result.grad_t))
    out = DerivativeCheck(result.grad_x, result.grad_y, result.grad_t,
                          rel_x, rel_y, rel_t)
    if max(rel_x, rel_y, rel_t) > rel_tol:
        raise DerivativeCheckError(
            f"finite-difference cross-check failed: "
            f"rel errors ({rel_x:.2e}, {rel_y:.2e}, {rel_t:.2e}) > {rel_tol:.1e}")
    return out


# -- a-priori bounds and localization ------------------------------------------

def localization_radius(x, t: float) -> float:
    """Radius of the ball on which localized sup-convolution is solved."""
    if not 0 < t <= 1:
        raise ValueError("localization radius defined for 0 < t <= 1")
    return 0.5 * t


def _raw_velocity_bound(model, x, rbar: float, t: float) -> float:
    """One level of the constructive bound chain, for ratio rbar = R/t."""
    R = rbar * t
    theta = model.theta
    c0 = model.c0
    c1v = float(model.c1(x, R))
    n = model.dim

    # deterministic direction set: +-axes plus box corners
    dirs = [e for e in np.eye(n)] + [-e for e in np.eye(n)]
    if n > 1:
        corners = np.array(np.meshgrid(*([[-1.0, 1.0]] * n))).T.reshape(-1, n)
        dirs += [c / np.linalg.norm(c) for c in corners]
    dirs = np.array(dirs)

    # 1. straight-segment action upper bound over the sphere |y - x| = R
    sgrid = np.linspace(0.0, t, 17)
    U = -np.inf
    for d in dirs:
        yv = x + R * d
        pts = x[None] + (sgrid[:, None] / t) * (yv - x)[None]
        vel = np.broadcast_to((yv - x) / t, pts.shape)
        U = max(U, t * float(np.max(model.lagrangian(pts, vel))))
    theta_total = max(U, 0.0) + c0 * t

    # 2. L1 speed bound via superlinearity: int |xi'| <= V t + g(V) Theta
    r_big = max(10.0 * rbar, 100.0)
    r_grid = np.geomspace(1e-3, r_big, 480)
    th = theta(r_grid)
    if np.any(th <= 0):
        raise ValueError("theta must be positive to invert the bound chain")
    ratio = r_grid / th
    g_tail = np.maximum.accumulate(ratio[::-1])[::-1]  # sup_{r >= V} r/theta(r)
    D = float(np.min(r_grid * t + g_tail * theta_total))

    # 3. momentum bound via the Euler-Lagrange identity
    v_low = D / t
    P = c1v * float(theta(v_low)) + 2.0 * c1v * theta_total

    # 4. peak speed from theta(|v|) <= L(xi,0) + <p, v> + c0, inverting theta
    #    on a grid that grows until superlinearity wins
    zpts = x[None] + np.concatenate([r * dirs for r in np.linspace(0, D, 9)])
    M_L0 = float(np.max(model.lagrangian(zpts, np.zeros_like(zpts))))
    V_max = None
    while r_big < 1e12:
        r_grid = np.geomspace(1e-3, r_big, 480)
        th = theta(r_grid)
        ok = th <= M_L0 + c0 + P * r_grid
        if not ok[-1]:
            idx = np.nonzero(~ok)[0][0]
            V_max = float(r_grid[min(idx + 1, len(r_grid) - 1)])
            break
        r_big *= 8.0
    if V_max is None:
        raise ValueError(
            "theta lacks superlinearity on the needed range; bound not invertible")

    return max(V_max, P, D, rbar)


def apriori_velocity_bound(model: LagrangianModel, x, R: float, t: float) -> float:
    """Conservative bound Delta(x, R/t) on speed, momentum and excursion.

    Valid as a validation envelope for minimizers from x to any y in the
    closed R-ball, 0 < t <= 1.  Monotone nondecreasing in R/t by construction
    (maximum over all dyadic ratio levels below R/t).
    """
    if not 0 < t <= 1:
        raise ValueError("bound requires 0 < t <= 1")
    if R <= 0:
        raise ValueError("R must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rbar = R / t
    levels = [2.0 ** j for j in range(-6, int(np.ceil(np.log2(max(rbar, 1e-6)))) + 1)]
    levels = sorted({lv for lv in levels if lv <= rbar} | {rbar})
    return max(_raw_velocity_bound(model, x, lv, t) for lv in levels)


# -- convexity of (t, y) -> A_t(x, y) ------------------------------------------

@dataclass
class ConvexityReport:
    t: float
    nsamples: int
    min_Q: float
    violations: int
    coeff_h2: float      # raw quadratic coefficient of h^2
    coeff_z2: float      # raw quadratic coefficient of |z|^2
    C1_hat: float        # coeff_h2 * t^3
    C2_hat: float        # coeff_z2 * t
    worst: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0


def verify_convexity(model: LagrangianModel, x, t: float, nsamples: int = 200,
                     seed: int = 0, noise_tol: float = 1e-8, N: int = 32,
                     ) -> ConvexityReport:
    """Sampled second differences of A over increments in (t, y).

    Samples y in the localization ball, |h| <= t/10 and |z| <= R(x,t)/10,
    computes Q = A_{t+h}(x,y+z) + A_{t-h}(x,y-z) - 2 A_t(x,y), flags negative
    Q beyond noise and fits the two quadratic lower-bound coefficients.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rng = np.random.default_rng(seed)
    R = localization_radius(x, t)
    hv = HamiltonianView(model)

    rows, Qs = [], []
    worst = []
    violations = 0
    for _ in range(nsamples):
        dy = rng.standard_normal(model.dim)
        dy *= rng.uniform(0.0, R) / max(np.linalg.norm(dy), 1e-300)
        y = x + dy
        hh = rng.uniform(-t / 10.0, t / 10.0)
        z = rng.standard_normal(model.dim)
        z *= rng.uniform(0.0, R / 10.0) / max(np.linalg.norm(z), 1e-300)

        a_mid = minimize_action(model, x, y, t, N=N, restarts=1, hview=hv).value
        a_plus = minimize_action(model, x, y + z, t + hh, N=N, restarts=1, hview=hv).value
        a_minus = minimize_action(model, x, y - z, t - hh, N=N, restarts=1, hview=hv).value
        Q = a_plus + a_minus - 2.0 * a_mid
        rows.append([hh ** 2 / t ** 3, float(z @ z) / t])
        Qs.append(Q)
        if Q < -noise_tol:
            violations += 1
            worst.append({"y": y.tolist(), "h": hh, "z": z.tolist(), "Q": Q})

    rows = np.asarray(rows)
    Qs = np.asarray(Qs)
    from scipy.optimize import nnls
    coeffs, _ = nnls(rows, np.maximum(Qs, 0.0))
    C1_hat, C2_hat = float(coeffs[0]), float(coeffs[1])
    worst.sort(key=lambda w: w["Q"])
    return ConvexityReport(
        t=t, nsamples=nsamples, min_Q=float(np.min(Qs)), violations=violations,
        coeff_h2=C1_hat / t ** 3, coeff_z2=C2_hat / t,
        C1_hat=C1_hat, C2_hat=C2_hat, worst=worst[:10])


def determine_t0(model: LagrangianModel, x, nsamples: int = 40, seed: int = 0,
                 min_level: int = 6) -> tuple[float | None, list[ConvexityReport]]:
    """Largest dyadic t <= 1 with a clean convexity report (operative t0)."""
    reports = []
    for k in range(0, min_level + 1):
        t = 2.0 ** (-k)
        rep = verify_convexity(model, x, t, nsamples=nsamples, seed=seed)
        reports.append(rep)
        if rep.passed:
            return t, reports
    return None, reports


# -- equi-Lipschitz family check ------------------------------------------------

@dataclass
class EquiLipschitzReport:
    constants: list
    durations: list
    max_constant: float
    growth_slope: float
    growth_flag: bool


def equi_lipschitz_check(curves: list[Curve]) -> EquiLipschitzReport:
    """Discrete Lipschitz constants of the velocity arcs across durations.

    Flags growth proportional to 1/t (log-log slope above 1/2), which would
    contradict equi-Lipschitz behaviour of the extremal family.
    """
    constants = [c.velocity_lipschitz() for c in curves]
    durations = [c.t_end for c in curves]
    slope = 0.0
    flag = False
    distinct = sorted(set(durations))
    if len(distinct) >= 3 and max(constants) > 1e-8:
        lt = np.log(1.0 / np.asarray(durations))
        lk = np.log(np.asarray(constants) + 1e-12)
        slope = float(np.polyfit(lt, lk, 1)[0])
        flag = slope > 0.5
    return EquiLipschitzReport(
        constants=constants, durations=durations,
        max_constant=float(max(constants) if constants else 0.0),
        growth_slope=slope, growth_flag=flag)
