"""Barrier-function minimizers, discrete mountain-pass search, and the
critical-point dichotomy classification.

Given an anchor x and time t, the barrier is phi_t(y) = u(y) + A_t(y, x).
Its global minimizers are the feet of backward calibrated curves, one per
limiting differential at x (computed here by backward Hamiltonian
integration).  Between any two feet the minimax value over connecting paths
is realized by a third critical point; the discrete search relaxes a
polyline by node-wise descent orthogonal to the path, then lets the argmax
node climb along the path tangent.  The resulting point is certified by
checking 0 against the estimated superdifferential of phi_t and classified
as a singular point of u or as the junction of a non-calibrated extremal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as scipy_minimize

from .action import integrate_hamiltonian, minimize_action
from .convex import project_to_hull
from .errors import CriticalPointError
from .model import HamiltonianView, LagrangianModel
from .operators import _Kernel
from .semiconcave import (SemiconcaveFn, Superdifferential, default_singular_tol,
                          estimate_superdifferential, is_singular)


@dataclass
class BarrierProblem:
    """u, model, anchor point, time, and the limiting differentials at x."""

    u: SemiconcaveFn
    model: LagrangianModel
    x: np.ndarray
    t: float
    covectors: np.ndarray          # estimated D*u(x), shape (k, n)
    sd: Superdifferential | None = None
    hview: HamiltonianView = None
    N: int = 32

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.covectors = np.atleast_2d(np.asarray(self.covectors, dtype=float))
        if len(self.covectors) < 1:
            raise ValueError("need at least one limiting differential")
        if self.hview is None:
            self.hview = HamiltonianView(self.model)
        self._kernel = _Kernel(self.model, self.x, self.t, N=self.N,
                               reverse=True, hview=self.hview)
        self._minimizers = None

    @classmethod
    def from_point(cls, u, model, x, t, seed: int = 0, N: int = 32):
        sd = estimate_superdifferential(u, x, seed=seed)
        return cls(u=u, model=model, x=x, t=t, covectors=sd.limiting, sd=sd, N=N)

    @property
    def sing_tol(self) -> float:
        if self.sd is not None:
            return default_singular_tol(self.sd)
        return 1e-2 * (1.0 + float(np.max(np.linalg.norm(self.covectors, axis=-1))))

    def barrier(self, y) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(self.u(y)) + self._kernel.value(y)

    def barrier_gradient(self, y):
        """u'(y) + D_y A_t(y, x) where u is differentiable."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        res = self._kernel.result(y)
        return self.u.gradient(y) + np.asarray(res.grad_x)


def barrier_eval(problem: BarrierProblem, y) -> float:
    """phi_t(y) = u(y) + A_t(y, x); curves run from y to the anchor."""
    return problem.barrier(y)


@dataclass
class MinimizerInfo:
    point: np.ndarray
    covector: np.ndarray         # limiting differential generating the foot
    barrier_value: float
    gap_to_ux: float             # |phi_t(z) - u(x)|, zero for calibrated pairs
    local_min_ok: bool


def global_minimizers(problem: BarrierProblem, flow_nodes: int = 64,
                      descent_tol: float = 1e-7) -> list[MinimizerInfo]:
    """Feet of backward calibrated curves, one per limiting differential.

    Integrates the Hamiltonian flow backward for duration t from (x, p_i)
    with a fixed-step 4th-order scheme, then verifies each endpoint is a
    local minimum of the barrier and records its calibration gap.
    """
    if problem._minimizers is not None:
        return problem._minimizers
    out = []
    ux = float(problem.u(problem.x))
    for p in problem.covectors:
        xs, ps, _ = integrate_hamiltonian(problem.hview, problem.x, p,
                                          -problem.t, flow_nodes)
        z = xs[-1]
        phi_z = problem.barrier(z)
        res = scipy_minimize(lambda w: problem.barrier(w), z,
                             method="Nelder-Mead",
                             options={"xatol": 1e-9, "fatol": 1e-13,
                                      "maxiter": 200 * len(z)})
        improved = phi_z - float(res.fun)
        ok = improved <= descent_tol * (1.0 + abs(phi_z))
        out.append(MinimizerInfo(point=z, covector=np.asarray(p, dtype=float),
                                 barrier_value=phi_z,
                                 gap_to_ux=abs(phi_z - ux), local_min_ok=ok))
    order = np.lexsort(np.array([m.point for m in out]).T[::-1])
    out = [out[i] for i in order]
    problem._minimizers = out
    return out


@dataclass
class Classification:
    kind: str                        # "singular" or "regular"
    diameter: float = 0.0
    calibration_defect: float = 0.0
    junction_velocity_gap: float = 0.0
    curve_nodes: np.ndarray | None = None


@dataclass
class MountainPassResult:
    pair: tuple
    endpoints: tuple
    path: np.ndarray
    b_value: float
    critical_point: np.ndarray
    critical_value: float
    certificate_dist: float
    min_barrier: float
    sweeps: int
    classification: Classification | None = None

    def to_dict(self) -> dict:
        return {
            "pair": list(self.pair),
            "endpoints": [np.asarray(e).tolist() for e in self.endpoints],
            "b": self.b_value,
            "critical_point": np.asarray(self.critical_point).tolist(),
            "critical_value": self.critical_value,
            "certificate_dist": self.certificate_dist,
            "classification": None if self.classification is None else {
                "kind": self.classification.kind,
                "diameter": self.classification.diameter,
                "calibration_defect": self.classification.calibration_defect,
            },
        }


def _reparametrize(path: np.ndarray) -> np.ndarray:
    """Respace the polyline nodes to equal arclength, endpoints fixed."""
    seg = np.linalg.norm(np.diff(path, axis=0), axis=-1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 1e-300:
        return path.copy()
    targets = np.linspace(0.0, total, len(path))
    out = np.empty_like(path)
    for d in range(path.shape[1]):
        out[:, d] = np.interp(targets, s, path[:, d])
    out[0], out[-1] = path[0], path[-1]
    return out


def _climb(problem, y0, tangent, step0, max_iter=80):
    """Backtracking ascent of the barrier along a fixed tangent direction."""
    y = y0.copy()
    val = problem.barrier(y)
    step = step0
    for _ in range(max_iter):
        moved = False
        for sgn in (+1.0, -1.0):
            y_try = y + sgn * step * tangent
            v_try = problem.barrier(y_try)
            if v_try > val + 1e-14:
                y, val = y_try, v_try
                moved = True
                break
        if not moved:
            step *= 0.5
            if step < 1e-9 * (1.0 + np.linalg.norm(y)):
                break
    return y, val


def mountain_pass(problem: BarrierProblem, i: int, j: int,
                  path_nodes: int = 33, iters: int = 500,
                  cert_tol: float = 1e-3, seed: int = 0) -> MountainPassResult:
    """Minimax over discrete paths joining the i-th and j-th barrier feet.

    Relaxation sweeps move interior nodes downhill orthogonally to the local
    tangent and respace the polyline; the argmax node then climbs along the
    tangent to the ridge top.  The returned point carries a criticality
    certificate: the distance from 0 to the estimated superdifferential of
    the barrier at that point.
    """
    mins = global_minimizers(problem)
    if i == j:
        raise ValueError("pair (i, j) must be distinct")
    if not (0 <= i < len(mins) and 0 <= j < len(mins)):
        raise ValueError(f"pair ({i},{j}) out of range for {len(mins)} minimizers")
    z_i, z_j = mins[i].point, mins[j].point
    sep = float(np.linalg.norm(z_i - z_j))
    if sep <= 10 * problem.sing_tol:
        raise ValueError(
            f"minimizers {i},{j} are not separated ({sep:.3g} <= "
            f"10*sing_tol={10 * problem.sing_tol:.3g})")

    n = len(z_i)
    m = path_nodes + 2
    s = np.linspace(0.0, 1.0, m)[:, None]
    path = z_i[None, :] * (1 - s) + z_j[None, :] * s
    vals = np.array([problem.barrier(p) for p in path])
    h_path = sep / (m - 1)

    b_hist = []
    sweep = 0
    for sweep in range(1, iters + 1):
        if n > 1:
            # node-wise descent orthogonal to the path (skip current argmax)
            m_idx = 1 + int(np.argmax(vals[1:-1]))
            for k in range(1, m - 1):
                if k == m_idx:
                    continue
                tang = path[k + 1] - path[k - 1]
                tang /= max(np.linalg.norm(tang), 1e-300)
                g = problem.barrier_gradient(path[k])
                g_perp = g - (g @ tang) * tang
                gn = np.linalg.norm(g_perp)
                if gn < 1e-12:
                    continue
                step = 0.5 * h_path
                for _bt in range(5):
                    cand = path[k] - step * g_perp / gn
                    v_cand = problem.barrier(cand)
                    if v_cand < vals[k] - 1e-14:
                        path[k] = cand
                        vals[k] = v_cand
                        break
                    step *= 0.4
        path = _reparametrize(path)
        vals = np.array([problem.barrier(p) for p in path])
        b_now = float(np.max(vals))
        b_hist.append(b_now)
        if len(b_hist) >= 4 and max(b_hist[-4:]) - min(b_hist[-4:]) \
                <= 1e-10 * (1.0 + abs(b_now)):
            break

    # climbing refinement of the argmax node along the (frozen) tangent
    m_idx = 1 + int(np.argmax(vals[1:-1]))
    ties = np.nonzero(np.abs(vals[1:-1] - vals[m_idx]) <= 1e-9)[0] + 1
    m_idx = int(ties[0])  # lowest index climbs on ties
    tang = path[m_idx + 1] - path[m_idx - 1]
    tang /= max(np.linalg.norm(tang), 1e-300)
    x_t, b_val = _climb(problem, path[m_idx], tang, 0.5 * h_path)
    path[m_idx] = x_t
    vals[m_idx] = b_val

    min_phi = min(mins[i].barrier_value, mins[j].barrier_value)
    if b_val <= max(mins[i].barrier_value, mins[j].barrier_value) \
            + 1e-9 * (1.0 + abs(b_val)):
        raise CriticalPointError(
            "path collapsed onto an endpoint basin: minimax value "
            f"{b_val:.6g} does not exceed the endpoint values")

    phi_fn = SemiconcaveFn(lambda y: problem.u(y) + problem._kernel.result(
        np.atleast_1d(y)).value, problem.model.dim)
    sd_phi = estimate_superdifferential(phi_fn, x_t, radius=0.05 * (1 + sep),
                                        seed=seed)
    _, cert, _ = project_to_hull(np.zeros(n), sd_phi.limiting)
    if cert > cert_tol:
        raise CriticalPointError(
            f"criticality certificate failed: dist(0, D+phi) = {cert:.3g} "
            f"> {cert_tol:.3g} after {sweep} sweeps")

    return MountainPassResult(
        pair=(i, j), endpoints=(z_i, z_j), path=path, b_value=b_val,
        critical_point=x_t, critical_value=b_val, certificate_dist=float(cert),
        min_barrier=min_phi, sweeps=sweep)


def classify_dichotomy(result: MountainPassResult, problem: BarrierProblem,
                       junction_tol: float = 1e-3, T_back: float | None = None,
                       flow_nodes: int = 64, seed: int = 0) -> Classification:
    """Classify a certified critical point: singular for u, or regular.

    In the regular case the juxtaposed curve (backward calibrated segment
    through x_t plus the forward extremal to the anchor) must have matching
    velocities at the junction, and its action over the full window must
    strictly exceed the increment of u: the curve is extremal but not
    calibrated.
    """
    x_t = np.asarray(result.critical_point, dtype=float)
    mins = global_minimizers(problem)
    near_min = min(float(np.linalg.norm(x_t - m.point)) for m in mins)
    if result.b_value <= result.min_barrier + 1e-9 or near_min <= problem.sing_tol:
        raise ValueError("critical point coincides with a global minimizer; "
                         "the dichotomy applies to non-minimizing critical points")

    sd = estimate_superdifferential(problem.u, x_t, seed=seed)
    if sd.diameter > default_singular_tol(sd):
        cls = Classification(kind="singular", diameter=sd.diameter)
        result.classification = cls
        return cls

    # regular case: u differentiable at x_t
    T_back = problem.t if T_back is None else float(T_back)
    p = sd.limiting[0]
    xs_b, ps_b, act_b = integrate_hamiltonian(problem.hview, x_t, p,
                                              -T_back, flow_nodes)
    # act_b integrates L from 0 down to -T_back; the action over [-T_back, 0]
    # is its negative
    back_action = -act_b
    fwd = minimize_action(problem.model, x_t, problem.x, problem.t,
                          N=max(problem.N, 32), restarts=1,
                          hview=problem.hview)
    v_back = np.asarray(problem.hview.h_p(x_t, p), dtype=float)
    p_fwd0 = -np.asarray(fwd.grad_x)
    v_fwd = np.asarray(problem.hview.h_p(x_t, p_fwd0), dtype=float)
    vgap = float(np.linalg.norm(v_back - v_fwd))
    if vgap > junction_tol * (1.0 + np.linalg.norm(v_back)):
        raise CriticalPointError(
            f"junction velocity mismatch {vgap:.3g}: critical point suspect")

    z_back = xs_b[-1]
    total_action = back_action + fwd.value
    u_increment = float(problem.u(problem.x)) - float(problem.u(z_back))
    defect = total_action - u_increment
    curve = np.vstack([xs_b[::-1], fwd.minimizer.nodes[1:]])
    cls = Classification(kind="regular", calibration_defect=float(defect),
                         junction_velocity_gap=vgap, curve_nodes=curve)
    result.classification = cls
    return cls
