"""Lax-Oleinik operators (sup/inf-convolution) and the regularization checks.

The positive-type operator maximizes psi_t(y) = u(y) - A_t(x,y); the
inf-convolution minimizes u(y) + A_t(y,x).  Inner action evaluations are
warm-started on the initial momentum and memoized per query point, since the
outer search revisits nearby y many times.  The localized mode restricts the
search to the ball of radius t/2 where the kernel is strictly convex for
small t and the extremizer is unique; restart disagreement there signals
that t exceeded the effective regularity horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize as scipy_minimize
from scipy.optimize import minimize_scalar

from .action import (ActionResult, apriori_velocity_bound, localization_radius,
                     minimize_action)
from .errors import ActionSolveError, ConvergenceError, ExtremizerError
from .model import HamiltonianView, LagrangianModel
from .semiconcave import (SemiconcaveFn, Superdifferential,
                          estimate_superdifferential, default_singular_tol,
                          minimal_energy_covector)


@dataclass
class ConvolutionResult:
    """Extremum of a Lax-Oleinik convolution at one base point."""

    kind: str                 # "sup" or "inf"
    x: np.ndarray
    t: float
    value: float
    extremizer: np.ndarray
    curve: object             # extremal Curve (x -> y_t for sup, y_t -> x for inf)
    gradient: np.ndarray | None
    localized: bool
    action_value: float
    u_value: float
    concavity_gap: float | None = None
    boundary_distance: float = np.inf
    radius_used: float = np.inf

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "x": np.asarray(self.x).tolist(),
            "t": self.t,
            "value": self.value,
            "extremizer": np.asarray(self.extremizer).tolist(),
            "gradient": None if self.gradient is None
            else np.asarray(self.gradient).tolist(),
            "localized": self.localized,
        }


class _Kernel:
    """Memoized, warm-started evaluator of y -> A_t(x,y) or A_t(y,x)."""

    def __init__(self, model, x, t, N=32, reverse=False, hview=None):
        self.model = model
        self.hview = hview or HamiltonianView(model)
        self.x = np.asarray(x, dtype=float)
        self.t = float(t)
        self.N = N
        self.reverse = reverse
        self.p0 = None
        self.jac = {"J": None}    # shooting Jacobian, quasi-Newton reuse
        self.cache: dict[bytes, ActionResult] = {}
        self.evals = 0

    def result(self, y) -> ActionResult:
        y = np.asarray(y, dtype=float)
        key = np.round(y, 12).tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        self.evals += 1
        a, b = (y, self.x) if self.reverse else (self.x, y)
        try:
            res = minimize_action(self.model, a, b, self.t, N=self.N,
                                  restarts=1, p0_guess=self.p0,
                                  hview=self.hview, diagnostics=False,
                                  shoot_jacobian=self.jac)
        except ActionSolveError:
            self.jac["J"] = None
            res = minimize_action(self.model, a, b, self.t, N=self.N,
                                  restarts=2, hview=self.hview,
                                  diagnostics=False)
        self.p0 = -np.asarray(res.grad_x)
        self.cache[key] = res
        return res

    def value(self, y) -> float:
        return self.result(y).value


def _search_radius(model, x, t, localized, search_radius):
    if localized:
        base = localization_radius(x, t)
        if search_radius is not None:
            return max(float(search_radius), base)
        return base
    if search_radius is not None:
        return float(search_radius)
    R = localization_radius(x, min(t, 1.0)) if t <= 1 else 0.5
    delta = apriori_velocity_bound(model, x, R, min(t, 1.0))
    return delta * t + R


def _maximize_1d(objective, x0: float, R: float, polish_pairs: bool,
                 extra_points=()):
    """Scan-plus-Brent maximization on [x0-R, x0+R]; returns list of optima."""
    grid = np.linspace(x0 - R, x0 + R, 17)
    for pt in extra_points:
        if x0 - R <= pt <= x0 + R:
            grid = np.append(grid, pt)
    grid = np.sort(grid)
    vals = np.array([objective(g) for g in grid])
    order = np.argsort(vals)[::-1]
    picks = [int(order[0])]
    if polish_pairs:
        for j in order[1:]:
            if abs(grid[j] - grid[picks[0]]) > R / 4:
                picks.append(int(j))
                break
    optima = []
    for j in picks:
        lo = grid[max(j - 1, 0)]
        hi = grid[min(j + 1, len(grid) - 1)]
        if hi - lo < 1e-14:
            optima.append((grid[j], vals[j]))
            continue
        res = minimize_scalar(lambda s: -objective(s), bounds=(lo, hi),
                              method="bounded",
                              options={"xatol": 1e-9, "maxiter": 100})
        # keep the better of the polish and the raw grid point
        if -res.fun >= vals[j]:
            optima.append((float(res.x), float(-res.fun)))
        else:
            optima.append((float(grid[j]), float(vals[j])))
    return optima


def _maximize_nd(objective, starts, x0, R, early_agree=False, tight_first=False):
    """Nelder-Mead from each start, objective already ball-penalized.

    With ``early_agree`` the remaining starts are skipped once two optima
    coincide (strictly concave localized searches converge identically).
    ``tight_first`` shrinks the initial simplex of the first start, used for
    warm-started continuation where the optimum is already nearby.
    """
    optima = []
    for k, s in enumerate(starts):
        opts = {"xatol": 1e-8, "fatol": 1e-12, "maxiter": 200 * len(s)}
        if tight_first and k == 0:
            n = len(s)
            simplex = np.vstack([s[None], s[None] + 0.02 * R * np.eye(n)])
            opts["initial_simplex"] = simplex
        res = scipy_minimize(lambda z: -objective(z), s, method="Nelder-Mead",
                             options=opts)
        optima.append((np.asarray(res.x, dtype=float), float(-res.fun)))
        if early_agree and len(optima) >= 2:
            (ya, va), (yb, vb) = sorted(optima, key=lambda o: -o[1])[:2]
            if (np.linalg.norm(ya - yb) <= 1e-6 * (1.0 + R)
                    and abs(va - vb) <= 1e-9 * (1.0 + abs(va))):
                break
    return optima


def _extremize(u, kernel, x, t, R, sign, nstarts, seed, localized, warm_start):
    """Shared search core: maximize sign*(u(y) - sign*A(y)) over the R-ball.

    sign=+1 maximizes psi_t = u - A (sup-convolution); sign=-1 maximizes
    -(u + A), i.e. minimizes the barrier (inf-convolution).
    """
    n = len(x)
    rng = np.random.default_rng(seed)

    def raw(y):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        d = y - x
        r = np.linalg.norm(d)
        yc = x + d * (R / r) if r > R else y
        val = sign * (float(u(yc)) - sign * kernel.value(yc))
        if r > R:
            val -= 1e3 * (1.0 + abs(val)) * ((r - R) / max(R, 1e-12)) ** 2
        return val

    gu = u.gradient(x)
    stationary = x + t * np.asarray(kernel.hview.h_p(x, sign * gu), dtype=float)
    if np.linalg.norm(stationary - x) > R:
        stationary = x + (stationary - x) * (R / np.linalg.norm(stationary - x))

    if n == 1:
        extras = [float(stationary[0]), float(x[0])]
        if warm_start is not None:
            extras.append(float(np.atleast_1d(warm_start)[0]))
        optima_raw = _maximize_1d(lambda s: raw(np.array([s])), float(x[0]), R,
                                  polish_pairs=True, extra_points=extras)
        optima = [(np.array([pt]), val) for pt, val in optima_raw]
    else:
        starts = [stationary, x.copy()]
        warm = warm_start is not None
        if warm:
            starts.insert(0, np.atleast_1d(np.asarray(warm_start, dtype=float)))
        if localized:
            target = max(min(nstarts, 4), 1 if warm else 2)
            while len(starts) < target:
                d = rng.standard_normal(n)
                starts.append(x + d * rng.uniform(0, R)
                              / max(np.linalg.norm(d), 1e-300))
            starts = starts[:target]
        else:
            # global mode: coarse deterministic scan picks the NM basins
            axes = [np.linspace(x[i] - R, x[i] + R, 5) for i in range(n)]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            cand = mesh.reshape(-1, n)
            inside = np.linalg.norm(cand - x, axis=-1) <= R + 1e-12
            cand = cand[inside]
            cvals = np.array([raw(c) for c in cand])
            order = np.argsort(cvals)[::-1]
            picks = [cand[order[0]]]
            for j in order[1:]:
                if all(np.linalg.norm(cand[j] - p) > R / 3 for p in picks):
                    picks.append(cand[j])
                if len(picks) >= 2:
                    break
            starts = starts + picks
        optima = _maximize_nd(raw, starts, x, R, early_agree=localized,
                              tight_first=warm)

    best_y, best_v = max(optima, key=lambda o: o[1])
    if localized:
        near = [y for y, v in optima if v >= best_v - 1e-8 * (1.0 + abs(best_v))]
        for a in near:
            for b in near:
                if np.linalg.norm(a - b) > 1e-4 * (1.0 + R):
                    raise ExtremizerError(
                        f"localized restarts disagree at t={t}: {a} vs {b} "
                        "(t may exceed the effective regularity horizon)")
    return np.asarray(best_y, dtype=float), float(best_v)


def sup_convolve(u: SemiconcaveFn, model: LagrangianModel, x, t: float,
                 localized: bool = True, search_radius: float | None = None,
                 nstarts: int = 8, seed: int = 0, N: int = 32,
                 concavity_samples: int = 0, warm_start=None,
                 adaptive_radius: bool = False,
                 hview: HamiltonianView | None = None) -> ConvolutionResult:
    """Positive-type Lax-Oleinik value: sup_y { u(y) - A_t(x,y) }.

    Localized mode searches the ball of radius t/2 (requires t <= 1) and
    enforces extremizer uniqueness across restarts; global mode searches a
    box sized by the a-priori velocity bound and reports a boundary hit as
    an error.  With ``adaptive_radius`` a localized solve whose maximizer
    pins to the ball boundary doubles the ball (up to the a-priori box):
    steep u can push the maximizer beyond t/2 even though it stays well
    inside the a-priori envelope.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    R = _search_radius(model, x, t, localized, search_radius)
    kernel = _Kernel(model, x, t, N=N, reverse=False, hview=hview)

    cap = None
    while True:
        y_t, value = _extremize(u, kernel, x, t, R, +1, nstarts, seed,
                                localized, warm_start)
        boundary = R - float(np.linalg.norm(y_t - x))
        pinned = boundary < 1e-6 * (1.0 + R)
        if localized and adaptive_radius and pinned:
            if cap is None:
                cap = _search_radius(model, x, t, False, None)
            if 2 * R > cap:
                raise ExtremizerError(
                    f"maximizer pinned to the boundary even at radius {R:.4g} "
                    f"(a-priori cap {cap:.4g})")
            R *= 2.0
            continue
        break

    if not localized and pinned:
        raise ExtremizerError(
            f"sup-convolution hit the search boundary (|y-x|={R - boundary:.4g}, "
            f"radius={R:.4g}); enlarge search_radius")

    final = minimize_action(model, x, y_t, t, N=N, restarts=1,
                            p0_guess=kernel.p0, hview=kernel.hview)
    gradient = -np.asarray(final.grad_x)  # L_v at departure = -D_x A_t(x, y_t)

    gap = None
    if concavity_samples > 0:
        rng = np.random.default_rng(seed + 1)
        gap = -np.inf
        for _ in range(concavity_samples):
            d = rng.standard_normal(model.dim)
            d *= rng.uniform(0.05, 0.25) * R / max(np.linalg.norm(d), 1e-300)
            yc = x + rng.standard_normal(model.dim) * 0.0
            yc = x + (y_t - x) * rng.uniform(0.0, 0.5)
            psi = lambda z: float(u(z)) - kernel.value(z)
            s2 = (psi(yc + d) + psi(yc - d) - 2 * psi(yc)) / float(d @ d)
            gap = max(gap, s2)

    return ConvolutionResult(
        kind="sup", x=x, t=t, value=value, extremizer=y_t, curve=final.minimizer,
        gradient=gradient, localized=localized, action_value=final.value,
        u_value=float(u(y_t)), concavity_gap=gap, boundary_distance=boundary,
        radius_used=R)


def inf_convolve(u: SemiconcaveFn, model: LagrangianModel, x, t: float,
                 search_radius: float | None = None, nstarts: int = 8,
                 seed: int = 0, N: int = 32, warm_start=None,
                 hview: HamiltonianView | None = None) -> ConvolutionResult:
    """Inf-convolution: inf_y { u(y) + A_t(y,x) } (curves run from y to x)."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    R = _search_radius(model, x, t, False, search_radius)
    kernel = _Kernel(model, x, t, N=N, reverse=True, hview=hview)
    y_t, neg_value = _extremize(u, kernel, x, t, R, -1, nstarts, seed, False,
                                warm_start)
    value = -neg_value

    boundary = R - float(np.linalg.norm(y_t - x))
    if boundary < 1e-6 * (1.0 + R):
        raise ExtremizerError(
            f"inf-convolution hit the search boundary (radius={R:.4g}); "
            "enlarge search_radius")

    final = minimize_action(model, y_t, x, t, N=N, restarts=1,
                            p0_guess=kernel.p0, hview=kernel.hview)
    gradient = np.asarray(final.grad_y)  # L_v at arrival: D T_t u(x) when smooth

    return ConvolutionResult(
        kind="inf", x=x, t=t, value=value, extremizer=y_t, curve=final.minimizer,
        gradient=gradient, localized=False, action_value=final.value,
        u_value=float(u(y_t)), boundary_distance=boundary)


# -- regularization property checks -------------------------------------------


@dataclass
class MonotoneReport:
    x: np.ndarray
    t_grid: list
    values: list
    skipped: bool
    monotone: bool
    worst_drop: float
    gap_at_tmin: float
    extrapolated_gap: float

    @property
    def passed(self) -> bool:
        return self.skipped or self.monotone


def verify_P3(u: SemiconcaveFn, model: LagrangianModel, x, t_grid,
              search_radius: float | None = None, seed: int = 0,
              tol_scale: float = 1e-6) -> MonotoneReport:
    """Monotonicity of t -> sup-convolution value when L(x,0) <= 0.

    Also reports the gap to u(x) at the smallest t, plus a linear-in-t
    extrapolation of the value to t = 0+.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t_grid = sorted(float(t) for t in t_grid)
    if float(model.lagrangian(x, np.zeros(model.dim))) > 1e-12:
        return MonotoneReport(x=x, t_grid=t_grid, values=[], skipped=True,
                              monotone=True, worst_drop=0.0, gap_at_tmin=np.nan,
                              extrapolated_gap=np.nan)
    values = []
    for t in t_grid:
        res = sup_convolve(u, model, x, t, localized=False,
                           search_radius=search_radius, seed=seed)
        values.append(res.value)
    drops = [values[i] - values[i + 1] for i in range(len(values) - 1)]
    worst = max(drops) if drops else 0.0
    tol = tol_scale * (1.0 + max(abs(v) for v in values))
    ux = float(u(x))
    if len(values) >= 2 and t_grid[0] != t_grid[1]:
        slope = (values[1] - values[0]) / (t_grid[1] - t_grid[0])
        extrap = values[0] - slope * t_grid[0]
    else:
        extrap = values[0]
    return MonotoneReport(x=x, t_grid=t_grid, values=values, skipped=False,
                          monotone=worst <= tol, worst_drop=worst,
                          gap_at_tmin=abs(values[0] - ux),
                          extrapolated_gap=abs(extrap - ux))


@dataclass
class CriticalPreservationReport:
    t: float
    kappa: float
    C: float
    within_guarantee: bool
    critical_points: list        # dicts with x*, |y_t - x*|, |value - u(x*)|
    converse_points: list        # dicts with z (D breve-T = 0), dist(0, D+u(z))
    max_point_drift: float
    max_value_drift: float
    max_converse_dist: float

    @property
    def passed(self) -> bool:
        if not self.within_guarantee:
            return True   # outside the guarantee nothing is asserted
        return (self.max_point_drift <= 1e-6 + 1e-3 * self.t
                and self.max_value_drift <= 1e-6)


def verify_P5(u: SemiconcaveFn, A, C: float, t: float, region,
              nsamples: int = 4, seed: int = 0,
              crit_tol: float = 1e-4) -> CriticalPreservationReport:
    """Critical points/values of u preserved by sup-convolution for t <= kappa/C.

    Applies to quadratic kinetic kernels L = 1/2 <A v, v>.  Critical-point
    candidates are located by ascent on u; the converse direction root-finds
    the sup-convolution gradient and checks 0 lands in the estimated D+u.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    model = LagrangianModel.quadratic_kinetic(A)
    hview = HamiltonianView(model)
    kappa = float(np.linalg.eigvalsh(A)[0])
    within = t <= kappa / C + 1e-12
    lo, hi = (np.asarray(a, dtype=float) for a in region)
    rng = np.random.default_rng(seed)
    n = model.dim

    # forward: ascend u to critical candidates with 0 in estimated D+u
    candidates = []
    for x0 in rng.uniform(lo, hi, size=(max(nsamples, 2), n)):
        res = scipy_minimize(lambda z: -float(u(np.clip(z, lo, hi))), x0,
                             method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-14,
                                      "maxiter": 500})
        z = np.clip(res.x, lo, hi)
        if all(np.linalg.norm(z - c) > 1e-5 for c in candidates):
            candidates.append(z)
    crit_rows = []
    for z in candidates:
        sd = estimate_superdifferential(u, z, seed=seed)
        from .convex import project_to_hull
        _, dist0, _ = project_to_hull(np.zeros(n), sd.limiting)
        if dist0 > crit_tol * (1.0 + sd.grad_scale):
            continue
        res = sup_convolve(u, model, z, t, localized=(t <= 1.0), seed=seed,
                           hview=hview)
        crit_rows.append({
            "x_star": z.tolist(),
            "point_drift": float(np.linalg.norm(res.extremizer - z)),
            "value_drift": abs(res.value - float(u(z))),
        })

    # converse: where the regularized gradient vanishes, 0 must lie in D+u.
    # In 1D the zero of the regularized gradient is located independently by
    # bracketing; in higher dimensions the forward candidates double as the
    # sampled witnesses (every additional probe costs a full convolution).
    converse_rows = []

    def dsup(z):
        res = sup_convolve(u, model, z, t, localized=(t <= 1.0), seed=seed,
                           hview=hview)
        return np.asarray(res.gradient, dtype=float)

    if crit_rows:
        from scipy.optimize import brentq
        from .convex import project_to_hull
        if n == 1:
            for row in crit_rows:
                z0 = row["x_star"][0]
                a, b = z0 - 0.2, z0 + 0.2
                ga, gb = dsup(np.array([a]))[0], dsup(np.array([b]))[0]
                if ga * gb < 0:
                    zr = brentq(lambda s: dsup(np.array([s]))[0], a, b,
                                xtol=1e-8, maxiter=40)
                    sd = estimate_superdifferential(u, [zr], seed=seed)
                    _, dist0, _ = project_to_hull(np.zeros(1), sd.limiting)
                    converse_rows.append({"z": [zr], "dist0": float(dist0)})
        else:
            for row in crit_rows:
                z0 = np.asarray(row["x_star"])
                if np.linalg.norm(dsup(z0)) < 1e-5:
                    sd = estimate_superdifferential(u, z0, seed=seed)
                    _, dist0, _ = project_to_hull(np.zeros(n), sd.limiting)
                    converse_rows.append({"z": list(z0), "dist0": float(dist0)})

    return CriticalPreservationReport(
        t=t, kappa=kappa, C=C, within_guarantee=within,
        critical_points=crit_rows, converse_points=converse_rows,
        max_point_drift=max((r["point_drift"] for r in crit_rows), default=0.0),
        max_value_drift=max((r["value_drift"] for r in crit_rows), default=0.0),
        max_converse_dist=max((r["dist0"] for r in converse_rows), default=0.0))


@dataclass
class GradientLimitReport:
    x: np.ndarray
    t_sequence: list
    gradients: list
    p_limit: np.ndarray
    me_covector: np.ndarray | None
    me_gap: float
    cauchy_gaps: list


def gradient_limit_p0(u: SemiconcaveFn, model: LagrangianModel, x, t_sequence,
                      seed: int = 0, sd: Superdifferential | None = None,
                      hview: HamiltonianView | None = None) -> GradientLimitReport:
    """Extrapolated limit of the sup-convolution gradient as t -> 0+.

    Requires the localized solve to succeed for every t in the (decreasing)
    sequence.  The limit is compared against the minimal-energy covector of
    the estimated superdifferential.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    ts = sorted((float(t) for t in t_sequence), reverse=True)
    if len(ts) < 2:
        raise ValueError("need at least two times to extrapolate")
    hview = hview or HamiltonianView(model)
    grads = []
    warm = None
    for t in ts:
        res = sup_convolve(u, model, x, t, localized=True, seed=seed,
                           warm_start=warm, hview=hview)
        R = localization_radius(x, t)
        if res.boundary_distance < 1e-3 * R:
            raise ExtremizerError(
                f"localized maximizer sits on the t/2 ball boundary at t={t}; "
                "the interior-maximizer hypothesis fails at this point")
        warm = res.extremizer
        grads.append(np.asarray(res.gradient, dtype=float))
    gaps = [float(np.linalg.norm(grads[i + 1] - grads[i]))
            for i in range(len(grads) - 1)]
    noise = 1e-6 * (1.0 + float(np.linalg.norm(grads[-1])))
    if len(gaps) >= 2 and gaps[-1] > noise and gaps[-1] > 2.0 * gaps[0]:
        raise ConvergenceError(
            f"gradient sequence is not Cauchy: gaps {gaps}")
    t1, t2 = ts[-2], ts[-1]
    g1, g2 = grads[-2], grads[-1]
    p_limit = g2 + (g2 - g1) * (t2 / (t1 - t2)) if t1 != t2 else g2

    sd = sd or estimate_superdifferential(u, x, seed=seed)
    me = minimal_energy_covector(hview, sd)
    gap = float(np.linalg.norm(p_limit - me))
    return GradientLimitReport(x=x, t_sequence=ts, gradients=grads,
                               p_limit=p_limit, me_covector=me, me_gap=gap,
                               cauchy_gaps=gaps)


@dataclass
class FieldResult:
    t: float
    coords: list                  # per-axis coordinate arrays
    values: np.ndarray
    gradients: np.ndarray
    max_second_diff: float
    min_second_diff: float
    lower_curvature_bound: float  # -C_kernel / t
    upper_curvature_bound: float  # declared semiconcavity constant of u
    c11_ok: bool
    points: np.ndarray = field(default=None, repr=False)

    def summary_dict(self) -> dict:
        return {
            "t": self.t,
            "max_second_diff": self.max_second_diff,
            "min_second_diff": self.min_second_diff,
            "lower_curvature_bound": self.lower_curvature_bound,
            "upper_curvature_bound": self.upper_curvature_bound,
            "c11_ok": self.c11_ok,
        }


def lasry_lions_field(u: SemiconcaveFn, model: LagrangianModel, t: float,
                      box, resolution: int = 21, seed: int = 0,
                      localized: bool = True, jobs: int = 1,
                      search_radius: float | None = None) -> FieldResult:
    """Evaluate the regularized function on a grid with a C^{1,1} bound check.

    Axis-aligned second differences of the field must lie between the
    kernel-driven lower bound -C/t and the declared semiconcavity constant
    of u (both with 10% slack), which is the observable form of the
    C^{1,1} regularity of the sup-convolution for small t.
    """
    lo, hi = (np.asarray(a, dtype=float) for a in box)
    n = model.dim
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    hview = HamiltonianView(model)

    def value_at(p):
        return sup_convolve(u, model, p, t, localized=localized, seed=seed,
                            hview=hview).value

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            vals = np.array(list(ex.map(value_at, pts)))
    else:
        # serial sweep warm-starts each node from its predecessor's extremizer
        vals = np.empty(len(pts))
        warm = None
        for i, p in enumerate(pts):
            res = sup_convolve(u, model, p, t, localized=localized, seed=seed,
                               warm_start=warm, hview=hview)
            vals[i] = res.value
            warm = res.extremizer
    values = vals.reshape([resolution] * n)

    grads = np.stack(np.gradient(values, *axes) if n > 1
                     else [np.gradient(values, axes[0])], axis=-1)

    second_max, second_min = -np.inf, np.inf
    if resolution >= 3:
        for i in range(n):
            h = axes[i][1] - axes[i][0]
            d2 = np.diff(values, n=2, axis=i) / h ** 2
            if d2.size:
                second_max = max(second_max, float(np.max(d2)))
                second_min = min(second_min, float(np.min(d2)))
    else:
        second_max = second_min = 0.0

    if model.A is not None:
        c_kernel = float(np.linalg.eigvalsh(model.A)[-1])
    else:
        c_kernel = max(-second_min * t, 1.0)
    lower = -c_kernel / t
    upper = u.C
    slack = 0.1 * max(abs(lower), abs(upper), 1.0)
    ok = (second_min >= lower - slack) and (second_max <= upper + slack)

    return FieldResult(t=t, coords=[a.tolist() for a in axes], values=values,
                       gradients=grads, max_second_diff=second_max,
                       min_second_diff=second_min, lower_curvature_bound=lower,
                       upper_curvature_bound=upper, c11_ok=ok, points=pts)
