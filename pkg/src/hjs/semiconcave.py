"""Semiconcave functions, superdifferential estimation, singular-point tests.

The estimator mirrors the limiting-gradient characterization: gradients are
sampled at points x + r*omega for shrinking radii r and random directions
omega, clustered at a tolerance, and the finest-level cluster centers are
reported as the limiting differentials.  Their convex hull is the estimated
superdifferential; a point is flagged singular when the hull diameter
exceeds a threshold scaled to the local Lipschitz constant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .convex import hull_diameter, hull_vertices, minimize_over_hull
from .errors import ExtremizerError
from .model import HamiltonianView


class SemiconcaveFn:
    """Scalar function with a declared semiconcavity constant.

    ``grad`` (if given) must be valid wherever the function is
    differentiable; kinks are fine since the estimator samples almost-every
    points.  Built-in forms carry exact gradients.
    """

    def __init__(self, fn, dim: int, C: float = 0.0, grad=None, name: str = "custom"):
        self._fn = fn
        self.dim = int(dim)
        self.C = float(C)
        self._grad = grad
        self.name = name

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self._fn(x)

    @property
    def has_gradient(self) -> bool:
        return self._grad is not None

    def gradient(self, x, fd_step: float | None = None):
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return np.asarray(self._grad(x), dtype=float)
        h = fd_step or 1e-5 * (1.0 + float(np.linalg.norm(x)))
        g = np.empty(self.dim)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            g[i] = (self(x + e) - self(x - e)) / (2 * h)
        return g

    # -- built-in forms --------------------------------------------------------

    @classmethod
    def neg_abs(cls, dim: int = 1, center=None) -> "SemiconcaveFn":
        """u(x) = -|x - center| (concave, C = 0)."""
        c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

        def fn(x):
            return -np.linalg.norm(np.asarray(x, dtype=float) - c, axis=-1)

        def grad(x):
            d = np.asarray(x, dtype=float) - c
            r = np.linalg.norm(d, axis=-1, keepdims=True)
            return -d / np.maximum(r, 1e-300)

        return cls(fn, dim, C=0.0, grad=grad, name="neg_abs")

    @classmethod
    def min_of_planes(cls, planes) -> "SemiconcaveFn":
        """u(x) = min_i <a_i, x> + b_i; rows of ``planes`` are [a_1..a_n, b]."""
        P = np.atleast_2d(np.asarray(planes, dtype=float))
        A, b = P[:, :-1], P[:, -1]
        dim = A.shape[1]

        def fn(x):
            return np.min(np.asarray(x, dtype=float) @ A.T + b, axis=-1)

        def grad(x):
            vals = np.asarray(x, dtype=float) @ A.T + b
            return A[np.argmin(vals, axis=-1)]

        return cls(fn, dim, C=0.0, grad=grad, name="min_of_planes")

    @classmethod
    def neg_distance_to_set(cls, points, C: float = 0.0) -> "SemiconcaveFn":
        """u(x) = -min_j |x - s_j| over a finite point set."""
        S = np.atleast_2d(np.asarray(points, dtype=float))
        dim = S.shape[1]

        def fn(x):
            x = np.asarray(x, dtype=float)
            d = np.linalg.norm(x[..., None, :] - S, axis=-1)
            return -np.min(d, axis=-1)

        def grad(x):
            x = np.asarray(x, dtype=float)
            d = np.linalg.norm(x[..., None, :] - S, axis=-1)
            j = np.argmin(d, axis=-1)
            diff = x - S[j]
            r = np.linalg.norm(diff, axis=-1, keepdims=True)
            return -diff / np.maximum(r, 1e-300)

        return cls(fn, dim, C=C, grad=grad, name="neg_distance_to_set")

    @classmethod
    def from_expression(cls, text: str, dim: int, C: float = 0.0) -> "SemiconcaveFn":
        from .expressions import ScalarField
        f = ScalarField(text, dim)
        return cls(lambda x: f(x), dim, C=C, grad=lambda x: f.gradient_x(x),
                   name="expression")

    def negated(self) -> "SemiconcaveFn":
        grad = (lambda x: -self._grad(x)) if self._grad is not None else None
        return SemiconcaveFn(lambda x: -self._fn(x), self.dim, C=self.C,
                             grad=grad, name=f"neg({self.name})")


@dataclass
class Superdifferential:
    """Estimated D*u(x) (limiting) and its hull D+u(x) at a point."""

    x: np.ndarray
    limiting: np.ndarray        # (k, n) cluster centers of sampled gradients
    hull_vertices: np.ndarray   # (m, n) extreme points of co(limiting)
    diameter: float
    cluster_counts: list = field(default_factory=list)
    grad_scale: float = 1.0

    @property
    def stable(self) -> bool:
        """Cluster count stable across the last three radii (finiteness proxy)."""
        if len(self.cluster_counts) < 3:
            return True
        tail = self.cluster_counts[-3:]
        return tail[0] == tail[1] == tail[2]

    def to_dict(self) -> dict:
        return {
            "x": np.asarray(self.x).tolist(),
            "limiting": np.asarray(self.limiting).tolist(),
            "hull_vertices": np.asarray(self.hull_vertices).tolist(),
            "diameter": self.diameter,
        }


def _cluster_centers(grads: np.ndarray, tol: float) -> np.ndarray:
    if len(grads) == 1:
        return grads.copy()
    Z = linkage(grads, method="complete")
    labels = fcluster(Z, t=tol, criterion="distance")
    centers = [grads[labels == lab].mean(axis=0) for lab in np.unique(labels)]
    order = np.lexsort(np.array(centers).T[::-1])
    return np.array(centers)[order]


def estimate_superdifferential(u: SemiconcaveFn, x, radius: float = 0.1,
                               nsamples: int = 16, cluster_tol: float | None = None,
                               seed: int = 0, levels: int = 7) -> Superdifferential:
    """Sample gradients on shrinking spheres around x and cluster them."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    rng = np.random.default_rng(seed)
    n = u.dim
    fd = not u.has_gradient
    fd_h = 1e-5 * (1.0 + float(np.linalg.norm(x)))

    per_level = []
    for k in range(levels):
        r = radius * 2.0 ** (-k)
        dirs = rng.standard_normal((nsamples, n))
        dirs /= np.maximum(np.linalg.norm(dirs, axis=-1, keepdims=True), 1e-300)
        grads = []
        for w in dirs:
            p = x + r * w
            if fd:
                # discard samples whose FD stencil straddles a kink
                bad = False
                g = np.empty(n)
                for i in range(n):
                    e = np.zeros(n)
                    e[i] = fd_h
                    up, um, u0 = u(p + e), u(p - e), u(p)
                    if not np.isfinite(up) or not np.isfinite(um):
                        raise ExtremizerError(
                            "gradient sampling hit a non-Lipschitz evaluation")
                    if abs(up + um - 2 * u0) > 0.5 * fd_h * (1 + abs(u0)):
                        bad = True
                        break
                    g[i] = (up - um) / (2 * fd_h)
                if bad:
                    continue
            else:
                g = u.gradient(p)
            if not np.all(np.isfinite(g)):
                raise ExtremizerError(
                    "gradient sampling hit a non-Lipschitz evaluation")
            grads.append(g)
        per_level.append(np.array(grads) if grads else np.zeros((0, n)))

    all_grads = np.concatenate([g for g in per_level if len(g)], axis=0)
    scale = float(np.max(np.linalg.norm(all_grads, axis=-1))) if len(all_grads) else 1.0
    tol = cluster_tol if cluster_tol is not None else 1e-3 * (1.0 + scale)

    counts = [len(_cluster_centers(g, tol)) if len(g) else 0 for g in per_level]
    finest = per_level[-1] if len(per_level[-1]) else all_grads
    limiting = _cluster_centers(finest, tol)
    verts = hull_vertices(limiting, tol=min(tol, 1e-9))
    return Superdifferential(
        x=x, limiting=limiting, hull_vertices=verts,
        diameter=hull_diameter(verts), cluster_counts=counts, grad_scale=scale)


def default_singular_tol(sd: Superdifferential) -> float:
    return 1e-2 * (1.0 + sd.grad_scale)


def is_singular(u: SemiconcaveFn, x, sing_tol: float | None = None,
                sd: Superdifferential | None = None, **estimate_kw) -> bool:
    """True when the estimated superdifferential is not (numerically) a singleton."""
    if sd is None:
        sd = estimate_superdifferential(u, x, **estimate_kw)
    tol = sing_tol if sing_tol is not None else default_singular_tol(sd)
    return sd.diameter > tol


@dataclass
class SemiconcavityReport:
    C: float
    ntriples: int
    worst_midpoint: float     # max LHS - RHS of the midpoint inequality
    worst_proximal: float     # max violation of the upper-touching inequality
    midpoint_violations: int
    proximal_violations: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.midpoint_violations == 0 and self.proximal_violations == 0


def semiconcavity_check(u: SemiconcaveFn, region, C: float | None = None,
                        ntriples: int = 300, seed: int = 0,
                        tol: float = 1e-8) -> SemiconcavityReport:
    """Sampled falsification of the C-semiconcavity inequalities on a box."""
    lo, hi = (np.asarray(a, dtype=float) for a in region)
    C = u.C if C is None else float(C)
    rng = np.random.default_rng(seed)

    xs = rng.uniform(lo, hi, size=(ntriples, u.dim))
    ys = rng.uniform(lo, hi, size=(ntriples, u.dim))
    lam = rng.uniform(0.0, 1.0, size=ntriples)
    mid = lam[:, None] * xs + (1 - lam[:, None]) * ys
    lhs = lam * u(xs) + (1 - lam) * u(ys) - u(mid)
    rhs = 0.5 * C * lam * (1 - lam) * np.sum((xs - ys) ** 2, axis=-1)
    gap = lhs - rhs
    worst_mid = float(np.max(gap))
    n_mid = int(np.sum(gap > tol))

    # proximal form: u(y) <= u(x) + <p, y-x> + C/2 |y-x|^2 for p in D+u(x);
    # slack scales with the hull diameter since p is only estimated to that
    # resolution
    worst_prox = -np.inf
    n_prox = 0
    for i in range(0, ntriples, max(ntriples // 25, 1)):
        sd = estimate_superdifferential(u, xs[i], seed=seed + i)
        dy = ys - xs[i]
        dist = np.linalg.norm(dy, axis=-1)
        uy = u(ys)
        ux = float(u(xs[i]))
        slack = tol + sd.diameter * dist
        for p in sd.hull_vertices:
            viol = uy - ux - dy @ p - 0.5 * C * np.sum(dy ** 2, axis=-1) - slack
            worst_prox = max(worst_prox, float(np.max(viol)))
            n_prox += int(np.sum(viol > 0.0))
    return SemiconcavityReport(C=C, ntriples=ntriples, worst_midpoint=worst_mid,
                               worst_proximal=worst_prox,
                               midpoint_violations=n_mid,
                               proximal_violations=n_prox, tol=tol)


def minimal_energy_covector(hview: HamiltonianView, sd: Superdifferential,
                            agreement_tol: float = 1e-8) -> np.ndarray:
    """Unique minimizer of p -> H(x, p) over the estimated superdifferential.

    Projected descent over the barycentric parametrization of the hull; two
    independent starts must agree, otherwise the hull or the convexity of H
    is suspect and an error is raised.
    """
    if len(sd.limiting) == 0:
        raise ValueError("empty superdifferential")
    x = sd.x
    G = np.asarray(sd.limiting, dtype=float)
    if len(G) == 1:
        return G[0].copy()

    def fun(p):
        return float(hview.hamiltonian(x, p))

    def grad(p):
        return np.asarray(hview.h_p(x, p), dtype=float)

    p_a, _, _ = minimize_over_hull(fun, grad, G)
    w0 = np.zeros(len(G))
    w0[0] = 1.0
    p_b, _, _ = minimize_over_hull(fun, grad, G, start_weights=w0)
    if np.linalg.norm(p_a - p_b) > agreement_tol * (1.0 + np.linalg.norm(p_a)):
        raise ExtremizerError(
            f"minimal-energy starts disagree: {p_a} vs {p_b}")
    return 0.5 * (p_a + p_b)


@dataclass
class ViscosityReport:
    level: float
    nsamples: int
    max_subsolution_defect: float    # max H(x,p) - level over D+u
    max_supersolution_defect: float  # max level - H(x,p) over D-u samples
    n_super_points: int              # points where D-u was nonempty
    details: list = field(default_factory=list)

    def passed(self, tol: float = 1e-6) -> bool:
        return (self.max_subsolution_defect <= tol
                and self.max_supersolution_defect <= tol)


def viscosity_check(u: SemiconcaveFn, hview: HamiltonianView, region,
                    nsamples: int = 40, level: float = 0.0, seed: int = 0,
                    sing_tol: float | None = None,
                    probe_minima: bool = True) -> ViscosityReport:
    """Sampled sub/supersolution defects of H(x, Du) = level.

    Subsolution: H(x, p) <= level for p in the estimated D+u(x).
    Supersolution: H(x, p) >= level on D-u(x); at differentiable points this
    is a gradient check, at convexity kinks the subdifferential is recovered
    from the negated function, at concave kinks D-u is empty and the point
    imposes no constraint.  Random samples almost never land on a
    measure-zero kink, so interior local minima of u (the natural suspects
    for supersolution failure) are located by descent and appended.
    """
    from scipy.optimize import minimize as scipy_minimize

    lo, hi = (np.asarray(a, dtype=float) for a in region)
    rng = np.random.default_rng(seed)
    xs = rng.uniform(lo, hi, size=(nsamples, u.dim))

    if probe_minima:
        candidates = []
        for x0 in rng.uniform(lo, hi, size=(4, u.dim)):
            res = scipy_minimize(lambda z: float(u(np.clip(z, lo, hi))), x0,
                                 method="Nelder-Mead",
                                 options={"xatol": 1e-9, "fatol": 1e-12,
                                          "maxiter": 400})
            z = np.clip(res.x, lo, hi)
            if np.all(z > lo + 1e-7) and np.all(z < hi - 1e-7):
                if all(np.linalg.norm(z - c) > 1e-6 for c in candidates):
                    candidates.append(z)
        if candidates:
            xs = np.vstack([xs, np.array(candidates)])

    sub_worst = -np.inf
    sup_worst = -np.inf
    n_super = 0
    details = []
    for i, x in enumerate(xs):
        sd = estimate_superdifferential(u, x, seed=seed + 31 * i)
        tol = sing_tol if sing_tol is not None else default_singular_tol(sd)
        sub = float(np.max(hview.hamiltonian(np.broadcast_to(
            x, (len(sd.hull_vertices), u.dim)).copy(), sd.hull_vertices))) - level
        sub_worst = max(sub_worst, sub)
        entry = {"x": x.tolist(), "sub_defect": sub, "singular": sd.diameter > tol}

        if sd.diameter <= tol:
            p = sd.limiting[0]
            sup = level - float(hview.hamiltonian(x, p))
            sup_worst = max(sup_worst, sup)
            n_super += 1
            entry["sup_defect"] = sup
        else:
            # probe kink type: positive O(h) second difference means a
            # convex kink, where D-u = -D+(-u) is nonempty
            h = 1e-4 * (1.0 + float(np.linalg.norm(x)))
            dirs = rng.standard_normal((12, u.dim))
            dirs /= np.maximum(np.linalg.norm(dirs, axis=-1, keepdims=True), 1e-300)
            s2 = np.array([u(x + h * d) + u(x - h * d) - 2 * u(x) for d in dirs])
            if np.max(s2) > 0.1 * h:
                sd_neg = estimate_superdifferential(u.negated(), x, seed=seed + 31 * i)
                gens = -np.asarray(sd_neg.limiting)
                _, hmin, _ = minimize_over_hull(
                    lambda p: float(hview.hamiltonian(x, p)),
                    lambda p: np.asarray(hview.h_p(x, p), dtype=float), gens)
                sup = level - hmin
                sup_worst = max(sup_worst, sup)
                n_super += 1
                entry["sup_defect"] = sup
        details.append(entry)

    return ViscosityReport(level=level, nsamples=nsamples,
                           max_subsolution_defect=float(sub_worst),
                           max_supersolution_defect=float(sup_worst) if n_super else 0.0,
                           n_super_points=n_super, details=details)
