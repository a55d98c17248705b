"""Small convex-geometry helpers: hulls of few points in n <= 3, simplex
minimization, and distance to a convex hull.

Superdifferentials live in at most R^3 here and typically have a handful of
generators, often affinely degenerate (a segment inside R^2, say), so the
hull code reduces to the affine span before calling qhull.
"""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls
from scipy.spatial import ConvexHull, QhullError


def dedupe_points(points: np.ndarray, tol: float) -> np.ndarray:
    """Greedy dedupe keeping first representative of each tol-cluster."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    keep: list[np.ndarray] = []
    for p in pts:
        if all(np.linalg.norm(p - q) > tol for q in keep):
            keep.append(p)
    return np.array(keep)


def hull_vertices(points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Vertices of the convex hull of a finite point set, degeneracy-safe."""
    pts = dedupe_points(points, tol)
    if len(pts) <= 1:
        return pts
    center = pts.mean(axis=0)
    shifted = pts - center
    # affine rank via SVD; project to the span before qhull
    U, S, Vt = np.linalg.svd(shifted, full_matrices=False)
    rank = int(np.sum(S > max(tol, 1e-12 * S[0] if S.size else 0.0)))
    if rank == 0:
        return pts[:1]
    basis = Vt[:rank]
    coords = shifted @ basis.T
    if rank == 1:
        lo = int(np.argmin(coords[:, 0]))
        hi = int(np.argmax(coords[:, 0]))
        return pts[[lo, hi]]
    try:
        hull = ConvexHull(coords)
        return pts[np.array(sorted(hull.vertices))]
    except QhullError:
        # nearly-degenerate in the projected space: fall back to extremes
        lo = int(np.argmin(coords[:, 0]))
        hi = int(np.argmax(coords[:, 0]))
        return pts[sorted({lo, hi})]


def hull_diameter(points: np.ndarray) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) <= 1:
        return 0.0
    d = pts[:, None, :] - pts[None, :, :]
    return float(np.max(np.linalg.norm(d, axis=-1)))


def project_to_hull(q: np.ndarray, generators: np.ndarray):
    """Nearest point of co(generators) to q.

    Returns (point, distance, weights).  Solved as nonnegative least squares
    with a penalty row enforcing the barycentric sum; exact active-set solve,
    deterministic.
    """
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    q = np.asarray(q, dtype=float)
    if len(G) == 1:
        return G[0].copy(), float(np.linalg.norm(G[0] - q)), np.array([1.0])
    rho = 1e6 * (1.0 + float(np.max(np.abs(G))))
    B = np.vstack([G.T, rho * np.ones(len(G))])
    target = np.concatenate([q, [rho]])
    w, _ = nnls(B, target)
    s = w.sum()
    if s <= 0:
        w = np.full(len(G), 1.0 / len(G))
    else:
        w = w / s
    point = w @ G
    return point, float(np.linalg.norm(point - q)), w


def _project_simplex(w: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort algorithm)."""
    u = np.sort(w)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, len(w) + 1)
    cond = u - (css - 1.0) / ks > 0
    k = int(np.max(ks[cond]))
    tau = (css[k - 1] - 1.0) / k
    return np.maximum(w - tau, 0.0)


def minimize_over_hull(fun, grad, generators: np.ndarray, start_weights=None,
                       max_iter: int = 2000, tol: float = 1e-12):
    """Minimize a smooth convex fun(p) over co(generators).

    Projected gradient on barycentric weights with Armijo backtracking.
    Returns (p_opt, value, weights).
    """
    G = np.atleast_2d(np.asarray(generators, dtype=float))
    k = len(G)
    w = (np.full(k, 1.0 / k) if start_weights is None
         else _project_simplex(np.asarray(start_weights, dtype=float)))
    p = w @ G
    f = fun(p)
    step = 1.0
    for _ in range(max_iter):
        g = G @ grad(p)
        moved = False
        for _bt in range(40):
            w_new = _project_simplex(w - step * g)
            p_new = w_new @ G
            f_new = fun(p_new)
            if f_new <= f - 1e-10 * np.linalg.norm(p_new - p) ** 2 / max(step, 1e-30):
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        delta = np.linalg.norm(p_new - p)
        w, p, f = w_new, p_new, f_new
        step = min(step * 2.0, 1e6)
        if delta < tol * (1.0 + np.linalg.norm(p)):
            break
    return p, f, w
