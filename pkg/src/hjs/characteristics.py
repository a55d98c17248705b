"""Propagation of singularities along the maximizer arc of sup-convolution.

The trace is intrinsic: each point y(t_i) is an independent localized
sup-convolution maximizer at the fixed base point, not a step of an ODE
integrator, so discretization error does not compound along the arc.  The
differential-inclusion defect measures the distance from the discrete
velocity to the convex hull of Hamiltonian velocities over the estimated
superdifferential.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convex import project_to_hull
from .model import HamiltonianView, LagrangianModel
from .operators import sup_convolve
from .semiconcave import (SemiconcaveFn, Superdifferential, default_singular_tol,
                          estimate_superdifferential, minimal_energy_covector)


@dataclass
class CharacteristicTrace:
    x0: np.ndarray
    times: np.ndarray            # (m+1,), t_0 = 0
    points: np.ndarray           # (m+1, n), y(0) = x0
    covectors: np.ndarray        # (m+1, n); row 0 = minimal-energy covector
    diameters: np.ndarray
    singular_flags: np.ndarray
    energies: np.ndarray
    velocities: np.ndarray
    inclusion_defects: np.ndarray
    sing_tol: float
    noncrit_dist: float
    first_regular_index: int | None

    @property
    def lipschitz(self) -> float:
        steps = np.diff(self.points, axis=0)
        dt = np.diff(self.times)
        return float(np.max(np.linalg.norm(steps, axis=-1) / dt))

    @property
    def singular_fraction(self) -> float:
        return float(np.mean(self.singular_flags))

    def csv_rows(self):
        header = (["t"] + [f"y{i+1}" for i in range(self.points.shape[1])]
                  + ["diam_superdiff", "inclusion_defect", "energy"])
        rows = [header]
        for i in range(len(self.times)):
            rows.append([self.times[i], *self.points[i], self.diameters[i],
                         self.inclusion_defects[i], self.energies[i]])
        return rows

    def summary_dict(self) -> dict:
        return {
            "noncriticality_distance": self.noncrit_dist,
            "lipschitz_estimate": self.lipschitz,
            "singular_fraction": self.singular_fraction,
            "first_regular_index": self.first_regular_index,
            "max_inclusion_defect": float(np.max(self.inclusion_defects)),
        }


def _hull_velocity_images(hview: HamiltonianView, y, sd: Superdifferential):
    """Sampled image of the superdifferential under p -> H_p(y, p)."""
    verts = np.atleast_2d(sd.hull_vertices)
    covs = [verts]
    if len(verts) > 1:
        mids = 0.5 * (verts[:, None, :] + verts[None, :, :]).reshape(-1, verts.shape[1])
        covs.append(mids)
        covs.append(verts.mean(axis=0, keepdims=True))
    P = np.unique(np.round(np.concatenate(covs), 12), axis=0)
    Y = np.broadcast_to(np.asarray(y, dtype=float), P.shape).copy()
    return np.asarray(hview.h_p(Y, P), dtype=float)


def inclusion_defect(y, velocity, u: SemiconcaveFn, hview: HamiltonianView,
                     sd: Superdifferential | None = None, seed: int = 0) -> float:
    """Distance from a velocity to co H_p(y, D+u(y)); zero means inside."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if sd is None:
        sd = estimate_superdifferential(u, y, seed=seed)
    images = _hull_velocity_images(hview, y, sd)
    _, dist, _ = project_to_hull(np.asarray(velocity, dtype=float), images)
    return dist


def propagate_singularity(u: SemiconcaveFn, model: LagrangianModel, x0,
                          t1: float, nsteps: int, seed: int = 0,
                          sing_tol: float | None = None, localized: bool = True,
                          search_radius: float | None = None,
                          N: int = 32) -> CharacteristicTrace:
    """Trace t -> argmax of psi_t from x0 and its singularity diagnostics.

    Loss of singularity before t1 is a reported condition (the first regular
    index), not an exception.
    """
    if t1 <= 0 or nsteps < 2:
        raise ValueError("need t1 > 0 and at least 2 steps")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    hview = HamiltonianView(model)
    n = model.dim
    times = np.linspace(0.0, t1, nsteps + 1)

    sd0 = estimate_superdifferential(u, x0, seed=seed)
    tol = sing_tol if sing_tol is not None else default_singular_tol(sd0)
    images0 = _hull_velocity_images(hview, x0, sd0)
    _, noncrit, _ = project_to_hull(np.zeros(n), images0)

    points = np.empty((nsteps + 1, n))
    covectors = np.empty_like(points)
    energies = np.empty(nsteps + 1)
    diameters = np.empty(nsteps + 1)
    flags = np.zeros(nsteps + 1, dtype=bool)

    points[0] = x0
    p0 = minimal_energy_covector(hview, sd0)
    covectors[0] = p0
    energies[0] = float(hview.hamiltonian(x0, p0))
    diameters[0] = sd0.diameter
    flags[0] = sd0.diameter > tol

    sds = [sd0]
    warm = None
    radius_scale = 1.0   # remembered enlargement factor over t/2 across steps
    for i in range(1, nsteps + 1):
        base = 0.5 * times[i]
        req = search_radius if search_radius is not None else radius_scale * base
        res = sup_convolve(u, model, x0, times[i], localized=localized,
                           search_radius=req, seed=seed, warm_start=warm,
                           nstarts=4 if warm is None else 1,
                           N=N, adaptive_radius=True, hview=hview)
        if localized:
            radius_scale = max(radius_scale, res.radius_used / base)
        warm = res.extremizer
        points[i] = res.extremizer
        covectors[i] = res.gradient          # -D_x A_{t_i}(x0, y(t_i))
        sd_i = estimate_superdifferential(u, points[i], seed=seed + 97 * i)
        sds.append(sd_i)
        diameters[i] = sd_i.diameter
        flags[i] = sd_i.diameter > tol
        energies[i] = float(hview.hamiltonian(points[i], covectors[i]))

    velocities = np.empty_like(points)
    dt = times[1] - times[0]
    velocities[0] = (points[1] - points[0]) / dt
    velocities[-1] = (points[-1] - points[-2]) / dt
    if nsteps >= 2:
        velocities[1:-1] = (points[2:] - points[:-2]) / (2 * dt)

    defects = np.array([
        inclusion_defect(points[i], velocities[i], u, hview, sd=sds[i])
        for i in range(nsteps + 1)
    ])

    regular = np.nonzero(~flags)[0]
    first_regular = int(regular[0]) if len(regular) else None

    return CharacteristicTrace(
        x0=x0, times=times, points=points, covectors=covectors,
        diameters=diameters, singular_flags=flags, energies=energies,
        velocities=velocities, inclusion_defects=defects, sing_tol=tol,
        noncrit_dist=float(noncrit), first_regular_index=first_regular)


@dataclass
class InitialVelocityReport:
    v0_estimate: np.ndarray
    v0_predicted: np.ndarray
    gap: float
    p0: np.ndarray


def initial_velocity_check(trace: CharacteristicTrace, hview: HamiltonianView,
                           sd: Superdifferential) -> InitialVelocityReport:
    """Right derivative of the trace at t=0 against H_p(x0, p0).

    The one-sided quotients (y(t_i) - x0)/t_i are extrapolated to t = 0 by a
    linear fit over the first few steps.
    """
    if len(trace.times) < 5:
        raise ValueError("trace needs at least 4 steps")
    k = min(4, len(trace.times) - 1)
    ts = trace.times[1:k + 1]
    quots = (trace.points[1:k + 1] - trace.x0) / ts[:, None]
    coef = np.polyfit(ts, quots, 1)      # per-component linear fit
    v0_est = coef[1]
    p0 = minimal_energy_covector(hview, sd)
    v0_pred = np.asarray(hview.h_p(trace.x0, p0), dtype=float)
    return InitialVelocityReport(
        v0_estimate=v0_est, v0_predicted=v0_pred,
        gap=float(np.linalg.norm(v0_est - v0_pred)), p0=p0)


@dataclass
class NoncriticalityReport:
    dist: float
    injective: bool | None
    min_pairwise: float | None
    threshold: float | None


def noncriticality_check(u: SemiconcaveFn, hview: HamiltonianView, x0,
                         trace: CharacteristicTrace | None = None,
                         seed: int = 0) -> NoncriticalityReport:
    """dist(0, co H_p(x0, D+u(x0))), plus trace injectivity when positive."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    sd = estimate_superdifferential(u, x0, seed=seed)
    images = _hull_velocity_images(hview, x0, sd)
    _, dist, _ = project_to_hull(np.zeros(len(x0)), images)

    injective = None
    min_pair = None
    threshold = None
    if trace is not None and dist > 0:
        pts = trace.points
        diffs = pts[:, None, :] - pts[None, :, :]
        norms = np.linalg.norm(diffs, axis=-1)
        iu = np.triu_indices(len(pts), k=1)
        min_pair = float(np.min(norms[iu]))
        step = float(trace.times[1] - trace.times[0])
        threshold = 0.05 * step * dist
        injective = min_pair >= threshold
    return NoncriticalityReport(dist=float(dist), injective=injective,
                                min_pairwise=min_pair, threshold=threshold)
