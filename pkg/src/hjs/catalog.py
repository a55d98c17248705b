"""Built-in model/function pairs used by the verification suite.

Calibrated entries shift the Lagrangian by a constant so the paired
function is an exact viscosity solution of H(x, Du) = 0; the shift changes
neither extremizers nor characteristics, only values.  Each entry also
carries a variant with L(x,0) <= 0 for the monotonicity check, whose
hypothesis the calibrated model violates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LagrangianModel
from .semiconcave import SemiconcaveFn


@dataclass
class CatalogEntry:
    name: str
    dim: int
    model: LagrangianModel            # calibrated when level == 0.0
    u: SemiconcaveFn
    level: float | None               # H(x, Du) level; None = u is no solution
    p3_model: LagrangianModel | None  # variant with L(x,0) <= 0
    anchor: np.ndarray                # a singular (or reference) point
    region: tuple                     # (lo, hi) box for sampled checks
    search_radius: float
    p4_ready: bool                    # localized maximizer stays interior


def _neg_abs_1d() -> CatalogEntry:
    model = LagrangianModel.mechanical(np.eye(1), potential=-0.5)
    p3 = LagrangianModel.mechanical(np.eye(1), potential=1.0)
    return CatalogEntry(
        name="neg-abs-1d", dim=1, model=model, u=SemiconcaveFn.neg_abs(1),
        level=0.0, p3_model=p3, anchor=np.array([0.0]),
        region=(np.array([-1.0]), np.array([1.0])), search_radius=3.0,
        p4_ready=True)


def _drift_2d() -> CatalogEntry:
    model = LagrangianModel.mechanical(np.eye(2), drift=[0.0, 1.0],
                                       potential=-0.5)
    p3 = LagrangianModel.mechanical(np.eye(2), drift=[0.0, 1.0], potential=1.5)
    u = SemiconcaveFn.min_of_planes([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]])
    return CatalogEntry(
        name="drift-2d", dim=2, model=model, u=u, level=0.0, p3_model=p3,
        anchor=np.array([0.0, 0.0]),
        region=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        search_radius=3.0, p4_ready=False)


def _mechanical_1d() -> CatalogEntry:
    model = LagrangianModel.mechanical(np.eye(1), potential="0.5*x1^2")
    return CatalogEntry(
        name="mechanical-1d", dim=1, model=model, u=SemiconcaveFn.neg_abs(1),
        level=None, p3_model=None, anchor=np.array([0.0]),
        region=(np.array([-0.4]), np.array([0.4])), search_radius=2.0,
        p4_ready=True)


def _kink_planes_2d() -> CatalogEntry:
    model = LagrangianModel.quadratic_kinetic(np.eye(2))
    u = SemiconcaveFn.min_of_planes([[0.40, 0.20, 0.0], [0.08, 0.40, 0.0]])
    return CatalogEntry(
        name="kink-planes-2d", dim=2, model=model, u=u, level=None,
        p3_model=LagrangianModel.mechanical(np.eye(2), potential=1.0),
        anchor=np.array([0.0, 0.0]),
        region=(np.array([-1.0, -1.0]), np.array([1.0, 1.0])),
        search_radius=3.0, p4_ready=True)


_BUILDERS = {
    "neg-abs-1d": _neg_abs_1d,
    "drift-2d": _drift_2d,
    "mechanical-1d": _mechanical_1d,
    "kink-planes-2d": _kink_planes_2d,
}


def catalog_names() -> list[str]:
    return sorted(_BUILDERS)


def get_entry(name: str) -> CatalogEntry:
    try:
        return _BUILDERS[name]()
    except KeyError:
        raise KeyError(
            f"unknown catalog entry {name!r}; available: {catalog_names()}")
