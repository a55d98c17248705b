"""Restricted arithmetic expression grammar for scenario-defined functions.

Scenario files may declare Lagrangians, potentials and sample functions as
small formulas over the coordinates ``x1..xn`` and velocities ``v1..vn``
(plus a handful of named scalars such as ``r`` or ``R`` where a caller asks
for them).  The grammar is deliberately tiny: +, -, *, /, ^, sin, cos, exp,
abs, min, max and numeric literals.  Parsing happens once at load time;
evaluation is a numpy-vectorized lambdified callable, with symbolic
derivatives available for free.
"""

from __future__ import annotations

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    convert_xor,
    parse_expr,
    standard_transformations,
)

_ALLOWED_FUNCTIONS = {
    "sin": sp.sin,
    "cos": sp.cos,
    "exp": sp.exp,
    "abs": sp.Abs,
    "Abs": sp.Abs,
    "min": sp.Min,
    "max": sp.Max,
    "Min": sp.Min,
    "Max": sp.Max,
}

_TRANSFORMS = standard_transformations + (convert_xor,)


class ExprError(ValueError):
    """Raised when a scenario formula falls outside the allowed grammar."""


def parse_formula(text: str, variables: tuple[str, ...]) -> sp.Expr:
    """Parse ``text`` over exactly the named ``variables``.

    Any free symbol or function outside the whitelist is a hard error so a
    typo in a scenario file cannot silently evaluate to something else.
    """
    local = dict(_ALLOWED_FUNCTIONS)
    symbols = {name: sp.Symbol(name, real=True) for name in variables}
    local.update(symbols)
    try:
        expr = parse_expr(text, local_dict=local, transformations=_TRANSFORMS,
                          evaluate=True)
    except Exception as exc:  # sympy raises a zoo of error types
        raise ExprError(f"cannot parse formula {text!r}: {exc}") from exc
    extra = expr.free_symbols - set(symbols.values())
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ExprError(f"formula {text!r} uses unknown symbols: {names}")
    bad = {
        type(f).__name__
        for f in expr.atoms(sp.Function)
        if not isinstance(f, (sp.sin, sp.cos, sp.exp, sp.Abs, sp.Min, sp.Max))
    }
    # Min/Max/Abs are not sp.Function subclasses in all sympy versions; the
    # whitelist check above plus free-symbol check covers the parse surface,
    # but guard against exotic nodes anyway.
    if bad:
        raise ExprError(f"formula {text!r} uses unsupported functions: {sorted(bad)}")
    return expr


def point_variables(prefix: str, dim: int) -> tuple[str, ...]:
    """Names ``x1..xn`` (or ``v1..vn``) plus the bare alias in 1D."""
    names = tuple(f"{prefix}{i + 1}" for i in range(dim))
    if dim == 1:
        names = names + (prefix,)
    return names


def _substitute_alias(expr: sp.Expr, prefix: str, dim: int) -> sp.Expr:
    if dim == 1:
        alias = sp.Symbol(prefix, real=True)
        expr = expr.subs(alias, sp.Symbol(f"{prefix}1", real=True))
    return expr


class ScalarField:
    """A formula over x (and optionally v), lambdified with derivatives."""

    def __init__(self, text: str, dim: int, with_velocity: bool = False):
        self.text = text
        self.dim = dim
        self.with_velocity = with_velocity
        names = point_variables("x", dim)
        if with_velocity:
            names = names + point_variables("v", dim)
        expr = parse_formula(text, names)
        expr = _substitute_alias(expr, "x", dim)
        if with_velocity:
            expr = _substitute_alias(expr, "v", dim)
        self.expr = expr
        self._xsyms = [sp.Symbol(f"x{i + 1}", real=True) for i in range(dim)]
        self._vsyms = [sp.Symbol(f"v{i + 1}", real=True) for i in range(dim)]
        args = self._xsyms + (self._vsyms if with_velocity else [])
        self._fn = sp.lambdify(args, expr, modules="numpy")
        self._grad_x = [sp.lambdify(args, sp.diff(expr, s), modules="numpy")
                        for s in self._xsyms]
        if with_velocity:
            self._grad_v = [sp.lambdify(args, sp.diff(expr, s), modules="numpy")
                            for s in self._vsyms]
            self._hess_v = [
                [sp.lambdify(args, sp.diff(expr, si, sj), modules="numpy")
                 for sj in self._vsyms]
                for si in self._vsyms
            ]

    def _args(self, x, v=None):
        x = np.asarray(x, dtype=float)
        parts = [x[..., i] for i in range(self.dim)]
        if self.with_velocity:
            v = np.asarray(v, dtype=float)
            parts += [v[..., i] for i in range(self.dim)]
        return parts

    def __call__(self, x, v=None):
        out = self._fn(*self._args(x, v))
        return np.asarray(out, dtype=float) + np.zeros(np.shape(np.asarray(x)[..., 0]))

    def gradient_x(self, x, v=None):
        parts = self._args(x, v)
        base = np.zeros(np.shape(parts[0]))
        cols = [np.asarray(g(*parts), dtype=float) + base for g in self._grad_x]
        return np.stack(cols, axis=-1)

    def gradient_v(self, x, v):
        parts = self._args(x, v)
        base = np.zeros(np.shape(parts[0]))
        cols = [np.asarray(g(*parts), dtype=float) + base for g in self._grad_v]
        return np.stack(cols, axis=-1)

    def hessian_v(self, x, v):
        parts = self._args(x, v)
        base = np.zeros(np.shape(parts[0]))
        rows = [
            [np.asarray(h(*parts), dtype=float) + base for h in row]
            for row in self._hess_v
        ]
        return np.stack([np.stack(r, axis=-1) for r in rows], axis=-2)


class ScalarFunction1D:
    """A formula over a single named scalar, e.g. theta(r) or c1(R)."""

    def __init__(self, text: str, var: str):
        self.text = text
        expr = parse_formula(text, (var,))
        self._fn = sp.lambdify(sp.Symbol(var, real=True), expr, modules="numpy")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.asarray(self._fn(r), dtype=float) + np.zeros(r.shape)
