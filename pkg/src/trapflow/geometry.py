"""Charts on (b-)cotangent bundles, Hamiltonian vector fields and brackets.

A chart lists position coordinates and their conjugate momenta.  Positions
may carry a b-flag: a flagged pair (tau, sigma) uses the boundary frame
sigma*dtau/tau, so it contributes dsigma^dtau/tau to the symplectic form and
Hamilton's equations read dtau/ds = tau*dp/dsigma, dsigma/ds = -tau*dp/dtau.
Ordinary pairs use the standard dxi^dx conventions.

Evaluators built here are pure functions of immutable data and are safe to
share between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr

__all__ = [
    "Chart", "SymbolModel", "GeometryError", "RescalingSingularError",
    "HamiltonianField", "RescaledField",
    "hamiltonian_field", "rescaled_field",
    "poisson_bracket", "lie_derivative", "lie_derivative2",
    "lie_derivative_expr", "symplectic_rank", "omega_gram", "tangent_basis",
]


class GeometryError(Exception):
    pass


class RescalingSingularError(GeometryError):
    """rho vanishes at the query point, the rescaled field is undefined."""


@dataclass(frozen=True)
class Chart:
    """Ordered positions, conjugate momenta, per-position b-flags, parameters."""

    positions: tuple[str, ...]
    momenta: tuple[str, ...]
    b_flags: tuple[bool, ...] = ()
    params: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.b_flags:
            object.__setattr__(self, "b_flags", (False,) * len(self.positions))
        if len(self.positions) != len(self.momenta):
            raise GeometryError("positions and momenta counts differ")
        if len(self.b_flags) != len(self.positions):
            raise GeometryError("one b-flag per position required")
        names = self.positions + self.momenta + self.params
        if len(set(names)) != len(names):
            raise GeometryError("coordinate/parameter names must be unique")

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return 2 * len(self.positions)

    @property
    def coords(self) -> tuple[str, ...]:
        return self.positions + self.momenta

    def index(self, name: str) -> int:
        return self.coords.index(name)

    def env(self, point: np.ndarray, params: Mapping[str, float]) -> dict:
        e = dict(zip(self.coords, map(float, point)))
        e.update(params)
        return e

    def pack(self, values: Mapping[str, float]) -> np.ndarray:
        return np.array([values[c] for c in self.coords], dtype=float)

    def unpack(self, point: np.ndarray) -> dict:
        return dict(zip(self.coords, map(float, point)))


@dataclass
class SymbolModel:
    """A Hamiltonian symbol with its rescaler and optional extra structure.

    p is the principal symbol (fiber-homogeneous of degree m), rho a
    homogeneous degree-1 rescaler non-vanishing near the region of interest,
    p1 the subprincipal symbol already divided by rho^(m-1), q an optional
    non-negative absorption symbol and mu the boundary decay exponent of the
    perturbation class.  Models may carry a default escape seed and defining
    functions; the built-in models attach them.
    """

    name: str
    chart: Chart
    p: Expr
    m: int
    rho: Expr
    params: dict
    p1: Optional[Expr] = None
    q: Optional[Expr] = None
    mu: float = 1.0
    escape_seed: Optional[Expr] = None
    phi_u: object = None   # Expr or FrameFunction
    phi_s: object = None
    w_u: object = None     # Expr or callable weight, optional
    w_s: object = None
    reference: dict = field(default_factory=dict)
    char_sampler: Optional[Callable] = None
    trapped_sampler: Optional[Callable] = None

    def env(self, point: np.ndarray) -> dict:
        return self.chart.env(point, self.params)

    def p_value(self, point: np.ndarray) -> float:
        return ex.evaluate(self.p, self.env(point))

    def rho_value(self, point: np.ndarray) -> float:
        return ex.evaluate(self.rho, self.env(point))


# ---------------------------------------------------------------------------
# Hamiltonian vector fields


class HamiltonianField:
    """Evaluator for H_p on a chart; `jacobian` uses exact second jets."""

    def __init__(self, chart: Chart, p: Expr, params: Mapping[str, float]):
        ex.check_bound(p, set(chart.coords) | set(params))
        self.chart = chart
        self.p = p
        self.params = dict(params)
        #: ordinary field components are homogeneous of this degree in momenta
        self.momentum_degree = None  # unknown for a bare expression

    def _env(self, z):
        return self.chart.env(z, self.params)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        ch = self.chart
        n = ch.n
        g = ex.jet1(self.p, self._env(z), ch.coords).g
        out = np.empty(2 * n)
        for i in range(n):
            if ch.b_flags[i]:
                out[i] = z[i] * g[n + i]
                out[n + i] = -z[i] * g[i]
            else:
                out[i] = g[n + i]
                out[n + i] = -g[i]
        return out

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        ch = self.chart
        n = ch.n
        j2 = ex.jet2(self.p, self._env(z), ch.coords)
        g, h = j2.g, j2.h
        jac = np.empty((2 * n, 2 * n))
        for i in range(n):
            if ch.b_flags[i]:
                jac[i] = z[i] * h[n + i]
                jac[i, i] += g[n + i]
                jac[n + i] = -z[i] * h[i]
                jac[n + i, i] -= g[i]
            else:
                jac[i] = h[n + i]
                jac[n + i] = -h[i]
        return jac

    def value_and_jacobian(self, z):
        return self(z), self.jacobian(z)


class RescaledField:
    """H_p scaled by rho^(1-m); degree-0 homogeneous in the momenta."""

    def __init__(self, base: HamiltonianField, rho: Expr, m: int, tol: float = 1e-12):
        self.base = base
        self.rho = rho
        self.m = m
        self.tol = tol
        self.chart = base.chart
        self.params = base.params
        self.momentum_degree = 0

    def _scale(self, z):
        r = ex.evaluate(self.rho, self.chart.env(z, self.params))
        if abs(r) <= self.tol:
            raise RescalingSingularError(
                f"rho = {r:.3e} at query point, rescaled field undefined")
        return r ** (1 - self.m), r

    def __call__(self, z: np.ndarray) -> np.ndarray:
        if self.m == 1:
            return self.base(z)
        s, _ = self._scale(z)
        return s * self.base(z)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        if self.m == 1:
            return self.base.jacobian(z)
        s, r = self._scale(z)
        jr = ex.jet1(self.rho, self.chart.env(z, self.params), self.chart.coords)
        grad_s = (1 - self.m) * r ** (-self.m) * np.asarray(jr.g)
        return s * self.base.jacobian(z) + np.outer(self.base(z), grad_s)

    def value_and_jacobian(self, z):
        return self(z), self.jacobian(z)


def hamiltonian_field(model: SymbolModel) -> HamiltonianField:
    f = HamiltonianField(model.chart, model.p, model.params)
    f.momentum_degree = model.m - 1
    return f


def rescaled_field(model: SymbolModel) -> RescaledField:
    return RescaledField(hamiltonian_field(model), model.rho, model.m)


# ---------------------------------------------------------------------------
# Brackets and Lie derivatives


def poisson_bracket(a: Expr, b: Expr, chart: Chart,
                    params: Mapping[str, float] | None = None) -> Callable:
    """{a, b} with the b-aware form; {x, xi_x} = 1, {tau, sigma} = tau."""
    params = dict(params or {})
    allowed = set(chart.coords) | set(params)
    ex.check_bound(a, allowed)
    ex.check_bound(b, allowed)
    n = chart.n

    def evaluator(z):
        env = chart.env(z, params)
        ga = ex.jet1(a, env, chart.coords).g
        gb = ex.jet1(b, env, chart.coords).g
        s = 0.0
        for i in range(n):
            t = ga[i] * gb[n + i] - ga[n + i] * gb[i]
            s += z[i] * t if chart.b_flags[i] else t
        return s

    return evaluator


def lie_derivative(fld, f: Expr) -> Callable:
    """H(f) for a field evaluator with chart/params: grad(f) . field."""
    chart, params = fld.chart, fld.params
    ex.check_bound(f, set(chart.coords) | set(params))

    def evaluator(z):
        g = ex.jet1(f, chart.env(z, params), chart.coords).g
        return float(np.dot(g, fld(z)))

    return evaluator


def lie_derivative2(fld, f: Expr) -> Callable:
    """Evaluator returning (H(f), H^2(f)).

    H^2(f) = F^T Hess(f) F + grad(f) . (J_F F) from second jets of f and the
    exact field Jacobian.
    """
    chart, params = fld.chart, fld.params
    ex.check_bound(f, set(chart.coords) | set(params))

    def evaluator(z):
        j2 = ex.jet2(f, chart.env(z, params), chart.coords)
        F, J = fld.value_and_jacobian(z)
        hf = float(np.dot(j2.g, F))
        h2f = float(F @ j2.h @ F + np.dot(j2.g, J @ F))
        return hf, h2f

    return evaluator


def _partial(p: Expr, name: str) -> Expr:
    return ex.diff(p, name)


def lie_derivative_expr(chart: Chart, p: Expr, f: Expr,
                        rho: Expr | None = None, m: int = 1) -> Expr:
    """The symbolic expression for the (rescaled) Lie derivative H(f).

    Used where exact jets of H(f) itself are needed (frames for the normal
    linearization); numerical work elsewhere goes through the jet route.
    """
    n = chart.n
    terms = None
    for i in range(n):
        x, xi = chart.positions[i], chart.momenta[i]
        t1 = ex._mul(_partial(p, xi), _partial(f, x))
        t2 = ex._mul(_partial(p, x), _partial(f, xi))
        t = ex._sub(t1, t2)
        if chart.b_flags[i]:
            t = ex._mul(ex.Name(x), t)
        terms = t if terms is None else ex._add(terms, t)
    if rho is not None and m != 1:
        terms = ex._div(terms, ex._pow_node(rho, ex._num(m - 1)))
    return terms


# ---------------------------------------------------------------------------
# Symplectic pairing

OMEGA_RANK_CUTOFF = 1e-9


def omega_gram(chart: Chart, point: np.ndarray, basis: Sequence[np.ndarray],
               b_components: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """Pairwise symplectic products omega(v_i, v_j).

    Vectors are in coordinate components.  For a b-pair at tau > 0 the form
    is dsigma^dtau/tau; at the boundary the tau-component of a boundary
    tangent vector vanishes and its tau*d/dtau-frame component must be
    supplied through `b_components` (defaults to zero).
    """
    vs = [np.asarray(v, dtype=float) for v in basis]
    n = chart.n
    k = len(vs)
    bcomp = []
    for idx, v in enumerate(vs):
        row = np.zeros(n)
        for i in range(n):
            if not chart.b_flags[i]:
                continue
            tau = point[i]
            if abs(tau) > 1e-12:
                row[i] = v[i] / tau
            elif b_components is not None:
                row[i] = b_components[idx][i]
            elif abs(v[i]) > 1e-12:
                raise GeometryError(
                    "tangent vector has a tau-component at the boundary; "
                    "pass its b-frame component via b_components")
        bcomp.append(row)
    gram = np.zeros((k, k))
    for ia in range(k):
        for ib in range(ia + 1, k):
            u, v = vs[ia], vs[ib]
            s = 0.0
            for i in range(n):
                if chart.b_flags[i]:
                    s += bcomp[ia][i] * v[n + i] - u[n + i] * bcomp[ib][i]
                else:
                    s += u[i] * v[n + i] - u[n + i] * v[i]
            gram[ia, ib] = s
            gram[ib, ia] = -s
    return gram


def symplectic_rank(chart: Chart, point: np.ndarray,
                    basis: Sequence[np.ndarray],
                    b_components: Sequence[np.ndarray] | None = None) -> int:
    """Rank of the symplectic form on span(basis).

    Singular values below OMEGA_RANK_CUTOFF times the largest are zero.
    """
    if len(basis) == 0:
        return 0
    gram = omega_gram(chart, point, basis, b_components)
    sv = np.linalg.svd(gram, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > OMEGA_RANK_CUTOFF * sv[0]))


def tangent_basis(constraint_gradients: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis (rows) of the nullspace of the given gradient rows."""
    a = np.atleast_2d(np.asarray(constraint_gradients, dtype=float))
    _, s, vt = np.linalg.svd(a)
    rank = int(np.sum(s > tol * (s[0] if s.size and s[0] > 0 else 1.0)))
    return vt[rank:]
