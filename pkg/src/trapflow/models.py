"""Built-in reference systems: Kerr-de Sitter, scattering spacetime, 3-torus.

Each builder returns a SymbolModel with the principal symbol as an
expression, the degree-1 rescaler fixed per model (xi_t, sigma, xi_z
respectively), a default escape seed and, where closed forms exist,
defining functions for the unstable/stable manifolds together with their
weight functions.  Char samplers produce quasi-random points on the
characteristic set intersected with the Euclidean momentum sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import expr as ex
from .expr import parse
from .geometry import Chart, SymbolModel

__all__ = [
    "ModelError", "NotSubextremalError", "KerrDSParams", "ScatteringParams",
    "HorizonData", "kerr_ds_model", "kerr_ds_horizons",
    "kerr_ds_trapped_radius", "kerr_ds_defining_functions",
    "scattering_model", "scattering_reference_data", "torus_model",
    "build_model", "MODEL_KINDS",
]


class ModelError(Exception):
    pass


class NotSubextremalError(ModelError):
    pass


# ---------------------------------------------------------------------------
# Kerr-de Sitter


@dataclass(frozen=True)
class KerrDSParams:
    """Mass, angular momentum and cosmological constant; lam = Lam a^2 / 3."""

    M: float = 1.0
    a: float = 0.0
    Lam: float = 0.0

    def __post_init__(self):
        if self.M <= 0:
            raise ModelError("mass must be positive")
        if self.Lam < 0:
            raise ModelError("cosmological constant must be >= 0")

    @property
    def lam(self) -> float:
        return self.Lam * self.a ** 2 / 3.0


@dataclass(frozen=True)
class HorizonData:
    roots: tuple          # all real roots of mu, ascending
    subextremal: bool
    r_event: float        # event horizon bounding the analysis domain below
    r_outer: float        # cosmological horizon, or +inf when Lam = 0
    detail: str = ""


def _mu_poly_coeffs(p: KerrDSParams):
    # mu(r) = (r^2 + a^2)(1 - Lam r^2 / 3) - 2 M r, highest degree first
    if p.Lam > 0:
        return [-p.Lam / 3.0, 0.0, 1.0 - p.Lam * p.a ** 2 / 3.0, -2.0 * p.M, p.a ** 2]
    return [1.0, -2.0 * p.M, p.a ** 2]


def _mu_derivs(r, p: KerrDSParams):
    """mu and its first four r-derivatives at r."""
    L3 = p.Lam / 3.0
    mu = (r * r + p.a ** 2) * (1.0 - L3 * r * r) - 2.0 * p.M * r
    c2 = 1.0 - L3 * p.a ** 2
    # mu = -L3 r^4 + c2 r^2 - 2 M r + a^2
    d1 = -4.0 * L3 * r ** 3 + 2.0 * c2 * r - 2.0 * p.M
    d2 = -12.0 * L3 * r ** 2 + 2.0 * c2
    d3 = -24.0 * L3 * r
    d4 = -24.0 * L3
    return mu, d1, d2, d3, d4


def kerr_ds_horizons(params: KerrDSParams) -> HorizonData:
    """All real roots of mu with the subextremality sign verdict.

    Roots come from the companion-matrix eigenvalues of the quartic (the
    quadratic for Lam = 0).  Subextremality requires four distinct real
    roots with mu' > 0 at the event horizon and mu' < 0 at the cosmological
    horizon; for Lam = 0 there are two roots, the larger being the event
    horizon and the domain unbounded above.
    """
    coeffs = _mu_poly_coeffs(params)
    roots = np.roots(coeffs)
    scale = max(1.0, abs(params.M), abs(params.a))
    real = np.sort(roots[np.abs(roots.imag) < 1e-9 * scale].real)
    want = 4 if params.Lam > 0 else 2
    if len(real) != want:
        raise NotSubextremalError(
            f"expected {want} real horizon roots, found {len(real)} "
            f"(complex or nearly complex roots)")
    if np.min(np.diff(real)) < 1e-9 * scale:
        raise NotSubextremalError("repeated horizon roots within 1e-9")
    if params.Lam > 0:
        r_event, r_outer = real[-2], real[-1]
        d_event = _mu_derivs(r_event, params)[1]
        d_outer = _mu_derivs(r_outer, params)[1]
        if not (d_event > 0 and d_outer < 0):
            raise NotSubextremalError(
                f"horizon sign conditions failed: mu'({r_event:.4g}) = {d_event:.4g}, "
                f"mu'({r_outer:.4g}) = {d_outer:.4g}")
        detail = "four real roots; domain between the two largest"
    else:
        r_event, r_outer = real[-1], math.inf
        d_event = _mu_derivs(r_event, params)[1]
        if not d_event > 0:
            raise NotSubextremalError(f"mu'({r_event:.4g}) = {d_event:.4g} <= 0")
        detail = "Lam = 0: domain unbounded above"
    return HorizonData(tuple(map(float, real)), True, float(r_event),
                       float(r_outer), detail)


class _RadialPotential:
    """F(r) = ((r^2+a^2) xi_t + a xi_phi)^2 / mu and its r-derivatives."""

    _BINOM = [[1], [1, 1], [1, 2, 1], [1, 3, 3, 1], [1, 4, 6, 4, 1]]

    def __init__(self, params: KerrDSParams, xi_t: float, xi_phi: float):
        self.p = params
        self.xi_t = xi_t
        self.xi_phi = xi_phi

    def _w(self, r):
        p = self.p
        w = (r * r + p.a ** 2) * self.xi_t + p.a * self.xi_phi
        return w, 2.0 * r * self.xi_t, 2.0 * self.xi_t

    def numerator(self, r):
        """N' mu - N mu', the polynomial numerator of F' mu^2."""
        w, w1, _ = self._w(r)
        mu, m1 = _mu_derivs(r, self.p)[:2]
        return 2.0 * w * w1 * mu - w * w * m1

    def derivs(self, r, order=2):
        """[F, F', ..., F^(order)] at r (order <= 4)."""
        w, w1, w2 = self._w(r)
        n = [w * w, 2 * w * w1, 2 * w1 * w1 + 2 * w * w2, 6 * w1 * w2,
             6 * w2 * w2]
        mus = _mu_derivs(r, self.p)
        mu = mus[0]
        if mu == 0:
            raise ModelError("radial potential evaluated on a horizon")
        f = [n[0] / mu]
        for k in range(1, order + 1):
            # (F mu)^(k) = N^(k)  =>  F^(k) = (N^(k) - sum_{j<k} C(k,j) F^(j) mu^(k-j)) / mu
            acc = n[k]
            for j in range(k):
                acc -= self._BINOM[k][j] * f[j] * mus[k - j]
            f.append(acc / mu)
        return f

    def value(self, r):
        return self.derivs(r, 0)[0]

    def d1(self, r):
        return self.derivs(r, 1)[1]


def kerr_ds_trapped_radius(xi_t: float, xi_phi: float,
                           params: KerrDSParams, grid_step: float = 1e-3):
    """The critical radius with F'(r) = 0 inside the domain, or None.

    Uniqueness is asserted by counting sign changes of the polynomial
    numerator of F' on a relative-step `grid_step` grid; the root is then
    polished by safeguarded Newton-bisection to |F'| <= 1e-12 at unit
    covector scale.  No sign change means the covector is outside the
    trapping regime and None is returned.
    """
    if xi_t == 0.0 and xi_phi == 0.0:
        raise ModelError("trapped radius undefined for the zero covector")
    hz = kerr_ds_horizons(params)
    pot = _RadialPotential(params, xi_t, xi_phi)
    g = pot.numerator

    lo = hz.r_event * (1 + 1e-9) + 1e-12
    if math.isfinite(hz.r_outer):
        hi = hz.r_outer * (1 - 1e-9)
    else:
        hi = max(20.0 * params.M, 3.0 * hz.r_event)
        while g(hi) <= 0 and hi < 1e6 * params.M:
            hi *= 2.0
    m = max(int(1.0 / grid_step), 8)
    rs = lo + (hi - lo) * np.arange(m + 1) / m
    vals = np.array([g(r) for r in rs])
    sgn = np.sign(vals)
    changes = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    if len(changes) == 0:
        return None
    if len(changes) > 1:
        raise ModelError(f"multiple critical radii ({len(changes)} sign changes)")
    k = int(changes[0])
    a, b = rs[k], rs[k + 1]
    ga = vals[k]
    r = 0.5 * (a + b)
    for _ in range(200):
        fr = pot.derivs(r, 2)
        step = -fr[1] / fr[2] if fr[2] != 0 else 0.0
        cand = r + step
        if not (a < cand < b) or step == 0.0:
            cand = 0.5 * (a + b)
        gc = g(cand)
        if gc == 0.0:
            r = cand
            break
        if ga * gc < 0:
            b = cand
        else:
            a, ga = cand, gc
        r = cand
        if b - a < 4e-16 * max(1.0, abs(r)):
            break
    if abs(pot.d1(r)) > 1e-12 * max(1.0, xi_t * xi_t + xi_phi * xi_phi):
        raise ModelError("trapped-radius polish did not reach |F'| <= 1e-12")
    return float(r)


_KERR_P_SRC = (
    "( ((r^2 + a^2)*(1 - Lam*r^2/3) - 2*M*r) * xi_r^2"
    "  + (1 + lam*cos(theta)^2) * xi_theta^2"
    "  + (1 + lam)^2 / ((1 + lam*cos(theta)^2) * sin(theta)^2)"
    "      * (a*sin(theta)^2*xi_t + xi_phi)^2"
    "  - (1 + lam)^2 / ((r^2 + a^2)*(1 - Lam*r^2/3) - 2*M*r)"
    "      * ((r^2 + a^2)*xi_t + a*xi_phi)^2"
    ") / (r^2 + a^2*cos(theta)^2)"
)


def kerr_ds_model(params: KerrDSParams | None = None, mu_decay: float = 1.0,
                  **kw) -> SymbolModel:
    """Kerr-de Sitter wave symbol in Boyer-Lindquist coordinates.

    Chart (t, r, theta, phi; xi_t, xi_r, xi_theta, xi_phi), degree 2,
    rescaler xi_t, escape seed r.  The analysis lives in the block between
    the event horizon and the cosmological horizon (unbounded for Lam = 0);
    construction fails for non-subextremal parameters.
    """
    params = params or KerrDSParams(**kw)
    hz = kerr_ds_horizons(params)
    chart = Chart(positions=("t", "r", "theta", "phi"),
                  momenta=("xi_t", "xi_r", "xi_theta", "xi_phi"),
                  params=("M", "a", "Lam", "lam"))
    model = SymbolModel(
        name="kerr_ds", chart=chart, p=parse(_KERR_P_SRC), m=2,
        rho=parse("xi_t"),
        params={"M": params.M, "a": params.a, "Lam": params.Lam,
                "lam": params.lam},
        mu=mu_decay, escape_seed=parse("r"))
    model.reference = {
        "horizons": list(hz.roots),
        "trapped_radius_a0": 3.0 * params.M if params.a == 0 else None,
    }
    model.kerr_params = params
    model.horizons = hz
    phi_u, phi_s, w_u, w_s = kerr_ds_defining_functions(params)
    model.phi_u, model.phi_s, model.w_u, model.w_s = phi_u, phi_s, w_u, w_s
    model.char_sampler = lambda rng, n: _kerr_char_sampler(model, rng, n)
    model.trapped_sampler = lambda rng, n: _kerr_trapped_sampler(model, rng, n)
    return model


# -- defining functions -----------------------------------------------------

#: relative half-width of the Taylor window around r = r_xi where the raw
#: sgn*sqrt form of the defining functions cancels catastrophically
KERR_TAYLOR_WINDOW = 1e-4


class KerrDefiningFunction:
    """phi_{u/s} = xi_r -/+ (1+lam) sgn(r - r_xi) sqrt((F(r) - F(r_xi))/mu).

    The (1+lam) factor makes the turning-point identity
    mu xi_r^2 = (1+lam)^2 (F - F(r_xi)) exact on Char(p), so
    Htilde(phi) = -/+ w phi holds pointwise with the closed-form KerrWeight.
    Within the Taylor window of r_xi the sqrt goes through a
    quartic-corrected series of F (error ~ 1e-10), keeping the evaluator
    smooth across the kink of the raw formula.
    """

    def __init__(self, params: KerrDSParams, branch: str):
        if branch not in ("u", "s"):
            raise ValueError("branch must be 'u' or 's'")
        self.params = params
        self.branch = branch
        self.sign = -1.0 if branch == "u" else +1.0

    # Q(r; xi) = (1+lam) sgn(r - r_xi) sqrt((F(r) - F(r_xi))/mu)
    def _q(self, r, xi_t, xi_phi):
        p = self.params
        c = 1.0 + p.lam
        r_xi = kerr_ds_trapped_radius(xi_t, xi_phi, p)
        if r_xi is None:
            raise ModelError("no trapped radius for this covector")
        pot = _RadialPotential(p, xi_t, xi_phi)
        mu = _mu_derivs(r, p)[0]
        if mu <= 0:
            raise ModelError("defining function queried beyond a horizon")
        dr = r - r_xi
        if abs(dr) >= KERR_TAYLOR_WINDOW * max(1.0, abs(r_xi)):
            df = pot.value(r) - pot.value(r_xi)
            if df < 0:
                df = 0.0
            return c * math.copysign(math.sqrt(df / mu), dr)
        f = pot.derivs(r_xi, 4)
        f2, f3, f4 = f[2], f[3], f[4]
        rho1 = f3 / (3.0 * f2)
        rho2 = f4 / (12.0 * f2)
        # sgn*sqrt(dF) = dr sqrt(f2/2) (1 + rho1 dr / 2 + (rho2/2 - rho1^2/8) dr^2)
        series = 1.0 + 0.5 * rho1 * dr + (0.5 * rho2 - rho1 * rho1 / 8.0) * dr * dr
        return c * dr * math.sqrt(0.5 * f2 / mu) * series

    def value(self, z) -> float:
        r, xi_t, xi_r, xi_phi = z[1], z[4], z[5], z[7]
        return xi_r + self.sign * self._q(r, xi_t, xi_phi)

    __call__ = value

    def gradient(self, z) -> np.ndarray:
        """Gradient in chart coordinate order.

        The sqrt factor depends on (r, xi_t, xi_phi) only; its partials are
        5-point central differences of the series-smoothed value, accurate
        to ~1e-9 on the near-photon-region samples.
        """
        g = np.zeros(8)
        g[5] = 1.0
        h = 1e-3
        for k in (1, 4, 7):  # r, xi_t, xi_phi
            def q_at(delta, k=k):
                zz = np.array(z, dtype=float)
                zz[k] += delta
                return self._q(zz[1], zz[4], zz[7])
            g[k] += self.sign * (q_at(-2 * h) - 8 * q_at(-h)
                                 + 8 * q_at(h) - q_at(2 * h)) / (12 * h)
        return g


class KerrWeight:
    """Closed-form weight w = (c^2 F'/Q +/- mu' xi_r) / (Sigma^2 xi_t).

    Paired with KerrDefiningFunction: Htilde(phi_u) = -w_u phi_u and
    Htilde(phi_s) = +w_s phi_s hold exactly on Char(p).  At r = r_xi the
    ratio F'/Q has the smooth limit sqrt(2 mu F'')/c.
    """

    def __init__(self, params: KerrDSParams, branch: str):
        self.params = params
        self.branch = branch
        self.sign = +1.0 if branch == "u" else -1.0

    def value(self, z) -> float:
        p = self.params
        c = 1.0 + p.lam
        r, theta, xi_t, xi_r, xi_phi = z[1], z[2], z[4], z[5], z[7]
        r_xi = kerr_ds_trapped_radius(xi_t, xi_phi, p)
        if r_xi is None:
            raise ModelError("no trapped radius for this covector")
        pot = _RadialPotential(p, xi_t, xi_phi)
        mu, m1 = _mu_derivs(r, p)[:2]
        dr = r - r_xi
        if abs(dr) >= KERR_TAYLOR_WINDOW * max(1.0, abs(r_xi)):
            f1 = pot.d1(r)
            df = max(pot.value(r) - pot.value(r_xi), 0.0)
            q = c * math.copysign(math.sqrt(df / mu), dr)
            core = c * c * f1 / q
        else:
            f = pot.derivs(r_xi, 4)
            f2, f3, f4 = f[2], f[3], f[4]
            rho1 = f3 / (3.0 * f2)
            sig1 = f3 / (2.0 * f2)
            sig2 = f4 / (6.0 * f2)
            c2s = 0.5 * f4 / (12.0 * f2) - rho1 * rho1 / 8.0
            num = 1.0 + sig1 * dr + sig2 * dr * dr
            den = 1.0 + 0.5 * rho1 * dr + c2s * dr * dr
            core = c * math.sqrt(2.0 * f2 * mu) * num / den
        sigma2 = r * r + p.a ** 2 * math.cos(theta) ** 2
        return (core + self.sign * m1 * xi_r) / (sigma2 * xi_t)

    __call__ = value


def kerr_ds_defining_functions(params: KerrDSParams):
    """(phi_u, phi_s, w_u, w_s) evaluators for the photon-region manifolds."""
    return (KerrDefiningFunction(params, "u"), KerrDefiningFunction(params, "s"),
            KerrWeight(params, "u"), KerrWeight(params, "s"))


# -- samplers ---------------------------------------------------------------


def _solve_quadratic_for(model, z, index, prefer_positive=True, near=None):
    """Solve p(z) = 0 for coordinate `index`; p is quadratic in every momentum."""
    def pval(v):
        zz = np.array(z, dtype=float)
        zz[index] = v
        return model.p_value(zz)
    p0, pp, pm = pval(0.0), pval(1.0), pval(-1.0)
    a2 = 0.5 * (pp + pm) - p0
    a1 = 0.5 * (pp - pm)
    a0 = p0
    if a2 == 0:
        if a1 == 0:
            return None
        roots = [-a0 / a1]
    else:
        disc = a1 * a1 - 4 * a2 * a0
        if disc < 0:
            return None
        sq = math.sqrt(disc)
        roots = [(-a1 + sq) / (2 * a2), (-a1 - sq) / (2 * a2)]
    if near is not None:
        return min(roots, key=lambda v: abs(v - near))
    if prefer_positive:
        pos = [v for v in roots if v > 1e-9]
        if pos:
            return min(pos)
    return roots[0]


def _kerr_char_sampler(model, rng, n):
    """Char(p) points with |xi| = 1 and xi_t > 0 in the exterior block."""
    hz = model.horizons
    r_hi = hz.r_outer if math.isfinite(hz.r_outer) else 6.0 * hz.r_event
    out = []
    while len(out) < n:
        z = np.zeros(8)
        z[1] = rng.uniform(hz.r_event * 1.05, r_hi * 0.95)
        z[2] = rng.uniform(0.3, math.pi - 0.3)
        z[3] = rng.uniform(0.0, 2 * math.pi)
        z[5], z[6], z[7] = rng.normal(size=3)
        xi_t = _solve_quadratic_for(model, z, 4, prefer_positive=True)
        if xi_t is None or xi_t <= 0:
            continue
        z[4] = xi_t
        z[4:] /= np.linalg.norm(z[4:])
        if z[4] < 1e-3:
            continue
        out.append(z)
    return np.array(out)


def _kerr_trapped_sampler(model, rng, n):
    """Exact photon-region samples: r = r_xi, xi_r = 0, on Char, xi_t = 1."""
    p = model.kerr_params
    out = []
    tries = 0
    while len(out) < n and tries < 200 * n:
        tries += 1
        xi_t = 1.0
        xi_phi = rng.uniform(-3.0, 3.0) if p.a == 0 else rng.uniform(-0.5, 0.5)
        try:
            r_xi = kerr_ds_trapped_radius(xi_t, xi_phi, p)
        except ModelError:
            continue
        if r_xi is None:
            continue
        z = np.zeros(8)
        z[1] = r_xi
        z[2] = rng.uniform(0.4, math.pi - 0.4)
        z[3] = rng.uniform(0.0, 2 * math.pi)
        z[4] = xi_t
        z[7] = xi_phi
        xi_theta = _solve_quadratic_for(model, z, 6, prefer_positive=False)
        if xi_theta is None:
            continue
        z[6] = abs(xi_theta) * (1.0 if rng.random() < 0.5 else -1.0)
        if abs(model.p_value(z)) > 1e-9 * float(np.dot(z[4:], z[4:])):
            continue
        out.append(z)
    if len(out) < n:
        raise ModelError("trapped sampler failed to produce enough samples")
    return np.array(out)


# ---------------------------------------------------------------------------
# Scattering spacetime


@dataclass(frozen=True)
class ScatteringParams:
    cross_section: str = "round-sphere"   # "round-sphere" | "flat-torus" | "custom"
    h: str | None = None                  # expression for a custom section
    mu_decay: float = 1.0


_SCATTERING_P_TEMPLATE = (
    "0.5*( cos(2*theta)*(sigma^2 - eta^2) + 2*sin(2*theta)*sigma*eta + ({h}) )"
)

_H_SECTIONS = {
    "round-sphere": "xi_theta_s^2 + xi_phi_s^2 / sin(theta_s)^2",
    "flat-torus": "xi_y1^2 + xi_y2^2",
}

_SECTION_COORDS = {
    "round-sphere": (("theta_s", "phi_s"), ("xi_theta_s", "xi_phi_s")),
    "flat-torus": (("y1", "y2"), ("xi_y1", "xi_y2")),
}


def scattering_model(params: ScatteringParams | None = None, **kw) -> SymbolModel:
    """Boundary symbol of the compactified scattering spacetime.

    b-chart (tau[b], theta, <section>; sigma, eta, <section momenta>) with
    p = (cos 2theta (sigma^2 - eta^2) + 2 sin 2theta sigma eta + h)/2,
    degree 2, rescaler sigma, escape seed theta.  The factor 1/2 makes the
    Hamilton equations match the reference geodesic system term by term.
    """
    params = params or ScatteringParams(**kw)
    kind = params.cross_section
    if kind == "custom":
        if not params.h:
            raise ModelError("custom cross-section requires an h expression")
        h_src = params.h
        pos, mom = _SECTION_COORDS["flat-torus"]
    elif kind in _H_SECTIONS:
        h_src = _H_SECTIONS[kind]
        pos, mom = _SECTION_COORDS[kind]
    else:
        raise ModelError(f"unknown cross-section {kind!r}")
    chart = Chart(positions=("tau", "theta") + pos,
                  momenta=("sigma", "eta") + mom,
                  b_flags=(True, False, False, False))
    p = parse(_SCATTERING_P_TEMPLATE.format(h=h_src))
    h_expr = parse(h_src)
    ex.check_bound(h_expr, set(chart.coords))
    model = SymbolModel(
        name="scattering", chart=chart, p=p, m=2, rho=parse("sigma"),
        params={}, mu=params.mu_decay, escape_seed=parse("theta"))
    model.cross_section = kind
    model.h_expr = h_expr
    _check_h_positive(model)
    model.reference = scattering_reference_data(params.mu_decay)
    model.char_sampler = lambda rng, n: _scattering_char_sampler(model, rng, n)
    model.trapped_sampler = lambda rng, n: _scattering_trapped_sampler(model, rng, n)
    return model


def _section_points(model, rng, n):
    pts = []
    for _ in range(n):
        z = np.zeros(8)
        if model.cross_section == "round-sphere":
            z[2] = rng.uniform(0.4, math.pi - 0.4)   # pole neighborhoods excluded
        else:
            z[2] = rng.uniform(0.0, 2 * math.pi)
        z[3] = rng.uniform(0.0, 2 * math.pi)
        z[6], z[7] = rng.normal(size=2)
        if abs(z[6]) + abs(z[7]) < 1e-3:
            z[6] = 1.0
        pts.append(z)
    return pts


def _check_h_positive(model):
    rng = np.random.default_rng(0)
    for z in _section_points(model, rng, 100):
        v = ex.evaluate(model.h_expr, model.env(z))
        if v <= 0:
            raise ModelError(f"cross-section form not positive definite (h = {v:.3g})")


def scattering_reference_data(mu_decay: float = 1.0) -> dict:
    """Reference record: spectra, transversal rate and decay threshold.

    Trapping eigenvalues +/- sqrt(2); light-cone radial spectrum
    sgn(sin 2theta) {2, 1}; tau-transversal rate f = 1 at the trapped set.
    The dual-bundle covectors are the eigenfunction combinations of
    (sin 2theta, eta/sigma) with coefficient 2 +/- sqrt(2) on the second
    slot (the eigenfunction property of these coefficients is what the
    regression suite checks against the displayed linear system).
    """
    s2 = math.sqrt(2.0)
    return {
        "gamma_eigenvalues": (s2, -s2),
        "radial_spectrum_magnitudes": (2.0, 1.0),
        "f_at_gamma": 1.0,
        "estar_u_coeffs": (1.0, 2.0 + s2),
        "estar_s_coeffs": (1.0, 2.0 - s2),
        "l_max": min(mu_decay, 1.0 / s2),
    }


def _scattering_char_sampler(model, rng, n):
    """Char(p) points at tau = 0 with |momenta| = 1 and sigma > 0."""
    out = []
    while len(out) < n:
        z = _section_points(model, rng, 1)[0]
        z[1] = rng.uniform(0.0, math.pi)  # theta
        z[5] = rng.normal()               # eta
        sigma = _solve_quadratic_for(model, z, 4, prefer_positive=True)
        if sigma is None or sigma <= 0:
            continue
        z[4] = sigma
        z[4:] /= np.linalg.norm(z[4:])
        if z[4] < 1e-3:
            continue
        out.append(z)
    return np.array(out)


def _scattering_trapped_sampler(model, rng, n):
    """Exact trapped samples: theta = pi/2, eta = 0, sigma = sqrt(h)."""
    out = []
    while len(out) < n:
        z = _section_points(model, rng, 1)[0]
        z[1] = math.pi / 2
        z[5] = 0.0
        h = ex.evaluate(model.h_expr, model.env(z))
        if h <= 1e-6:
            continue
        z[4] = math.sqrt(h)
        z[4:] /= np.linalg.norm(z[4:])
        out.append(z)
    return np.array(out)


# ---------------------------------------------------------------------------
# 3-torus shear model


def torus_model() -> SymbolModel:
    """p = xi_y + sin(x) xi_x on the 3-torus.

    Degree 1 (rescaled and raw fields coincide), rescaler xi_z, escape seed
    x on the patch |x| < pi/2, defining functions phi_u = xi_x/|xi_z| and
    phi_s = x.
    """
    chart = Chart(positions=("x", "y", "z"),
                  momenta=("xi_x", "xi_y", "xi_z"))
    model = SymbolModel(
        name="torus", chart=chart, p=parse("xi_y + sin(x)*xi_x"), m=1,
        rho=parse("xi_z"), params={}, mu=1.0,
        escape_seed=parse("x"),
        phi_u=parse("xi_x/abs(xi_z)"), phi_s=parse("x"))
    model.reference = {
        "gamma_eigenvalues": (1.0, -1.0),
        "g_weight": 0.0,
    }
    model.char_sampler = lambda rng, n: _torus_char_sampler(model, rng, n)
    model.trapped_sampler = lambda rng, n: _torus_trapped_sampler(model, rng, n)
    return model


def _torus_char_sampler(model, rng, n, patch=True):
    out = []
    while len(out) < n:
        z = np.zeros(6)
        if patch:
            z[0] = rng.uniform(-math.pi / 2 + 0.01, math.pi / 2 - 0.01)
        else:
            z[0] = rng.uniform(-math.pi, math.pi)
        z[1] = rng.uniform(0.0, 2 * math.pi)
        z[2] = rng.uniform(0.0, 2 * math.pi)
        z[3], z[5] = rng.normal(size=2)
        z[4] = -math.sin(z[0]) * z[3]
        nrm = np.linalg.norm(z[3:])
        if nrm < 1e-6:
            continue
        z[3:] /= nrm
        if abs(z[5]) < 0.05:
            continue
        out.append(z)
    return np.array(out)


def _torus_trapped_sampler(model, rng, n):
    out = []
    for _ in range(n):
        z = np.zeros(6)
        z[1] = rng.uniform(0.0, 2 * math.pi)
        z[2] = rng.uniform(0.0, 2 * math.pi)
        z[5] = 1.0 if rng.random() < 0.5 else -1.0
        out.append(z)
    return np.array(out)


# ---------------------------------------------------------------------------
# registry

MODEL_KINDS = ("kerr_ds", "scattering", "torus")


def build_model(kind: str, options: dict | None = None) -> SymbolModel:
    """Construct a built-in model from a config-style options dict."""
    options = dict(options or {})
    if kind == "kerr_ds":
        mu_decay = options.pop("mu_decay", 1.0)
        return kerr_ds_model(KerrDSParams(**options), mu_decay=mu_decay)
    if kind == "scattering":
        return scattering_model(ScatteringParams(**options))
    if kind == "torus":
        if options:
            raise ModelError("torus model takes no parameters")
        return torus_model()
    raise ModelError(f"unknown model kind {kind!r}")
