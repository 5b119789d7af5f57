"""Higher-dimensional Schwarzschild exteriors and geodesic probes.

The harmonic (wave-gauge) chart is constructed numerically: Cartesian
coordinates x^i = r(rbar) xhat^i are harmonic iff the radial profile solves

    f r'' + (f' + (n-1) f / rbar) r' - (n-1) r / rbar^2 = 0,

integrated inward from the asymptotically flat end.  The deviation
m = rbar - r is solved directly so all quantities stay accurate at the
r^{-(n-2)} decay scale.  A leading-order algebraic transform is exposed as
a cheap fallback.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

HORIZON_GUARD = 1.01


class HorizonError(ValueError):
    """Point below the guarded exterior radius."""


class TruncationOrderError(ValueError):
    """Requested expansion order beyond what is implemented."""


class StepFailureError(RuntimeError):
    """Adaptive geodesic integration failed to converge."""


@dataclass(frozen=True)
class SchwarzschildParams:
    """Mass parameter and spatial dimension of the exterior metric.

    f(rbar) = 1 - C_S / rbar^{n-2}; positive mass C_S >= 0; n >= 5 (n = 4
    harmonic gauge develops logarithms and is excluded).
    """

    n: int
    cs: float

    def __post_init__(self):
        if self.n < 5:
            raise ValueError("Schwarzschild machinery requires n >= 5")
        if self.cs < 0:
            raise ValueError("mass parameter C_S must be nonnegative")

    @property
    def horizon_radius(self) -> float:
        return self.cs ** (1.0 / (self.n - 2)) if self.cs > 0 else 0.0

    @property
    def min_radius(self) -> float:
        return HORIZON_GUARD * self.horizon_radius

    def f(self, rbar):
        return 1.0 - self.cs / rbar ** (self.n - 2)

    def fp(self, rbar):
        return (self.n - 2) * self.cs / rbar ** (self.n - 1)

    def check_exterior(self, rbar) -> None:
        if np.any(rbar < self.min_radius) or np.any(rbar <= 0):
            raise HorizonError(
                f"radius {np.min(rbar):.6g} inside the guarded exterior "
                f"r > {self.min_radius:.6g}"
            )


@dataclass
class MetricAtPoint:
    """Metric data in a named chart: components, inverse, derivatives."""

    chart: str
    x: np.ndarray
    g: np.ndarray
    ginv: np.ndarray
    dg: np.ndarray  # dg[mu, a, b] = d_mu g_{ab}

    def __post_init__(self):
        if not np.allclose(self.g, self.g.T, atol=1e-13):
            raise ValueError("metric components must be symmetric")
        if not np.allclose(self.g @ self.ginv, np.eye(len(self.g)), atol=1e-12):
            raise ValueError("g * g^{-1} deviates from identity beyond 1e-12")

    @property
    def christoffels(self) -> np.ndarray:
        """Gamma^c_{ab} = 1/2 g^{cd} (d_a g_{db} + d_b g_{da} - d_d g_{ab})."""
        dg = self.dg
        # br[d, a, b] = d_a g_{db} + d_b g_{da} - d_d g_{ab}
        br = (np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg)
        return 0.5 * np.einsum("cd,dab->cab", self.ginv, br)

    def lorentzian_signature(self) -> bool:
        eig = np.linalg.eigvalsh(self.g)
        return (eig < 0).sum() == 1


def schwarzschild_metric(params: SchwarzschildParams, point) -> MetricAtPoint:
    """Exact metric in the Cartesianized Schwarzschild chart.

    point: spatial vector x (the metric is static) or a scalar rbar, placed
    on the first axis.  g_00 = -f, g_ij = delta_ij + (1/f - 1) xhat_i xhat_j.
    """
    x = np.atleast_1d(np.asarray(point, dtype=float))
    if x.size == 1:
        x = np.concatenate([x, np.zeros(params.n - 1)])
    n = params.n
    rbar = float(np.linalg.norm(x))
    params.check_exterior(rbar)
    f = params.f(rbar)
    fp = params.fp(rbar)
    xh = x / rbar
    c = 1.0 / f - 1.0
    cp = -fp / f ** 2

    D = n + 1
    g = np.zeros((D, D))
    g[0, 0] = -f
    g[1:, 1:] = np.eye(n) + c * np.outer(xh, xh)
    ginv = np.zeros((D, D))
    ginv[0, 0] = -1.0 / f
    ginv[1:, 1:] = np.eye(n) - (1.0 - f) * np.outer(xh, xh)
    dg = np.zeros((D, D, D))
    for k in range(n):
        dg[1 + k, 0, 0] = -fp * xh[k]
        dxh = (np.eye(n)[k] - xh[k] * xh) / rbar
        block = (cp * xh[k] * np.outer(xh, xh)
                 + c * (np.outer(dxh, xh) + np.outer(xh, dxh)))
        dg[1 + k, 1:, 1:] = block
    return MetricAtPoint(chart="schwarzschild", x=x, g=g, ginv=ginv, dg=dg)


# ---------------------------------------------------------------------------
# Harmonic chart


class HarmonicChart:
    """Numerically solved radial profile of the wave-gauge coordinates.

    Integrates the deviation m = rbar - r of the harmonic radial profile
    inward from the flat end, with m ~ C_S / (2 (n-2)) rbar^{3-n}
    asymptotically (the decaying particular solution of the radial ODE).
    """

    def __init__(self, params: SchwarzschildParams, r_far: float = 1e3,
                 rtol: float = 1e-12):
        self.params = params
        self.r_far = r_far
        n, cs = params.n, params.cs
        self._trivial = cs == 0.0
        if self._trivial:
            return
        r_min = max(params.min_radius * 0.999, 1e-6)
        a = cs / (2.0 * (n - 2))
        m0 = a * r_far ** (3 - n)
        mp0 = a * (3 - n) * r_far ** (2 - n)

        def rhs(rb, y):
            m, mp = y
            f = params.f(rb)
            fp = params.fp(rb)
            mpp = (-cs * rb ** (1 - n)
                   - (fp + (n - 1) * f / rb) * mp
                   + (n - 1) * m / rb ** 2) / f
            return [mp, mpp]

        sol = solve_ivp(rhs, (r_far, r_min), [m0, mp0], method="DOP853",
                        rtol=rtol, atol=1e-30, dense_output=True)
        if not sol.success:
            raise StepFailureError(f"harmonic chart ODE failed: {sol.message}")
        self._sol = sol
        self._r_min = r_min

    def m(self, rbar: float) -> float:
        if self._trivial:
            return 0.0
        if rbar > self.r_far:
            a = self.params.cs / (2.0 * (self.params.n - 2))
            return a * rbar ** (3 - self.params.n)
        return float(self._sol.sol(rbar)[0])

    def mp(self, rbar: float) -> float:
        if self._trivial:
            return 0.0
        n = self.params.n
        if rbar > self.r_far:
            a = self.params.cs / (2.0 * (n - 2))
            return a * (3 - n) * rbar ** (2 - n)
        return float(self._sol.sol(rbar)[1])

    def mpp(self, rbar: float) -> float:
        if self._trivial:
            return 0.0
        params, n, cs = self.params, self.params.n, self.params.cs
        m, mp = self.m(rbar), self.mp(rbar)
        f, fp = params.f(rbar), params.fp(rbar)
        return (-cs * rbar ** (1 - n) - (fp + (n - 1) * f / rbar) * mp
                + (n - 1) * m / rbar ** 2) / f

    def r_of_rbar(self, rbar: float) -> float:
        return rbar - self.m(rbar)

    def rbar_of_r(self, r: float) -> float:
        rb = r
        for _ in range(6):
            rb = r + self.m(rb)
        return rb


def to_harmonic_chart(params: SchwarzschildParams, rbar: float,
                      order: str = "leading",
                      chart: HarmonicChart | None = None) -> float:
    """Harmonic radial coordinate r(rbar).

    order = "leading": algebraic fallback r = rbar - C_S / (2 rbar^{n-3});
    order = "ode": the numerically integrated profile (gauge-exact).
    """
    params.check_exterior(rbar)
    if order == "leading":
        return rbar - params.cs / (2.0 * rbar ** (params.n - 3))
    if order == "ode":
        if chart is None:
            chart = HarmonicChart(params)
        return chart.r_of_rbar(rbar)
    raise TruncationOrderError(f"unknown truncation order {order!r}")


def _radial_profiles(params, chart: HarmonicChart, r: float):
    """Deviation-form radial profiles of the harmonic-chart metric.

    g_00 = -1 + h00, g_ij = (1 + a) delta_ij + (b - a) xhat_i xhat_j with
    1 + a = rbar^2 / r^2 (tangential), 1 + b = (drbar/dr)^2 / f (radial).
    Returns ((h00, dh00), (a, da), (b, db)); every quantity is assembled
    from the small deviations m, m' directly, never by subtracting O(1)
    numbers, so the r^{-(n-2)} tail survives in double precision.
    """
    n, cs = params.n, params.cs
    rb = chart.rbar_of_r(r)
    m, mp, mpp = chart.m(rb), chart.mp(rb), chart.mpp(rb)
    drb_dr = 1.0 / (1.0 - mp)
    dmp_dr = mpp * drb_dr
    # h00 = 1 - f = cs rbar^{2-n}
    h00 = cs * rb ** (2 - n)
    dh00 = cs * (2 - n) * rb ** (1 - n) * drb_dr
    # a = (rbar/r)^2 - 1 = (2 m r + m^2)/r^2 with rbar = r + m
    a = (2.0 * m * r + m * m) / r ** 2
    # da = 2 (rbar/r) d(rbar/r) with d(rbar/r) = (r mp/(1-mp) - m)/r^2
    da = 2.0 * (rb / r) * (r * mp / (1.0 - mp) - m) / r ** 2
    # b: 1 + b = 1/((1-mp)^2 (1 - h00bar)), h00bar = cs rbar^{2-n}
    w = h00
    denom = (1.0 - mp) ** 2 * (1.0 - w)
    num = 2.0 * mp - mp * mp + w * (1.0 - mp) ** 2
    b = num / denom
    dw = dh00
    dnum = (2.0 - 2.0 * mp) * dmp_dr + dw * (1.0 - mp) ** 2 \
        - 2.0 * w * (1.0 - mp) * dmp_dr
    ddenom = -2.0 * (1.0 - mp) * dmp_dr * (1.0 - w) - (1.0 - mp) ** 2 * dw
    db = (dnum * denom - num * ddenom) / denom ** 2
    return (h00, dh00), (a, da), (b, db)


def harmonic_deviation(params: SchwarzschildParams, r: float,
                       chart: HarmonicChart | None = None) -> dict:
    """Deviation h = g - eta of the harmonic-chart metric at radius r.

    Returns the scalar profiles {"h00", "tangential", "radial"} and their
    radial derivatives, computed without O(1) cancellation (usable far
    below machine epsilon relative to the identity part).
    """
    if chart is None:
        chart = HarmonicChart(params)
    (h00, dh00), (a, da), (b, db) = _radial_profiles(params, chart, r)
    return {"h00": h00, "tangential": a, "radial": b,
            "dh00": dh00, "dtangential": da, "dradial": db}


def harmonic_metric(params: SchwarzschildParams, point,
                    chart: HarmonicChart | None = None,
                    order: str = "ode", fd_step: float = 1e-2) -> MetricAtPoint:
    """Metric components in the harmonic chart at spatial point x.

    Radial profile functions come from the ODE chart (or the leading-order
    transform); angular structure is closed-form.  Derivatives are analytic
    through the chart's ODE relations.
    """
    x = np.atleast_1d(np.asarray(point, dtype=float))
    if x.size == 1:
        x = np.concatenate([x, np.zeros(params.n - 1)])
    n = params.n
    r = float(np.linalg.norm(x))
    if order == "leading":
        # invert the algebraic transform, then reuse closed forms
        class _Leading:
            def rbar_of_r(self, rr):
                rb = rr
                for _ in range(6):
                    rb = rr + params.cs / (2.0 * rb ** (n - 3))
                return rb

            def m(self, rb):
                return params.cs / (2.0 * rb ** (n - 3))

            def mp(self, rb):
                return -(n - 3) * params.cs / (2.0 * rb ** (n - 2))

            def mpp(self, rb):
                return (n - 3) * (n - 2) * params.cs / (2.0 * rb ** (n - 1))

        chart = _Leading()
    elif chart is None:
        chart = HarmonicChart(params)
    params.check_exterior(chart.rbar_of_r(r))
    (h00, dh00), (a, da), (b, db) = _radial_profiles(params, chart, r)
    xh = x / r
    A, B = 1.0 + a, 1.0 + b
    df = -dh00

    D = n + 1
    g = np.zeros((D, D))
    g[0, 0] = -1.0 + h00
    g[1:, 1:] = A * np.eye(n) + (b - a) * np.outer(xh, xh)
    ginv = np.zeros((D, D))
    ginv[0, 0] = 1.0 / g[0, 0]
    ginv[1:, 1:] = np.eye(n) / A + (1.0 / B - 1.0 / A) * np.outer(xh, xh)
    dg = np.zeros((D, D, D))
    for k in range(n):
        dxh = (np.eye(n)[k] - xh[k] * xh) / r
        dg[1 + k, 0, 0] = -df * xh[k]
        dg[1 + k, 1:, 1:] = (da * xh[k] * np.eye(n)
                             + (db - da) * xh[k] * np.outer(xh, xh)
                             + (b - a) * (np.outer(dxh, xh) + np.outer(xh, dxh)))
    return MetricAtPoint(chart=f"harmonic-{order}", x=x, g=g, ginv=ginv, dg=dg)


# ---------------------------------------------------------------------------
# Wave-gauge residual and numeric curvature


def wave_gauge_residual_of(metric_fn, x, step: float = 1e-2,
                           fourth_order: bool = True) -> np.ndarray:
    """V^c = g^{ab} Gamma^c_{ab}[g] at x (reference: Cartesian Minkowski).

    metric_fn(x) -> (D, D) components; derivatives by central differences
    of the returned components (pass a deviation-form function for accuracy
    at the decay tail -- the constant part differentiates to zero anyway).
    """
    x = np.asarray(x, dtype=float)
    D = len(x)
    g0 = metric_fn(x)
    dg = np.zeros((D,) + g0.shape)
    for mu in range(D):
        e = np.zeros(D)
        e[mu] = step
        if fourth_order:
            dg[mu] = (8.0 * (metric_fn(x + e) - metric_fn(x - e))
                      - (metric_fn(x + 2 * e) - metric_fn(x - 2 * e))) / (12.0 * step)
        else:
            dg[mu] = (metric_fn(x + e) - metric_fn(x - e)) / (2.0 * step)
    ginv = np.linalg.inv(g0)
    br = (np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg)
    gamma = 0.5 * np.einsum("cd,dab->cab", ginv, br)
    return np.einsum("ab,cab->c", ginv, gamma)


def wave_gauge_residual(params: SchwarzschildParams, r: float,
                        chart: HarmonicChart | None = None,
                        order: str = "ode") -> np.ndarray:
    """Residual V^c = g^{ab} Gamma^c_{ab} of the chart at radius r.

    Uses the chart's closed-form metric derivatives, so the residual
    reflects only the chart construction error (ODE tolerance for the
    refined chart, the dropped series tail for the leading-order one),
    not finite-difference noise.
    """
    if params.cs == 0.0:
        return np.zeros(params.n + 1)
    if chart is None and order == "ode":
        chart = HarmonicChart(params)
    mp = harmonic_metric(params, r, chart=chart, order=order)
    return np.einsum("ab,cab->c", mp.ginv, mp.christoffels)


def _christoffel_fd(metric_fn, x, step):
    D = len(x)
    g0 = metric_fn(x)
    dg = np.zeros((D,) + g0.shape)
    for mu in range(D):
        e = np.zeros(D)
        e[mu] = step
        dg[mu] = (8.0 * (metric_fn(x + e) - metric_fn(x - e))
                  - (metric_fn(x + 2 * e) - metric_fn(x - 2 * e))) / (12.0 * step)
    ginv = np.linalg.inv(g0)
    br = (np.transpose(dg, (1, 0, 2)) + np.transpose(dg, (1, 2, 0)) - dg)
    return 0.5 * np.einsum("cd,dab->cab", ginv, br)


def ricci_tensor(metric_fn, x, step: float = 1e-2) -> np.ndarray:
    """Numeric Ricci tensor by nested finite differences of Christoffels."""
    x = np.asarray(x, dtype=float)
    D = len(x)
    gamma0 = _christoffel_fd(metric_fn, x, step)
    dgamma = np.zeros((D, D, D, D))
    for mu in range(D):
        e = np.zeros(D)
        e[mu] = step
        dgamma[mu] = (_christoffel_fd(metric_fn, x + e, step)
                      - _christoffel_fd(metric_fn, x - e, step)) / (2.0 * step)
    ric = (np.einsum("ccab->ab", dgamma)
           - np.einsum("accb->ab", dgamma)
           + np.einsum("ccd,dab->ab", gamma0, gamma0)
           - np.einsum("cad,dcb->ab", gamma0, gamma0))
    return ric


def scalar_curvature(metric_fn, x, step: float = 1e-2) -> float:
    ric = ricci_tensor(metric_fn, x, step)
    ginv = np.linalg.inv(metric_fn(np.asarray(x, dtype=float)))
    return float(np.einsum("ab,ab->", ginv, ric))


def constraint_residual(spatial_metric_fn, x, step: float = 1e-2,
                        kappa: float = 0.0) -> tuple[float, float]:
    """Time-symmetric constraint residuals (Hamiltonian, momentum).

    Hamiltonian: R[gamma] - |kappa|^2 + (tr kappa)^2 with kappa = 0 here,
    so the residual is the numeric scalar curvature.  Momentum constraint is
    identically satisfied for kappa = 0.
    """
    if kappa != 0.0:
        raise ValueError("only time-symmetric data (kappa = 0) is supported")
    ham = abs(scalar_curvature(spatial_metric_fn, x, step))
    return ham, 0.0


def product_slice_metric(params: SchwarzschildParams,
                         chart: HarmonicChart | None = None, d: int = 0):
    """Spatial metric of a t = const slice: Schwarzschild block + flat torus."""
    if chart is None and params.cs > 0:
        chart = HarmonicChart(params)

    def fn(x):
        xs = x[:params.n]
        m = np.eye(len(x))
        if params.cs > 0:
            mp = harmonic_metric(params, xs, chart=chart)
            m[:params.n, :params.n] = mp.g[1:, 1:]
        return m

    return fn


# ---------------------------------------------------------------------------
# Geodesics


@dataclass
class GeodesicState:
    """Position and velocity on the product spacetime (harmonic chart)."""

    t: float
    x: np.ndarray
    v_t: float
    v_x: np.ndarray
    torus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v_torus: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lam: float = 0.0


@dataclass
class GeodesicTrajectory:
    params: SchwarzschildParams
    lam: np.ndarray
    t: np.ndarray
    x: np.ndarray           # (N, n)
    v_t: np.ndarray
    v_x: np.ndarray         # (N, n)
    torus: np.ndarray
    v_torus: np.ndarray
    captured: bool

    @property
    def r(self) -> np.ndarray:
        return np.linalg.norm(self.x, axis=1)

    def velocity_norm(self, chart: HarmonicChart | None = None) -> np.ndarray:
        """g(dot gamma, dot gamma) along the flow (drift diagnostic)."""
        if chart is None and self.params.cs > 0:
            chart = HarmonicChart(self.params)
        out = np.empty(len(self.lam))
        for i in range(len(self.lam)):
            mp = harmonic_metric(self.params, self.x[i], chart=chart)
            v = np.concatenate([[self.v_t[i]], self.v_x[i]])
            out[i] = v @ mp.g @ v + np.dot(self.v_torus[i], self.v_torus[i])
        return out

    def energy(self, chart: HarmonicChart | None = None) -> np.ndarray:
        """Killing charge -g(dot gamma, d_t)."""
        if chart is None and self.params.cs > 0:
            chart = HarmonicChart(self.params)
        out = np.empty(len(self.lam))
        for i in range(len(self.lam)):
            rb = chart.rbar_of_r(float(np.linalg.norm(self.x[i]))) \
                if chart is not None else float(np.linalg.norm(self.x[i]))
            out[i] = self.params.f(rb) * self.v_t[i]
        return out

    def angular_momentum(self, i: int = 0, j: int = 1,
                         chart: HarmonicChart | None = None) -> np.ndarray:
        """Killing charge of the rotation in the (i, j) plane."""
        if chart is None and self.params.cs > 0:
            chart = HarmonicChart(self.params)
        out = np.empty(len(self.lam))
        for k in range(len(self.lam)):
            mp = harmonic_metric(self.params, self.x[k], chart=chart)
            gx = mp.g[1:, 1:] @ self.v_x[k]
            out[k] = self.x[k][i] * gx[j] - self.x[k][j] * gx[i]
        return out


def integrate_geodesic(params: SchwarzschildParams, init: GeodesicState,
                       lam_end: float, chart: HarmonicChart | None = None,
                       rtol: float = 1e-12, atol: float = 1e-14,
                       exterior_probe: bool = False,
                       n_output: int = 400) -> GeodesicTrajectory:
    """Integrate the geodesic equation on harmonic Schwarzschild x torus.

    Causal initial velocity required.  Launch points outside |x| <= t - 2
    must be flagged as exterior probes.  Terminates on horizon capture.
    """
    n, d = params.n, len(init.torus)
    if chart is None and params.cs > 0:
        chart = HarmonicChart(params)
    mp0 = harmonic_metric(params, init.x, chart=chart) if params.cs > 0 else None
    g0 = mp0.g if mp0 is not None else np.diag([-1.0] + [1.0] * n)
    v0 = np.concatenate([[init.v_t], init.v_x])
    norm0 = v0 @ g0 @ v0 + np.dot(init.v_torus, init.v_torus)
    if norm0 > 1e-10:
        raise ValueError(f"initial velocity is spacelike: g(v,v) = {norm0:.3e}")
    if not exterior_probe and np.linalg.norm(init.x) > init.t - 2.0:
        raise ValueError(
            "launch point outside |x| <= t - 2; pass exterior_probe=True"
        )

    def christoffels_at(xs):
        if params.cs == 0.0:
            return None
        mpt = harmonic_metric(params, xs, chart=chart)
        return mpt.christoffels

    def rhs(lam, y):
        xs = y[1:1 + n]
        vt = y[1 + n + d]
        vx = y[2 + n + d:2 + 2 * n + d]
        vth = y[2 + 2 * n + d:]
        dv = np.zeros(1 + n)
        gam = christoffels_at(xs)
        if gam is not None:
            v = np.concatenate([[vt], vx])
            dv = -np.einsum("cab,a,b->c", gam, v, v)
        return np.concatenate([[vt], vx, vth, dv, np.zeros(d)])

    def horizon(lam, y):
        xs = y[1:1 + n]
        r = np.linalg.norm(xs)
        rb = chart.rbar_of_r(float(r)) if chart is not None else r
        # stop slightly above the hard exterior guard so trial evaluations
        # of the right-hand side never cross it during the capture step
        return rb - 1.05 * params.min_radius
    horizon.terminal = True
    horizon.direction = -1

    y0 = np.concatenate([[init.t], init.x, init.torus,
                         [init.v_t], init.v_x, init.v_torus])
    t_eval = np.linspace(init.lam, lam_end, n_output)
    sol = solve_ivp(rhs, (init.lam, lam_end), y0, method="DOP853",
                    rtol=rtol, atol=atol, events=horizon, t_eval=t_eval)
    if sol.status == -1:
        raise StepFailureError(f"geodesic integration failed: {sol.message}")
    captured = sol.status == 1
    Y = sol.y
    return GeodesicTrajectory(
        params=params, lam=sol.t, t=Y[0], x=Y[1:1 + n].T,
        torus=Y[1 + n:1 + n + d].T, v_t=Y[1 + n + d],
        v_x=Y[2 + n + d:2 + 2 * n + d].T, v_torus=Y[2 + 2 * n + d:].T,
        captured=captured,
    )


def write_trajectory_csv(path, traj: GeodesicTrajectory,
                         chart: HarmonicChart | None = None) -> None:
    if chart is None and traj.params.cs > 0:
        chart = HarmonicChart(traj.params)
    r = traj.r
    drdt = np.gradient(r, traj.t) if len(r) > 2 else np.zeros_like(r)
    gnorm = traj.velocity_norm(chart)
    energy = traj.energy(chart)
    with open(path, "w") as fh:
        fh.write(f"# n={traj.params.n} cs={traj.params.cs!r} "
                 f"captured={int(traj.captured)}\n")
        fh.write("lam,t,r,drdt,gnorm,energy\n")
        for i in range(len(traj.lam)):
            fh.write(f"{traj.lam[i]:.17g},{traj.t[i]:.17g},{r[i]:.17g},"
                     f"{drdt[i]:.17g},{gnorm[i]:.17g},{energy[i]:.17g}\n")
