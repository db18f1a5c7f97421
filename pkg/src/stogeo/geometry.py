"""Riemannian geometry in local charts.

Every tensor routine broadcasts over leading batch axes: a point array of
shape ``(..., d)`` yields a metric of shape ``(..., d, d)``, Christoffel
symbols of shape ``(..., d, d, d)`` indexed ``[j, k, l]`` for
:math:`\\Gamma^j_{kl}`, and so on.

Curvature convention: ``R(X, Y)Z = ∇_X ∇_Y Z - ∇_Y ∇_X Z - ∇_[X,Y] Z`` with
components ``R(∂_k, ∂_l)∂_j = R^i_{jkl} ∂_i``, and
``Ricci(Y, Z) = trace(X -> R(X, Y)Z)``, i.e. ``Ric_{jl} = R^k_{jkl}``.  This
trace gives ``Ricci = (d - 1) g / R**2`` on a round sphere of radius ``R``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ChartError

Array = np.ndarray

POLE_MARGIN = 1e-3  # polar chart domain is [POLE_MARGIN, pi - POLE_MARGIN]
POLAR_SWITCH = 0.25  # leave the polar chart below this colatitude
STEREO_RETURN = 0.5  # return to the polar chart above this colatitude
HESS_STEP = 1e-4


@dataclass(frozen=True)
class Chart:
    """One coordinate chart of a manifold.

    ``metric_grad`` returns ``dg[..., k, i, j] = ∂_k g_ij`` and
    ``metric_hess`` returns ``d2g[..., l, k, i, j] = ∂_l ∂_k g_ij``; either
    may be ``None``, in which case central finite differences are used.
    """

    name: str
    metric: Callable[[Array], Array]
    metric_grad: Optional[Callable[[Array], Array]] = None
    metric_hess: Optional[Callable[[Array], Array]] = None
    contains: Optional[Callable[[Array], Array]] = None
    embed: Optional[Callable[[Array], Array]] = None


Transition = Callable[[Array], tuple[Array, Array]]


@dataclass
class ChartedManifold:
    """A Riemannian manifold given by an atlas of metric charts.

    ``transitions[(a, b)]`` maps chart-``a`` coordinates to chart ``b`` and
    returns ``(m_b, J)`` with ``J = ∂m_b/∂m_a``.  ``chart_policy(m, a)``
    returns the preferred chart index for points currently in chart ``a``.
    """

    dim: int
    charts: list[Chart]
    transitions: dict[tuple[int, int], Transition] = field(default_factory=dict)
    chart_policy: Optional[Callable[[Array, int], Array]] = None
    fd_step: float = 1e-6
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def is_flat(self) -> bool:
        return self.name in ("flat",)

    def metric(self, m, chart: int = 0) -> Array:
        return np.asarray(self.charts[chart].metric(np.asarray(m, dtype=float)))

    def in_domain(self, m, chart: int = 0) -> Array:
        m = np.asarray(m, dtype=float)
        test = self.charts[chart].contains
        if test is None:
            return np.all(np.isfinite(m), axis=-1)
        return np.asarray(test(m)) & np.all(np.isfinite(m), axis=-1)

    def require_domain(self, m, chart: int = 0) -> None:
        if not np.all(self.in_domain(m, chart)):
            raise ChartError(f"point outside the domain of chart {self.charts[chart].name!r}")

    def to_chart(self, m, src: int, dst: int) -> tuple[Array, Array]:
        m = np.asarray(m, dtype=float)
        if src == dst:
            eye = np.broadcast_to(np.eye(self.dim), m.shape + (self.dim,)).copy()
            return m.copy(), eye
        try:
            fn = self.transitions[(src, dst)]
        except KeyError:
            raise ChartError(f"no transition from chart {src} to chart {dst}") from None
        return fn(m)

    def preferred_chart(self, m, chart: int) -> Array:
        m = np.asarray(m, dtype=float)
        if self.chart_policy is None:
            return np.full(m.shape[:-1], chart, dtype=int)
        return np.asarray(self.chart_policy(m, chart), dtype=int)

    def embed(self, m, chart: int = 0) -> Array:
        fn = self.charts[chart].embed
        m = np.asarray(m, dtype=float)
        return m.copy() if fn is None else fn(m)

    def embed_vector(self, m, v, chart: int = 0, step: float = 1e-6) -> Array:
        """Push a tangent vector forward through the chart embedding."""
        m = np.asarray(m, dtype=float)
        v = np.asarray(v, dtype=float)
        return (self.embed(m + step * v, chart) - self.embed(m - step * v, chart)) / (2 * step)

    def metric_derivatives(self, m, chart: int = 0) -> tuple[Array, Array, Array]:
        """Metric, first and second coordinate derivatives at ``m``."""
        c = self.charts[chart]
        m = np.asarray(m, dtype=float)
        g = np.asarray(c.metric(m))
        dg = c.metric_grad(m) if c.metric_grad is not None else self._fd_grad(c.metric, m)
        d2g = c.metric_hess(m) if c.metric_hess is not None else self._fd_hess(c.metric, m)
        return g, np.asarray(dg), np.asarray(d2g)

    def _steps(self, m: Array, rel: float) -> Array:
        return rel * np.maximum(1.0, np.abs(m))

    def _fd_grad(self, fn, m: Array) -> Array:
        d = self.dim
        h = self._steps(m, self.fd_step)
        out = []
        for k in range(d):
            dm = np.zeros_like(m)
            dm[..., k] = h[..., k]
            hk = h[..., k][..., None, None]
            out.append((fn(m + dm) - fn(m - dm)) / (2 * hk))
        return np.stack(out, axis=-3)

    def _fd_hess(self, fn, m: Array) -> Array:
        d = self.dim
        h = self._steps(m, HESS_STEP)
        g0 = fn(m)
        rows = [[None] * d for _ in range(d)]
        for k in range(d):
            ek = np.zeros_like(m)
            ek[..., k] = h[..., k]
            hk = h[..., k][..., None, None]
            rows[k][k] = (fn(m + ek) - 2 * g0 + fn(m - ek)) / hk**2
            for l in range(k + 1, d):
                el = np.zeros_like(m)
                el[..., l] = h[..., l]
                hl = h[..., l][..., None, None]
                val = (fn(m + ek + el) - fn(m + ek - el) - fn(m - ek + el) + fn(m - ek - el)) / (4 * hk * hl)
                rows[k][l] = rows[l][k] = val
        return np.stack([np.stack(r, axis=-3) for r in rows], axis=-4)

    def spec(self) -> dict:
        return {"type": self.name, **self.params}


@dataclass
class CurvatureData:
    point: Array
    riemann: Array  # [..., i, j, k, l] = R^i_{jkl}
    ricci: Array  # [..., k, l]

    def omega(self, X, Y, Z) -> Array:
        """Curvature operator ``R(X, Y)Z`` from the stored components."""
        return np.einsum("...ijkl,...k,...l,...j->...i", self.riemann, X, Y, Z)


@dataclass
class CurvePath:
    """A discretized curve: node times, chart coordinates, velocities, charts."""

    times: Array
    points: Array
    velocities: Optional[Array] = None
    charts: Optional[Array] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.points = np.asarray(self.points, dtype=float)
        if self.velocities is not None:
            self.velocities = np.asarray(self.velocities, dtype=float)
        if self.charts is None:
            self.charts = np.zeros(len(self.times), dtype=int)
        self.charts = np.asarray(self.charts, dtype=int)

    def __len__(self) -> int:
        return len(self.times)


# ---------------------------------------------------------------------------
# built-in manifolds


def flat(dim: int = 1) -> ChartedManifold:
    """Euclidean space (also used for the flat circle and torus, unwrapped)."""

    def metric(m):
        return np.broadcast_to(np.eye(dim), m.shape[:-1] + (dim, dim)).copy()

    def grad(m):
        return np.zeros(m.shape[:-1] + (dim,) * 3)

    def hess(m):
        return np.zeros(m.shape[:-1] + (dim,) * 4)

    chart = Chart("cartesian", metric, grad, hess)
    return ChartedManifold(dim, [chart], name="flat", params={"dim": dim})


def _polar_to_stereo(m, R, south):
    th, ph = m[..., 0], m[..., 1]
    half = 0.5 * (np.pi - th) if south else 0.5 * th
    t = np.tan(half)
    dt = -0.5 / np.cos(half) ** 2 if south else 0.5 / np.cos(half) ** 2
    c, s = np.cos(ph), np.sin(ph)
    y = np.stack([t * c, t * s], axis=-1)
    J = np.empty(m.shape[:-1] + (2, 2))
    J[..., 0, 0] = dt * c
    J[..., 0, 1] = -t * s
    J[..., 1, 0] = dt * s
    J[..., 1, 1] = t * c
    return y, J


def _stereo_to_polar(y, R, south):
    r = np.hypot(y[..., 0], y[..., 1])
    half = np.arctan(r)
    th = np.pi - 2 * half if south else 2 * half
    ph = np.arctan2(y[..., 1], y[..., 0])
    m = np.stack([th, ph], axis=-1)
    _, Jf = _polar_to_stereo(m, R, south)
    return m, np.linalg.inv(Jf)


def _stereo_flip(y):
    s = np.sum(y * y, axis=-1)[..., None]
    y2 = y / s
    eye = np.eye(2)
    J = (s[..., None] * eye - 2 * y[..., :, None] * y[..., None, :]) / (s[..., None] ** 2)
    return y2, J


def sphere(radius: float = 1.0) -> ChartedManifold:
    """Round 2-sphere: polar chart plus two stereographic pole charts.

    Chart 0 is ``(theta, phi)`` = (colatitude, longitude) restricted to
    ``theta in [1e-3, pi - 1e-3]``; charts 1 and 2 are stereographic charts
    centred on the north and south pole, each covering a closed hemisphere.
    """
    R2 = float(radius) ** 2

    def polar_metric(m):
        g = np.zeros(m.shape[:-1] + (2, 2))
        g[..., 0, 0] = R2
        g[..., 1, 1] = R2 * np.sin(m[..., 0]) ** 2
        return g

    def polar_grad(m):
        dg = np.zeros(m.shape[:-1] + (2, 2, 2))
        dg[..., 0, 1, 1] = R2 * np.sin(2 * m[..., 0])
        return dg

    def polar_hess(m):
        d2g = np.zeros(m.shape[:-1] + (2, 2, 2, 2))
        d2g[..., 0, 0, 1, 1] = 2 * R2 * np.cos(2 * m[..., 0])
        return d2g

    def polar_contains(m):
        return (m[..., 0] >= POLE_MARGIN) & (m[..., 0] <= np.pi - POLE_MARGIN)

    def polar_embed(m):
        th, ph = m[..., 0], m[..., 1]
        r = float(radius)
        return r * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def stereo_metric(y):
        s = np.sum(y * y, axis=-1)
        lam = 4 * R2 / (1 + s) ** 2
        return lam[..., None, None] * np.eye(2)

    def stereo_grad(y):
        s = np.sum(y * y, axis=-1)[..., None]
        dlam = -16 * R2 * y / (1 + s) ** 3
        return dlam[..., :, None, None] * np.eye(2)

    def stereo_hess(y):
        s = np.sum(y * y, axis=-1)[..., None, None]
        outer = y[..., :, None] * y[..., None, :]
        d2lam = -16 * R2 * (np.eye(2) / (1 + s) ** 3 - 6 * outer / (1 + s) ** 4)
        return d2lam[..., :, :, None, None] * np.eye(2)

    def stereo_contains(y):
        return np.sum(y * y, axis=-1) <= 1.5

    def stereo_embed(south):
        def embed(y):
            s = np.sum(y * y, axis=-1)
            z = (s - 1) if south else (1 - s)
            return float(radius) * np.stack([2 * y[..., 0], 2 * y[..., 1], z], axis=-1) / (1 + s)[..., None]

        return embed

    charts = [
        Chart("polar", polar_metric, polar_grad, polar_hess, polar_contains, polar_embed),
        Chart("north", stereo_metric, stereo_grad, stereo_hess, stereo_contains, stereo_embed(False)),
        Chart("south", stereo_metric, stereo_grad, stereo_hess, stereo_contains, stereo_embed(True)),
    ]
    transitions = {
        (0, 1): lambda m: _polar_to_stereo(m, radius, False),
        (0, 2): lambda m: _polar_to_stereo(m, radius, True),
        (1, 0): lambda y: _stereo_to_polar(y, radius, False),
        (2, 0): lambda y: _stereo_to_polar(y, radius, True),
        (1, 2): _stereo_flip,
        (2, 1): _stereo_flip,
    }
    back = np.tan(0.5 * STEREO_RETURN)

    def policy(m, chart):
        if chart == 0:
            th = m[..., 0]
            return np.where(th < POLAR_SWITCH, 1, np.where(th > np.pi - POLAR_SWITCH, 2, 0))
        r = np.hypot(m[..., 0], m[..., 1])
        return np.where(r > back, 0, chart)

    return ChartedManifold(2, charts, transitions, policy, name="sphere", params={"radius": float(radius)})


def from_metric(metric: Callable[[Array], Array], dim: int, fd_step: float = 1e-6,
                contains: Optional[Callable[[Array], Array]] = None) -> ChartedManifold:
    """Single-chart manifold from a user metric; ``metric`` must broadcast over ``(..., d)``."""
    chart = Chart("user", metric, contains=contains)
    return ChartedManifold(dim, [chart], fd_step=fd_step, name="user")


_BUILTIN = {
    "sphere": lambda p: sphere(p.get("radius", 1.0)),
    "flat": lambda p: flat(int(p.get("dim", 1))),
    "euclidean": lambda p: flat(int(p.get("dim", 1))),
    "line": lambda p: flat(1),
    "circle": lambda p: flat(1),
    "torus": lambda p: flat(int(p.get("dim", 2))),
}


def manifold_from_json(spec: dict) -> ChartedManifold:
    """Build a built-in manifold from ``{"type": name, **params}``."""
    kind = spec.get("type")
    if kind not in _BUILTIN:
        raise ValueError(f"unknown manifold type {kind!r}; expected one of {sorted(_BUILTIN)}")
    return _BUILTIN[kind](spec)


# ---------------------------------------------------------------------------
# tensors


def _check_pd(g: Array) -> None:
    if not np.all(np.linalg.eigvalsh(g)[..., 0] > 0):
        raise ChartError("metric is not positive-definite (chart singularity)")


def _christoffel_from(g: Array, dg: Array) -> tuple[Array, Array, Array]:
    ginv = np.linalg.inv(g)
    lowered = 0.5 * (np.einsum("...kil->...ikl", dg) + np.einsum("...lki->...ikl", dg) - dg)
    return np.einsum("...ji,...ikl->...jkl", ginv, lowered), ginv, lowered


def christoffel(manifold: ChartedManifold, m, chart: int = 0, check: bool = True) -> Array:
    """Levi-Civita symbols ``Gamma[..., j, k, l]`` at chart point(s) ``m``."""
    m = np.asarray(m, dtype=float)
    if check:
        manifold.require_domain(m, chart)
    c = manifold.charts[chart]
    g = np.asarray(c.metric(m))
    if check:
        _check_pd(g)
    dg = c.metric_grad(m) if c.metric_grad is not None else manifold._fd_grad(c.metric, m)
    return _christoffel_from(g, np.asarray(dg))[0]


def christoffel_derivative(manifold: ChartedManifold, m, chart: int = 0) -> tuple[Array, Array]:
    """Return ``(Gamma, dGamma)`` with ``dGamma[..., m, j, k, l] = ∂_m Gamma^j_{kl}``."""
    g, dg, d2g = manifold.metric_derivatives(m, chart)
    gam, ginv, lowered = _christoffel_from(g, dg)
    dginv = -np.einsum("...ja,...mab,...bi->...mji", ginv, dg, ginv)
    dlow = 0.5 * (np.einsum("...mkil->...mikl", d2g) + np.einsum("...mlki->...mikl", d2g) - d2g)
    dgam = np.einsum("...mji,...ikl->...mjkl", dginv, lowered) + np.einsum("...ji,...mikl->...mjkl", ginv, dlow)
    return gam, dgam


def riemann_from(gam: Array, dgam: Array) -> Array:
    """``R^i_{jkl}`` from Christoffel symbols and their derivatives."""
    return (
        np.einsum("...kilj->...ijkl", dgam)
        - np.einsum("...likj->...ijkl", dgam)
        + np.einsum("...ikp,...plj->...ijkl", gam, gam)
        - np.einsum("...ilp,...pkj->...ijkl", gam, gam)
    )


def curvature_and_ricci(manifold: ChartedManifold, m, chart: int = 0, check: bool = True) -> CurvatureData:
    m = np.asarray(m, dtype=float)
    if check:
        manifold.require_domain(m, chart)
        _check_pd(manifold.metric(m, chart))
    gam, dgam = christoffel_derivative(manifold, m, chart)
    riem = riemann_from(gam, dgam)
    ric = np.einsum("...kjkl->...jl", riem)
    return CurvatureData(m, riem, ric)


def ricci_operator(manifold: ChartedManifold, m, chart: int = 0) -> Array:
    """Index-raised Ricci ``Ric^i_j`` so that ``Ricci(u)^i = Ric^i_j u^j``."""
    cd = curvature_and_ricci(manifold, m, chart, check=False)
    return np.linalg.solve(manifold.metric(m, chart), cd.ricci)


def laplace_beltrami(manifold: ChartedManifold, f: Callable[[Array], Array], m, chart: int = 0,
                     step: float = 1e-4) -> Array:
    """``g^{ij}(∂_i∂_j f - Γ^k_{ij} ∂_k f)`` with central-difference derivatives of ``f``."""
    m = np.asarray(m, dtype=float)
    manifold.require_domain(m, chart)
    d = manifold.dim
    f0 = np.asarray(f(m), dtype=float)
    grad = np.empty(m.shape[:-1] + (d,))
    hess = np.empty(m.shape[:-1] + (d, d))
    basis = np.eye(d) * step
    for k in range(d):
        fp, fm = f(m + basis[k]), f(m - basis[k])
        grad[..., k] = (fp - fm) / (2 * step)
        hess[..., k, k] = (fp - 2 * f0 + fm) / step**2
        for l in range(k + 1, d):
            val = (f(m + basis[k] + basis[l]) - f(m + basis[k] - basis[l])
                   - f(m - basis[k] + basis[l]) + f(m - basis[k] - basis[l])) / (4 * step**2)
            hess[..., k, l] = hess[..., l, k] = val
    g = manifold.metric(m, chart)
    _check_pd(g)
    gam = christoffel(manifold, m, chart, check=False)
    ginv = np.linalg.inv(g)
    return np.einsum("...ij,...ij->...", ginv, hess - np.einsum("...kij,...k->...ij", gam, grad))


def norm2(manifold: ChartedManifold, m, v, chart: int = 0) -> Array:
    g = manifold.metric(m, chart)
    return np.einsum("...i,...ij,...j->...", v, g, v)


def gram_schmidt(e: Array, g: Array) -> Array:
    """Orthonormalize the columns of ``e`` with respect to ``g`` (batched)."""
    e = np.array(e, dtype=float, copy=True)
    d = e.shape[-1]
    for a in range(d):
        v = e[..., :, a]
        for b in range(a):
            q = e[..., :, b]
            v = v - np.einsum("...i,...ij,...j->...", v, g, q)[..., None] * q
        nrm = np.sqrt(np.einsum("...i,...ij,...j->...", v, g, v))
        e[..., :, a] = v / nrm[..., None]
    return e


def orthonormal_frame(manifold: ChartedManifold, m, chart: int = 0) -> Array:
    """The g-orthonormal frame obtained from the coordinate basis."""
    m = np.asarray(m, dtype=float)
    eye = np.broadcast_to(np.eye(manifold.dim), m.shape[:-1] + (manifold.dim,) * 2)
    return gram_schmidt(eye, manifold.metric(m, chart))


# ---------------------------------------------------------------------------
# classical curves


def _n_steps(T: float, dt: float) -> tuple[int, float]:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < 0:
        raise ValueError("T must be non-negative")
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    return n, T / n


def _switch(manifold, m, v, chart):
    new = int(manifold.preferred_chart(m, chart))
    if new != chart:
        m, J = manifold.to_chart(m, chart, new)
        v = J @ v
        chart = new
    if not manifold.in_domain(m, chart):
        raise ChartError(f"geodesic left chart {manifold.charts[chart].name!r} with no transition")
    return m, v, chart


def geodesic_integrate(manifold: ChartedManifold, m0, v0, T: float, dt: float, chart: int = 0) -> CurvePath:
    """RK4 integration of ``γ'' + Γ(γ', γ') = 0`` with chart transitions."""
    n, h = _n_steps(T, dt)
    m = np.asarray(m0, dtype=float).copy()
    v = np.asarray(v0, dtype=float).copy()
    manifold.require_domain(m, chart)

    def rhs(x, w, c):
        gam = christoffel(manifold, x, c, check=False)
        return w, -np.einsum("jkl,k,l->j", gam, w, w)

    pts, vels, charts = [m.copy()], [v.copy()], [chart]
    for _ in range(n):
        a1, b1 = rhs(m, v, chart)
        a2, b2 = rhs(m + 0.5 * h * a1, v + 0.5 * h * b1, chart)
        a3, b3 = rhs(m + 0.5 * h * a2, v + 0.5 * h * b2, chart)
        a4, b4 = rhs(m + h * a3, v + h * b3, chart)
        m = m + h / 6 * (a1 + 2 * a2 + 2 * a3 + a4)
        v = v + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
        m, v, chart = _switch(manifold, m, v, chart)
        pts.append(m.copy())
        vels.append(v.copy())
        charts.append(chart)
    return CurvePath(np.linspace(0.0, n * h, n + 1), np.array(pts), np.array(vels), np.array(charts))


def _segment(manifold, path: CurvePath, i: int):
    """Node ``i+1`` expressed in the chart of node ``i``."""
    c0, c1 = path.charts[i], path.charts[i + 1]
    p1 = path.points[i + 1]
    v1 = None if path.velocities is None else path.velocities[i + 1]
    if c0 != c1:
        p1, J = manifold.to_chart(p1, c1, c0)
        if v1 is not None:
            v1 = J @ v1
    return p1, v1


def parallel_transport_ode(manifold: ChartedManifold, path: CurvePath, z0) -> Array:
    """Transport ``z0`` along ``path`` by RK4 on ``z' = -Γ(γ', z)``.

    Midpoint states come from cubic Hermite interpolation of the stored
    nodes and velocities.  Returns the transported components at every node,
    each in the chart of that node.
    """
    if path.velocities is None:
        if np.any(path.charts != path.charts[0]):
            raise ValueError("multi-chart path needs stored velocities")
        path = CurvePath(path.times, path.points, np.gradient(path.points, path.times, axis=0, edge_order=2),
                         path.charts)
    z = np.asarray(z0, dtype=float).copy()
    out = [z.copy()]

    def rhs(x, w, zz, c):
        gam = christoffel(manifold, x, c, check=False)
        return -np.einsum("jkl,k,l->j", gam, w, zz)

    for i in range(len(path) - 1):
        c = path.charts[i]
        h = path.times[i + 1] - path.times[i]
        p0, v0 = path.points[i], path.velocities[i]
        p1, v1 = _segment(manifold, path, i)
        pm = 0.5 * (p0 + p1) + h / 8 * (v0 - v1)
        vm = (1.5 * (p1 - p0) / h) - 0.25 * (v0 + v1)
        k1 = rhs(p0, v0, z, c)
        k2 = rhs(pm, vm, z + 0.5 * h * k1, c)
        k3 = rhs(pm, vm, z + 0.5 * h * k2, c)
        k4 = rhs(p1, v1, z + h * k3, c)
        z = z + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if path.charts[i + 1] != c:
            _, J = manifold.to_chart(p1, c, path.charts[i + 1])
            z = J @ z
        out.append(z.copy())
    return np.array(out)


def classical_energy(manifold: ChartedManifold, path: CurvePath) -> float:
    """Midpoint quadrature of ``∫ g(γ', γ') dt`` with difference velocities."""
    if len(path) < 2:
        raise ValueError("path needs at least two nodes")
    total = 0.0
    for i in range(len(path) - 1):
        h = path.times[i + 1] - path.times[i]
        p0 = path.points[i]
        p1, _ = _segment(manifold, path, i)
        vel = (p1 - p0) / h
        g = manifold.metric(0.5 * (p0 + p1), path.charts[i])
        total += float(vel @ g @ vel) * h
    return total
