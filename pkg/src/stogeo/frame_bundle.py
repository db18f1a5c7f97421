"""Stochastic development on the orthonormal frame bundle.

A frame path carries, at every node, the base point ``m`` (chart
coordinates), the frame matrix ``e`` whose columns are the g-orthonormal
vectors ``e_alpha``, and the chart index.  All arrays have a leading path
axis so whole ensembles are advanced at once.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry as geo
from .errors import ChartError, NumericalError
from .geometry import ChartedManifold
from .noise import NoisePath, ensemble_increments

ORTHO_HARD_BOUND = 1e-3
MAX_SUBSTEPS = 64
JACOBIAN_STEP = 1e-5
# Sign linking the frame curvature R(e_a, e_b) to the 2-form entering the
# rho equation of the variation process (see ``frame_curvature``).
CURVATURE_FORM_SIGN = 1.0


class DriftField:
    """Time-dependent vector field ``u(t, m)`` on a charted manifold.

    Closed-form fields are evaluated in their home chart; points given in
    another chart are mapped there and the result pushed back with the
    transition Jacobian.  Grid fields use multilinear interpolation in space
    and are piecewise constant in time between stored slices.
    """

    def __init__(self, manifold: ChartedManifold, func: Callable, chart: int = 0, kind: str = "closed-form",
                 grid: Optional[dict] = None):
        self.manifold = manifold
        self.func = func
        self.chart = chart
        self.kind = kind
        self.grid = grid

    @classmethod
    def closed_form(cls, manifold, func, chart: int = 0) -> "DriftField":
        return cls(manifold, func, chart)

    @classmethod
    def zero(cls, manifold) -> "DriftField":
        return cls(manifold, lambda t, m: np.zeros_like(m), 0, kind="zero")

    @classmethod
    def constant(cls, manifold, value, chart: int = 0) -> "DriftField":
        value = np.asarray(value, dtype=float)
        return cls(manifold, lambda t, m: np.broadcast_to(value, m.shape).copy(), chart)

    @classmethod
    def from_grid(cls, manifold, times, axes: Sequence, values, periodic=None, chart: int = 0) -> "DriftField":
        """Grid field; ``values`` has shape ``(nt, n_1, ..., n_d, d)`` on uniform axes."""
        times = np.asarray(times, dtype=float)
        axes = [np.asarray(a, dtype=float) for a in axes]
        values = np.asarray(values, dtype=float)
        d = len(axes)
        if values.shape != (len(times),) + tuple(len(a) for a in axes) + (d,):
            raise ValueError(f"grid values have shape {values.shape}, inconsistent with axes")
        periodic = tuple(periodic) if periodic is not None else (False,) * d
        grid = {"times": times, "axes": axes, "values": values, "periodic": periodic,
                "x0": np.array([a[0] for a in axes]), "dxs": np.array([a[1] - a[0] for a in axes])}
        field = cls(manifold, None, chart, kind="grid", grid=grid)
        field.func = field._grid_eval
        return field

    def _time_index(self, t: float) -> int:
        times = self.grid["times"]
        if len(times) == 1:
            return 0
        k = int(np.floor((t - times[0]) / (times[1] - times[0]) + 1e-9))
        return min(max(k, 0), len(times) - 1)

    def _grid_eval(self, t, m):
        gd = self.grid
        vals = gd["values"][self._time_index(t)]
        d = len(gd["axes"])
        s = (m - gd["x0"]) / gd["dxs"]
        near = np.round(s)
        s = np.where(np.abs(s - near) < 1e-9, near, s)
        lo = np.floor(s).astype(np.int64)
        w = s - lo
        idx_lo, idx_hi = [], []
        for a in range(d):
            n = len(gd["axes"][a])
            if gd["periodic"][a]:
                i0 = np.mod(lo[..., a], n)
                i1 = np.mod(i0 + 1, n)
            else:
                i0 = np.clip(lo[..., a], 0, n - 2)
                w[..., a] = s[..., a] - i0
                i1 = i0 + 1
            idx_lo.append(i0)
            idx_hi.append(i1)
        out = np.zeros(m.shape[:-1] + (vals.shape[-1],))
        for corner in range(2 ** d):
            weight = np.ones(m.shape[:-1])
            index = []
            for a in range(d):
                hi = (corner >> a) & 1
                weight = weight * (w[..., a] if hi else 1.0 - w[..., a])
                index.append(idx_hi[a] if hi else idx_lo[a])
            out += weight[..., None] * vals[tuple(index)]
        return out

    def __call__(self, t: float, m, chart: Optional[int] = None) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        chart = self.chart if chart is None else chart
        if chart == self.chart or self.kind == "zero":
            return np.asarray(self.func(t, m), dtype=float)
        mh, _ = self.manifold.to_chart(m, chart, self.chart)
        uh = np.asarray(self.func(t, mh), dtype=float)
        _, J = self.manifold.to_chart(mh, self.chart, chart)
        return np.einsum("...ij,...j->...i", J, uh)

    def covariant_jacobian(self, t: float, m, e, chart: int, step: float = JACOBIAN_STEP) -> np.ndarray:
        """Frame matrix ``D[..., beta, alpha] = (e^{-1} ∇_{e_alpha} u)^beta``.

        This is the horizontal derivative of the frame components of ``u``
        along ``A_alpha``, computed by central differences along ``e_alpha``.
        """
        m = np.asarray(m, dtype=float)
        d = m.shape[-1]
        u = self(t, m, chart)
        gam = geo.christoffel(self.manifold, m, chart, check=False)
        cols = []
        for a in range(d):
            ea = e[..., :, a]
            du = (self(t, m + step * ea, chart) - self(t, m - step * ea, chart)) / (2 * step)
            cols.append(du + np.einsum("...ikl,...k,...l->...i", gam, ea, u))
        nab = np.stack(cols, axis=-1)
        return np.linalg.solve(e, nab)


@dataclass
class FramePath:
    """An ensemble of discretized frame-bundle paths with their noise."""

    times: np.ndarray
    m: np.ndarray  # (P, N+1, d)
    e: np.ndarray  # (P, N+1, d, d)
    charts: np.ndarray  # (P, N+1)
    dx: np.ndarray  # (P, N, d) unscaled N(0, dt) increments
    seed: int
    path_indices: np.ndarray
    noise_scale: float = 1.0
    failed: Optional[np.ndarray] = None
    substeps: Optional[np.ndarray] = None  # (P, N) Heun substeps used per step

    def __post_init__(self):
        if self.failed is None:
            self.failed = np.zeros(self.m.shape[0], dtype=bool)
        if self.substeps is None:
            self.substeps = np.ones(self.dx.shape[:2], dtype=np.int64)

    @property
    def n_paths(self) -> int:
        return self.m.shape[0]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dim(self) -> int:
        return self.m.shape[-1]

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def noise(self, p: int = 0) -> NoisePath:
        return NoisePath(self.times, self.dx[p], self.seed, int(self.path_indices[p]))

    def index_of(self, t: float) -> int:
        i = int(round((t - self.times[0]) / self.dt))
        if i < 0 or i > self.n_steps or abs(self.times[i] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} is not a grid time of this path")
        return i

    def select(self, rows) -> "FramePath":
        rows = np.asarray(rows)
        return FramePath(self.times, self.m[rows], self.e[rows], self.charts[rows], self.dx[rows], self.seed,
                         self.path_indices[rows], self.noise_scale, self.failed[rows], self.substeps[rows])


def _frame_drift(manifold, drift, c, t, m, e, dW, h):
    u = drift(t, m, c)
    dX = dW + np.linalg.solve(e, u[..., None])[..., 0] * h
    dm = np.einsum("...ia,...a->...i", e, dX)
    gam = geo.christoffel(manifold, m, c, check=False)
    de = -np.einsum("...ijk,...j,...ka->...ia", gam, dm, e)
    return dm, de


def _heun_step(manifold, drift, c, t, h, m, e, dW):
    dm0, de0 = _frame_drift(manifold, drift, c, t, m, e, dW, h)
    mp, ep = m + dm0, e + de0
    dm1, de1 = _frame_drift(manifold, drift, c, t + h, mp, ep, dW, h)
    return m + 0.5 * (dm0 + dm1), e + 0.5 * (de0 + de1)


def _substeps(manifold, drift, c, t, h, m, e, dW, k: int):
    for j in range(k):
        m, e = _heun_step(manifold, drift, c, t + j * h / k, h / k, m, e, dW / k)
        if j < k - 1:
            e = geo.gram_schmidt(e, manifold.metric(m, c))
    return m, e


def _refined_step(manifold, drift, c, t, h, m, e, dW, forced=None):
    """Heun step, subdividing the increment on paths whose frame drifts too far.

    Rare large increments make the ``O(|dx|^3)`` orthonormality defect of a
    single Heun step exceed the hard bound.  Those paths are re-integrated
    along the same straight-line increment in ``2, 4, ...`` equal substeps,
    so the driving path is unchanged; only if ``MAX_SUBSTEPS`` is not
    enough is the step rejected.  ``forced`` replays given substep counts.
    Returns the new state and the substep count used per path.
    """
    if forced is not None:
        mn, en = np.empty_like(m), np.empty_like(e)
        for k in np.unique(forced):
            sel = forced == k
            mn[sel], en[sel] = _substeps(manifold, drift, c, t, h, m[sel], e[sel], dW[sel], int(k))
        return mn, en, forced
    mn, en = _heun_step(manifold, drift, c, t, h, m, e, dW)
    counts = np.ones(len(m), dtype=np.int64)
    bad = orthonormality_error(manifold, mn, en, c) > ORTHO_HARD_BOUND
    k = 2
    while np.any(bad):
        if k > MAX_SUBSTEPS:
            err = np.max(orthonormality_error(manifold, mn, en, c))
            raise NumericalError(f"frame orthonormality drift {err:.2e} at t={t:.4g}; reduce dt")
        sel = np.nonzero(bad)[0]
        mn[sel], en[sel] = _substeps(manifold, drift, c, t, h, m[sel], e[sel], dW[sel], k)
        counts[sel] = k
        bad[sel] = orthonormality_error(manifold, mn[sel], en[sel], c) > ORTHO_HARD_BOUND
        k *= 2
    return mn, en, counts


def orthonormality_error(manifold, m, e, chart: int) -> np.ndarray:
    g = manifold.metric(m, chart)
    gram = np.einsum("...ia,...ij,...jb->...ab", e, g, e)
    return np.max(np.abs(gram - np.eye(e.shape[-1])), axis=(-2, -1))


def simulate_frame_paths(manifold: ChartedManifold, drift: DriftField, m0, T: float, dt: float, e0=None,
                         seed: int = 0, n_paths: Optional[int] = None, path_indices=None, chart: int = 0,
                         noise_scale: float = 1.0, dx=None, t0: float = 0.0, on_exit: str = "raise",
                         follow: Optional[FramePath] = None) -> FramePath:
    """Integrate ``dm = e∘(σ dx + U dt)``, ``de = -Γ(∘dm, e)`` by a Heun step.

    ``m0``/``e0`` may be single states or per-path arrays.  ``dx`` overrides
    the generated increments (shape ``(P, N, d)``), which is how common-noise
    perturbations are fed in.  After each step the frame is Gram-Schmidt
    re-orthonormalized with respect to ``g(m)``; a pre-correction drift above
    ``1e-3`` is first cured by subdividing the step and raises
    :class:`NumericalError` if that fails.  Points that leave every chart
    raise :class:`ChartError` unless ``on_exit="mark"``, which flags the path
    as failed and freezes it.

    ``follow`` replays the chart sequence and step subdivisions of a
    reference ensemble of the same shape.  This keeps the discrete Itô map
    smooth in the noise, which finite-difference variations rely on.
    """
    d = manifold.dim
    n, h = geo._n_steps(T, dt)
    if path_indices is None:
        if dx is not None:
            n_paths = np.asarray(dx).shape[0]
        path_indices = np.arange(1 if n_paths is None else n_paths)
    path_indices = np.asarray(path_indices, dtype=np.int64)
    P = len(path_indices)
    m = np.broadcast_to(np.asarray(m0, dtype=float), (P, d)).copy()
    manifold.require_domain(m, chart)
    if e0 is None:
        e = geo.orthonormal_frame(manifold, m, chart)
    else:
        e = np.broadcast_to(np.asarray(e0, dtype=float), (P, d, d)).copy()
        if np.max(orthonormality_error(manifold, m, e, chart)) > 1e-8:
            raise ValueError("initial frame is not g-orthonormal")
    if dx is None:
        dx = ensemble_increments(seed, path_indices, n, d, h)
    else:
        dx = np.asarray(dx, dtype=float)
        if dx.shape != (P, n, d):
            raise ValueError(f"noise override has shape {dx.shape}, expected {(P, n, d)}")
    times = t0 + h * np.arange(n + 1)
    ms = np.empty((P, n + 1, d))
    es = np.empty((P, n + 1, d, d))
    cs = np.empty((P, n + 1), dtype=int)
    ms[:, 0], es[:, 0], cs[:, 0] = m, e, chart
    subs = np.ones((P, n), dtype=np.int64)
    if follow is not None and (follow.m.shape != ms.shape or follow.charts[0, 0] != chart):
        raise ValueError("reference ensemble does not match the requested grid")
    charts = np.full(P, chart, dtype=int)
    failed = np.zeros(P, dtype=bool)
    for i in range(n):
        t = times[i]
        start = charts.copy()  # each path takes exactly one step, in its chart at t_i
        for c in np.unique(start[~failed]):
            idx = np.nonzero((start == c) & ~failed)[0]
            forced = None if follow is None else follow.substeps[idx, i]
            mn, en, subs[idx, i] = _refined_step(manifold, drift, c, t, h, m[idx], e[idx],
                                                 noise_scale * dx[idx, i], forced)
            en = geo.gram_schmidt(en, manifold.metric(mn, c))
            new = manifold.preferred_chart(mn, c) if follow is None else follow.charts[idx, i + 1]
            for c2 in np.unique(new[new != c]):
                sel = new == c2
                mn[sel], J = manifold.to_chart(mn[sel], c, c2)
                en[sel] = geo.gram_schmidt(J @ en[sel], manifold.metric(mn[sel], c2))
            ok = np.ones(len(idx), dtype=bool)
            for c2 in np.unique(new):
                sel = new == c2
                ok[sel] = manifold.in_domain(mn[sel], c2)
            if not np.all(ok):
                if on_exit == "raise":
                    raise ChartError(f"path left every chart at t={times[i + 1]:.4g}")
                failed[idx[~ok]] = True
            m[idx], e[idx], charts[idx] = mn, en, new
        ms[:, i + 1], es[:, i + 1], cs[:, i + 1] = m, e, charts
        if np.any(failed):
            ms[failed, i + 1] = np.nan
    return FramePath(times, ms, es, cs, dx, seed, path_indices, noise_scale, failed, subs)


def simulate_frame_path(manifold, drift, m0, e0, T, dt, seed, path_index, **kw) -> FramePath:
    """Single-path convenience wrapper around :func:`simulate_frame_paths`."""
    return simulate_frame_paths(manifold, drift, m0, T, dt, e0=e0, seed=seed, path_indices=[path_index], **kw)


def ito_parallel_transport(path: FramePath, s: float, t: float, z) -> np.ndarray:
    """Apply ``r(t) r(s)^{-1}`` to ``z`` (a vector at ``m(s)``) on every path."""
    i, j = path.index_of(s), path.index_of(t)
    z = np.broadcast_to(np.asarray(z, dtype=float), (path.n_paths, path.dim))
    frame = np.linalg.solve(path.e[:, i], z[..., None])
    return np.einsum("pia,pa->pi", path.e[:, j], frame[..., 0])


def node_geometry(manifold: ChartedManifold, path: FramePath, drift: DriftField, jacobian: bool = True) -> dict:
    """Frame-coordinate tensors at every node: drift, Ricci, curvature, drift Jacobian."""
    P, N1, d = path.m.shape
    U = np.zeros((P, N1, d))
    ric = np.zeros((P, N1, d, d))
    riem = np.zeros((P, N1, d, d, d, d))
    D = np.zeros((P, N1, d, d))
    good = np.all(np.isfinite(path.m), axis=-1)
    flat = manifold.is_flat
    for i, t in enumerate(path.times):
        for c in np.unique(path.charts[good[:, i], i]):
            sel = np.nonzero((path.charts[:, i] == c) & good[:, i])[0]
            m, e = path.m[sel, i], path.e[sel, i]
            if not flat:
                cd = geo.curvature_and_ricci(manifold, m, c, check=False)
                ric[sel, i] = np.einsum("pia,pij,pjb->pab", e, cd.ricci, e)
                riem[sel, i] = np.einsum("pai,pijkl,pjb,pkc,pld->pabcd", np.linalg.inv(e), cd.riemann, e, e, e,
                                         optimize=True)
            U[sel, i] = np.linalg.solve(e, drift(t, m, c)[..., None])[..., 0]
            if jacobian:
                D[sel, i] = drift.covariant_jacobian(t, m, e, c)
    return {"U": U, "ricci": ric, "riemann": riem, "jacobian": D}


def frame_curvature(riemann_frame: np.ndarray, a, b) -> np.ndarray:
    """so(d)-valued curvature 2-form ``Ω(a, b)`` in frame coordinates.

    With ``riemann_frame[..., α, β, γ, δ] = <R(e_γ, e_δ) e_β, e_α>`` this
    returns ``CURVATURE_FORM_SIGN * R(a, b)`` as a matrix on frame
    coordinates.  With this sign the Itô correction of ``-rho ∘dx`` is
    ``+½ Ricci(h) dt``, and perturbing the driving noise by the resulting
    zeta moves the path by exactly ``e h`` to first order.
    """
    return CURVATURE_FORM_SIGN * np.einsum("...abcd,...c,...d->...ab", riemann_frame, a, b)


@dataclass
class VariationPath:
    """Solution ``(zeta, rho)`` of the variation system for a perturbation ``h``.

    ``zeta_increment[:, i]`` is the drift part of the zeta step,
    ``Δh - (D - ½σ² Ric)(h) dt``; ``U``, ``jacobian`` and ``ricci`` are the
    frame-coordinate node tensors it was built from.
    """

    zeta: np.ndarray
    rho: np.ndarray
    h: np.ndarray
    zeta_increment: np.ndarray
    U: np.ndarray
    jacobian: np.ndarray
    ricci: np.ndarray


def _perturbation_values(h, times, P, d) -> np.ndarray:
    if callable(h):
        vals = np.array([np.asarray(h(t), dtype=float) * np.ones(d) for t in times])
    else:
        vals = np.asarray(h, dtype=float)
    if vals.shape == (len(times), d):
        vals = np.broadcast_to(vals, (P, len(times), d))
    if vals.shape != (P, len(times), d):
        raise ValueError(f"perturbation grid {vals.shape} does not match the path grid")
    return vals


def variation_process(manifold: ChartedManifold, path: FramePath, drift: DriftField, h,
                      geometry: Optional[dict] = None) -> VariationPath:
    """Co-integrate ``(zeta, rho)`` along ``path`` reusing its own noise.

    ``dzeta = h' dt - D(h) dt - rho ∘dx``, integrated in Itô form as
    ``h' dt - [D - ½σ² Ric](h) dt - rho dx`` (left point), and
    ``drho = Ω(∘dX, h)`` with ``dX = σ dx + U dt`` (trapezoidal along the
    stored nodes).  ``zeta`` is the driving-noise perturbation whose image
    under the Itô map is the variation ``e h`` of the path: re-simulating
    with noise ``dx + ε dzeta / σ`` displaces ``m(t)`` by ``ε e(t) h(t)``.
    ``h`` is a callable of time or an array on the path grid, in frame
    coordinates, with ``h(t_0) = 0``.
    """
    P, N1, d = path.m.shape
    hv = _perturbation_values(h, path.times, P, d)
    if np.max(np.abs(hv[:, 0])) > 1e-12:
        raise ValueError("perturbation must vanish at the initial time")
    geom = node_geometry(manifold, path, drift) if geometry is None else geometry
    U, ric, riem, D = geom["U"], geom["ricci"], geom["riemann"], geom["jacobian"]
    s = path.noise_scale
    dt = np.diff(path.times)
    zeta = np.zeros((P, N1, d))
    rho = np.zeros((P, N1, d, d))
    inc = np.zeros((P, N1 - 1, d))
    for i in range(N1 - 1):
        dW = s * path.dx[:, i]
        hi = hv[:, i]
        drift_part = (hv[:, i + 1] - hi) - np.einsum("pab,pb->pa", D[:, i] - 0.5 * s**2 * ric[:, i], hi) * dt[i]
        inc[:, i] = drift_part
        zeta[:, i + 1] = zeta[:, i] + drift_part - np.einsum("pab,pb->pa", rho[:, i], dW)
        dX = dW + 0.5 * (U[:, i] + U[:, i + 1]) * dt[i]
        rho[:, i + 1] = rho[:, i] + 0.5 * (frame_curvature(riem[:, i], dX, hi)
                                           + frame_curvature(riem[:, i + 1], dX, hv[:, i + 1]))
    return VariationPath(zeta, rho, hv, inc, U, D, ric)
