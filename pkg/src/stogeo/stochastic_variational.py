"""Generalized derivative, stochastic energy, first variation and the drift residual.

The generalized derivative of a diffusion is the drift of its
anti-development transported forward; re-branching many continuations
from one frozen frame-bundle state realizes the conditional expectation
exactly.  Along an ``L_u`` diffusion this drift is ``u`` itself, which is
how the stochastic energy and its first variation are estimated.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import geometry as geo
from .burgers import ColeHopfProfile, solve_burgers_backward  # noqa: F401  (re-exported)
from .errors import NumericalError
from .frame_bundle import (DriftField, FramePath, node_geometry, simulate_frame_paths, variation_process)

MIN_ENSEMBLE = 100
DEFAULT_CHUNK = 2000
MAX_FAILURE_FRACTION = 0.01


def _mean_and_stderr(samples: np.ndarray):
    samples = np.asarray(samples, dtype=float)
    n = samples.shape[0]
    mean = samples.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(n)


def _aligned_next(manifold, path: FramePath):
    """``m_{i+1}, e_{i+1}`` expressed in the chart of node ``i``."""
    m1, e1 = path.m[:, 1:].copy(), path.e[:, 1:].copy()
    c0, c1 = path.charts[:, :-1], path.charts[:, 1:]
    for a in np.unique(c1):
        for b in np.unique(c0):
            sel = (c1 == a) & (c0 == b)
            if a != b and np.any(sel):
                m1[sel], J = manifold.to_chart(m1[sel], a, b)
                e1[sel] = J @ e1[sel]
    return m1, e1


def frame_increments(manifold, path: FramePath) -> np.ndarray:
    """Stratonovich increments of the anti-development in frame coordinates.

    ``½ (e_i^{-1} + e_{i+1}^{-1}) (m_{i+1} - m_i)``, the trapezoidal rule that
    the Heun step of the simulator integrates exactly for ``dm = e dX``.
    """
    m1, e1 = _aligned_next(manifold, path)
    dm = (m1 - path.m[:, :-1])[..., None]
    return 0.5 * (np.linalg.solve(path.e[:, :-1], dm) + np.linalg.solve(e1, dm))[..., 0]


def antidevelopment(manifold, path: FramePath) -> np.ndarray:
    """``η(t) = ∫ t_{0←s} ∘dξ(s)`` as vectors at ``m(t_0)``, shape ``(P, N+1, d)``."""
    inc = frame_increments(manifold, path)
    eta = np.concatenate([np.zeros_like(inc[:, :1]), np.cumsum(inc, axis=1)], axis=1)
    return np.einsum("pia,pna->pni", path.e[:, 0], eta)


@dataclass
class GeneralizedDerivativeEstimate:
    t: float
    estimate: np.ndarray  # chart components at the common point m(t)
    stderr: np.ndarray
    n_paths: int
    dt_forward: float
    point: np.ndarray
    chart: int


def rebranch(manifold, drift: DriftField, m, e, t: float, dt: float, n_paths: int, seed: int,
             chart: int = 0, n_steps: int = 1, noise_scale: float = 1.0, first_index: int = 0) -> FramePath:
    """Fresh continuations of one frozen state ``(m, e)`` over ``n_steps`` steps from ``t``."""
    idx = np.arange(first_index, first_index + n_paths)
    return simulate_frame_paths(manifold, drift, m, n_steps * dt, dt, e0=e, seed=seed, path_indices=idx,
                                chart=chart, noise_scale=noise_scale, t0=t)


def generalized_derivative(manifold, ensemble: FramePath, t: Optional[float] = None,
                           dt_forward: Optional[float] = None) -> GeneralizedDerivativeEstimate:
    """``D̂ = t_{t←0} E[(η(t+ε) - η(t)) / ε]`` over a re-branched ensemble.

    All paths must share ``(m(t), e(t))`` exactly.  ``ε`` defaults to one
    grid step, so the estimate carries an ``O(dt)`` bias.
    """
    if ensemble.n_paths < MIN_ENSEMBLE:
        raise ValueError(f"ensemble of {ensemble.n_paths} paths is below the minimum {MIN_ENSEMBLE}")
    t = float(ensemble.times[0]) if t is None else t
    eps = ensemble.dt if dt_forward is None else dt_forward
    i, j = ensemble.index_of(t), ensemble.index_of(t + eps)
    if j <= i:
        raise ValueError("dt_forward must be positive")
    if (np.ptp(ensemble.m[:, i], axis=0).max() > 0 or np.ptp(ensemble.e[:, i], axis=0).max() > 0
            or np.ptp(ensemble.charts[:, i]) > 0):
        raise ValueError("ensemble paths do not share a common state at time t")
    deta = frame_increments(manifold, ensemble)[:, i:j].sum(axis=1)
    vecs = np.einsum("ia,pa->pi", ensemble.e[0, i], deta) / eps
    mean, se = _mean_and_stderr(vecs)
    return GeneralizedDerivativeEstimate(t, mean, se, ensemble.n_paths, eps, ensemble.m[0, i].copy(),
                                         int(ensemble.charts[0, i]))


@dataclass
class EnergyReport:
    estimate: float
    stderr: float
    n_paths: int
    dt: float
    n_failed: int = 0


def frame_drift(manifold, path: FramePath, drift: DriftField) -> np.ndarray:
    """Frame components ``U = e^{-1} u`` at every node, ``(P, N+1, d)``."""
    P, N1, d = path.m.shape
    U = np.full((P, N1, d), np.nan)
    for i, t in enumerate(path.times):
        for c in np.unique(path.charts[:, i]):
            sel = (path.charts[:, i] == c) & ~path.failed
            if np.any(sel):
                u = drift(t, path.m[sel, i], c)
                U[sel, i] = np.linalg.solve(path.e[sel, i], u[..., None])[..., 0]
    return U


def _chunks(n_paths: int, chunk: int):
    for start in range(0, n_paths, chunk):
        yield np.arange(start, min(n_paths, start + chunk))


def _check_failures(n_failed: int, n_paths: int, limit: float):
    if n_failed > limit * n_paths:
        raise NumericalError(f"{n_failed} of {n_paths} paths left the atlas (limit {limit:.1%})")


def stochastic_energy(manifold, drift: DriftField, m0, T: float, dt: float, n_paths: int, seed: int,
                      e0=None, chart: int = 0, noise_scale: float = 1.0,
                      max_failure: float = MAX_FAILURE_FRACTION, chunk: int = DEFAULT_CHUNK) -> EnergyReport:
    """Monte Carlo ``E ∫ |u(t, m(t))|_g² dt`` with trapezoidal quadrature per path."""
    samples, n_failed = [], 0
    for idx in _chunks(n_paths, chunk):
        path = simulate_frame_paths(manifold, drift, m0, T, dt, e0=e0, seed=seed, path_indices=idx,
                                    chart=chart, noise_scale=noise_scale, on_exit="mark")
        n_failed += int(path.failed.sum())
        U = frame_drift(manifold, path, drift)[~path.failed]
        sq = np.sum(U**2, axis=-1)
        samples.append(0.5 * np.sum((sq[:, 1:] + sq[:, :-1]) * np.diff(path.times), axis=1))
    _check_failures(n_failed, n_paths, max_failure)
    mean, se = _mean_and_stderr(np.concatenate(samples))
    return EnergyReport(float(mean), float(se), n_paths - n_failed, float(path.dt), n_failed)


@dataclass
class VariationReport:
    estimate: float
    stderr: float
    n_paths: int
    label: str = ""

    @property
    def z_score(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.estimate == 0 else np.inf
        return abs(self.estimate) / self.stderr


def energy_variation_samples(path: FramePath, var, dt: np.ndarray) -> np.ndarray:
    """Per-path ``2 Σ <U, δ(drift)>`` for the noise perturbation carried by ``var``.

    Perturbing the noise by ``ε zeta`` shifts the drift of the
    anti-development by ``ε`` times the drift part of zeta and moves the
    frame drift by ``δU = D(h) - rho U``; both contributions are kept.
    """
    U = var.U[:, :-1]
    dU = (np.einsum("pnab,pnb->pna", var.jacobian[:, :-1], var.h[:, :-1])
          - np.einsum("pnab,pnb->pna", var.rho[:, :-1], U)) * dt[None, :, None]
    return 2.0 * np.sum(U * (var.zeta_increment + dU), axis=(1, 2))


def first_variation(manifold, drift: DriftField, h, m0, T: float, dt: float, n_paths: int, seed: int,
                    e0=None, chart: int = 0, noise_scale: float = 1.0,
                    max_failure: float = MAX_FAILURE_FRACTION, chunk: int = DEFAULT_CHUNK):
    """First variation of the stochastic energy in the direction of perturbations ``h``.

    ``h`` is a callable ``t -> R^d`` (frame coordinates) with
    ``h(0) = h(T) = 0``, or a sequence of such callables; a list of
    :class:`VariationReport` is returned for a sequence.  All perturbations
    share the same paths.
    """
    basket = list(h) if isinstance(h, (list, tuple)) else [h]
    for k, hk in enumerate(basket):
        ends = np.concatenate([np.atleast_1d(hk(0.0)), np.atleast_1d(hk(T))])
        if np.max(np.abs(ends)) > 1e-12:
            raise ValueError(f"perturbation {k} does not vanish at both endpoints")
    samples = [[] for _ in basket]
    n_failed = 0
    for idx in _chunks(n_paths, chunk):
        path = simulate_frame_paths(manifold, drift, m0, T, dt, e0=e0, seed=seed, path_indices=idx,
                                    chart=chart, noise_scale=noise_scale, on_exit="mark")
        n_failed += int(path.failed.sum())
        path = path.select(np.nonzero(~path.failed)[0])
        if path.n_paths == 0:
            continue
        geom = node_geometry(manifold, path, drift)
        steps = np.diff(path.times)
        for k, hk in enumerate(basket):
            var = variation_process(manifold, path, drift, hk, geometry=geom)
            samples[k].append(energy_variation_samples(path, var, steps))
    _check_failures(n_failed, n_paths, max_failure)
    reports = []
    for k, s in enumerate(samples):
        mean, se = _mean_and_stderr(np.concatenate(s))
        reports.append(VariationReport(float(mean), float(se), n_paths - n_failed, getattr(basket[k], "label", "")))
    return reports if isinstance(h, (list, tuple)) else reports[0]


def sine_basket(T: float, dim: int = 1, n_modes: int = 5, direction=None) -> list:
    """Perturbations ``sin(kπt/T)·v`` for ``k = 1..n_modes``."""
    v = np.eye(dim)[0] if direction is None else np.asarray(direction, dtype=float)
    basket = []
    for k in range(1, n_modes + 1):
        def h(t, k=k):
            return np.sin(k * np.pi * t / T) * v
        h.label = f"sin({k}πt/T)"
        basket.append(h)
    return basket


# ---------------------------------------------------------------------------
# residual of the drift equation

CONVENTIONS = ("rough", "hodge", "critical")


@dataclass
class ResidualField:
    """Residual ``∂_t u + ∇_u u + ½[Δu + Ricci(u)]`` on a space-time grid.

    ``convention`` names the reading of the vector Laplacian: ``"rough"``
    uses the rough Laplacian ``g^{ij}∇_i∇_j u``, ``"hodge"`` the
    Hodge-de Rham one ``Δ_rough u - Ricci(u)``, and ``"critical"`` drops the
    explicit Ricci term from the Hodge reading, ``½ (Δ_rough u - Ricci(u))``,
    which is the condition the first variation enforces.  All three agree
    on flat manifolds.
    """

    times: np.ndarray
    axes: list
    values: np.ndarray
    sup_norm: float
    l2_norm: float
    convention: str = "rough"
    chart: int = 0
    u: Optional[np.ndarray] = None
    pointwise_norm: Optional[np.ndarray] = field(default=None, repr=False)


def sample_drift(drift: DriftField, times, axes: Sequence, periodic=None) -> DriftField:
    """Tabulate a drift on a tensor grid in its home chart."""
    times = np.asarray(times, dtype=float)
    mesh = np.stack(np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij"), axis=-1)
    vals = np.stack([drift(t, mesh, drift.chart) for t in times])
    return DriftField.from_grid(drift.manifold, times, axes, vals, periodic=periodic, chart=drift.chart)


def _grid_diff(v: np.ndarray, axis: int, step: float, periodic: bool, order: int = 4) -> np.ndarray:
    """First derivative by central stencils of order 2 or 4 (one-sided of equal order at edges)."""
    if order == 2:
        if periodic:
            return (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis)) / (2 * step)
        return np.gradient(v, step, axis=axis, edge_order=2)
    if order != 4:
        raise ValueError("space_order must be 2 or 4")
    if periodic:
        return (8 * (np.roll(v, -1, axis=axis) - np.roll(v, 1, axis=axis))
                - (np.roll(v, -2, axis=axis) - np.roll(v, 2, axis=axis))) / (12 * step)
    n = v.shape[axis]
    if n < 5:
        return np.gradient(v, step, axis=axis, edge_order=2)
    f = lambda i: np.take(v, i, axis=axis)  # noqa: E731
    out = np.empty_like(v)

    def put(i, val):
        idx = [slice(None)] * v.ndim
        idx[axis] = i
        out[tuple(idx)] = val

    put(slice(2, n - 2), (8 * (f(np.arange(3, n - 1)) - f(np.arange(1, n - 3)))
                          - (f(np.arange(4, n)) - f(np.arange(0, n - 4)))) / (12 * step))
    put(0, (-25 * f(0) + 48 * f(1) - 36 * f(2) + 16 * f(3) - 3 * f(4)) / (12 * step))
    put(1, (-3 * f(0) - 10 * f(1) + 18 * f(2) - 6 * f(3) + f(4)) / (12 * step))
    put(n - 1, (25 * f(n - 1) - 48 * f(n - 2) + 36 * f(n - 3) - 16 * f(n - 4) + 3 * f(n - 5)) / (12 * step))
    put(n - 2, (3 * f(n - 1) + 10 * f(n - 2) - 18 * f(n - 3) + 6 * f(n - 4) - f(n - 5)) / (12 * step))
    return out


def geodesic_residual(manifold, drift: DriftField, times=None, axes=None, periodic=None,
                      convention: str = "rough", space_order: int = 4) -> ResidualField:
    """Evaluate the drift residual with central differences on the field's grid.

    Time derivatives are second-order central differences; space
    derivatives use central stencils of ``space_order`` (2 or 4).  Closed-form
    drifts are first tabulated on ``times`` x ``axes``.  At least three time
    slices are needed for the time derivative.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    if drift.kind != "grid":
        if times is None or axes is None:
            raise ValueError("closed-form drifts need explicit times and axes")
        drift = sample_drift(drift, times, axes, periodic)
    gd = drift.grid
    times, axes, V = gd["times"], gd["axes"], gd["values"]
    if len(times) < 3:
        raise ValueError("residual needs at least 3 time slices")
    d = len(axes)
    c = drift.chart
    X = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    gam = geo.christoffel(manifold, X, c)
    g = manifold.metric(X, c)
    ginv = np.linalg.inv(g)

    def grad(T):  # T: (nt, n_1..n_d, ...) -> (..., i) derivative index last
        pieces = []
        for a in range(d):
            pieces.append(_grid_diff(T, a + 1, gd["dxs"][a], gd["periodic"][a], space_order))
        return np.stack(pieces, axis=-1)

    C = grad(V) + np.einsum("...kjl,t...l->t...kj", gam, V)  # C^k_j = ∇_j u^k
    dC = grad(C)  # [..., k, j, i] = ∂_i C^k_j
    cov2 = (dC + np.einsum("...kil,t...lj->t...kji", gam, C)
            - np.einsum("...lij,t...kl->t...kji", gam, C))
    lap = np.einsum("...ij,t...kji->t...k", ginv, cov2)
    adv = np.einsum("t...kj,t...j->t...k", C, V)
    dtV = np.gradient(V, times, axis=0, edge_order=2)
    if convention == "hodge":
        curv = 0.0
    else:
        ric = np.linalg.solve(g, geo.curvature_and_ricci(manifold, X, c).ricci)
        curv = np.einsum("...kl,t...l->t...k", ric, V) * (1.0 if convention == "rough" else -1.0)
    res = dtV + adv + 0.5 * (lap + curv)
    nrm = np.sqrt(np.einsum("t...i,...ij,t...j->t...", res, g, res))
    return ResidualField(times, axes, res, float(nrm.max()), float(np.sqrt(np.mean(nrm**2))), convention, c, V, nrm)


# ---------------------------------------------------------------------------
# zero-noise degeneration


@dataclass
class SigmaLimitReport:
    sigmas: np.ndarray
    deviations: np.ndarray
    stderr: np.ndarray
    slope: float
    monotone: bool


def sigma_limit(manifold, drift: DriftField, m0, t: float, dt: float, sigmas=(1.0, 0.3, 0.1, 0.03),
                n_outer: int = 10, n_rebranch: int = 2000, seed: int = 0, chart: int = 0) -> SigmaLimitReport:
    """Deviation of the generalized derivative from the classical one as σ → 0.

    For each σ the scaled diffusion is run from ``m0`` to ``t`` on
    ``n_outer`` outer paths and re-branched there.  The deviation is the
    Euclidean distance, after embedding, between ``D̂`` and the velocity of
    the deterministic flow at ``t`` (central difference of the zero-noise
    path).  Noise is common across σ.
    """
    flow = simulate_frame_paths(manifold, drift, m0, t + dt, dt, seed=seed, chart=chart, noise_scale=0.0)
    i = flow.index_of(t)
    emb = [manifold.embed(flow.m[0, k], flow.charts[0, k]) for k in (i - 1, i + 1)]
    classical = (emb[1] - emb[0]) / (2 * dt)
    devs, ses = [], []
    for s in sigmas:
        outer = simulate_frame_paths(manifold, drift, m0, t, dt, seed=seed, n_paths=n_outer, chart=chart,
                                     noise_scale=s)
        dk = []
        for k in range(n_outer):
            c = int(outer.charts[k, -1])
            branch = rebranch(manifold, drift, outer.m[k, -1], outer.e[k, -1], t, dt, n_rebranch, seed + 1,
                              chart=c, noise_scale=s, first_index=k * n_rebranch)
            est = generalized_derivative(manifold, branch)
            vec = manifold.embed_vector(est.point, est.estimate, c)
            dk.append(np.linalg.norm(vec - classical))
        mean, se = _mean_and_stderr(np.array(dk))
        devs.append(float(mean))
        ses.append(float(se))
    devs = np.array(devs)
    slope = float(np.polyfit(np.log(sigmas), np.log(devs), 1)[0])
    order = np.argsort(sigmas)
    monotone = bool(np.all(np.diff(devs[order]) > 0))
    return SigmaLimitReport(np.asarray(sigmas, dtype=float), devs, np.array(ses), slope, monotone)
