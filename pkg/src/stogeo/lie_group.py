"""Stochastic geodesics on matrix Lie groups with a left-invariant metric.

Algebra vectors are coordinate arrays with respect to a basis ``X_i`` of
the Lie algebra; ``structure[i, j, k]`` is ``c^k_{ij}`` in
``[X_i, X_j] = c^k_{ij} X_k``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .noise import ensemble_increments

PROJECTION_BOUND = 1e-3
PROJECTION_TRIGGER = 1e-10
MAX_INCREMENT = 1.0
# Sign with which ½ (Σ ∇_H ∇_H u + Σ R(u, H_k) H_k) enters the reduced
# equation; fixed by requiring solutions to be critical for the energy.
NOISE_CORRECTION_SIGN = 1.0


@dataclass
class LieAlgebraData:
    structure: np.ndarray  # (n, n, n), structure[i, j, k] = c^k_ij
    metric: np.ndarray  # (n, n)
    noise: np.ndarray  # (K, n) noise directions H_k including amplitudes
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.structure = np.asarray(self.structure, dtype=float)
        self.metric = np.asarray(self.metric, dtype=float)
        n = self.metric.shape[0]
        self.noise = np.asarray(self.noise, dtype=float).reshape(-1, n)
        if self.structure.shape != (n, n, n):
            raise ValueError("structure constants must have shape (n, n, n)")
        if not np.allclose(self.metric, self.metric.T) or np.linalg.eigvalsh(self.metric)[0] <= 0:
            raise ValueError("inner product must be symmetric positive-definite")
        if not np.allclose(self.structure, -np.swapaxes(self.structure, 0, 1)):
            raise ValueError("structure constants are not antisymmetric")
        if jacobi_defect(self.structure) > 1e-10:
            raise ValueError("structure constants violate the Jacobi identity")
        self._metric_inv = np.linalg.inv(self.metric)

    @property
    def dim(self) -> int:
        return self.metric.shape[0]

    @property
    def n_noise(self) -> int:
        return self.noise.shape[0]

    def inner(self, X, Y) -> np.ndarray:
        return np.einsum("...i,ij,...j->...", X, self.metric, Y)

    def bracket(self, X, Y) -> np.ndarray:
        return np.einsum("ijk,...i,...j->...k", self.structure, X, Y)

    def ad(self, X) -> np.ndarray:
        """Matrix of ``ad_X = [X, ·]``, acting on coordinate columns."""
        return np.einsum("ijk,...i->...kj", self.structure, X)

    def ad_star(self, X, Y) -> np.ndarray:
        """Metric transpose: ``<ad*_X Y, Z> = <Y, [X, Z]>``."""
        MY = np.asarray(Y, dtype=float) @ self.metric
        adX = np.einsum("ijk,...i->...jk", self.structure, X)  # (ad_X)^k_j stored as [j, k]
        return np.einsum("...jk,...k->...j", adX, MY) @ self._metric_inv

    def orthonormal_basis(self) -> np.ndarray:
        """Rows form a metric-orthonormal basis."""
        return np.linalg.inv(np.linalg.cholesky(self.metric))


def jacobi_defect(c: np.ndarray) -> float:
    """Max of ``|Σ_cyclic c^m_{il} c^l_{jk}|`` over all index triples."""
    t = np.einsum("ilm,jkl->ijkm", c, c)
    return float(np.max(np.abs(t + np.einsum("ijkm->jkim", t) + np.einsum("ijkm->kijm", t)))) if c.size else 0.0


def so3_structure() -> np.ndarray:
    c = np.zeros((3, 3, 3))
    for i, j, k in [(0, 1, 2), (1, 2, 0), (2, 0, 1)]:
        c[i, j, k], c[j, i, k] = 1.0, -1.0
    return c


def so3(inertia=(1.0, 1.0, 1.0), noise="principal", amplitude: float = 1.0) -> LieAlgebraData:
    """so(3) in the hat basis with inertia metric ``<X, Y> = Σ I_k X^k Y^k``.

    ``noise="principal"`` takes ``H_k = amplitude · e_k / sqrt(I_k)``, the
    unit principal axes; ``"none"`` gives no noise; an array is used as is.
    Unit inertia is the bi-invariant metric ``-½ tr(XY)``.
    """
    inertia = np.asarray(inertia, dtype=float)
    if isinstance(noise, str):
        if noise == "principal":
            H = amplitude * np.diag(1.0 / np.sqrt(inertia))
        elif noise == "none":
            H = np.zeros((0, 3))
        else:
            raise ValueError(f"unknown noise spec {noise!r}")
    else:
        H = np.asarray(noise, dtype=float)
    return LieAlgebraData(so3_structure(), np.diag(inertia), H, name="so3",
                          params={"inertia": inertia.tolist()})


def abelian(dim: int, metric=None, noise=None) -> LieAlgebraData:
    metric = np.eye(dim) if metric is None else np.asarray(metric, dtype=float)
    noise = np.eye(dim) if noise is None else np.asarray(noise, dtype=float)
    return LieAlgebraData(np.zeros((dim, dim, dim)), metric, noise, name="abelian", params={"dim": dim})


def algebra_from_json(spec: dict) -> LieAlgebraData:
    kind = spec.get("type", "custom")
    if kind == "so3":
        return so3(spec.get("inertia", [1.0, 1.0, 1.0]), spec.get("noise", "principal"),
                   float(spec.get("noise_amplitude", 1.0)))
    if kind in ("abelian", "torus"):
        return abelian(int(spec["dim"]), spec.get("metric"), spec.get("noise"))
    if kind == "custom":
        c = np.asarray(spec["structure_constants"], dtype=float)
        n = c.shape[0]
        return LieAlgebraData(c, spec.get("metric", np.eye(n)), spec.get("noise", np.zeros((0, n))))
    raise ValueError(f"unknown algebra type {kind!r}")


# ---------------------------------------------------------------------------
# connection and curvature


def algebra_connection(alg: LieAlgebraData, X, Y) -> np.ndarray:
    """Levi-Civita ``∇_X Y = ½([X, Y] - ad*_X Y - ad*_Y X)`` for left-invariant fields."""
    X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
    return 0.5 * (alg.bracket(X, Y) - alg.ad_star(X, Y) - alg.ad_star(Y, X))


def algebra_curvature(alg: LieAlgebraData, X, Y, Z) -> np.ndarray:
    """``R(X, Y) Z = ∇_X ∇_Y Z - ∇_Y ∇_X Z - ∇_[X,Y] Z``."""
    nab = lambda a, b: algebra_connection(alg, a, b)  # noqa: E731
    return nab(X, nab(Y, Z)) - nab(Y, nab(X, Z)) - nab(alg.bracket(X, Y), Z)


def algebra_ricci(alg: LieAlgebraData, u) -> np.ndarray:
    """Index-raised Ricci ``Σ_i R(u, e_i) e_i`` over a metric-orthonormal basis."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for e in alg.orthonormal_basis():
        out = out + algebra_curvature(alg, u, np.broadcast_to(e, u.shape), np.broadcast_to(e, u.shape))
    return out


def noise_drift_correction(alg: LieAlgebraData) -> np.ndarray:
    """``Σ_k ∇_{H_k} H_k``; vanishes under the criticality hypothesis."""
    return sum((algebra_connection(alg, H, H) for H in alg.noise), np.zeros(alg.dim))


def noise_operator(alg: LieAlgebraData, u) -> np.ndarray:
    """``½ (Σ_k ∇_{H_k} ∇_{H_k} u + Σ_k R(u, H_k) H_k)``.

    The curvature sum equals ``Ricci(u)`` when the ``H_k`` form an
    orthonormal basis.
    """
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    for H in alg.noise:
        Hb = np.broadcast_to(H, u.shape)
        out = out + algebra_connection(alg, Hb, algebra_connection(alg, Hb, u)) + algebra_curvature(alg, u, Hb, Hb)
    return 0.5 * out


def euler_poincare_rhs(alg: LieAlgebraData, u, with_noise_correction: bool = True) -> np.ndarray:
    rhs = alg.ad_star(u, u)
    if with_noise_correction and alg.n_noise:
        rhs = rhs + NOISE_CORRECTION_SIGN * noise_operator(alg, u)
    return rhs


@dataclass
class AlgebraPath:
    times: np.ndarray
    u: np.ndarray  # (N+1, n)

    def __call__(self, t):
        """Linear interpolation between the stored nodes."""
        t = np.asarray(t, dtype=float)
        return np.stack([np.interp(t, self.times, self.u[:, k]) for k in range(self.u.shape[1])], axis=-1)


def euler_poincare_integrate(alg: LieAlgebraData, u0, T: float, dt: float,
                             with_noise_correction: bool = True) -> AlgebraPath:
    """RK4 for ``du/dt = ad*_u u + ½(Σ ∇_H ∇_H u + Σ R(u, H) H)``.

    With the flag off (or no noise directions) this is the deterministic
    Euler-Poincaré equation ``du/dt = ad*_u u``.
    """
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n
    f = lambda x: euler_poincare_rhs(alg, x, with_noise_correction)  # noqa: E731
    u = np.empty((n + 1, alg.dim))
    u[0] = np.asarray(u0, dtype=float)
    scale = 1.0 + np.linalg.norm(u[0])
    for i in range(n):
        x = u[i]
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        u[i + 1] = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(u[i + 1])) or np.linalg.norm(u[i + 1]) > 1e6 * scale:
            raise NumericalError(f"Euler-Poincaré integration blew up at t={(i + 1) * h:.4g}")
    return AlgebraPath(np.linspace(0.0, T, n + 1), u)


# ---------------------------------------------------------------------------
# matrix representations


def _hat(v):
    v = np.asarray(v, dtype=float)
    z = np.zeros(v.shape[:-1])
    return np.stack([np.stack([z, -v[..., 2], v[..., 1]], -1),
                     np.stack([v[..., 2], z, -v[..., 0]], -1),
                     np.stack([-v[..., 1], v[..., 0], z], -1)], -2)


def so3_exp(v) -> np.ndarray:
    """Rodrigues formula, batched over leading axes."""
    v = np.asarray(v, dtype=float)
    th = np.linalg.norm(v, axis=-1)[..., None, None]
    K = _hat(v)
    small = th < 1e-6
    safe = np.where(small, 1.0, th)
    a = np.where(small, 1 - th**2 / 6, np.sin(safe) / safe)
    b = np.where(small, 0.5 - th**2 / 24, (1 - np.cos(safe)) / safe**2)
    return np.eye(3) + a * K + b * (K @ K)


def so3_log(R) -> np.ndarray:
    """Inverse of :func:`so3_exp` for rotation angles below π."""
    R = np.asarray(R, dtype=float)
    cos = np.clip(0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1), -1.0, 1.0)
    th = np.arccos(cos)
    w = 0.5 * np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], -1)
    small = th < 1e-6
    safe = np.where(small, 1.0, np.sin(th))
    factor = np.where(small, 1 + th**2 / 6, th / safe)
    if np.any(th > np.pi - 1e-6):
        raise NumericalError("rotation angle too close to π for the logarithm")
    return factor[..., None] * w


@dataclass
class MatrixRepresentation:
    """Faithful matrix representation of the algebra's group."""

    basis: np.ndarray  # (n, N, N)
    kind: str = "generic"  # "so3" | "translation" | "generic"

    @property
    def size(self) -> int:
        return self.basis.shape[-1]

    def matrix(self, X) -> np.ndarray:
        return np.einsum("...i,ijk->...jk", X, self.basis)

    def exp(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.kind == "so3":
            return so3_exp(X)
        if self.kind == "translation":
            return np.eye(self.size) + self.matrix(X)
        A = self.matrix(X)
        return np.stack([scipy.linalg.expm(a) for a in A.reshape(-1, self.size, self.size)]).reshape(A.shape)

    def log(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float)
        if self.kind == "so3":
            return so3_log(g)
        if self.kind == "translation":
            return g[..., :-1, -1]
        flat_basis = self.basis.reshape(self.basis.shape[0], -1).T
        logs = np.stack([np.real(scipy.linalg.logm(a)) for a in g.reshape(-1, self.size, self.size)])
        coords = np.linalg.lstsq(flat_basis, logs.reshape(len(logs), -1).T, rcond=None)[0].T
        return coords.reshape(g.shape[:-2] + (self.basis.shape[0],))

    def inverse(self, g) -> np.ndarray:
        if self.kind == "so3":
            return np.swapaxes(g, -1, -2)
        return np.linalg.inv(g)

    def project(self, g) -> np.ndarray:
        """Nearest group element: polar factor for rotations, identity otherwise."""
        if self.kind != "so3":
            return g
        U, _, Vt = np.linalg.svd(g)
        return U @ Vt

    def constraint_error(self, g) -> np.ndarray:
        if self.kind != "so3":
            return np.zeros(np.asarray(g).shape[:-2])
        return np.max(np.abs(np.swapaxes(g, -1, -2) @ g - np.eye(3)), axis=(-2, -1))


def representation_for(alg: LieAlgebraData) -> MatrixRepresentation:
    if alg.name == "so3":
        return MatrixRepresentation(_hat(np.eye(3)), "so3")
    if alg.name == "abelian":
        n = alg.dim
        basis = np.zeros((n, n + 1, n + 1))
        for i in range(n):
            basis[i, i, n] = 1.0
        return MatrixRepresentation(basis, "translation")
    raise ValueError("custom algebras need an explicit matrix representation")


# ---------------------------------------------------------------------------
# group paths

DriftSpec = Union[Callable, np.ndarray, AlgebraPath]


def _drift_at(u: DriftSpec, t) -> np.ndarray:
    if callable(u):
        return np.asarray(u(t), dtype=float)
    return np.asarray(u, dtype=float)


@dataclass
class GroupPath:
    times: np.ndarray
    g: np.ndarray  # (P, N+1, N_rep, N_rep)
    u: np.ndarray  # (N+1, n) drift samples at the nodes
    dx: np.ndarray  # (P, N, K)
    seed: int
    path_indices: np.ndarray
    scheme: str = "stratonovich"

    @property
    def n_paths(self) -> int:
        return self.g.shape[0]


def simulate_group_path(alg: LieAlgebraData, rep: MatrixRepresentation, u: DriftSpec, T: float, dt: float,
                        seed: int = 0, path_index=0, n_paths: Optional[int] = None, scheme: str = "stratonovich",
                        dx=None) -> GroupPath:
    """Integrate ``dg = g (Σ H_k ∘dx^k - ½ Σ ∇_{H_k}H_k dt + u dt)`` from ``g(0) = e``.

    ``"stratonovich"`` steps ``g ← g exp(Δ)`` with ``Δ = H Δx + (u(t_mid) - ½ Σ∇_H H) dt``;
    ``"ito"`` treats ``Δ`` as a connection-Itô increment and steps with
    ``exp(Δ - ½ ∇_Δ Δ)``.  Orthogonal groups are projected back after every step.
    """
    if scheme not in ("stratonovich", "ito"):
        raise ValueError(f"unknown scheme {scheme!r}")
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    h = T / n
    if n_paths is not None:
        path_indices = np.arange(n_paths)
    else:
        path_indices = np.atleast_1d(np.asarray(path_index, dtype=np.int64))
    P, K = len(path_indices), alg.n_noise
    if dx is None:
        dx = ensemble_increments(seed, path_indices, n, K, h) if K else np.zeros((P, n, 0))
    times = np.linspace(0.0, T, n + 1)
    corr = noise_drift_correction(alg)
    us = np.stack([_drift_at(u, t) for t in times])
    g = np.empty((P, n + 1, rep.size, rep.size))
    g[:, 0] = np.eye(rep.size)
    for i in range(n):
        step = dx[:, i] @ alg.noise + (_drift_at(u, times[i] + 0.5 * h) - 0.5 * corr) * h
        if scheme == "ito":
            step = step - 0.5 * algebra_connection(alg, step, step)
        if np.max(np.sqrt(alg.inner(step, step))) > MAX_INCREMENT:
            raise NumericalError(f"group increment too large at t={times[i]:.4g}; reduce dt")
        gn = g[:, i] @ rep.exp(step)
        err = rep.constraint_error(gn)
        if np.max(err) > PROJECTION_BOUND:
            raise NumericalError(f"group constraint defect {np.max(err):.2e} before projection")
        drift = err > PROJECTION_TRIGGER
        if np.any(drift):
            gn[drift] = rep.project(gn[drift])
        g[:, i + 1] = gn
    return GroupPath(times, g, us, dx, seed, path_indices, scheme)


@dataclass
class GroupVariationReport:
    energy: float
    energy_stderr: float
    variation: float
    variation_stderr: float
    n_paths: int

    @property
    def z_score(self) -> float:
        return abs(self.variation) / self.variation_stderr if self.variation_stderr > 0 else (
            0.0 if self.variation == 0 else np.inf)


def _ito_increment(alg, a):
    """Connection-Itô increment ``a + ½ ∇_a a`` of a Stratonovich increment ``a``."""
    return a + 0.5 * algebra_connection(alg, a, a)


def group_energy_and_variation(alg: LieAlgebraData, rep: MatrixRepresentation, u: DriftSpec, v,
                               T: float, dt: float, n_paths: int, seed: int, eps: float = 1e-4,
                               chunk: int = 1000):
    """Energy of the group diffusion and its first variation along ``g ↦ g exp(ε v(t))``.

    Per step the left-trivialized increment ``a_i = log(g_i^{-1} g_{i+1})`` is
    converted to the connection-Itô increment ``δ_i = a_i + ½ ∇_{a_i} a_i``,
    whose conditional mean is ``u dt``.  The energy is estimated by
    ``Σ <u_i, δ_i>`` and its variation by ``2 Σ <u_i, ∂_ε δ_i(ε)>`` with
    ``δ_i(ε)`` built from ``log(exp(-ε v_i) exp(a_i) exp(ε v_{i+1}))`` and a
    centered difference in ``ε`` on common noise.  ``v`` may be a list of
    directions, all evaluated on the same paths; a list of reports is then
    returned.
    """
    basket = list(v) if isinstance(v, (list, tuple)) else [v]
    n = max(1, int(np.ceil(T / dt - 1e-9)))
    times = np.linspace(0.0, T, n + 1)
    mids = times[:-1] + 0.5 * (times[1] - times[0])
    um = np.stack([_drift_at(u, t) for t in mids])
    perturb = []
    for vk in basket:
        vs = np.stack([np.asarray(vk(t), dtype=float) for t in times])
        if np.max(np.abs(vs[[0, -1]])) > 1e-12:
            raise ValueError("variation direction must vanish at both endpoints")
        perturb.append((rep.exp(eps * vs), rep.exp(-eps * vs)))
    energies, variations = [], [[] for _ in basket]
    for start in range(0, n_paths, chunk):
        idx = np.arange(start, min(n_paths, start + chunk))
        path = simulate_group_path(alg, rep, u, T, dt, seed, path_index=idx)
        A = rep.inverse(path.g[:, :-1]) @ path.g[:, 1:]
        d0 = _ito_increment(alg, rep.log(A))
        energies.append(np.sum(alg.inner(um[None], d0), axis=1))
        for k, (ep, em) in enumerate(perturb):
            dp = _ito_increment(alg, rep.log(em[None, :-1] @ A @ ep[None, 1:]))
            dm = _ito_increment(alg, rep.log(ep[None, :-1] @ A @ em[None, 1:]))
            variations[k].append(2.0 * np.sum(alg.inner(um[None], (dp - dm) / (2 * eps)), axis=1))
    E = np.concatenate(energies)
    se = lambda x: float(x.std(ddof=1) / np.sqrt(len(x))) if len(x) > 1 else 0.0  # noqa: E731
    reports = []
    for var in variations:
        Y = np.concatenate(var)
        reports.append(GroupVariationReport(float(E.mean()), se(E), float(Y.mean()), se(Y), len(E)))
    return reports if isinstance(v, (list, tuple)) else reports[0]
