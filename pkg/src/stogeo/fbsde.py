"""Forward-backward characterization of stochastic geodesics, solved by Picard iteration.

Forward:  ``dm = σ(m) dx - (½ g^{mn} Γ^j_{mn} - y) dt`` in one chart.
Backward: ``y(t) = y(T) - ∫_t^T Z dx - ½ ∫_t^T Ricci(y) ds`` with
``y(T) = u_T(m(T))``.

Each iteration simulates the forward paths with the current drift
estimate ``û(t, m)`` on a fixed noise sample, then regresses the backward
target on basis functions of ``m(t)`` slice by slice.  The previous ``Ẑ``
serves as a control variate, which leaves the conditional mean unchanged
and removes most of the Monte Carlo variance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import geometry as geo
from .errors import NumericalError
from .frame_bundle import DriftField
from .geometry import ChartedManifold
from .noise import ensemble_increments, path_rng

INITIAL_LAW_STREAM = 2
NORMAL_EQUATION_LIMIT = 1e4


@dataclass
class RegressionBasis:
    """Basis functions of the forward state.

    ``fourier``: ``1, cos kx, sin kx`` for ``k ≤ order`` on the circle.
    ``chebyshev``: Chebyshev polynomials of degree ``≤ order`` on ``domain``.
    ``spherical``: restrictions of ambient monomials ``x^a y^b z^c`` with
    ``c ≤ 1`` and total degree ``≤ order`` (a basis of spherical
    polynomials, ``(order + 1)²`` functions).
    """

    kind: str = "fourier"
    order: int = 16
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("fourier", "chebyshev", "spherical"):
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.order < 0:
            raise ValueError("basis order must be non-negative")

    @property
    def size(self) -> int:
        if self.kind == "fourier":
            return 2 * self.order + 1
        if self.kind == "chebyshev":
            return self.order + 1
        return (self.order + 1) ** 2

    def evaluate(self, manifold: ChartedManifold, m, chart: int = 0) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        if self.kind == "fourier":
            z = np.exp(1j * m[..., 0])
            powers = np.cumprod(np.broadcast_to(z[..., None], z.shape + (self.order,)), axis=-1)
            return np.concatenate([np.ones(z.shape + (1,)), powers.real, powers.imag], axis=-1)
        if self.kind == "chebyshev":
            lo, hi = self.domain
            s = (2 * m[..., 0] - (lo + hi)) / (hi - lo)
            return np.polynomial.chebyshev.chebvander(s, self.order)
        p = manifold.embed(m, chart) / manifold.params.get("radius", 1.0)
        cols = []
        for c in (0, 1):
            for a in range(self.order + 1 - c):
                for b in range(self.order + 1 - c - a):
                    cols.append(p[..., 0] ** a * p[..., 1] ** b * p[..., 2] ** c)
        return np.stack(cols, axis=-1)


def von_mises_initial(kappa: float = 0.5, mu: float = 0.0) -> Callable:
    """Initial law on the circle with full support."""
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.vonmises(mu, kappa, size=n)[:, None]
    return sample


def point_initial(m0) -> Callable:
    m0 = np.asarray(m0, dtype=float)

    def sample(rng, n):
        return np.broadcast_to(m0, (n, m0.shape[-1])).copy()
    return sample


def box_initial(lo, hi) -> Callable:
    """Uniform law on a coordinate box."""
    lo, hi = np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def sample(rng, n):
        return lo + (hi - lo) * rng.random((n, lo.shape[0]))
    return sample


@dataclass
class FbsdeProblem:
    manifold: ChartedManifold
    terminal: Callable  # m -> y(T), shape (..., d)
    T: float = 0.5
    dt: float = 1e-3
    n_paths: int = 20000
    basis: RegressionBasis = field(default_factory=RegressionBasis)
    initial: Callable = field(default_factory=von_mises_initial)
    tol: float = 1e-8
    max_iter: int = 25
    driver: Union[str, Callable] = "ricci"
    coupled: bool = True
    chart: int = 0
    cond_bound: float = 1e8
    band: float = 0.05
    max_discard: float = 0.01

    def __post_init__(self):
        if not self.dt > 0 or not self.T > 0:
            raise ValueError("T and dt must be positive")
        if self.n_paths < 2 * self.basis.size:
            raise ValueError("ensemble too small for the regression basis")

    @property
    def n_steps(self) -> int:
        return max(1, int(np.ceil(self.T / self.dt - 1e-9)))

    @property
    def dim(self) -> int:
        return self.manifold.dim


@dataclass
class FbsdeSolution:
    times: np.ndarray
    m: np.ndarray  # (P, N+1, d) forward paths of the final iteration
    y: np.ndarray  # (P, N+1, d)
    Z: np.ndarray  # (P, N, d, K)
    dx: np.ndarray  # (P, N, K)
    y_coeffs: np.ndarray  # (N, B, d) slice coefficients; slice N is the terminal function
    z_coeffs: np.ndarray  # (N, B, d*K)
    history: list
    converged: bool
    problem: FbsdeProblem
    seed: int
    discard_fraction: float = 0.0
    condition_numbers: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.history)

    def drift_at(self, i: int, m) -> np.ndarray:
        """Regressed ``û(t_i, ·)`` at points ``m``."""
        return _evaluate(self.problem, self.y_coeffs, i, m)

    def drift_field(self) -> DriftField:
        n = len(self.times) - 1

        def func(t, m):
            i = min(max(int(np.floor(t / (self.times[1] - self.times[0]) + 1e-9)), 0), n)
            return self.drift_at(i, m)
        return DriftField(self.problem.manifold, func, self.problem.chart)

    def diagnostics(self) -> dict:
        return {"iterations": self.iterations, "history": [float(h) for h in self.history],
                "converged": bool(self.converged), "discard_fraction": float(self.discard_fraction),
                "max_condition_number": float(max(self.condition_numbers)) if self.condition_numbers else None}


def _evaluate(problem: FbsdeProblem, coeffs, i: int, m) -> np.ndarray:
    n = problem.n_steps
    if i >= n:
        return np.asarray(problem.terminal(m), dtype=float)
    return problem.basis.evaluate(problem.manifold, m, problem.chart) @ coeffs[i]


def _forward(problem: FbsdeProblem, m0, dx, drift: Callable):
    """Euler scheme in one chart; returns paths and a mask of paths that stayed in the band."""
    man, c = problem.manifold, problem.chart
    P, n, K = dx.shape
    h = problem.T / n
    m = np.empty((P, n + 1, problem.dim))
    m[:, 0] = m0
    ok = np.ones(P, dtype=bool)
    flat = man.is_flat
    for i in range(n):
        x = m[:, i]
        y = drift(i, x) if problem.coupled else 0.0
        if flat:
            m[:, i + 1] = x + dx[:, i] + y * h
            continue
        e = geo.orthonormal_frame(man, x, c)
        gam = geo.christoffel(man, x, c, check=False)
        ginv = np.linalg.inv(man.metric(x, c))
        ito = 0.5 * np.einsum("pmn,pjmn->pj", ginv, gam)
        m[:, i + 1] = x + np.einsum("pjk,pk->pj", e, dx[:, i]) + (y - ito) * h
        inside = _in_band(problem, m[:, i + 1])
        if not np.all(inside):
            ok &= inside
            m[~ok, i + 1] = m[~ok, i]  # freeze discarded paths so evaluation stays finite
    return m, ok


def _in_band(problem, m) -> np.ndarray:
    man = problem.manifold
    if man.name == "sphere" and problem.chart == 0:
        th = m[..., 0]
        return (th > problem.band) & (th < np.pi - problem.band)
    return man.in_domain(m, problem.chart)


def _driver(problem: FbsdeProblem, m, y) -> np.ndarray:
    if callable(problem.driver):
        return 0.5 * np.asarray(problem.driver(m), dtype=float)
    if problem.manifold.is_flat:
        return np.zeros_like(y)
    ric = geo.ricci_operator(problem.manifold, m, problem.chart)
    return 0.5 * np.einsum("...jk,...k->...j", ric, y)


class _SliceFit:
    """Least-squares projector for one time slice.

    Uses the normal equations when the design is well conditioned and a
    thin QR factorization otherwise; both recover the same coefficients.
    """

    def __init__(self, phi: np.ndarray, bound: float):
        self.phi = phi
        gram = phi.T @ phi
        w = np.linalg.eigvalsh(gram)
        self.cond = float(np.sqrt(w[-1] / w[0])) if w[0] > 0 else np.inf
        if not self.cond <= bound:
            raise NumericalError(f"regression matrix ill-conditioned (condition number {self.cond:.3g})")
        if self.cond < NORMAL_EQUATION_LIMIT:
            self.gram, self.qr = gram, None
        else:
            self.gram, self.qr = None, np.linalg.qr(phi)

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.qr is None:
            return np.linalg.solve(self.gram, self.phi.T @ b)
        q, r = self.qr
        return np.linalg.solve(r, q.T @ b)


def _backward(problem, m, dx, prev_drift, prev_z, h):
    """One regression sweep.

    Returns the new coefficients, fitted values along the paths, the previous
    drift along the paths and the condition numbers.
    """
    P, N1, d = m.shape
    n = N1 - 1
    K = dx.shape[-1]
    B = problem.basis.size
    yT = np.asarray(problem.terminal(m[:, n]), dtype=float)
    beta = np.zeros((n, B, d))
    gamma = np.zeros((n, B, d * K))
    yhat = np.empty((P, N1, d))
    yprev = np.empty((P, N1, d))
    yhat[:, n] = yprev[:, n] = yT
    conds = []
    acc = np.zeros((P, d))  # Σ_{j≥i} (Ẑ_prev Δx + driver dt)
    fits = [None] * n
    for i in range(n - 1, -1, -1):
        phi = problem.basis.evaluate(problem.manifold, m[:, i], problem.chart)
        if prev_z is not None:
            acc += np.einsum("pjk,pk->pj", (phi @ prev_z[i]).reshape(P, d, K), dx[:, i])
        yprev[:, i] = prev_drift(i, m[:, i], phi)
        acc += _driver(problem, m[:, i], yprev[:, i]) * h
        fit = _SliceFit(phi, problem.cond_bound)
        beta[i] = fit.solve(yT - acc)
        yhat[:, i] = phi @ beta[i]
        conds.append(fit.cond)
        fits[i] = fit
    for i in range(n):
        # ŷ(t_{i+1}) ≈ a(m_i) + Z(m_i) Δx_i jointly; the slice-i basis rows are Q R.
        phi = fits[i].phi
        design = np.concatenate([phi, (phi[:, :, None] * dx[:, i][:, None, :]).reshape(P, B * K)], axis=1)
        coef = _SliceFit(design, problem.cond_bound).solve(yhat[:, i + 1])
        gamma[i] = coef[B:].reshape(B, K, d).transpose(0, 2, 1).reshape(B, d * K)
    return beta, gamma, yhat, yprev, conds


def _drift_from(problem, beta):
    def drift(i, x, phi=None):
        if i >= problem.n_steps:
            return np.asarray(problem.terminal(x), dtype=float)
        if phi is None:
            phi = problem.basis.evaluate(problem.manifold, x, problem.chart)
        return phi @ beta[i]
    return drift


def picard_solve(problem: FbsdeProblem, seed: int = 0, initial_drift: Optional[Callable] = None,
                 max_iter: Optional[int] = None) -> FbsdeSolution:
    """Picard iteration on a fixed noise sample, starting from ``û⁽⁰⁾ = u_T``.

    ``initial_drift(m)`` overrides the starting drift (used to study
    unconverged iterates).  Stops when the largest per-slice RMS change of
    ``û`` along the current paths drops below ``problem.tol``; otherwise the
    last iterate is returned with ``converged = False``.
    """
    n, P, d = problem.n_steps, problem.n_paths, problem.dim
    h = problem.T / n
    K = d
    m0 = problem.initial(path_rng(seed, 0, INITIAL_LAW_STREAM), P)
    dx = ensemble_increments(seed, np.arange(P), n, K, h)
    start = problem.terminal if initial_drift is None else initial_drift
    prev = lambda i, x, phi=None: np.asarray(start(x), dtype=float)  # noqa: E731
    prev_z = None
    history, conds = [], []
    converged = False
    limit = problem.max_iter if max_iter is None else max_iter
    simulated = False
    for _ in range(limit):
        if not simulated or problem.coupled:
            m, ok = _forward(problem, m0, dx, prev)
            discard = 1.0 - ok.mean()
            if discard > problem.max_discard:
                raise NumericalError(f"{discard:.2%} of forward paths left the chart band")
            mk, dxk = m[ok], dx[ok]
            simulated = True
        beta, gamma, yhat, yprev, c = _backward(problem, mk, dxk, prev, prev_z, h)
        conds.extend(c)
        change = float(np.max(np.sqrt(np.mean(np.sum((yhat[:, :n] - yprev[:, :n]) ** 2, axis=-1), axis=0))))
        history.append(change)
        prev = _drift_from(problem, beta)
        prev_z = gamma
        if change < problem.tol:
            converged = True
            break
    Pk = mk.shape[0]
    Z = np.empty((Pk, n, d, K))
    for i in range(n):
        phi = problem.basis.evaluate(problem.manifold, mk[:, i], problem.chart)
        Z[:, i] = (phi @ gamma[i]).reshape(Pk, d, K)
    return FbsdeSolution(np.linspace(0.0, problem.T, n + 1), mk, yhat, Z, dxk, beta, gamma, history, converged,
                         problem, seed, float(discard), conds)


@dataclass
class SliceReport:
    times: np.ndarray
    values: np.ndarray
    stderr: Optional[np.ndarray] = None

    @property
    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    @property
    def max_z(self) -> float:
        if self.stderr is None:
            raise ValueError("no standard errors recorded")
        v, s = np.abs(self.values), self.stderr
        tiny = (s < 1e-14) & (v < 1e-12)
        z = np.where(tiny, 0.0, v / np.maximum(s, 1e-300))
        return float(np.max(z))


def consistency_check(sol: FbsdeSolution, u: DriftField) -> SliceReport:
    """Per-slice ensemble RMS of ``|y(t) - u(t, m(t))|``."""
    gd = u.grid if u.kind == "grid" else None
    if gd is not None:
        for a, ax in enumerate(gd["axes"]):
            if not gd["periodic"][a]:
                v = sol.m[..., a]
                if v.min() < ax[0] - 1e-12 or v.max() > ax[-1] + 1e-12:
                    raise ValueError("solution paths leave the support of the reference drift")
    man, c = sol.problem.manifold, sol.problem.chart
    vals = []
    for i, t in enumerate(sol.times):
        diff = sol.y[:, i] - u(t, sol.m[:, i], c)
        vals.append(np.sqrt(np.mean(geo.norm2(man, sol.m[:, i], diff, c))))
    return SliceReport(sol.times, np.array(vals))


def martingale_residual(sol: FbsdeSolution, seed: Optional[int] = None) -> SliceReport:
    """Mean defect ``y(t) - [y(T) - Σ Ẑ Δx - ½ Σ Ricci dt]`` per slice.

    Forward paths are re-simulated with the solution's own drift ``û``
    on the solution's noise sample (or on fresh noise when ``seed`` is given)
    and the regressed ``ŷ``, ``Ẑ`` are evaluated along them.
    """
    prob = sol.problem
    n, d = prob.n_steps, prob.dim
    h = prob.T / n
    use = sol.seed if seed is None else seed
    m0 = prob.initial(path_rng(use, 0, INITIAL_LAW_STREAM), prob.n_paths)
    dx = ensemble_increments(use, np.arange(prob.n_paths), n, d, h)
    drift = _drift_from(prob, sol.y_coeffs)
    m, ok = _forward(prob, m0, dx, drift)
    m, dx = m[ok], dx[ok]
    P = m.shape[0]
    defect = np.empty((P, n + 1, d))
    acc = np.zeros((P, d))
    yT = np.asarray(prob.terminal(m[:, n]), dtype=float)
    defect[:, n] = 0.0
    for i in range(n - 1, -1, -1):
        phi = prob.basis.evaluate(prob.manifold, m[:, i], prob.chart)
        yi = phi @ sol.y_coeffs[i]
        acc += np.einsum("pjk,pk->pj", (phi @ sol.z_coeffs[i]).reshape(P, d, d), dx[:, i])
        acc += _driver(prob, m[:, i], yi) * h
        defect[:, i] = yi - (yT - acc)
    mean = defect.mean(axis=0)
    se = defect.std(axis=0, ddof=1) / np.sqrt(P)
    return SliceReport(sol.times, mean, se)
