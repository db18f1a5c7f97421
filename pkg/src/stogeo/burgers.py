"""Backward viscous Burgers equation on the flat circle and its Cole-Hopf solution.

The drift equation on the flat circle is ``u_t + u u_x + ½ u_xx = 0`` with
final data at ``t = T``.  In reversed time ``τ = T - t`` it becomes the
well-posed ``u_τ = ½ u_xx + ½ (u²)_x``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import NumericalError
from .frame_bundle import DriftField

GROWTH_LIMIT = 10.0
VISCOSITY = 0.5


@dataclass
class ColeHopfProfile:
    """Exact drift ``u = ∂_x log φ`` with ``φ(τ, x) = 1 + Σ e^{-k²τ/2}(a_k cos kx + b_k sin kx)``.

    ``φ`` solves the backward heat equation ``φ_t + ½ φ_xx = 0`` in ``t``,
    so ``u`` solves the backward Burgers equation; ``w = -u`` solves the
    standard viscous Burgers equation ``w_τ + w w_x = ½ w_xx``.
    """

    cos_coeffs: dict = field(default_factory=lambda: {1: 0.3})
    sin_coeffs: dict = field(default_factory=lambda: {2: 0.15})
    T: float = 1.0

    def __post_init__(self):
        self.cos_coeffs = {int(k): float(v) for k, v in self.cos_coeffs.items()}
        self.sin_coeffs = {int(k): float(v) for k, v in self.sin_coeffs.items()}
        total = sum(abs(v) for v in self.cos_coeffs.values()) + sum(abs(v) for v in self.sin_coeffs.values())
        if total >= 1.0:
            raise ValueError("coefficient sum must stay below 1 so that φ > 0")

    def _phi(self, t, x, deriv: int):
        tau = self.T - np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.ones(np.broadcast(tau, x).shape) if deriv == 0 else np.zeros(np.broadcast(tau, x).shape)
        for k, a in self.cos_coeffs.items():
            damp = np.exp(-0.5 * k * k * tau)
            out = out + a * damp * (np.cos(k * x) if deriv == 0 else -k * np.sin(k * x))
        for k, b in self.sin_coeffs.items():
            damp = np.exp(-0.5 * k * k * tau)
            out = out + b * damp * (np.sin(k * x) if deriv == 0 else k * np.cos(k * x))
        return out

    def phi(self, t, x):
        return self._phi(t, x, 0)

    def u(self, t, x):
        return self._phi(t, x, 1) / self._phi(t, x, 0)

    def terminal(self, x):
        return self.u(self.T, x)

    def drift(self, manifold=None) -> DriftField:
        manifold = manifold or geo.flat(1)
        return DriftField.closed_form(manifold, lambda t, m: self.u(t, m))


def _etdrk4_coefficients(L: np.ndarray, h: float, n_contour: int = 32):
    """Exponential time-differencing RK4 weights via a complex contour mean."""
    r = np.exp(1j * np.pi * (np.arange(1, n_contour + 1) - 0.5) / n_contour)
    LR = h * L[:, None] + r[None, :]
    E = np.exp(h * L)
    E2 = np.exp(h * L / 2)
    Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=1))
    f1 = h * np.real(np.mean((-4 - LR + np.exp(LR) * (4 - 3 * LR + LR**2)) / LR**3, axis=1))
    f2 = h * np.real(np.mean((2 + LR + np.exp(LR) * (-2 + LR)) / LR**3, axis=1))
    f3 = h * np.real(np.mean((-4 - 3 * LR - LR**2 + np.exp(LR) * (4 - LR)) / LR**3, axis=1))
    return E, E2, Q, f1, f2, f3


def _spectral(uT, tau_steps, h, length):
    nx = len(uT)
    k = 2 * np.pi / length * np.fft.rfftfreq(nx, 1.0 / nx)
    L = -VISCOSITY * k**2
    keep = np.abs(np.fft.rfftfreq(nx, 1.0 / nx)) < nx / 3.0
    ik = 0.5j * k * keep

    def nonlinear(v_hat):
        v = np.fft.irfft(v_hat, n=nx)
        return ik * np.fft.rfft(v * v)

    E, E2, Q, f1, f2, f3 = _etdrk4_coefficients(L, h)
    v = np.fft.rfft(uT)
    yield uT.copy()
    for _ in range(tau_steps):
        Nv = nonlinear(v)
        a = E2 * v + Q * Nv
        Na = nonlinear(a)
        b = E2 * v + Q * Na
        Nb = nonlinear(b)
        c = E2 * a + Q * (2 * Nb - Nv)
        Nc = nonlinear(c)
        v = E * v + Nv * f1 + 2 * (Na + Nb) * f2 + Nc * f3
        yield np.fft.irfft(v, n=nx)


def _finite_difference(uT, tau_steps, h, length):
    """Central differences; Crank-Nicolson diffusion, Adams-Bashforth advection."""
    nx = len(uT)
    dx = length / nx
    theta = 2 * np.pi * np.arange(nx // 2 + 1) / nx
    lap = (2 * np.cos(theta) - 2) / dx**2
    lhs = 1 - 0.5 * h * VISCOSITY * lap
    rhs = 1 + 0.5 * h * VISCOSITY * lap

    def advection(v):
        w = 0.5 * v * v
        return (np.roll(w, -1) - np.roll(w, 1)) / (2 * dx)

    u = np.array(uT, dtype=float)
    yield u.copy()
    prev = advection(u)
    for step in range(tau_steps):
        cur = advection(u)
        nl = cur if step == 0 else 1.5 * cur - 0.5 * prev
        u = np.fft.irfft((rhs * np.fft.rfft(u) + h * np.fft.rfft(nl)) / lhs, n=nx)
        prev = cur
        yield u.copy()


def solve_burgers_backward(uT, T: float, nt: int, nx: int | None = None, method: str = "spectral",
                           length: float = 2 * np.pi) -> DriftField:
    """Solve ``u_t + u u_x + ½ u_xx = 0`` on ``[0, T]`` from ``u(T, ·) = uT``.

    ``uT`` is an array of ``nx`` samples on the periodic grid
    ``x_j = j·length/nx`` or a callable of ``x``.  Returns a grid
    :class:`DriftField` with ``nt + 1`` time slices from ``0`` to ``T``.
    ``method`` is ``"spectral"`` (dealiased pseudo-spectral ETDRK4) or
    ``"fd"`` (second-order finite differences).  A solution whose norm grows
    beyond ten times that of ``uT`` raises :class:`NumericalError`.
    """
    if nt < 1:
        raise ValueError("nt must be positive")
    if callable(uT):
        if nx is None:
            raise ValueError("nx is required when uT is a callable")
        x = length * np.arange(nx) / nx
        uT = np.asarray(uT(x), dtype=float)
    uT = np.asarray(uT, dtype=float)
    if nx is not None and len(uT) != nx:
        raise ValueError(f"uT has {len(uT)} samples but nx = {nx}")
    nx = len(uT)
    x = length * np.arange(nx) / nx
    h = T / nt
    stepper = {"spectral": _spectral, "fd": _finite_difference}.get(method)
    if stepper is None:
        raise ValueError(f"unknown method {method!r}")
    ref = GROWTH_LIMIT * np.sqrt(np.mean(uT**2))
    values = np.empty((nt + 1, nx))
    for j, u in enumerate(stepper(uT, nt, h, length)):
        if not np.all(np.isfinite(u)) or np.sqrt(np.mean(u**2)) > ref + 1e-300:
            raise NumericalError(f"Burgers solution blew up at τ = {j * h:.4g}; refine the grid")
        values[nt - j] = u
    times = np.linspace(0.0, T, nt + 1)
    return DriftField.from_grid(geo.flat(1), times, [x], values[..., None], periodic=[True])
