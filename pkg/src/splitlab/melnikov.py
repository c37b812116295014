"""Action functionals on pseudo-orbits, Melnikov integrals and homoclinic grids.

Sign convention: the action of the Lagrangian q'^2/2 + (1 - cos q) - mu f
along the glued orbit expands as

    G_mu(A) = 8 - mu Gamma(A) + O(mu^2),

where Gamma(A) = int (1 - cos q_0) g(omega t + A) dt. The first-order
coefficient of the action is therefore -Gamma; ``first_order_grid`` returns
exactly that coefficient so comparisons never need a sign flip at call sites.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate, signal

from .frequencies import FrequencyVector, PerturbationSeries, QMode
from .pendulum import (SolverOptions, PseudoOrbit, separatrix, solve_constrained_heteroclinic,
                       solve_general_heteroclinic, solve_glued_heteroclinic)

UNPERTURBED_ACTION = 8.0
TWO_PI = 2.0 * math.pi
KINDS = ("glued", "reduced", "general", "gamma", "M")


# actions -------------------------------------------------------------------

def _phases(orbit: PseudoOrbit, omega: FrequencyVector) -> np.ndarray:
    return orbit.t_elem[..., None] * omega.array + orbit.A


def orbit_action(orbit: PseudoOrbit, f: PerturbationSeries, omega: FrequencyVector) -> float:
    """Action of q'^2/2 + (1 - cos q) - mu f(omega t + A, q) along a factor-mode orbit."""
    q, qd = orbit.q_elem, orbit.qdot_elem
    g = f.angular(_phases(orbit, omega))
    lag = 0.5 * qd**2 + (1.0 - np.cos(q)) * (1.0 - orbit.mu * g)
    left, right = orbit.boundary_values()
    # beyond T_cut: q ~ c e^{-|t|}, lagrangian ~ c^2 e^{-2|t|}
    tails = 0.5 * left**2 + 0.5 * (TWO_PI - right) ** 2
    return orbit.mesh.integrate(lag) + tails


def action_glued(mu, A, theta, f, omega, opts=None) -> float:
    """F_mu(A, theta): action on the glued pseudo-heteroclinic orbit."""
    return orbit_action(solve_glued_heteroclinic(mu, A, theta, f, omega, opts), f, omega)


def action_reduced(mu, A, theta, f, omega, opts=None) -> float:
    """F~_mu(A, theta): action on the constrained orbit Q^mu_{A,theta}."""
    return orbit_action(solve_constrained_heteroclinic(mu, A, theta, f, omega, opts), f, omega)


def general_lagrangian_terms(u, Q, fg: PerturbationSeries, psi, mu, shift: float):
    """P_0 (shift = 0) or P_1 (shift = 2 pi) on samples u, Q at angles psi."""
    flat_psi = psi.reshape(-1, psi.shape[-1])
    fu = fg.value(flat_psi, (Q + u).ravel()).reshape(u.shape)
    fQ = fg.value(flat_psi, Q.ravel()).reshape(u.shape)
    fqQ = fg.dq(flat_psi, Q.ravel()).reshape(u.shape)
    lin = u - shift
    return (np.cos(Q + u) - np.cos(Q) + np.sin(Q) * lin + 1.0 - np.cos(u)
            + mu * (fu - fQ - fqQ * lin))


def action_general_orbit(orbit: PseudoOrbit, torus, f: PerturbationSeries,
                         omega: FrequencyVector) -> float:
    fg = f.as_general()
    mesh = orbit.mesh
    psi = _phases(orbit, omega)
    u, ud = orbit.q_elem, orbit.qdot_elem
    Q = torus.Q(psi.reshape(-1, omega.n)).reshape(u.shape)
    e_glue = orbit.glue_index // mesh.p
    left = np.arange(mesh.n_elem) < e_glue
    P = np.where(left[:, None],
                 general_lagrangian_terms(u, Q, fg, psi, orbit.mu, 0.0),
                 general_lagrangian_terms(u, Q, fg, psi, orbit.mu, TWO_PI))
    lag = 0.5 * ud**2 + (1.0 - np.cos(u)) - P
    l0, r0 = orbit.boundary_values()
    tails = 0.5 * l0**2 + 0.5 * (TWO_PI - r0) ** 2
    qdot_A = float(torus.P(np.asarray(orbit.A) + omega.array * orbit.theta))
    return mesh.integrate(lag) + tails + TWO_PI * qdot_A


def action_general(mu, A, theta, torus, f, omega, opts=None) -> float:
    """Action on the torus-centred glued orbit with the P_0 / P_1 split and 2 pi q_A' correction."""
    orbit = solve_general_heteroclinic(mu, A, theta, torus, f, omega, opts)
    return action_general_orbit(orbit, torus, f, omega)


# Melnikov integrals ----------------------------------------------------------

def melnikov_coefficient(k, omega: FrequencyVector | np.ndarray, f_k: complex) -> complex:
    """Gamma_k = f_k 2 pi (k.omega) / sinh(pi k.omega / 2), stable for all k.omega."""
    om = omega.array if isinstance(omega, FrequencyVector) else np.asarray(omega, dtype=float)
    x = float(np.dot(np.asarray(k, dtype=float), om))
    return complex(f_k) * melnikov_kernel(x)


def melnikov_kernel(x):
    """2 pi x / sinh(pi x / 2) with its limit 4 at x = 0, evaluated in log space."""
    x = np.asarray(x, dtype=float)
    y = 0.5 * np.pi * np.abs(x)
    small = y < 1e-4
    ys = np.where(small, 1.0, y)
    big = np.exp(np.log(8.0 * ys) - ys - np.log1p(-np.exp(-2.0 * ys)))
    series = 4.0 * (1.0 - y**2 / 6.0 + 7.0 * y**4 / 360.0)
    out = np.where(small, series, big)
    return float(out) if out.ndim == 0 else out


def melnikov_coefficients(f: PerturbationSeries, omega: FrequencyVector) -> dict:
    if f.q_mode is not QMode.FACTOR:
        raise ValueError("Melnikov coefficients need a factor-mode perturbation")
    return {k: melnikov_coefficient(k, omega, c) for k, c in f.coefficients.items()}


def melnikov_synthesis(A, f: PerturbationSeries, omega: FrequencyVector):
    """Gamma(A) from its Fourier coefficients; A has shape (..., n)."""
    modes, c = f.arrays()
    gk = c * melnikov_kernel(modes @ omega.array)
    return (np.exp(1j * (np.asarray(A, dtype=float) @ modes.T)) @ gk).real


def melnikov_gradient(A, f: PerturbationSeries, omega: FrequencyVector):
    modes, c = f.arrays()
    gk = c * melnikov_kernel(modes @ omega.array)
    e = np.exp(1j * (np.asarray(A, dtype=float) @ modes.T))
    return np.stack([(e @ (1j * modes[:, j] * gk)).real for j in range(modes.shape[1])], axis=-1)


def _line_quad(func, T: float, tol: float) -> float:
    """Adaptive quadrature of func over [-T, T] on unit panels."""
    total = 0.0
    edges = np.arange(-T, T + 0.5, 1.0)
    with warnings.catch_warnings():
        # roundoff plateaus near the tolerance floor; the panel values are still accurate
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for a, b in zip(edges[:-1], edges[1:]):
            val, _ = integrate.quad(func, a, b, epsabs=tol / len(edges), epsrel=1e-13, limit=200)
            total += val
    return total


def melnikov_primitive(A, omega: FrequencyVector, f: PerturbationSeries,
                       T: float = 40.0, tol: float = 1e-13) -> float:
    """Gamma(A) = int (1 - cos q_0(t)) g(omega t + A) dt by adaptive quadrature.

    The truncation at |t| = T drops at most 8 sum|g_k| e^{-2T}.
    """
    if f.q_mode is not QMode.FACTOR:
        raise ValueError("melnikov_primitive needs a factor-mode perturbation")
    A = np.asarray(A, dtype=float)
    om = omega.array

    def integrand(t):
        return 2.0 / math.cosh(t) ** 2 * f.angular(om * t + A)

    return _line_quad(integrand, T, tol)


def melnikov_general(A, omega: FrequencyVector, f: PerturbationSeries,
                     T: float = 40.0, tol: float = 1e-13) -> float:
    """M(A) = int [f(omega t + A, q_0(t)) - f(omega t + A, 0)] dt."""
    fg = f.as_general()
    A = np.asarray(A, dtype=float)
    om = omega.array

    def integrand(t):
        q0, _ = separatrix(t)
        phi = om * t + A
        return float(fg.value(phi, q0) - fg.value(phi, 0.0))

    return _line_quad(integrand, T, tol)


# homoclinic grids ------------------------------------------------------------

@dataclass
class HomoclinicGrid:
    """Samples of a function on the uniform grid A_j = 2 pi i_j / L_j of T^n."""

    samples: np.ndarray
    kind: str
    mu: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if not np.isfinite(self.samples).all():
            raise ValueError("non-finite grid samples")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.samples.shape

    @property
    def n(self) -> int:
        return self.samples.ndim

    @property
    def spacing(self) -> np.ndarray:
        return TWO_PI / np.array(self.shape)

    def axes(self) -> list[np.ndarray]:
        return [TWO_PI * np.arange(L) / L for L in self.shape]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def coefficients(self) -> np.ndarray:
        return np.fft.fftn(self.samples) / self.samples.size

    def evaluate(self, A) -> np.ndarray:
        """Trigonometric interpolation of the samples at arbitrary angles A (..., n)."""
        ks = [np.fft.fftfreq(L, d=1.0 / L) for L in self.shape]
        A = np.asarray(A, dtype=float)
        flat = A.reshape(-1, self.n)
        res = np.empty(len(flat))
        kk = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, self.n)
        cc = self.coefficients().ravel()
        for s in range(0, len(flat), 4096):
            res[s:s + 4096] = (np.exp(1j * flat[s:s + 4096] @ kk.T) @ cc).real
        return res.reshape(A.shape[:-1])

    def evaluate_box(self, centre, half_width: float, spacing: float) -> tuple[list[np.ndarray], np.ndarray]:
        """Trigonometric interpolant on a tensor grid covering the sup-ball around centre."""
        m = int(math.ceil(half_width / spacing))
        offs = spacing * np.arange(-m, m + 1)
        axes = [float(c) + offs for c in centre]
        out = self.coefficients()
        for j, ax in enumerate(axes):
            L = self.shape[j]
            k = np.fft.fftfreq(L, d=1.0 / L)
            E = np.exp(1j * np.outer(ax, k))
            out = np.moveaxis(np.tensordot(E, out, axes=([1], [j])), 0, j)
        return axes, out.real

    def refine(self, shape: Sequence[int]) -> "HomoclinicGrid":
        """Band-limited (zero-padded FFT) resampling onto a finer uniform grid."""
        vals = self.samples
        for j, L in enumerate(shape):
            if L != vals.shape[j]:
                vals = signal.resample(vals, int(L), axis=j)
        return HomoclinicGrid(vals, self.kind, self.mu, dict(self.meta, refined_from=self.shape))

    def to_text(self, extra_header: dict | None = None) -> str:
        head = {"kind": self.kind, "mu": repr(float(self.mu)),
                "shape": "x".join(str(s) for s in self.shape)}
        head.update({k: str(v) for k, v in self.meta.items() if isinstance(v, (str, int, float))})
        if extra_header:
            head.update(extra_header)
        lines = [f"# {k}={v}" for k, v in head.items()]
        mat = self.samples.reshape(self.shape[0], -1)
        for row in mat:
            lines.append(" ".join(f"{v:.17e}" for v in row))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HomoclinicGrid":
        head: dict[str, str] = {}
        rows = []
        for line in text.splitlines():
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    head[k.strip()] = v.strip()
            elif line.strip():
                rows.append([float(v) for v in line.split()])
        shape = tuple(int(s) for s in head["shape"].split("x"))
        return cls(np.array(rows).reshape(shape), head.get("kind", "unknown"),
                   float(head.get("mu", "nan")), {k: v for k, v in head.items()
                                                  if k not in ("kind", "mu", "shape")})


@dataclass(frozen=True)
class FourierReport:
    coefficients: dict
    aliasing_bound: float


def fourier_of_grid(grid: HomoclinicGrid, cutoff: float = 0.0) -> FourierReport:
    """DFT coefficients G_k with G(A) = sum G_k e^{i k.A}.

    The aliasing bound is the largest coefficient magnitude in the outer half
    of the resolved band; band-limited inputs give ~machine zero.
    """
    if grid.meta.get("uniform", True) is False:
        from .errors import ResolutionError
        raise ResolutionError("fourier_of_grid needs a uniform grid")
    c = grid.coefficients()
    ks = [np.fft.fftfreq(L, d=1.0 / L).round().astype(int) for L in grid.shape]
    kk = np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1).reshape(-1, grid.n)
    vals = c.ravel()
    outer = (np.abs(kk) > (np.array(grid.shape) // 4)[None, :]).any(axis=1)
    alias = float(np.abs(vals[outer]).max(initial=0.0))
    coefs = {tuple(int(v) for v in k): complex(x) for k, x in zip(kk, vals) if abs(x) > cutoff}
    return FourierReport(coefs, alias)


# grid computation ------------------------------------------------------------

def _grid_points(shape) -> np.ndarray:
    axes = [TWO_PI * np.arange(L) / L for L in shape]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(shape))


def _cell_value(args):
    kind, mu, A, f, omega, opts, torus = args
    if kind == "glued":
        return action_glued(mu, A, 0.0, f, omega, opts)
    if kind == "reduced":
        return action_reduced(mu, A, 0.0, f, omega, opts)
    if kind == "general":
        return action_general(mu, A, 0.0, torus, f, omega, opts)
    if kind == "gamma":
        return float(melnikov_synthesis(A, f, omega))
    if kind == "M":
        return melnikov_general(A, omega, f)
    raise ValueError(f"unknown grid kind {kind!r}")


def settings_hash(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def compute_grid(kind: str, mu: float, f: PerturbationSeries, omega: FrequencyVector,
                 shape: Sequence[int], opts: SolverOptions | None = None, torus=None,
                 workers: int = 1) -> HomoclinicGrid:
    """Sample G_mu / G~_mu / general G / Gamma / M on a uniform torus grid.

    Cells are independent; with ``workers > 1`` they run in a process pool and
    are reassembled in grid order, so results do not depend on the pool size.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    shape = tuple(int(s) for s in shape)
    if len(shape) != omega.n or min(shape) < 1:
        raise ValueError("grid shape must give a positive size per rotator")
    if kind == "general" and torus is None:
        raise ValueError("general grids need an invariant torus")
    opts = opts or SolverOptions()
    pts = _grid_points(shape)
    if kind == "gamma":
        vals = melnikov_synthesis(pts, f, omega)
    else:
        jobs = [(kind, mu, A, f, omega, opts, torus) for A in pts]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                vals = np.array(list(ex.map(_cell_value, jobs, chunksize=max(1, len(jobs) // (4 * workers)))))
        else:
            vals = np.array([_cell_value(j) for j in jobs])
    meta = {"settings": settings_hash(kind, f.coefficients, omega.omega, opts, shape)}
    return HomoclinicGrid(np.asarray(vals).reshape(shape), kind, mu, meta)


def first_order_grid(f: PerturbationSeries, omega: FrequencyVector, shape) -> HomoclinicGrid:
    """The first-order coefficient -Gamma of the action on a grid (see module docstring)."""
    pts = _grid_points(tuple(shape))
    return HomoclinicGrid(-melnikov_synthesis(pts, f, omega).reshape(tuple(shape)), "gamma", 1.0)
