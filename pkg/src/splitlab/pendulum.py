"""Separatrix and pseudo-heteroclinic orbits of the quasi-periodically forced pendulum.

All orbits are computed on a truncated line [theta - T_cut, theta + T_cut]
discretized by Chebyshev spectral elements. The asymptotic conditions at
+-infinity become Robin conditions matching the linearized decay e^{-|t|}:
q' = q at the left end (q -> 0) and q' = 2 pi - q at the right end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ._spectral import Mesh, cheb
from .errors import NonConvergenceError, RefusalError
from .frequencies import FrequencyVector, PerturbationSeries, QMode

TWO_PI = 2.0 * math.pi


def separatrix(t, theta=0.0):
    """q_theta(t) = 4 arctan(e^{t - theta}) and its velocity 2 / cosh(t - theta)."""
    s = np.asarray(t, dtype=float) - theta
    return 4.0 * np.arctan(np.exp(s)), 2.0 / np.cosh(s)


def weight_psi(t, theta=0.0):
    """psi_theta(t) = cosh^2(t-theta) / (1 + cosh(t-theta))^3, written to avoid overflow."""
    s = np.abs(np.asarray(t, dtype=float) - theta)
    e = np.exp(-s)
    return 2.0 * e * (1.0 + e * e) ** 2 / (1.0 + e) ** 6


@dataclass
class SolverOptions:
    tol: float = 1e-9
    t_cut: float | None = None
    degree: int = 14
    max_elem_len: float = 1.0
    waves_per_elem: float = 1.0
    max_iter: int = 40
    mu_max: float = 0.25
    eps_bc: float = 1e-6
    uniqueness_radius: float = math.pi / 2

    @property
    def T(self) -> float:
        if self.t_cut is not None:
            return float(self.t_cut)
        return max(abs(math.log(self.tol)) + 5.0, 20.0)

    def mesh(self, theta: float, max_freq: float) -> tuple[Mesh, int]:
        """Mesh on [theta - T, theta + T] with theta on a break; returns (mesh, glue index)."""
        T = self.T
        h = self.max_elem_len
        if max_freq > 0:
            h = min(h, self.waves_per_elem * TWO_PI / max_freq)
        n_half = max(2, math.ceil(T / h))
        mesh = Mesh.uniform(theta - T, theta + T, 2 * n_half, self.degree)
        return mesh, n_half * self.degree


@dataclass
class PseudoOrbit:
    """A discretized (pseudo-)heteroclinic orbit.

    ``q_elem``/``qdot_elem`` hold element-local samples so that the velocity
    jump at the gluing time is represented exactly.
    """

    mu: float
    A: np.ndarray
    theta: float
    mesh: Mesh
    q: np.ndarray
    qdot_elem: np.ndarray
    residual: float
    iterations: int
    multiplier: float | None = None
    glue_index: int | None = None
    kind: str = "glued"
    extra: dict = field(default_factory=dict)

    @property
    def t(self) -> np.ndarray:
        return self.mesh.nodes()

    @property
    def q_elem(self) -> np.ndarray:
        return self.q[self.mesh.element_index()]

    @property
    def t_elem(self) -> np.ndarray:
        return self.mesh.element_nodes()

    @property
    def qdot(self) -> np.ndarray:
        """Velocity at global nodes; at shared nodes the right element's value."""
        qd = self.qdot_elem
        return np.concatenate([qd[:, :-1].ravel(), qd[-1:, -1]])

    @property
    def jump(self) -> float:
        """Velocity jump q'(theta+) - q'(theta-) at the gluing time (0 if not glued)."""
        if self.glue_index is None:
            return 0.0
        e = self.glue_index // self.mesh.p
        return float(self.qdot_elem[e, 0] - self.qdot_elem[e - 1, -1])

    def __call__(self, t):
        return self.mesh.interpolate(self.q_elem, t)

    def velocity(self, t):
        return self.mesh.interpolate(self.qdot_elem, t)

    def boundary_values(self) -> tuple[float, float]:
        return float(self.q[0]), float(self.q[-1])

    def to_table(self) -> str:
        lines = [f"# kind={self.kind} mu={self.mu!r} theta={self.theta!r} "
                 f"A={','.join(repr(float(a)) for a in self.A)} residual={self.residual:.3e}"
                 + (f" multiplier={self.multiplier!r}" if self.multiplier is not None else ""),
                 "# t q qdot"]
        for t, q, qd in zip(self.t, self.q, self.qdot):
            lines.append(f"{t:.17e} {q:.17e} {qd:.17e}")
        return "\n".join(lines) + "\n"


# forcing models -----------------------------------------------------------
# Every model returns (F, dF/dq) for the equation  -q'' + F(t, q) = 0.

def _factor_force(f: PerturbationSeries, omega: FrequencyVector, mu: float, A, t):
    phases = np.outer(t, omega.array) + np.asarray(A, dtype=float)
    g = f.angular(phases)
    c = 1.0 - mu * g

    def force(q):
        return np.sin(q) * c, np.cos(q) * c

    return force, g


def _general_force(f: PerturbationSeries, omega: FrequencyVector, mu: float, A, t,
                   Q: np.ndarray | None = None):
    """F = sin(Q+u) - sin Q - mu (f_q(psi, Q+u) - f_q(psi, Q)), psi = omega t + A."""
    k, m, c = f.general_arrays()
    psi = np.outer(t, omega.array) + np.asarray(A, dtype=float)
    Ek = np.exp(1j * (psi @ k.T)) * c
    Q = np.zeros_like(t) if Q is None else Q
    fq_Q = (Ek * np.exp(1j * np.outer(Q, m)) @ (1j * m)).real

    def force(u):
        em = Ek * np.exp(1j * np.outer(Q + u, m))
        fq = (em @ (1j * m)).real
        fqq = (em @ (-(m.astype(float) ** 2))).real
        return (np.sin(Q + u) - np.sin(Q) - mu * (fq - fq_Q),
                np.cos(Q + u) - mu * fqq)

    return force


# core Newton solver ---------------------------------------------------------

def _linear_part(mesh: Mesh, glue: int | None, constrained: bool):
    """Sparse constant part of the Jacobian and the collocation-row mask."""
    p = mesh.p
    S = mesh.size
    _, D, _ = cheb(p)
    D2 = D @ D
    scales = mesh.scales()
    idx = mesh.element_index()
    rows, cols, vals = [], [], []
    colloc = np.zeros(S + int(constrained), dtype=bool)

    def add(r, cs, vs):
        rows.extend([r] * len(cs))
        cols.extend(cs)
        vals.extend(vs)

    for e in range(mesh.n_elem):
        s = scales[e]
        cs = list(idx[e])
        for i in range(1, p):
            add(idx[e, i], cs, list(-(s * s) * D2[i]))
            colloc[idx[e, i]] = True
        if e < mesh.n_elem - 1:
            r = idx[e, p]
            if glue is not None and r == glue:
                add(r, [r], [1.0])
            else:
                add(r, cs, list(s * D[p]))
                add(r, list(idx[e + 1]), list(-scales[e + 1] * D[0]))
    add(0, list(idx[0]), list(scales[0] * D[0]))
    add(0, [0], [-1.0])
    add(S - 1, list(idx[-1]), list(scales[-1] * D[p]))
    add(S - 1, [S - 1], [1.0])
    n = S + int(constrained)
    K = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return K, colloc


@dataclass
class _Problem:
    mesh: Mesh
    glue: int | None
    force: Callable
    psi: np.ndarray | None = None  # multiplier profile (constrained)
    ref: np.ndarray | None = None  # reference orbit for the constraint
    psi_w: np.ndarray | None = None


def _residual(prob: _Problem, K, colloc, x):
    mesh = prob.mesh
    S = mesh.size
    q = x[:S]
    r = K @ x
    F, dF = prob.force(q)
    r[:S][colloc[:S]] += F[colloc[:S]]
    if prob.glue is not None:
        r[prob.glue] -= math.pi
    r[S - 1] -= TWO_PI
    diag = np.zeros(len(x))
    diag[:S][colloc[:S]] = dF[colloc[:S]]
    if prob.psi is not None:
        r[S] -= prob.psi_w @ prob.ref
    return r, diag


def _defect(prob: _Problem, x) -> float:
    """Max ODE defect at interior element nodes plus interface velocity mismatches."""
    mesh = prob.mesh
    S = mesh.size
    q = x[:S]
    _, D, _ = cheb(mesh.p)
    sc = mesh.scales()[:, None]
    qe = q[mesh.element_index()]
    qd = (qe @ D.T) * sc
    qdd = (qd @ D.T) * sc
    F, _ = prob.force(q)
    Fe = F[mesh.element_index()]
    d = -qdd + Fe
    if prob.psi is not None:
        d -= x[S] * prob.psi[mesh.element_index()]
    worst = float(np.abs(d[:, 1:-1]).max())
    jumps = np.abs(qd[1:, 0] - qd[:-1, -1])
    if prob.glue is not None:
        jumps[prob.glue // mesh.p - 1] = 0.0
    return max(worst, float(jumps.max(initial=0.0)))


def _newton(prob: _Problem, x0: np.ndarray, opts: SolverOptions, what: str):
    constrained = prob.psi is not None
    K, colloc = _linear_part(prob.mesh, prob.glue, constrained)
    if constrained:
        S = prob.mesh.size
        gw = prob.mesh.global_weights()
        prob.psi_w = gw * prob.psi
        row = sp.csr_matrix((prob.psi_w, (np.full(S, S), np.arange(S))), shape=(S + 1, S + 1))
        colpsi = np.where(colloc[:S], -prob.psi, 0.0)
        colm = sp.csr_matrix((colpsi, (np.arange(S), np.full(S, S))), shape=(S + 1, S + 1))
        K = (K + row + colm).tocsr()
    x = x0.copy()
    r, diag = _residual(prob, K, colloc, x)
    norm = np.abs(r).max()
    for it in range(1, opts.max_iter + 1):
        J = (K + sp.diags(diag)).tocsc()
        dx = splu(J).solve(r)
        step = 1.0
        while True:
            xn = x - step * dx
            rn, dn = _residual(prob, K, colloc, xn)
            nn = np.abs(rn).max()
            if nn < norm or step < 1e-4 or nn < 1e-13:
                break
            step *= 0.5
        x, r, diag, norm = xn, rn, dn, nn
        if np.abs(step * dx).max() < 1e-13 or norm < 1e-14:
            break
    if not np.isfinite(norm) or norm > opts.tol:
        raise NonConvergenceError(f"{what}: Newton did not converge", norm)
    return x, it


def _check_orbit(orbit: PseudoOrbit, opts: SolverOptions, what: str):
    ref, _ = separatrix(orbit.t, orbit.theta)
    dist = float(np.abs(orbit.q - ref).max())
    if dist > opts.uniqueness_radius:
        raise NonConvergenceError(f"{what}: solution left the neighbourhood of q_theta "
                                  f"(sup distance {dist:.3f})", orbit.residual)
    orbit.extra["distance_to_separatrix"] = dist
    if orbit.residual > opts.tol:
        raise NonConvergenceError(f"{what}: defect above tolerance", orbit.residual)


def _refuse_large(mu: float, f: PerturbationSeries, opts: SolverOptions):
    size = abs(mu) * f.strip_norm() if any(f.widths) else abs(mu) * float(
        np.abs(f.general_arrays()[2]).sum())
    if size > opts.mu_max:
        raise RefusalError(f"mu*|f| = {size:.3e} exceeds smallness threshold {opts.mu_max}")


def _build_orbit(prob, x, it, mu, A, theta, opts, kind, multiplier=None):
    mesh = prob.mesh
    S = mesh.size
    q = x[:S].copy()
    if prob.glue is not None:
        q[prob.glue] = math.pi
    orbit = PseudoOrbit(mu=mu, A=np.asarray(A, dtype=float), theta=float(theta), mesh=mesh,
                        q=q, qdot_elem=mesh.derivative(q), residual=_defect(prob, x),
                        iterations=it, multiplier=multiplier, glue_index=prob.glue, kind=kind)
    return orbit


def solve_glued_heteroclinic(mu: float, A: Sequence[float], theta: float,
                             f: PerturbationSeries, omega: FrequencyVector,
                             opts: SolverOptions | None = None) -> PseudoOrbit:
    """Pseudo-heteroclinic orbit of -q'' + sin q = mu sin q g(omega t + A), glued at q(theta)=pi.

    The orbit solves the equation on each side of theta, is continuous with
    q(theta) = pi, and tends to 0 at -inf and 2 pi at +inf; its velocity may
    jump at theta.
    """
    opts = opts or SolverOptions()
    if f.q_mode is not QMode.FACTOR:
        raise ValueError("solve_glued_heteroclinic needs a factor-mode perturbation")
    _refuse_large(mu, f, opts)
    mesh, glue = opts.mesh(theta, f.max_frequency(omega) if mu else 0.0)
    t = mesh.nodes()
    force, _ = _factor_force(f, omega, mu, A, t)
    prob = _Problem(mesh, glue, force)
    x0, _ = separatrix(t, theta)
    x, it = _newton(prob, x0, opts, "glued orbit")
    orbit = _build_orbit(prob, x, it, mu, A, theta, opts, "glued")
    _check_orbit(orbit, opts, "glued orbit")
    return orbit


def solve_constrained_heteroclinic(mu: float, A: Sequence[float], theta: float,
                                   f: PerturbationSeries, omega: FrequencyVector,
                                   opts: SolverOptions | None = None) -> PseudoOrbit:
    """Orbit Q and multiplier alpha with -Q'' + sin Q = mu sin Q g + alpha psi_theta.

    The orbit is smooth on the whole line and satisfies
    int (Q - q_theta) psi_theta dt = 0.
    """
    opts = opts or SolverOptions()
    if f.q_mode is not QMode.FACTOR:
        raise ValueError("solve_constrained_heteroclinic needs a factor-mode perturbation")
    _refuse_large(mu, f, opts)
    mesh, _ = opts.mesh(theta, f.max_frequency(omega) if mu else 0.0)
    t = mesh.nodes()
    force, _ = _factor_force(f, omega, mu, A, t)
    ref, _ = separatrix(t, theta)
    prob = _Problem(mesh, None, force, psi=weight_psi(t, theta), ref=ref)
    x0 = np.concatenate([ref, [0.0]])
    x, it = _newton(prob, x0, opts, "constrained orbit")
    orbit = _build_orbit(prob, x, it, mu, A, theta, opts, "constrained", multiplier=float(x[-1]))
    orbit.extra["constraint"] = float(prob.psi_w @ (x[:-1] - ref))
    _check_orbit(orbit, opts, "constrained orbit")
    return orbit


def solve_general_heteroclinic(mu: float, A: Sequence[float], theta: float, torus,
                               f: PerturbationSeries, omega: FrequencyVector,
                               opts: SolverOptions | None = None) -> PseudoOrbit:
    """Glued orbit u of -u'' + sin u = d/du P_0(mu, u, omega t + A) in torus-centred coordinates.

    ``torus`` supplies Q^mu; u(theta) = pi, u -> 0 at -inf and u -> 2 pi at +inf.
    """
    opts = opts or SolverOptions()
    _refuse_large(mu, f, opts)
    fg = f.as_general()
    mesh, glue = opts.mesh(theta, fg.max_frequency(omega) if mu else 0.0)
    t = mesh.nodes()
    psi = np.outer(t, omega.array) + np.asarray(A, dtype=float)
    Q = torus.Q(psi)
    force = _general_force(fg, omega, mu, A, t, Q)
    prob = _Problem(mesh, glue, force)
    x0, _ = separatrix(t, theta)
    x, it = _newton(prob, x0, opts, "general orbit")
    orbit = _build_orbit(prob, x, it, mu, A, theta, opts, "general")
    orbit.extra["Q"] = Q
    _check_orbit(orbit, opts, "general orbit")
    return orbit


def psi_qdot_integral() -> float:
    """int psi_0(t) q_0'(t) dt, the transversality constant of the constrained method."""
    opts = SolverOptions(t_cut=40.0)
    mesh, _ = opts.mesh(0.0, 0.0)
    t = mesh.nodes()
    _, qd = separatrix(t)
    return float(mesh.global_weights() @ (weight_psi(t) * qd))
