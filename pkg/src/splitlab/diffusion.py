"""Long-time integration of the rotator-pendulum system and transition chains.

The Hamiltonian omega.I + p^2/2 + (cos q - 1) + mu f(phi, q) is split into the
free part omega.I + p^2/2 (rotator phases advanced in closed form, q drifts)
and the potential part (kicks in p and I). Strang gives order 2; the
Yoshida triple-jump composition gives order 4.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np
from scipy.optimize import minimize

from .errors import BudgetError
from .frequencies import FrequencyVector, PerturbationSeries, QMode
from .melnikov import melnikov_gradient
from .splitting import SplittingWindow

TWO_PI = 2.0 * math.pi
_CBRT2 = 2.0 ** (1.0 / 3.0)
_YOSHIDA = (1.0 / (2.0 - _CBRT2), -_CBRT2 / (2.0 - _CBRT2), 1.0 / (2.0 - _CBRT2))


@dataclass
class FullState:
    phi: np.ndarray
    I: np.ndarray
    q: float
    p: float
    t: float = 0.0

    def __post_init__(self):
        self.phi = np.mod(np.asarray(self.phi, dtype=float), TWO_PI)
        self.I = np.asarray(self.I, dtype=float).copy()
        if not np.isfinite(self.I).all():
            raise ValueError("non-finite action")


@dataclass
class Trajectory:
    t: np.ndarray
    phi: np.ndarray
    I: np.ndarray
    q: np.ndarray
    p: np.ndarray

    @property
    def final(self) -> FullState:
        return FullState(self.phi[-1], self.I[-1], float(self.q[-1] % TWO_PI), float(self.p[-1]),
                         float(self.t[-1]))


# kernels ------------------------------------------------------------------

@numba.njit(cache=True)
def _potential_grad(phi, q, k, m, cr, ci, mu, gphi):
    """Returns dV/dq and fills gphi with mu df/dphi for V = cos q - 1 + mu f."""
    fq = 0.0
    for j in range(gphi.size):
        gphi[j] = 0.0
    for r in range(m.size):
        arg = m[r] * q
        for j in range(phi.size):
            arg += k[r, j] * phi[j]
        d = -cr[r] * math.sin(arg) - ci[r] * math.cos(arg)
        fq += m[r] * d
        for j in range(phi.size):
            gphi[j] += k[r, j] * d
    for j in range(gphi.size):
        gphi[j] *= mu
    return -math.sin(q) + mu * fq


@numba.njit(cache=True)
def _step(t, q, p, I, phi0, omega, h, coeffs, k, m, cr, ci, mu, phi, gphi):
    """One composed step; phases are taken from the exact rotator flow."""
    for c in coeffs:
        hc = c * h
        q += 0.5 * hc * p
        t += 0.5 * hc
        for j in range(phi.size):
            phi[j] = phi0[j] + omega[j] * t
        dv = _potential_grad(phi, q, k, m, cr, ci, mu, gphi)
        p -= hc * dv
        for j in range(I.size):
            I[j] -= hc * gphi[j]
        q += 0.5 * hc * p
        t += 0.5 * hc
    return t, q, p


@numba.njit(cache=True)
def _run(t0, q, p, I, phi0, omega, dt, n_steps, stride, coeffs, k, m, cr, ci, mu,
         out_t, out_q, out_p, out_I):
    phi = np.empty(phi0.size)
    gphi = np.empty(phi0.size)
    t = t0
    row = 0
    out_t[0] = t
    out_q[0] = q
    out_p[0] = p
    out_I[0, :] = I
    for s in range(1, n_steps + 1):
        # time from the step counter keeps phases exact over long runs
        t, q, p = _step(t0 + (s - 1) * dt, q, p, I, phi0, omega, dt, coeffs, k, m, cr, ci, mu,
                        phi, gphi)
        t = t0 + s * dt
        if s % stride == 0:
            row += 1
            out_t[row] = t
            out_q[row] = q
            out_p[row] = p
            out_I[row, :] = I
    return row + 1


@numba.njit(cache=True)
def _excursion(t0, q, p, I, phi0, omega, dt, max_steps, coeffs, k, m, cr, ci, mu, eta):
    """Integrate from a launch near q = 0 until the orbit is back near the torus.

    Returns (steps, q, p, t_pi, status): 1 = within eta of (2 pi, 0);
    0 = turned back after passing pi (stops at the turning point);
    3 = crossed 2 pi outside the eta-disc (would start another rotation);
    2 = turned back before pi; -1 = step limit."""
    phi = np.empty(phi0.size)
    gphi = np.empty(phi0.size)
    t_pi = -1.0
    for s in range(1, max_steps + 1):
        tb = t0 + (s - 1) * dt
        qb = q
        t, q, p = _step(tb, q, p, I, phi0, omega, dt, coeffs, k, m, cr, ci, mu, phi, gphi)
        if t_pi < 0.0 and qb < math.pi <= q:
            t_pi = tb + dt * (math.pi - qb) / (q - qb)
        if q > math.pi:
            if (TWO_PI - q) ** 2 + p * p < eta * eta:
                return s, q, p, t_pi, 1
            if q >= TWO_PI:
                return s, q, p, t_pi, 3
            if p <= 0.0:
                return s, q, p, t_pi, 0
        elif p < 0.0:
            return s, q, p, t_pi, 2
    return max_steps, q, p, t_pi, -1


@numba.njit(cache=True)
def _wait_steps(phi0, omega, t0, dt, target, alpha, max_steps):
    """Steps until the phase phi0 + omega t is closest (sup norm) to target
    during the first pass through B_alpha(target); -1 if the budget ends first.

    Launching at closest approach rather than at first entry removes the
    systematic offset along omega."""
    a2 = alpha * alpha
    inside = False
    best = a2
    for s in range(max_steps + 1):
        t = t0 + s * dt
        d2 = 0.0
        for j in range(phi0.size):
            x = (phi0[j] + omega[j] * t - target[j]) % TWO_PI
            if x > math.pi:
                x -= TWO_PI
            d2 = max(d2, x * x)
        if d2 < best:
            inside = True
            best = d2
        elif inside:
            return s - 1
    return -1


def _coeffs(order: int) -> np.ndarray:
    if order == 2:
        return np.array([1.0])
    if order == 4:
        return np.array(_YOSHIDA)
    raise ValueError("order must be 2 or 4")


def _series_arrays(f: PerturbationSeries):
    k, m, c = f.general_arrays()
    return (np.ascontiguousarray(k, dtype=np.float64), np.ascontiguousarray(m, dtype=np.float64),
            np.ascontiguousarray(c.real), np.ascontiguousarray(c.imag))


def total_energy(phi, I, q, p, mu: float, f: PerturbationSeries, omega: FrequencyVector):
    phi = np.atleast_2d(phi)
    I = np.atleast_2d(I)
    q = np.atleast_1d(q)
    return I @ omega.array + np.asarray(p) ** 2 / 2 + np.cos(q) - 1 + mu * f.value(phi, q)


def integrate(state: FullState, mu: float, f: PerturbationSeries, omega: FrequencyVector,
              T: float, dt: float, order: int = 4, stride: int = 1) -> Trajectory:
    """Fixed-step symplectic splitting integration; samples every ``stride`` steps."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    n_steps = int(round(T / dt))
    if abs(n_steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("T must be a multiple of dt")
    k, m, cr, ci = _series_arrays(f)
    rows = n_steps // stride + 1
    out_t = np.empty(rows)
    out_q = np.empty(rows)
    out_p = np.empty(rows)
    out_I = np.empty((rows, omega.n))
    phi0 = np.mod(state.phi - omega.array * state.t, TWO_PI)
    I = state.I.copy()
    got = _run(state.t, state.q, state.p, I, phi0, omega.array, dt, n_steps, stride,
               _coeffs(order), k, m, cr, ci, mu, out_t, out_q, out_p, out_I)
    phi = np.mod(phi0[None, :] + out_t[:got, None] * omega.array[None, :], TWO_PI)
    return Trajectory(out_t[:got], phi, out_I[:got], out_q[:got], out_p[:got])


# transition chains ----------------------------------------------------------

def steering_phase(f: PerturbationSeries, omega: FrequencyVector, direction,
                   window: SplittingWindow | None = None, n_grid: int = 256) -> np.ndarray:
    """Phase A* maximizing -direction . grad Gamma with omega . grad Gamma = 0.

    The constraint selects phases where the Melnikov function along the flow
    line is stationary (a transversal heteroclinic), so the jump carries no
    net change of pendulum energy to first order. Restricted to B_rho(A_0)
    when a window is given.
    """
    d = np.asarray(direction, dtype=float)
    n = omega.n
    w = omega.array

    def obj(A):
        return float(d @ melnikov_gradient(A, f, omega))

    def con(A):
        return float(w @ melnikov_gradient(A, f, omega))

    axes = [np.linspace(0, TWO_PI, n_grid, endpoint=False)] * n
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    if window is not None:
        off = (pts - np.asarray(window.A0) + math.pi) % TWO_PI - math.pi
        pts = pts[np.abs(off).max(axis=1) < window.rho]
    grads = melnikov_gradient(pts, f, omega)
    score = -(grads @ d)
    viol = np.abs(grads @ w)
    tol = 0.05 * max(float(np.abs(grads).max()), 1e-300)
    ok = viol < tol
    if not ok.any():
        ok = viol <= viol.min() * 1.0001
    start = pts[ok][int(np.argmax(score[ok]))]
    cons = [{"type": "eq", "fun": con}]
    if window is not None:
        A0 = np.asarray(window.A0)
        cons.append({"type": "ineq",
                     "fun": lambda A: window.rho**2 - ((A - A0 + math.pi) % TWO_PI - math.pi) ** 2})
    res = minimize(obj, start, method="SLSQP", constraints=cons, options={"ftol": 1e-14, "maxiter": 200})
    # the grid start only satisfies the constraint loosely, so its score is no benchmark
    good = res.success and abs(con(res.x)) < 1e-10
    if good and window is not None:
        good = bool(np.all(cons[1]["fun"](res.x) >= 0))
    A = res.x if good else start
    return np.mod(A, TWO_PI)


# excursions that crossed q = pi once and were re-identified with the torus
PASSED = ("arrived", "turned", "overran")


@dataclass
class TransitionEvent:
    index: int
    t_launch: float
    t_exit: float
    wait: float
    phase: np.ndarray
    dI: np.ndarray
    predicted: np.ndarray
    status: str
    snap: float = 0.0


@dataclass
class DiffusionRun:
    mu: float
    I0: np.ndarray
    I_target: np.ndarray
    eta: float
    seed: int
    T_d: float | None
    I_final: np.ndarray
    t_final: float
    events: list[TransitionEvent] = field(default_factory=list)
    A_star: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def transitions(self) -> int:
        return sum(1 for e in self.events if e.status in PASSED)

    def to_csv(self) -> str:
        n = len(self.I0)
        head = ["index", "t_launch", "t_exit", "wait", "status", "snap"]
        head += [f"A{j + 1}" for j in range(n)] + [f"I{j + 1}" for j in range(n)]
        head += [f"dI{j + 1}" for j in range(n)] + [f"pred{j + 1}" for j in range(n)]
        lines = [",".join(head)]
        I = self.I0.copy()
        for e in self.events:
            I = I + e.dI
            vals = [str(e.index), f"{e.t_launch:.17e}", f"{e.t_exit:.17e}", f"{e.wait:.17e}", e.status, f"{e.snap:.17e}"]
            vals += [f"{x:.17e}" for x in (*e.phase, *I, *e.dI, *e.predicted)]
            lines.append(",".join(vals))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        out = {"mu": self.mu, "seed": self.seed, "eta": self.eta,
               "I0": ",".join(f"{x:.17e}" for x in self.I0),
               "I_target": ",".join(f"{x:.17e}" for x in self.I_target),
               "I_final": ",".join(f"{x:.17e}" for x in self.I_final),
               "T_d": "none" if self.T_d is None else f"{self.T_d:.17e}",
               "t_final": f"{self.t_final:.17e}", "transitions": self.transitions,
               "events": len(self.events)}
        if self.A_star is not None:
            out["A_star"] = ",".join(f"{x:.17e}" for x in self.A_star)
        out.update(self.diagnostics)
        return out


def separatrix_passage_time(q_l: float) -> float:
    """Time for the unperturbed separatrix to go from q_l to pi."""
    return -math.log(math.tan(q_l / 4))


def run_transition_chain(I0, I_target, mu: float, f: PerturbationSeries, omega: FrequencyVector,
                         window: SplittingWindow, eta: float, budget: float,
                         dt: float = 1e-3, order: int = 4, seed: int = 0,
                         A_star=None, max_events: int = 100000) -> DiffusionRun:
    """Chain of pendulum excursions between q = 0 and q = 2 pi moving I toward I_target.

    Each cycle waits on the torus q = p = 0 (same step size) until the phase at
    the coming separatrix passage lies in B_alpha(A*), launches on the unstable
    branch at q_l = min(delta, eta), integrates the full system until the orbit
    is back near the torus, and re-identifies the state with the torus (the
    distance removed is recorded as ``snap``).
    ``budget`` bounds the simulated time.
    """
    if f.q_mode is not QMode.FACTOR:
        raise ValueError("transition chains need a perturbation of the form (1 - cos q) g(phi)")
    I0 = np.asarray(I0, dtype=float)
    I_target = np.asarray(I_target, dtype=float)
    w = omega.array
    if abs(w @ (I_target - I0)) > 1e-9 * max(1.0, float(np.abs(I0).max(initial=0.0))):
        raise ValueError("omega . I0 must equal omega . I_target")
    gap = I_target - I0
    dist0 = float(np.linalg.norm(gap))
    rng = np.random.default_rng(seed)
    phi0 = rng.uniform(0.0, TWO_PI, omega.n)
    run = DiffusionRun(mu, I0, I_target, eta, seed, None, I0.copy(), 0.0)
    if dist0 < eta:
        run.T_d = 0.0
        return run
    if mu == 0.0:
        run.diagnostics["reason"] = "no splitting at mu=0"
        return run
    direction = gap / dist0
    A_star = steering_phase(f, omega, direction, window) if A_star is None else np.asarray(A_star)
    run.A_star = A_star
    q_l = min(window.delta, eta)
    t_pass = separatrix_passage_time(q_l)
    target = np.mod(A_star - w * t_pass, TWO_PI)
    k, m, cr, ci = _series_arrays(f)
    coeffs = _coeffs(order)
    p_l = 2.0 * math.sin(q_l / 2)
    I = I0.copy()
    t = 0.0
    step_budget = int(budget / dt)
    steps_used = 0
    max_exc = int(math.ceil((4 * t_pass + 40.0) / dt))
    for idx in range(max_events):
        left = step_budget - steps_used
        if left <= 0:
            break
        s_wait = _wait_steps(phi0, w, t, dt, target, window.alpha, left)
        if s_wait < 0:
            steps_used = step_budget
            t = step_budget * dt
            break
        steps_used += s_wait
        t_launch = s_wait * dt + t
        I_before = I.copy()
        s, q, p, t_pi, status = _excursion(t_launch, q_l, p_l, I, phi0, w, dt,
                                           min(max_exc, max(step_budget - steps_used, 1)),
                                           coeffs, k, m, cr, ci, mu, eta)
        steps_used += s
        t = t_launch + s * dt
        phase = np.mod(phi0 + w * t_pi, TWO_PI) if t_pi >= 0 else np.full(omega.n, np.nan)
        pred = -mu * melnikov_gradient(phase, f, omega) if t_pi >= 0 else np.full(omega.n, np.nan)
        label = {1: "arrived", 0: "turned", 3: "overran", 2: "returned", -1: "cut"}[status]
        snap = math.hypot(TWO_PI - q, p) if status in (0, 1, 3) else math.hypot(q, p)
        run.events.append(TransitionEvent(idx, t_launch, t, s_wait * dt, phase, I - I_before,
                                          pred, label, snap))
        if status == -1:
            run.diagnostics["reason"] = "excursion hit the step limit"
            break
        if np.linalg.norm(I_target - I) < eta:
            run.T_d = t
            break
        if (I_target - I) @ gap < 0:
            run.diagnostics["reason"] = "overshoot: per-transition jump exceeds 2 eta"
            break
    run.I_final = I
    run.t_final = t
    if run.T_d is None and "reason" not in run.diagnostics:
        run.diagnostics["reason"] = "budget exhausted"
        done = [e.dI for e in run.events if e.status in PASSED]
        if done:
            run.diagnostics["mean_dI"] = ",".join(f"{x:.17e}" for x in np.mean(done, axis=0))
    return run


def transition_jump(A, mu: float, f: PerturbationSeries, omega: FrequencyVector,
                    q_l: float = 1e-6, eta: float = 1e-3, dt: float = 1e-3, order: int = 4):
    """Single excursion timed so that the separatrix passage occurs at phase A.

    Returns (dI, crossing phase). Launch and exit tails contribute O(mu q_l^2)
    and O(mu eta^2); an orbit that turns back beyond pi (pendulum energy
    lowered by the jump) stops within O(sqrt(mu)) of the torus, an O(mu^2) tail.
    """
    A = np.asarray(A, dtype=float)
    w = omega.array
    t_pass = separatrix_passage_time(q_l)
    phi0 = np.mod(A - w * t_pass, TWO_PI)
    k, m, cr, ci = _series_arrays(f)
    I = np.zeros(omega.n)
    max_exc = int(math.ceil((4 * t_pass + 40.0) / dt))
    s, q, p, t_pi, status = _excursion(0.0, q_l, 2 * math.sin(q_l / 2), I, phi0, w, dt, max_exc,
                                       _coeffs(order), k, m, cr, ci, mu, eta)
    if status in (-1, 2):
        raise BudgetError(f"excursion did not pass q = pi (status {status})")
    return I, np.mod(phi0 + w * t_pi, TWO_PI)


@dataclass
class ScalingReport:
    mu: np.ndarray
    T_d: np.ndarray
    ratio: np.ndarray
    spread: float
    bound_unit: np.ndarray
    C_fit: float
    excluded: list = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["mu,T_d,ratio,bound_C1,bound_fitted"]
        for m_, T, r, b in zip(self.mu, self.T_d, self.ratio, self.bound_unit):
            lines.append(f"{m_:.17e},{T:.17e},{r:.17e},{b:.17e},{self.C_fit * b:.17e}")
        return "\n".join(lines) + "\n"


def scaling_study(mu_list: Sequence[float], T_d: Sequence[float | None],
                  bounds: Sequence[float] | None = None) -> ScalingReport:
    """Ratio T_d mu / log(1/mu) per mu, its max/min spread, and the smallest C
    with T_d <= C * bound for every run (bounds evaluated at C = 1)."""
    keep = [(m_, T, None if bounds is None else b)
            for m_, T, b in zip(mu_list, T_d, bounds if bounds is not None else [None] * len(mu_list))
            if T is not None]
    excluded = [m_ for m_, T in zip(mu_list, T_d) if T is None]
    mu = np.array([x[0] for x in keep], dtype=float)
    Td = np.array([x[1] for x in keep], dtype=float)
    ratio = Td * mu / np.log(1.0 / mu)
    spread = float(ratio.max() / ratio.min()) if len(ratio) else math.nan
    if bounds is not None:
        b = np.array([x[2] for x in keep], dtype=float)
        C = float((Td / b).max()) if len(b) else math.nan
    else:
        b = np.full(len(mu), math.nan)
        C = math.nan
    return ScalingReport(mu, Td, ratio, spread, b, C, excluded)
