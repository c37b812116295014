"""Splitting-condition checker, minimum detection and the three-time-scale analysis.

Balls and distances on the torus use the sup norm of componentwise circle
distances, so B_rho(A_0) is a cube of half-width rho.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

from .errors import ResolutionError
from .frequencies import FrequencyVector, PerturbationSeries
from .melnikov import HomoclinicGrid, compute_grid, melnikov_coefficient
from .pendulum import SolverOptions

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SplittingWindow:
    A0: tuple[float, ...]
    rho: float
    alpha: float
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "A0", tuple(float(a) for a in np.atleast_1d(self.A0)))
        if not 0 < self.alpha < self.rho <= math.pi:
            raise ValueError("need 0 < alpha < rho <= pi")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass
class SplittingReport:
    window: SplittingWindow
    cond_i: bool
    cond_ii: bool
    cond_iii: bool
    margin_i: float
    margin_ii: float
    margin_iii: float
    inf_ball: float
    inf_boundary: float
    sup_inner: float
    sublevel_gap: float

    @property
    def passed(self) -> bool:
        return self.cond_i and self.cond_ii and self.cond_iii

    def to_text(self) -> str:
        w = self.window
        items = {"A0": ",".join(repr(a) for a in w.A0), "rho": w.rho, "alpha": w.alpha,
                 "delta": w.delta, "cond_i": self.cond_i, "cond_ii": self.cond_ii,
                 "cond_iii": self.cond_iii, "margin_i": self.margin_i,
                 "margin_ii": self.margin_ii, "margin_iii": self.margin_iii,
                 "inf_ball": self.inf_ball, "inf_boundary": self.inf_boundary,
                 "sup_inner": self.sup_inner, "sublevel_gap": self.sublevel_gap,
                 "passed": self.passed}
        return "".join(f"{k}={_fmt(v)}\n" for k, v in items.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, float):
        return f"{v:.17e}"
    return str(v)


@dataclass
class LocalGrid:
    """Tensor samples on a box (not periodic); axes are absolute angles."""

    axes: list[np.ndarray]
    values: np.ndarray


def local_grid(grid: HomoclinicGrid, centre, half_width: float, spacing: float) -> LocalGrid:
    """Trigonometric interpolant of a band-limited grid on a fine box around centre."""
    axes, vals = grid.evaluate_box(centre, half_width, spacing)
    return LocalGrid(axes, vals)


def _circ(x):
    return np.abs((np.asarray(x) + math.pi) % TWO_PI - math.pi)


class _Field:
    """Grid samples around A_0 with sup-norm torus distances and an interpolator."""

    def __init__(self, grid, A0, extent: float):
        A0 = np.asarray(A0, dtype=float)
        if isinstance(grid, HomoclinicGrid):
            h = grid.spacing
            axes, vals = [], grid.samples
            for j, L in enumerate(grid.shape):
                i0 = int(np.rint(A0[j] / h[j]))
                m = min(int(math.ceil(extent / h[j])) + 2, (L - 1) // 2)
                idx = np.mod(np.arange(i0 - m, i0 + m + 1), L)
                vals = np.take(vals, idx, axis=j)
                axes.append(h[j] * np.arange(i0 - m, i0 + m + 1))
        else:
            axes, vals = [np.asarray(a, dtype=float) for a in grid.axes], grid.values
            h = np.array([a[1] - a[0] for a in axes])
            for j, a in enumerate(axes):
                if _circ(a[0] - A0[j]) < extent or _circ(a[-1] - A0[j]) < extent:
                    raise ResolutionError("local grid does not cover the ball B_rho")
        self.values = np.asarray(vals, dtype=float)
        self.h = np.asarray(h, dtype=float)
        # offsets from A0, unwrapped so they increase through zero
        self.rel_axes = [np.unwrap(a - c) for a, c in zip(axes, A0)]
        self.rel_axes = [r - TWO_PI * np.rint(r[len(r) // 2] / TWO_PI) for r in self.rel_axes]
        mesh = np.meshgrid(*self.rel_axes, indexing="ij")
        self.offsets = np.stack(mesh, axis=-1)
        self.dist = np.max(np.abs(np.stack(mesh)), axis=0)
        self._interp = RegularGridInterpolator(self.rel_axes, self.values, method="linear")

    def sphere_values(self, r: float) -> np.ndarray:
        """Multilinear interpolation at projections of nearby samples onto the
        sup-sphere (cube surface) of radius r."""
        band = np.abs(self.dist - r) <= float(self.h.max())
        band &= self.dist > 0
        pts = self.offsets[band] * (r / self.dist[band])[:, None]
        if len(pts) == 0:
            raise ResolutionError(f"no samples near the sphere of radius {r}")
        return self._interp(pts)


def _gap(field: _Field, sub: np.ndarray, sup: np.ndarray, guard: int) -> float:
    """Certified lower bound on the sup-distance between two cell sets."""
    if not (sub.any() and sup.any()):
        return math.inf
    cells = ndimage.distance_transform_cdt(~sup, metric="chessboard")
    return max((int(cells[sub].min()) - guard) * float(field.h.min()), 0.0)


def check_splitting_condition(grid, window: SplittingWindow, guard: int = 1) -> SplittingReport:
    """Evaluate items (i)-(iii) of the splitting condition on sampled G.

    (i)   inf over the sphere of radius rho exceeds inf over B_rho by delta;
    (ii)  sup over B_alpha is below inf over B_rho plus delta/4;
    (iii) the sup-distance between {G < inf + delta/2} and {G >= inf + 3 delta/4}
          inside B_rho is at least 2 alpha.

    Values off the grid come from multilinear interpolation; the distance in
    (iii) is the cell distance minus ``guard`` cells.
    """
    if isinstance(grid, HomoclinicGrid):
        h = grid.spacing
    else:
        h = np.array([a[1] - a[0] for a in grid.axes])
    if float(np.max(h)) > window.alpha / 4 * (1 + 1e-9):
        raise ResolutionError(f"grid spacing {np.max(h):.3e} exceeds alpha/4 = {window.alpha / 4:.3e}")
    fld = _Field(grid, window.A0, window.rho)
    inside = fld.dist < window.rho
    v = fld.values
    inf_ball = float(v[inside].min())
    inf_boundary = float(fld.sphere_values(window.rho).min())
    inner = fld.dist <= window.alpha
    sup_inner = float(max(v[inner].max(initial=-np.inf), fld.sphere_values(window.alpha).max()))
    d = window.delta
    gap = _gap(fld, inside & (v < inf_ball + d / 2), inside & (v >= inf_ball + 3 * d / 4), guard)
    m1 = inf_boundary - (inf_ball + d)
    m2 = (inf_ball + d / 4) - sup_inner
    m3 = gap - 2 * window.alpha
    return SplittingReport(window, m1 > 0, m2 > 0, m3 >= 0, m1, m2, m3,
                           inf_ball, inf_boundary, sup_inner, gap)


@dataclass
class MinimumReport:
    A0: tuple[float, ...]
    value: float
    hessian: np.ndarray
    eigenvalues: np.ndarray
    nondegenerate: bool


def find_minimum(grid: HomoclinicGrid, rel_threshold: float = 1e-3) -> MinimumReport:
    """Grid argmin refined by a local quadratic (Newton) step, Hessian by central differences."""
    v = grid.samples
    n = grid.n
    h = grid.spacing
    if min(grid.shape) < 3:
        raise ResolutionError("need at least 3 samples per direction for second differences")
    i0 = np.unravel_index(int(np.argmin(v)), v.shape)

    def at(offsets):
        return v[tuple((i0[j] + offsets[j]) % grid.shape[j] for j in range(n))]

    e = np.eye(n, dtype=int)
    grad = np.array([(at(e[j]) - at(-e[j])) / (2 * h[j]) for j in range(n)])
    H = np.empty((n, n))
    f0 = at(np.zeros(n, dtype=int))
    for j in range(n):
        H[j, j] = (at(e[j]) - 2 * f0 + at(-e[j])) / h[j] ** 2
        for k in range(j + 1, n):
            H[j, k] = H[k, j] = (at(e[j] + e[k]) - at(e[j] - e[k]) - at(-e[j] + e[k])
                                 + at(-e[j] - e[k])) / (4 * h[j] * h[k])
    eig = np.linalg.eigvalsh(H)
    scale = float(v.max() - v.min())
    nondeg = scale > 0 and bool(eig.min() > rel_threshold * scale)
    A = np.array([i0[j] * h[j] for j in range(n)])
    value = float(f0)
    if nondeg:
        step = -np.linalg.solve(H, grad)
        if np.all(np.abs(step) <= h):
            A = A + step
            value = float(f0 + grad @ step + 0.5 * step @ H @ step)
    return MinimumReport(tuple(float(a) for a in np.mod(A, TWO_PI)), value, H, eig, nondeg)


@dataclass
class WindowSearch:
    window: SplittingWindow | None
    report: SplittingReport | None
    feasible: bool
    reason: str = ""


def suggest_window_from_minimum(grid: HomoclinicGrid, A0=None, mu: float | None = None,
                                rhos: Sequence[float] = (math.pi / 2, 1.0, 0.75, 0.5, 0.35, 0.25),
                                alpha_fracs: Sequence[float] = (0.5, 0.35, 0.25, 0.18, 0.125,
                                                                0.09, 0.0625, 0.045, 0.03, 0.02,
                                                                0.015, 0.01),
                                delta_fracs: Sequence[float] = tuple(np.round(np.arange(0.95, 0.0, -0.05), 2)),
                                guard: int = 1) -> WindowSearch:
    """Coarse search for (rho, alpha, delta) passing the splitting condition.

    Maximizes delta; ties prefer the larger alpha, then the larger rho. All
    candidate values are relative (delta as a fraction of the boundary rise,
    alpha as a fraction of rho), so for G = c + mu h the chosen alpha does not
    depend on mu and delta is proportional to mu. ``mu`` is informational.
    """
    if A0 is None:
        mn = find_minimum(grid)
        if not mn.nondegenerate:
            return WindowSearch(None, None, False, "degenerate minimum")
        A0 = mn.A0
    h = float(grid.spacing.max())
    best = None
    for rho in rhos:
        if rho <= 8 * h or rho > math.pi:
            continue
        fld = _Field(grid, A0, rho)
        inside = fld.dist < rho
        v = fld.values
        inf_ball = float(v[inside].min())
        inf_bd = float(fld.sphere_values(rho).min())
        rise = inf_bd - inf_ball
        if rise <= 0:
            continue
        for df in delta_fracs:
            delta = float(df * rise)
            if best is not None and delta < best[0]:
                break
            gap = _gap(fld, inside & (v < inf_ball + delta / 2),
                       inside & (v >= inf_ball + 3 * delta / 4), guard)
            for af in alpha_fracs:
                alpha = af * rho
                if alpha < 4 * h or 2 * alpha > gap:
                    continue
                inner = fld.dist <= alpha
                sup_in = max(v[inner].max(initial=-np.inf), fld.sphere_values(alpha).max())
                if sup_in < inf_ball + delta / 4:
                    key = (delta, alpha, rho)
                    if best is None or key > best:
                        best = key
                    break
    if best is None:
        return WindowSearch(None, None, False, "no feasible (rho, alpha, delta) among candidates")
    delta, alpha, rho = best
    window = SplittingWindow(tuple(A0), rho, alpha, delta)
    rep = check_splitting_condition(grid, window, guard)
    if not rep.passed:
        return WindowSearch(window, rep, False, "candidate failed final check")
    return WindowSearch(window, rep, True)


@dataclass(frozen=True)
class DiffusionBound:
    value: float
    transitions: float
    transition_time: float
    shadow_term: float


def diffusion_time_bound(dI: float, window: SplittingWindow, tau: float, eta: float,
                         C: float = 1.0) -> DiffusionBound:
    """C |dI|/delta rho max(|ln delta|, alpha^-tau) + C |ln eta|."""
    if min(dI, tau, eta, C) <= 0:
        raise ValueError("dI, tau, eta and C must be positive")
    k = dI / window.delta
    Ts = max(abs(math.log(window.delta)), window.alpha ** (-tau))
    shadow = C * abs(math.log(eta))
    return DiffusionBound(C * k * window.rho * Ts + shadow, k, Ts, shadow)


# three time scales ------------------------------------------------------------

def fast_mode_profiles(f: PerturbationSeries, omega: FrequencyVector, A2: np.ndarray,
                       k1: int) -> np.ndarray:
    """Gamma_{k1}(A_2) = sum_{k_2} Gamma_{(k1, k2)} e^{i k2.A2} (complex), A2 shape (m, n-1)."""
    out = np.zeros(len(A2), dtype=complex)
    for k, c in f.coefficients.items():
        if k[0] != k1:
            continue
        out += melnikov_coefficient(k, omega, c) * np.exp(1j * (A2 @ np.array(k[1:], dtype=float)))
    return out


@dataclass
class ThreeScaleRow:
    eps: float
    mu: float
    gamma1: float
    gamma1_normalized: float
    G1: float
    G1_normalized: float
    R0_ratio: float
    R1_ratio: float
    floor_dropped: bool = False


@dataclass
class ThreeScaleReport:
    rows: list[ThreeScaleRow]
    slope_gamma: float
    slope_G: float
    slope_gamma_raw: float
    slope_G_raw: float
    target: float = -math.pi / 2
    grids: dict = field(default_factory=dict, repr=False)

    def relative_error(self, which: str = "G") -> float:
        s = self.slope_G if which == "G" else self.slope_gamma
        return abs(s - self.target) / abs(self.target)

    def to_csv(self) -> str:
        lines = ["eps,mu,gamma1,G1,G1_normalized,slope_G,slope_gamma,R0_ratio,R1_ratio,dropped"]
        for r in self.rows:
            lines.append(f"{r.eps:.17e},{r.mu:.17e},{r.gamma1:.17e},{r.G1:.17e},"
                         f"{r.G1_normalized:.17e},{self.slope_G:.17e},{self.slope_gamma:.17e},"
                         f"{r.R0_ratio:.17e},{r.R1_ratio:.17e},{int(r.floor_dropped)}")
        return "\n".join(lines) + "\n"


def _fit_slope(x, y) -> float:
    if len(x) < 2:
        return math.nan
    return float(np.polyfit(np.asarray(x), np.asarray(y), 1)[0])


def three_timescale_analysis(eps_list: Sequence[float], a: float, mu_rule: Callable[[float], float],
                             f: PerturbationSeries, shape: Sequence[int] = (8, 8),
                             opts: SolverOptions | None = None, workers: int = 1,
                             floor: float = 1e-13, keep_grids: bool = False) -> ThreeScaleReport:
    """Splitting along the fast angle for omega_eps = (1/sqrt(eps), eps^a).

    For each eps the reduced homoclinic function G~ is sampled on ``shape`` and
    split into A_1-harmonics G~_{k1}(A_2). The k1 = 1 amplitude is compared to
    the closed-form mu Gamma_1; slopes of log(amplitude sqrt(eps) / mu) against
    1/sqrt(eps) are fitted (the algebraic prefactor mu/sqrt(eps) is the one in
    delta of the three-time-scale window).
    """
    rows = []
    grids = {}
    norm_f = f.strip_norm()
    for eps in eps_list:
        omega = FrequencyVector.three_time_scale(eps, a)
        mu = float(mu_rule(eps))
        grid = compute_grid("reduced", mu, f, omega, shape, opts, workers=workers)
        c = np.fft.fft(grid.samples, axis=0) / grid.shape[0]
        A2 = (TWO_PI * np.arange(grid.shape[1]) / grid.shape[1])[:, None]
        G1 = c[1]
        G0 = c[0].real
        gam1 = fast_mode_profiles(f, omega, A2, 1)
        gam0 = fast_mode_profiles(f, omega, A2, 0).real
        e_fast = math.exp(-math.pi / (2 * math.sqrt(eps)))
        amp_G = float(np.abs(G1).max())
        amp_gam = float(np.abs(gam1).max())
        dropped = amp_G < floor
        if dropped:
            warnings.warn(f"eps={eps}: k1=1 coefficient {amp_G:.2e} below numeric floor; dropped")
        r0 = (G0 - G0.mean()) + mu * (gam0 - gam0.mean())
        r1 = np.abs(G1 + mu * gam1)
        rows.append(ThreeScaleRow(
            eps=eps, mu=mu, gamma1=amp_gam, gamma1_normalized=amp_gam * math.sqrt(eps),
            G1=amp_G, G1_normalized=amp_G * math.sqrt(eps) / mu if mu else 0.0,
            R0_ratio=float(np.abs(r0).max() / (mu**2 * norm_f**2)) if mu else 0.0,
            R1_ratio=float(r1.max() / (mu**2 * norm_f**2 / eps**2 * e_fast)) if mu else 0.0,
            floor_dropped=dropped))
        if keep_grids:
            grids[eps] = grid
    ok = [r for r in rows if not r.floor_dropped and r.G1 > 0]
    x = [1 / math.sqrt(r.eps) for r in ok]
    xg = [1 / math.sqrt(r.eps) for r in rows]
    return ThreeScaleReport(
        rows=rows,
        slope_gamma=_fit_slope(xg, [math.log(r.gamma1_normalized) for r in rows]),
        slope_G=_fit_slope(x, [math.log(r.G1_normalized) for r in ok]),
        slope_gamma_raw=_fit_slope(xg, [math.log(r.gamma1) for r in rows]),
        slope_G_raw=_fit_slope(x, [math.log(r.G1) for r in ok]),
        grids=grids)


@dataclass
class ThreeScaleWindow:
    feasible: bool
    window: SplittingWindow | None = None
    report: SplittingReport | None = None
    violated: str = ""
    A2bar: float = math.nan


def check_3ts_window(eps: float, mu: float, A2: np.ndarray, action_profile0: np.ndarray,
                     gamma1_profile: np.ndarray, c: float, d: float, grid: HomoclinicGrid | None = None,
                     Cbar: float = 1.0, rho: float = 0.4, refine: int = 1) -> ThreeScaleWindow:
    """Hypotheses and window for the three-time-scale splitting regime (n = 2).

    ``action_profile0`` is the first-order A_1-average of the action per unit
    mu, i.e. -Gamma_0(A_2) (see ``melnikov`` for the sign); ``gamma1_profile``
    is Gamma_1(A_2). Hypotheses: |Gamma_1| > (c/sqrt(eps)) e^{-pi/(2 sqrt eps)}
    for |A_2 - A2bar| < d, and profile0(A2bar +- d) > profile0(A2bar) + c.
    The window has alpha = Cbar e^{-pi/(2 sqrt eps)} and
    delta = c mu/(2 sqrt eps) e^{-pi/(2 sqrt eps)}; it is validated on a fine
    local resampling of ``grid`` when one is given.
    """
    A2 = np.asarray(A2, dtype=float).ravel()
    p0 = np.asarray(action_profile0, dtype=float).ravel()
    g1 = np.abs(np.asarray(gamma1_profile)).ravel()
    e_fast = math.exp(-math.pi / (2 * math.sqrt(eps)))
    i_bar = int(np.argmin(p0))
    A2bar = float(A2[i_bar])
    near = _circ(A2 - A2bar) < d
    thresh = c / math.sqrt(eps) * e_fast
    if not np.all(g1[near] > thresh):
        return ThreeScaleWindow(False, violated="|Gamma_1(A_2)| > (c/sqrt(eps)) exp(-pi/(2 sqrt(eps))) "
                                                "on |A_2 - A2bar| < d", A2bar=A2bar)
    period = TWO_PI
    interp = lambda s: float(np.interp(np.mod(s, period), A2, p0, period=period))
    if not (interp(A2bar + d) > p0[i_bar] + c and interp(A2bar - d) > p0[i_bar] + c):
        return ThreeScaleWindow(False, violated="Gamma_0(A2bar +- d) > Gamma_0(A2bar) + c", A2bar=A2bar)
    alpha = Cbar * e_fast
    delta = c * mu / (2 * math.sqrt(eps)) * e_fast
    if grid is None:
        return ThreeScaleWindow(True, SplittingWindow((math.nan, A2bar), rho, alpha, delta),
                                A2bar=A2bar)
    coef = np.fft.fft(grid.samples, axis=0)[1] / grid.shape[0]
    j = int(np.argmin(_circ(TWO_PI * np.arange(grid.shape[1]) / grid.shape[1] - A2bar)))
    A1star = float(np.mod(math.pi - np.angle(coef[j]), TWO_PI))
    A0 = (A1star, A2bar)
    # fine local samples: refine the centre by a quick Newton step on the interpolant
    window = SplittingWindow(A0, rho, alpha, delta)
    spacing = alpha / (4 * refine)
    loc = local_grid(grid, A0, rho + 3 * spacing, spacing)
    rep = check_splitting_condition(loc, window)
    return ThreeScaleWindow(rep.passed, window, rep,
                            "" if rep.passed else "splitting condition on computed grid",
                            A2bar=A2bar)
