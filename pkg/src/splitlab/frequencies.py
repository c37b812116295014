"""Rotator frequencies, Diophantine diagnostics and the coupling's Fourier series.

The coupling f(phi, q) is stored as a finite Fourier series. Two layouts are
supported:

* ``QMode.FACTOR``: f(phi, q) = (1 - cos q) g(phi), keys are k in Z^n and the
  values are the coefficients g_k.
* ``QMode.GENERAL``: f(phi, q) = sum f_{k,m} exp(i (k.phi + m q)), keys are
  (k_1, ..., k_n, m).
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import BudgetError, ResolutionError


class QMode(str, enum.Enum):
    FACTOR = "factor"
    GENERAL = "general"


@dataclass(frozen=True)
class DiophantineCertificate:
    K: int
    margin: float
    worst_k: tuple[int, ...]


@dataclass(frozen=True)
class FrequencyVector:
    """Frequencies omega of the isochronous rotators.

    ``tau`` and ``gamma`` are the exponent and constant of the Diophantine
    lower bound ``|omega.k| >= gamma / |k|^tau``; ``|k|`` is the sup norm.
    """

    omega: tuple[float, ...]
    gamma: float = 1.0
    tau: float = 1.0
    certificate: DiophantineCertificate | None = None

    def __post_init__(self):
        om = tuple(float(w) for w in np.atleast_1d(np.asarray(self.omega, dtype=float)))
        object.__setattr__(self, "omega", om)
        if not all(math.isfinite(w) for w in om):
            raise ValueError("omega components must be finite")
        if not any(w != 0.0 for w in om):
            raise ValueError("omega must be nonzero")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        # finite-K margins are meaningful for any tau > 0; tau > n - 1 is only
        # needed for (H1) to hold on a full-measure set of omega
        if self.tau <= 0:
            raise ValueError("tau must be positive")

    @property
    def n(self) -> int:
        return len(self.omega)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.omega)

    @classmethod
    def three_time_scale(cls, eps: float, a: float = 1.0, slow: Iterable[float] = (1.0,),
                         gamma: float = 1.0, tau: float = 2.0) -> "FrequencyVector":
        """omega_eps = (1/sqrt(eps), eps^a * slow): one fast and n-1 slow rotators."""
        if eps <= 0:
            raise ValueError("eps must be positive")
        slow = tuple(float(s) * eps**a for s in slow)
        return cls((1.0 / math.sqrt(eps),) + slow, gamma=gamma, tau=tau)

    def certify(self, K: int, budget: int = 10**7) -> "FrequencyVector":
        """Attach a finite-K certificate; fails if the margin is below gamma."""
        margin, worst = diophantine_margin(self, K, budget=budget)
        if margin < self.gamma:
            raise ValueError(
                f"margin {margin:.3e} at k={worst} is below gamma={self.gamma:.3e} for K={K}"
            )
        return FrequencyVector(self.omega, self.gamma, self.tau,
                               DiophantineCertificate(K, margin, worst))


def _lattice_cube(n: int, K: int) -> np.ndarray:
    axes = [np.arange(-K, K + 1)] * n
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)


def _canonical_half(ks: np.ndarray) -> np.ndarray:
    """Keep k != 0 whose first nonzero component is positive (k ~ -k)."""
    nz = ks != 0
    first = np.argmax(nz, axis=1)
    lead = ks[np.arange(len(ks)), first]
    return ks[nz.any(axis=1) & (lead > 0)]


def diophantine_margin(omega: FrequencyVector, K: int, budget: int = 10**7
                       ) -> tuple[float, tuple[int, ...]]:
    """min over 0 < |k|_inf <= K of |omega.k| |k|_inf^tau and the k attaining it.

    Ties are broken by smallest shell, then lexicographic order, with the sign
    of k fixed so that its first nonzero component is positive.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n = omega.n
    if (2 * K + 1) ** n > budget:
        raise BudgetError(f"(2K+1)^n = {(2 * K + 1) ** n} lattice points exceed budget {budget}")
    ks = _canonical_half(_lattice_cube(n, K))
    shell = np.abs(ks).max(axis=1)
    vals = np.abs(ks @ omega.array) * shell.astype(float) ** omega.tau
    order = np.lexsort(tuple(ks[:, j] for j in reversed(range(n))) + (shell,))
    ks, vals = ks[order], vals[order]
    i = int(np.argmin(vals))
    return float(vals[i]), tuple(int(v) for v in ks[i])


@dataclass(frozen=True)
class ErgodizationResult:
    time: float
    proxy: float
    grid_points: int
    covered: bool


def ergodization_time(alpha: float, omega: FrequencyVector, max_cells: int = 2**22,
                      max_time: float = 1e5, chunk: int = 4096) -> ErgodizationResult:
    """Smallest T such that {omega t : 0 <= t <= T} is an alpha-net of T^n.

    Distances use the sup norm of componentwise circle distances. The torus is
    sampled on a uniform grid with 2^j points per side (spacing <= alpha/4),
    the orbit at time steps moving at most half a cell; T is the largest
    first-cover time over grid points. The dyadic grids make halving alpha a
    refinement, so T is nonincreasing in alpha.
    """
    if not 0 < alpha < math.pi + 1e-15:
        raise ValueError("alpha must lie in (0, pi)")
    n = omega.n
    N = 2 ** math.ceil(math.log2(8 * math.pi / alpha))
    if N**n > max_cells:
        raise ResolutionError(f"alpha={alpha} needs {N**n} cells > max_cells={max_cells}")
    h = 2 * math.pi / N
    om = omega.array
    dt = 0.5 * h / np.abs(om).max()
    proxy = alpha ** (-omega.tau)

    m = int(math.floor(alpha / h + 1e-12)) + 1
    offs = np.arange(-m, m + 1)
    first = np.full(N**n, np.inf)
    strides = N ** np.arange(n - 1, -1, -1)
    j0 = 0
    while j0 * dt <= max_time:
        t = (j0 + np.arange(chunk)) * dt
        pos = np.mod(np.outer(t, om), 2 * math.pi)
        c = np.rint(pos / h).astype(np.int64)
        flat = np.zeros((chunk, 1), dtype=np.int64)
        ok = np.ones((chunk, 1), dtype=bool)
        for d in range(n):
            idx = c[:, d:d + 1] + offs[None, :]
            diff = np.abs(idx * h - pos[:, d:d + 1])
            diff = np.minimum(diff, 2 * math.pi - diff)
            inside = diff <= alpha + 1e-12
            flat = (flat[:, :, None] + (np.mod(idx, N) * strides[d])[:, None, :]).reshape(chunk, -1)
            ok = (ok[:, :, None] & inside[:, None, :]).reshape(chunk, -1)
        tt = np.broadcast_to(t[:, None], flat.shape)
        np.minimum.at(first, flat[ok], tt[ok])
        j0 += chunk
        if np.isfinite(first).all():
            return ErgodizationResult(float(first.max()), proxy, N**n, True)
    return ErgodizationResult(math.inf, proxy, N**n, False)


@dataclass
class PerturbationSeries:
    """Finite Fourier series of the coupling f; see the module docstring."""

    coefficients: dict[tuple[int, ...], complex]
    widths: tuple[float, ...] | None = None
    decay_order: int = 0
    q_mode: QMode = QMode.FACTOR
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.q_mode = QMode(self.q_mode)
        self.coefficients = {tuple(int(v) for v in k): complex(c)
                             for k, c in self.coefficients.items()}
        if not self.coefficients:
            raise ValueError("empty perturbation series")
        lens = {len(k) for k in self.coefficients}
        if len(lens) != 1:
            raise ValueError("inconsistent mode index lengths")
        if self.widths is None:
            self.widths = (0.0,) * self.n
        self.widths = tuple(float(a) for a in self.widths)
        if len(self.widths) != self.n or min(self.widths) < 0:
            raise ValueError("widths must be n nonnegative numbers")

    @property
    def n(self) -> int:
        L = len(next(iter(self.coefficients)))
        return L if self.q_mode is QMode.FACTOR else L - 1

    # constructors -------------------------------------------------------
    @classmethod
    def cosines(cls, modes: Mapping[tuple[int, ...], float], widths=None,
                q_mode: QMode = QMode.FACTOR) -> "PerturbationSeries":
        """Real series sum_k c_k cos(k.phi) (+ a constant for k = 0)."""
        coefs: dict[tuple[int, ...], complex] = {}
        for k, c in modes.items():
            k = tuple(k)
            if all(v == 0 for v in k):
                coefs[k] = coefs.get(k, 0) + c
            else:
                mk = tuple(-v for v in k)
                coefs[k] = coefs.get(k, 0) + c / 2
                coefs[mk] = coefs.get(mk, 0) + c / 2
        return cls(coefs, widths=widths, q_mode=q_mode)

    # views --------------------------------------------------------------
    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(modes, coefficients) with modes of shape (M, n) (factor) or (M, n+1)."""
        if "arrays" not in self._cache:
            keys = sorted(self.coefficients)
            self._cache["arrays"] = (np.array(keys, dtype=np.int64).reshape(len(keys), -1),
                                     np.array([self.coefficients[k] for k in keys]))
        return self._cache["arrays"]

    def general_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(k, m, c) triples of the series written as sum c exp(i(k.phi + m q))."""
        if "general" not in self._cache:
            modes, c = self.arrays()
            if self.q_mode is QMode.GENERAL:
                out = (modes[:, :-1], modes[:, -1], c)
            else:
                M = len(c)
                k = np.concatenate([modes, modes, modes])
                m = np.concatenate([np.zeros(M, int), np.ones(M, int), -np.ones(M, int)])
                out = (k, m, np.concatenate([c, -c / 2, -c / 2]))
            self._cache["general"] = out
        return self._cache["general"]

    def as_general(self) -> "PerturbationSeries":
        if self.q_mode is QMode.GENERAL:
            return self
        k, m, c = self.general_arrays()
        coefs: dict[tuple[int, ...], complex] = {}
        for kk, mm, cc in zip(k, m, c):
            key = tuple(int(v) for v in kk) + (int(mm),)
            coefs[key] = coefs.get(key, 0) + cc
        return PerturbationSeries(coefs, self.widths, self.decay_order, QMode.GENERAL)

    def angular_part(self) -> "PerturbationSeries":
        """For factor mode, g(phi) as a q-free general series (used by M(A))."""
        if self.q_mode is not QMode.FACTOR:
            raise ValueError("angular_part needs factor mode")
        return PerturbationSeries({k + (0,): c for k, c in self.coefficients.items()},
                                  self.widths, self.decay_order, QMode.GENERAL)

    def scaled(self, s: float) -> "PerturbationSeries":
        return PerturbationSeries({k: s * c for k, c in self.coefficients.items()},
                                  self.widths, self.decay_order, self.q_mode)

    # invariants ---------------------------------------------------------
    def reality_defect(self) -> float:
        worst = 0.0
        for k, c in self.coefficients.items():
            mk = tuple(-v for v in k)
            worst = max(worst, abs(c - np.conj(self.coefficients.get(mk, 0.0))))
        return worst

    def decay_constant(self, s: int | None = None) -> float:
        """Smallest C_s with |f_k| <= C_s |k|^-s exp(-sum a_i |k_i|) over stored k != 0."""
        s = self.decay_order if s is None else s
        best = 0.0
        a = np.array(self.widths)
        for key, c in self.coefficients.items():
            k = np.array(key[: self.n])
            if not k.any():
                continue
            norm = np.abs(k).max()
            best = max(best, abs(c) * norm**s * math.exp(float(a @ np.abs(k))))
        return best

    def strip_norm(self) -> float:
        """Bound on sup |f| over the complex strip of half-widths a_i (sum |f_k| e^{a.|k|})."""
        k, _, c = self.general_arrays()
        return float(np.sum(np.abs(c) * np.exp(np.abs(k) @ np.array(self.widths))))

    # evaluation ---------------------------------------------------------
    def _phase_sum(self, phi, q, dphi: int | None = None, dq: int = 0, complex_out=False):
        k, m, c = self.general_arrays()
        phi = np.asarray(phi, dtype=float)
        q = np.asarray(q, dtype=float)
        arg = phi @ k.T + q[..., None] * m
        w = c * (1j * m) ** dq
        if dphi is not None:
            w = w * (1j * k[:, dphi])
        val = np.exp(1j * arg) @ w
        return val if complex_out else val.real

    def value(self, phi, q, complex_out: bool = False):
        return self._phase_sum(phi, q, complex_out=complex_out)

    def dq(self, phi, q, order: int = 1):
        return self._phase_sum(phi, q, dq=order)

    def dphi(self, phi, q):
        """Gradient in phi, shape (..., n)."""
        return np.stack([self._phase_sum(phi, q, dphi=j) for j in range(self.n)], axis=-1)

    def dphi_dq(self, phi, q):
        return np.stack([self._phase_sum(phi, q, dphi=j, dq=1) for j in range(self.n)], axis=-1)

    def angular(self, phi):
        """g(phi) for factor mode."""
        modes, c = self.arrays()
        return (np.exp(1j * (np.asarray(phi, dtype=float) @ modes.T)) @ c).real

    def max_frequency(self, omega: FrequencyVector) -> float:
        k, _, _ = self.general_arrays()
        return float(np.abs(k @ omega.array).max())


def evaluate_perturbation(f: PerturbationSeries, phi, q, complex_out: bool = False):
    """f(phi, q); in factor mode this is (1 - cos q) sum_k f_k e^{i k.phi}."""
    return f.value(phi, q, complex_out=complex_out)


# mode-table text format ---------------------------------------------------

def format_mode_table(coefs: Mapping[tuple[int, ...], complex], header: Mapping[str, object] = ()) -> str:
    lines = [f"# {k}={v}" for k, v in dict(header).items()]
    for k in sorted(coefs):
        c = complex(coefs[k])
        lines.append(" ".join(str(int(v)) for v in k) + f" {c.real:.17e} {c.imag:.17e}")
    return "\n".join(lines) + "\n"


def parse_mode_table(text: str) -> tuple[dict[tuple[int, ...], complex], dict[str, str]]:
    coefs: dict[tuple[int, ...], complex] = {}
    header: dict[str, str] = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, val = body.split("=", 1)
                header[key.strip()] = val.strip()
            continue
        parts = line.split()
        if len(parts) < 3:
            raise ValueError(f"malformed mode line: {raw!r}")
        k = tuple(int(v) for v in parts[:-2])
        coefs[k] = coefs.get(k, 0) + complex(float(parts[-2]), float(parts[-1]))
    return coefs, header


def write_perturbation(f: PerturbationSeries, path) -> None:
    header = {"q_mode": f.q_mode.value, "n": f.n,
              "widths": ",".join(repr(a) for a in f.widths), "decay_order": f.decay_order}
    with open(path, "w") as fh:
        fh.write(format_mode_table(f.coefficients, header))


def read_perturbation(path, q_mode: QMode | str | None = None, widths=None) -> PerturbationSeries:
    with open(path) as fh:
        coefs, header = parse_mode_table(fh.read())
    mode = QMode(q_mode if q_mode is not None else header.get("q_mode", "factor"))
    if widths is None and "widths" in header:
        widths = tuple(float(v) for v in header["widths"].split(","))
    return PerturbationSeries(coefs, widths=widths, q_mode=mode,
                              decay_order=int(header.get("decay_order", 0)))
