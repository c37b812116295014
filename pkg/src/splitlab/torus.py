"""Persistent invariant tori of the pendulum-rotator system by Fourier-Newton.

A torus {I = I_0 + a(psi), phi = psi, q = Q(psi), p = P(psi)} carried by the
rotation psi -> psi + omega t is invariant iff, with D = omega . d/dpsi,

    D Q = P,    D P = sin Q - mu f_q(psi, Q),    D a = -mu grad_phi f(psi, Q).

The second-order equation -D^2 Q + sin Q = mu f_q(psi, Q) has no small
divisors (its linear part is (omega.k)^2 + 1); they enter only through the
last equation, solved mode by mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.fft import fftn, ifftn
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import NonConvergenceError, SmallDivisorError
from .frequencies import (FrequencyVector, PerturbationSeries, diophantine_margin,
                          format_mode_table)


@dataclass
class TorusOptions:
    tol: float = 1e-12
    max_iter: int = 30
    oversample: int = 4
    conditioning_bound: float = 1e8


def _wavenumbers(L: int, n: int) -> np.ndarray:
    """Integer wavenumber grid of shape (n, L, ..., L)."""
    k1 = np.fft.fftfreq(L, d=1.0 / L).round().astype(np.int64)
    return np.stack(np.meshgrid(*([k1] * n), indexing="ij"))


def _angle_grid(L: int, n: int) -> np.ndarray:
    x = 2 * np.pi * np.arange(L) / L
    return np.stack(np.meshgrid(*([x] * n), indexing="ij"), axis=-1)


@dataclass
class InvariantTorus:
    """Fourier representation of the torus embedding corrections.

    ``Qhat``, ``Phat`` have shape (L,)*n in numpy FFT ordering (normalized
    coefficients); ``ahat`` has shape (n, L, ..., L).
    """

    mu: float
    omega: FrequencyVector
    K: int
    Qhat: np.ndarray
    Phat: np.ndarray
    ahat: np.ndarray
    energy: float
    invariance_residual: float
    energy_spread: float
    iterations: int
    mean_drift: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.omega.n

    def _modes(self):
        L = self.Qhat.shape[0]
        kk = _wavenumbers(L, self.n).reshape(self.n, -1).T
        keep = np.abs(kk).max(axis=1) <= self.K
        return kk[keep], keep

    def _synth(self, coef: np.ndarray, psi) -> np.ndarray:
        kk, keep = self._modes()
        c = coef.reshape(-1)[keep]
        psi = np.asarray(psi, dtype=float)
        return (np.exp(1j * (psi @ kk.T)) @ c).real

    def Q(self, psi):
        return self._synth(self.Qhat, psi)

    def P(self, psi):
        return self._synth(self.Phat, psi)

    def a(self, psi):
        return np.stack([self._synth(self.ahat[j], psi) for j in range(self.n)], axis=-1)

    def coefficient_map(self, which: str = "Q", component: int = 0, cutoff: float = 0.0
                        ) -> dict[tuple[int, ...], complex]:
        arr = {"Q": self.Qhat, "P": self.Phat}.get(which)
        if which == "a":
            arr = self.ahat[component]
        kk, keep = self._modes()
        vals = arr.reshape(-1)[keep]
        return {tuple(int(v) for v in k): complex(c)
                for k, c in zip(kk, vals) if abs(c) > cutoff}

    def sup_norms(self, L_test: int | None = None) -> dict[str, float]:
        L_test = L_test or 2 * self.Qhat.shape[0]
        psi = _angle_grid(L_test, self.n).reshape(-1, self.n)
        return {"Q": float(np.abs(self.Q(psi)).max()),
                "P": float(np.abs(self.P(psi)).max()),
                "a": float(np.abs(self.a(psi)).max())}

    def reality_defect(self) -> float:
        worst = 0.0
        for arr in (self.Qhat, self.Phat, *self.ahat):
            flipped = np.conj(np.roll(np.flip(arr), 1, axis=tuple(range(arr.ndim))))
            worst = max(worst, float(np.abs(arr - flipped).max()))
        return worst

    def to_table(self) -> str:
        head = {"mu": repr(self.mu), "residual": f"{self.invariance_residual:.6e}",
                "E_mu": repr(self.energy), "K": self.K}
        parts = ["# field=Q\n" + format_mode_table(self.coefficient_map("Q"), head),
                 "# field=P\n" + format_mode_table(self.coefficient_map("P"))]
        for j in range(self.n):
            parts.append(f"# field=a{j + 1}\n" + format_mode_table(self.coefficient_map("a", j)))
        return "".join(parts)


def _spectral_residuals(f: PerturbationSeries, omega, mu, Q, P, a, L):
    """Invariance defects and energy on an L^n grid from coefficient arrays."""
    n = omega.n
    kv = _wavenumbers(L, n)
    wk = np.tensordot(omega.array, kv, axes=1)
    psi = _angle_grid(L, n)
    Qg = ifftn(Q * L**n).real
    Pg = ifftn(P * L**n).real
    DQ = ifftn(1j * wk * Q * L**n).real
    DP = ifftn(1j * wk * P * L**n).real
    ag = np.stack([ifftn(a[j] * L**n).real for j in range(n)], axis=-1)
    Da = np.stack([ifftn(1j * wk * a[j] * L**n).real for j in range(n)], axis=-1)
    flat = psi.reshape(-1, n)
    fq = f.dq(flat, Qg.ravel()).reshape(Qg.shape)
    gphi = f.dphi(flat, Qg.ravel()).reshape(Qg.shape + (n,))
    e1 = np.abs(DQ - Pg).max()
    e2 = np.abs(DP - np.sin(Qg) + mu * fq).max()
    e3 = np.abs(Da + mu * gphi).max()
    energy = (ag @ omega.array + Pg**2 / 2 + np.cos(Qg) - 1
              + mu * f.value(flat, Qg.ravel()).reshape(Qg.shape))
    return max(e1, e2, e3), energy


def _pad(coef: np.ndarray, L_new: int) -> np.ndarray:
    """Embed FFT-ordered coefficients into a larger FFT-ordered array."""
    L = coef.shape[-1]
    n = coef.ndim
    out = np.zeros((L_new,) * n, dtype=complex)
    k1 = np.fft.fftfreq(L, d=1.0 / L).round().astype(int)
    idx = np.ix_(*([np.mod(k1, L_new)] * n))
    out[idx] = coef
    return out


def solve_invariant_torus(mu: float, f: PerturbationSeries, omega: FrequencyVector,
                          K_modes: int, opts: TorusOptions | None = None) -> InvariantTorus:
    """Fourier-Newton solve for (Q, P, a) truncated at |k|_inf <= K_modes."""
    opts = opts or TorusOptions()
    f = f.as_general()
    n = omega.n
    if f.n != n:
        raise ValueError("perturbation and frequency dimensions differ")
    margin, worst = diophantine_margin(omega, K_modes)
    if margin <= 0:
        raise SmallDivisorError(worst, 0.0, math.inf)

    L = max(8, opts.oversample * K_modes)
    kv = _wavenumbers(L, n)
    wk = np.tensordot(omega.array, kv, axes=1)
    keep = np.abs(kv).max(axis=0) <= K_modes
    psi = _angle_grid(L, n).reshape(-1, n)
    shape = (L,) * n

    def residual(Qg):
        fq = f.dq(psi, Qg.ravel()).reshape(shape)
        return ifftn(wk**2 * fftn(Qg)).real + np.sin(Qg) - mu * fq

    def project(g):
        c = fftn(g)
        c[~keep] = 0.0
        return ifftn(c).real

    Qg = np.zeros(shape)
    R = project(residual(Qg))
    it = 0
    for it in range(1, opts.max_iter + 1):
        if np.abs(R).max() < opts.tol:
            break
        diag = (np.cos(Qg) - mu * f.dq(psi, Qg.ravel(), order=2).reshape(shape))
        cbar = float(diag.mean())

        def matvec(v):
            v = v.reshape(shape)
            return project(ifftn(wk**2 * fftn(v)).real + diag * v).ravel()

        def precond(v):
            c = fftn(v.reshape(shape)) / (wk**2 + cbar)
            c[~keep] = 0.0
            return ifftn(c).real.ravel()

        Aop = LinearOperator((L**n, L**n), matvec=matvec, dtype=float)
        Mop = LinearOperator((L**n, L**n), matvec=precond, dtype=float)
        dQ, info = gmres(Aop, R.ravel(), M=Mop, rtol=1e-14, atol=0.0, restart=60, maxiter=200)
        if info < 0:
            raise NonConvergenceError("torus GMRES breakdown", float(np.abs(R).max()))
        Qg = project(Qg - dQ.reshape(shape))
        R = project(residual(Qg))
    else:
        if np.abs(R).max() >= opts.tol:
            raise NonConvergenceError("torus Newton did not converge", float(np.abs(R).max()))

    Qc = fftn(Qg) / L**n
    Qc[~keep] = 0.0
    Pc = 1j * wk * Qc
    g = f.dphi(psi, Qg.ravel()).reshape(shape + (n,))
    ac = np.zeros((n,) + shape, dtype=complex)
    zero = tuple([0] * n)
    mean_drift = 0.0
    kflat = kv.reshape(n, -1).T
    for j in range(n):
        gc = fftn(g[..., j]) / L**n
        mean_drift = max(mean_drift, abs(mu * gc[zero]))
        active = keep & (np.abs(gc) > 1e-15 * max(1.0, np.abs(gc).max()))
        active[zero] = False
        div = np.abs(wk[active])
        if div.size:
            amp = 1.0 / div
            if amp.max() > opts.conditioning_bound:
                i = int(np.argmax(amp))
                kbad = kflat[active.ravel()][i]
                raise SmallDivisorError(kbad, float(div[i]), float(amp[i]))
            # (H1) guard with the stated (gamma, tau)
            knorm = np.abs(kflat[active.ravel()]).max(axis=1).astype(float)
            bad = div < omega.gamma / knorm**omega.tau
            if bad.any() and omega.certificate is not None:
                i = int(np.argmax(bad))
                raise SmallDivisorError(kflat[active.ravel()][i], float(div[i]), float(amp[i]))
        aj = np.zeros(shape, dtype=complex)
        aj[active] = -mu * gc[active] / (1j * wk[active])
        ac[j] = aj

    L_test = 2 * L
    res, energy = _spectral_residuals(f, omega, mu, _pad(Qc, L_test), _pad(Pc, L_test),
                                      np.stack([_pad(ac[j], L_test) for j in range(n)]), L_test)
    torus = InvariantTorus(mu=mu, omega=omega, K=K_modes, Qhat=Qc, Phat=Pc, ahat=ac,
                           energy=float(energy.mean()), invariance_residual=float(res),
                           energy_spread=float(energy.max() - energy.min()), iterations=it,
                           mean_drift=float(mean_drift))
    return torus


def trivial_torus(omega: FrequencyVector, K: int = 1, L: int = 8) -> InvariantTorus:
    """The unperturbed torus q = p = 0 (used when f vanishes to second order at q = 0)."""
    n = omega.n
    z = np.zeros((L,) * n, dtype=complex)
    return InvariantTorus(mu=0.0, omega=omega, K=K, Qhat=z, Phat=z.copy(),
                          ahat=np.zeros((n,) + z.shape, dtype=complex), energy=0.0,
                          invariance_residual=0.0, energy_spread=0.0, iterations=0)
