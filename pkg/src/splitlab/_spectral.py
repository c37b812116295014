"""Piecewise Chebyshev (spectral element) machinery on a line segment."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def cheb(p: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nodes on [-1, 1] in increasing order, differentiation matrix, Clenshaw-Curtis weights."""
    j = np.arange(p + 1)
    x = -np.cos(np.pi * j / p)
    c = np.where((j == 0) | (j == p), 2.0, 1.0) * (-1.0) ** j
    X = x[:, None] - x[None, :]
    D = np.outer(c, 1.0 / c) / (X + np.eye(p + 1))
    D -= np.diag(D.sum(axis=1))

    theta = np.pi * j / p
    w = np.zeros(p + 1)
    v = np.ones(p - 1)
    th = theta[1:-1]
    if p % 2 == 0:
        w[0] = w[p] = 1.0 / (p * p - 1)
        for k in range(1, p // 2):
            v -= 2.0 * np.cos(2 * k * th) / (4 * k * k - 1)
        v -= np.cos(p * th) / (p * p - 1)
    else:
        w[0] = w[p] = 1.0 / p**2
        for k in range(1, (p - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * th) / (4 * k * k - 1)
    w[1:-1] = 2.0 * v / p
    for a in (x, D, w):
        a.setflags(write=False)
    return x, D, w


@dataclass(frozen=True)
class Mesh:
    """Uniform elements on [a, b], each carrying p+1 Chebyshev nodes.

    Global unknowns number E*p + 1; element e owns global indices
    e*p ... e*p + p (interface nodes shared).
    """

    breaks: np.ndarray
    p: int

    @classmethod
    def uniform(cls, a: float, b: float, n_elem: int, p: int) -> "Mesh":
        return cls(np.linspace(a, b, n_elem + 1), p)

    @property
    def n_elem(self) -> int:
        return len(self.breaks) - 1

    @property
    def size(self) -> int:
        return self.n_elem * self.p + 1

    def element_nodes(self) -> np.ndarray:
        x, _, _ = cheb(self.p)
        lo, hi = self.breaks[:-1, None], self.breaks[1:, None]
        t = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x[None, :]
        # pin shared endpoints to the exact break values
        t[:, 0] = self.breaks[:-1]
        t[:, -1] = self.breaks[1:]
        return t

    def nodes(self) -> np.ndarray:
        te = self.element_nodes()
        return np.concatenate([te[:, :-1].ravel(), te[-1:, -1]])

    def element_index(self) -> np.ndarray:
        p = self.p
        return np.arange(self.n_elem)[:, None] * p + np.arange(p + 1)[None, :]

    def scales(self) -> np.ndarray:
        return 2.0 / np.diff(self.breaks)

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """Element-wise derivative, shape (E, p+1)."""
        _, D, _ = cheb(self.p)
        ue = u[self.element_index()]
        return (ue @ D.T) * self.scales()[:, None]

    def weights(self) -> np.ndarray:
        """Element-wise quadrature weights, shape (E, p+1)."""
        _, _, w = cheb(self.p)
        return np.outer(1.0 / self.scales(), w)

    def integrate(self, values_elem: np.ndarray) -> float:
        return float(np.sum(self.weights() * values_elem))

    def global_weights(self) -> np.ndarray:
        gw = np.zeros(self.size)
        np.add.at(gw, self.element_index(), self.weights())
        return gw

    def interpolate(self, u_elem: np.ndarray, t: np.ndarray) -> np.ndarray:
        """Barycentric interpolation of element values (E, p+1) at times t."""
        x, _, _ = cheb(self.p)
        t = np.asarray(t, dtype=float)
        flat = t.ravel()
        e = np.clip(np.searchsorted(self.breaks, flat, side="right") - 1, 0, self.n_elem - 1)
        lo, hi = self.breaks[e], self.breaks[e + 1]
        s = (2.0 * flat - lo - hi) / (hi - lo)
        bw = np.where((np.arange(self.p + 1) == 0) | (np.arange(self.p + 1) == self.p), 0.5, 1.0)
        bw = bw * (-1.0) ** np.arange(self.p + 1)
        diff = s[:, None] - x[None, :]
        exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0)
        diff[exact] = 1.0
        terms = bw[None, :] / diff
        vals = u_elem[e]
        out = (terms * vals).sum(axis=1) / terms.sum(axis=1)
        hit = exact.any(axis=1)
        out[hit] = vals[hit][exact[hit]]
        return out.reshape(t.shape)
