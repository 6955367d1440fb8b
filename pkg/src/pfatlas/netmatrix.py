"""Admittance matrix and the quadratic forms that express bus injections.

With ``x = [e; f]`` (real and imaginary parts of the bus voltages), the
active/reactive injection at bus ``k`` is ``x @ Z[k] @ x`` / ``x @ Zbar[k] @ x``
and the squared magnitude is ``x @ M[k] @ x``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .caseio import BusKind, Network


@dataclass(frozen=True)
class AdmittanceMatrix:
    G: np.ndarray
    B: np.ndarray

    @property
    def n(self) -> int:
        return self.G.shape[0]

    @property
    def Y(self) -> np.ndarray:
        return self.G + 1j * self.B


@dataclass(frozen=True)
class InjectionMatrices:
    """Per-bus symmetric ``2n x 2n`` forms, stacked along axis 0."""

    Z: np.ndarray
    Zbar: np.ndarray
    M: np.ndarray

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    def nonzeros(self, which: str, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Row/column indices of the nonzero entries of form ``which`` at bus ``k``."""
        return np.nonzero(getattr(self, which)[k])


def build_admittance(net: Network) -> AdmittanceMatrix:
    """Standard pi-model bus admittance matrix (MATPOWER conventions)."""
    n = net.n
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if not br.in_service:
            continue
        z = complex(br.r, br.x)
        if z == 0:
            raise ValueError(f"branch {br.from_bus}-{br.to_bus} has zero impedance")
        ys = 1.0 / z
        tap = br.tap * np.exp(1j * br.shift)
        ytt = ys + 0.5j * br.b_ch
        f, t = br.from_bus - 1, br.to_bus - 1
        Y[f, f] += ytt / (tap * np.conj(tap))
        Y[t, t] += ytt
        Y[f, t] += -ys / np.conj(tap)
        Y[t, f] += -ys / tap
    for k, bus in enumerate(net.buses):
        Y[k, k] += complex(bus.g_sh, bus.b_sh)
    return AdmittanceMatrix(Y.real.copy(), Y.imag.copy())


def build_quadratic_forms(Y: AdmittanceMatrix) -> InjectionMatrices:
    n = Y.n
    Yc = Y.Y
    Z = np.zeros((n, 2 * n, 2 * n))
    Zbar = np.zeros_like(Z)
    M = np.zeros_like(Z)
    for k in range(n):
        Yk = np.zeros_like(Yc)
        Yk[k] = Yc[k]
        S = Yk + Yk.T
        D = Yk - Yk.T
        Z[k] = 0.5 * np.block([[S.real, -D.imag], [D.imag, S.real]])
        Zbar[k] = -0.5 * np.block([[S.imag, D.real], [-D.real, S.imag]])
        M[k, k, k] = M[k, n + k, n + k] = 1.0
    return InjectionMatrices(Z, Zbar, M)


def net_injections(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Net active/reactive injections per bus; NaN where the quantity is not specified."""
    p = np.full(net.n, np.nan)
    q = np.full(net.n, np.nan)
    for k, b in enumerate(net.buses):
        if b.kind is not BusKind.SLACK:
            p[k] = b.p_g - b.p_d
        if b.kind is BusKind.PQ:
            q[k] = b.q_g - b.q_d
    return p, q
