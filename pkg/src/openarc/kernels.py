"""Helmholtz layer kernels S, K, KA, T and their explicit kernel splits.

Kernels carry the factor 2 of the layer operators and multiply ``rho dl'``:

    S  = (i/2) H0(k r)
    K  = (i k/2) H1(k r) (d . n') / r
    KA = -(i k/2) H1(k r) (d . n) / r
    T  = (i k/2) [H1(k r)/r (n . n') + (k H0(k r) - 2 H1(k r)/r)(d . n)(d . n') / r^2]

with ``d = x - y`` (target minus source), ``r = |d|``, ``n`` the target and
``n'`` the source normal.

Every kernel element is split as

    G dl' = G0 dl' + log|d| GL dl' + cC Re{GC dtau / (i (tau - z))}
            + Re{GH dtau / (i (tau - z)^2)}

Writing ``H0 = J0 + i((2/pi) log(kr/2) J0 + s0)`` and
``H1 = J1 + i((2/pi) log(kr/2) J1 + y1r) - 2i/(pi k r)`` (``y1r`` odd and
analytic), the pole ``-2i/(pi k r)`` produces the Laplace parts:

* K:  (1/pi)(d.n')/r^2 dl' = Re{-(1/pi) dtau/(i(tau - z))}     -> cC = -1/pi, GC = 1
* KA: -(1/pi)(d.n)/r^2 dl' = Re{(1/pi) n conj(n') dtau/(i(tau - z))}
                                                               -> cC = 1/pi, GC = n conj(n')
* T:  (1/pi)[n.n'/r^2 - 2(d.n)(d.n')/r^4] dl' = Re{-(n/pi) dtau/(i(tau - z)^2)}
                                                               -> GH = -n/pi

using ``n' dl' = -i dtau``. T has no Cauchy channel and S only a log channel.
The split is fixed by keeping every ``log(k/2)`` term in G0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from . import specfun

OPS = ("S", "K", "KA", "T")


class KernelError(ValueError):
    pass


def _geometry(z, tau, ntau, nz):
    d = z - tau
    r = np.abs(d)
    dnp = (d * np.conj(ntau)).real  # d . n'
    dn = None if nz is None else (d * np.conj(nz)).real
    nn = None if nz is None else (nz * np.conj(ntau)).real
    return d, r, dn, dnp, nn


def _needs_target_normal(op, nz):
    if op in ("KA", "T") and nz is None:
        raise KernelError(f"kernel {op} needs the target normal")


def kernel(op: str, z, tau, ntau, k: float, nz=None):
    """Full kernel values (vectorised, broadcasting). Coincident points raise."""
    _needs_target_normal(op, nz)
    d, r, dn, dnp, nn = _geometry(z, tau, ntau, nz)
    if np.any(r == 0):
        raise KernelError("coincident source and target; use the diagonal limit")
    x = k * r
    if op == "S":
        return 0.5j * (special.j0(x) + 1j * special.y0(x))
    h1 = special.j1(x) + 1j * special.y1(x)
    if op == "K":
        return 0.5j * k * h1 * dnp / r
    if op == "KA":
        return -0.5j * k * h1 * dn / r
    if op == "T":
        h0 = special.j0(x) + 1j * special.y0(x)
        return 0.5j * k * (h1 / r * nn + (k * h0 - 2.0 * h1 / r) * dn * dnp / (r * r))
    raise KernelError(f"unknown operator {op!r}")


def log_coefficient(op: str, z, tau, ntau, k: float, nz=None):
    """GL, the smooth factor multiplying ``log|z - tau|`` (zero-safe at r = 0)."""
    d, r, dn, dnp, nn = _geometry(z, tau, ntau, nz)
    x = k * r
    if op == "S":
        return -special.j0(x) / np.pi + 0j
    # J1(kr)/r and (k J0 - 2 J1/r) = -k J2(kr), both finite at r = 0
    safe = np.where(r == 0, 1.0, r)
    j1r = np.where(r == 0, 0.5 * k, special.j1(x) / safe)
    if op == "K":
        return -k / np.pi * j1r * dnp + 0j
    if op == "KA":
        return k / np.pi * j1r * dn + 0j
    if op == "T":
        kj2 = k * special.jv(2, x)
        p = np.where(r == 0, 0.0, dn * dnp / (safe * safe))
        return -k / np.pi * (j1r * nn - kj2 * p) + 0j
    raise KernelError(f"unknown operator {op!r}")


def cauchy_factor(op: str, tau, ntau, nz=None):
    """cC * GC for the Cauchy channel, or None when the channel is absent."""
    if op == "K":
        return -1.0 / np.pi * np.ones_like(tau)
    if op == "KA":
        return nz * np.conj(ntau) / np.pi
    return None


def hyper_factor(op: str, nz=None):
    """GH for the hypersingular channel, or None."""
    if op == "T":
        return -nz / np.pi
    return None


def diagonal_g0(op: str, k: float) -> complex:
    """Limit of G0 as the source approaches the target along the curve."""
    c = np.log(0.5 * k) + specfun.EULER_GAMMA
    if op == "S":
        return 0.5j - c / np.pi
    if op in ("K", "KA"):
        return 0.0
    if op == "T":
        return 0.5 * k * k * (0.5j - c / np.pi + 0.5 / np.pi)
    raise KernelError(f"unknown operator {op!r}")


def diagonal_gl(op: str, k: float) -> float:
    return {"S": -1.0 / np.pi, "K": 0.0, "KA": 0.0, "T": -k * k / (2 * np.pi)}[op]


@dataclass
class KernelSplit:
    g0: np.ndarray
    gL: np.ndarray
    gC: np.ndarray | None
    cC: float
    gH: np.ndarray | None

    def recombine(self, z, tau, dtau):
        """Kernel element ``G dl'`` rebuilt from the channels for ``dtau = tau' ds``."""
        dl = np.abs(dtau)
        out = self.g0 * dl + np.log(np.abs(z - tau)) * self.gL * dl
        if self.gC is not None:
            out = out + self.cC * (self.gC * dtau / (1j * (tau - z))).real
        if self.gH is not None:
            out = out + (self.gH * dtau / (1j * (tau - z) ** 2)).real
        return out


def kernel_split(op: str, z, tau, ntau, k: float, nz=None) -> KernelSplit:
    """Explicit channels of the split, evaluated with the in-house Bessel code.

    G0 comes from the smooth parts of the Y log-splits, independently of the
    full kernel, so recombination is a genuine check of the split algebra.
    """
    _needs_target_normal(op, nz)
    z, tau, ntau = np.broadcast_arrays(np.asarray(z, complex), np.asarray(tau, complex),
                                       np.asarray(ntau, complex))
    if nz is not None:
        nz = np.broadcast_to(np.asarray(nz, complex), z.shape)
    d, r, dn, dnp, nn = _geometry(z, tau, ntau, nz)
    diag = r == 0
    safe = np.where(diag, 1.0, r)
    x = k * safe
    j0, j1, _, _, s0, _ = specfun.bessel_table(x)
    y1r = np.asarray(specfun.y1_regular_part(np.atleast_1d(x))).reshape(x.shape)
    l2 = 2.0 / np.pi * np.log(0.5 * k)
    h0s = j0 + 1j * (l2 * j0 + s0)  # H0 without the log|d| term
    h1s = j1 + 1j * (l2 * j1 + y1r)  # H1 without the log|d| term and the pole
    gl = log_coefficient(op, z, tau, ntau, k, nz)
    gc = cauchy_factor(op, tau, ntau, nz)
    gh = hyper_factor(op, nz)
    cc = 1.0 if gc is not None else 0.0
    if op == "S":
        g0 = 0.5j * h0s
    elif op == "K":
        g0 = 0.5j * k * h1s * dnp / safe
    elif op == "KA":
        g0 = -0.5j * k * h1s * dn / safe
    else:
        p = dn * dnp / (safe * safe)
        g0 = 0.5j * k * (h1s / safe * nn + (k * h0s - 2.0 * h1s / safe) * p)
    if np.any(diag):
        g0 = np.where(diag, diagonal_g0(op, k), g0)
    return KernelSplit(np.asarray(g0), np.asarray(gl), gc, cc, gh)
