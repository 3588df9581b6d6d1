"""Real-argument Bessel functions of order 0 and 1, their logarithmic splits,
the 16-point Gauss-Legendre rule and polynomial interpolation matrices.

The Bessel routines are self-contained:

* ``x <= 1/8``   ascending power series (also used for the log-split smooth parts),
* ``1/8 < x <= 25``  Miller backward recurrence normalised by
  ``J0 + 2*sum(J_2k) = 1``; ``Y0``/``Y1`` come from the Neumann series in the
  even-order ``J_2k``, which never subtract large quantities,
* ``x > 25``     Hankel asymptotic expansion truncated at its smallest term.

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EULER_GAMMA = 0.57721566490153286061
TWO_OVER_PI = 2.0 / np.pi

SERIES_CUTOFF = 0.125
ASYMPTOTIC_CUTOFF = 25.0


@dataclass(frozen=True)
class QuadRule:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, f, a: float = -1.0, b: float = 1.0):
        """Apply the rule to ``f`` on ``[a, b]``."""
        h = 0.5 * (b - a)
        return h * np.dot(self.weights, f(0.5 * (a + b) + h * self.nodes))


_GL16 = None


def gauss_legendre_16() -> QuadRule:
    global _GL16
    if _GL16 is None:
        t, w = np.polynomial.legendre.leggauss(16)
        # enforce exact antisymmetry / symmetry
        t = 0.5 * (t - t[::-1])
        w = 0.5 * (w + w[::-1])
        t.setflags(write=False)
        w.setflags(write=False)
        _GL16 = QuadRule(t, w)
    return _GL16


def gauss_legendre(n: int) -> QuadRule:
    t, w = np.polynomial.legendre.leggauss(n)
    return QuadRule(t, w)


# ---------------------------------------------------------------------------
# small-argument series
# ---------------------------------------------------------------------------

def _series(x):
    """J0, J1 and the log-split smooth parts s0, s1 by power series."""
    q = 0.25 * x * x
    j0 = np.zeros_like(x)
    j1 = np.zeros_like(x)
    s0 = np.zeros_like(x)
    s1r = np.zeros_like(x)
    term0 = np.ones_like(x)  # (-q)^m / (m!)^2
    term1 = 0.5 * x  # (x/2)(-q)^m / (m! (m+1)!)
    harm = 0.0
    psi1 = -EULER_GAMMA  # psi(m+1)
    psi2 = 1.0 - EULER_GAMMA  # psi(m+2)
    for m in range(12):
        j0 = j0 + term0
        j1 = j1 + term1
        if m > 0:
            s0 = s0 - harm * term0
        s1r = s1r + (psi1 + psi2) * term1
        m1 = m + 1
        harm += 1.0 / m1
        psi1 += 1.0 / m1
        psi2 += 1.0 / (m1 + 1)
        term0 = -term0 * q / (m1 * m1)
        term1 = -term1 * q / (m1 * (m1 + 1))
    s0 = TWO_OVER_PI * (EULER_GAMMA * j0 + s0)
    s1 = -TWO_OVER_PI / x - s1r / np.pi
    return j0, j1, s0, s1


def _miller(x):
    """J0, J1, s0, s1 via normalised backward recurrence (moderate x)."""
    nstart = int(1.2 * float(np.max(x))) + 40
    nstart += nstart % 2
    jp1 = np.zeros_like(x)  # J_{n+1}
    jn = np.full_like(x, 1e-30)  # J_n
    jp2_cache = np.zeros_like(x)
    norm = np.zeros_like(x)
    sy0 = np.zeros_like(x)
    sy1 = np.zeros_like(x)
    n = nstart
    if n % 2 == 0:
        k = n // 2
        norm += 2.0 * jn
        sy0 += (-1) ** k * jn / k
    while n > 0:
        jm1 = (2.0 * n / x) * jn - jp1
        n -= 1
        jp2_cache, jp1, jn = jp1, jn, jm1
        if n % 2 == 0:
            if n > 0:
                k = n // 2
                norm += 2.0 * jn
                sy0 += (-1) ** k * jn / k
        else:
            # jn is J_n with n = 2k - 1 ; J_{2k+1} is jp2_cache
            k = (n + 1) // 2
            sy1 += (-1) ** k * (jn - jp2_cache) / k
        big = np.abs(jn) > 1e200
        if np.any(big):
            for arr in (jn, jp1, jp2_cache, norm, sy0, sy1):
                arr[big] *= 1e-200
    norm += jn  # J0 enters once
    j0 = jn / norm
    j1 = jp1 / norm
    s0 = TWO_OVER_PI * (EULER_GAMMA * j0 - 2.0 * sy0 / norm)
    s1 = -TWO_OVER_PI * (j0 / x - EULER_GAMMA * j1 - sy1 / norm)
    return j0, j1, s0, s1


def _hankel_asymptotic(order: int, x):
    mu = 4.0 * order * order
    p = np.ones_like(x)
    qq = np.zeros_like(x)
    term = np.ones_like(x)
    k = 0
    prev = np.full_like(x, np.inf)
    while k < 60:
        k += 1
        term = term * (mu - (2 * k - 1) ** 2) / (k * 8.0 * x)
        mag = np.abs(term)
        active = mag < prev
        if not np.any(active) or np.max(np.where(active, mag, 0.0)) < 1e-18:
            break
        contrib = np.where(active, term, 0.0)
        if k % 2 == 1:
            qq = qq + (-1) ** ((k - 1) // 2) * contrib
        else:
            p = p + (-1) ** (k // 2) * contrib
        prev = np.where(active, mag, 0.0)
    # cos/sin of x - phase expanded so the phase is never subtracted from x
    phase = (0.5 * order + 0.25) * np.pi
    cx, sx = np.cos(x), np.sin(x)
    cp, sp_ = np.cos(phase), np.sin(phase)
    c = cx * cp + sx * sp_
    s = sx * cp - cx * sp_
    amp = np.sqrt(TWO_OVER_PI / x)
    return amp * (p * c - qq * s), amp * (p * s + qq * c)


def _evaluate(x):
    """Return J0, J1, Y0, Y1, s0, s1 for an array of positive x."""
    x = np.asarray(x, dtype=float)
    out = [np.empty_like(x) for _ in range(6)]
    lo = x <= SERIES_CUTOFF
    hi = x > ASYMPTOTIC_CUTOFF
    mid = ~lo & ~hi
    for mask, fn in ((lo, _series), (mid, _miller)):
        if np.any(mask):
            xs = x[mask]
            j0, j1, s0, s1 = fn(xs)
            with np.errstate(divide="ignore"):
                lg = TWO_OVER_PI * np.log(0.5 * xs)
            out[0][mask], out[1][mask] = j0, j1
            out[4][mask], out[5][mask] = s0, s1
            out[2][mask] = lg * j0 + s0
            out[3][mask] = lg * j1 + s1
    if np.any(hi):
        xs = x[hi]
        j0, y0 = _hankel_asymptotic(0, xs)
        j1, y1 = _hankel_asymptotic(1, xs)
        lg = TWO_OVER_PI * np.log(0.5 * xs)
        out[0][hi], out[1][hi], out[2][hi], out[3][hi] = j0, j1, y0, y1
        out[4][hi] = y0 - lg * j0
        out[5][hi] = y1 - lg * j1
    return out


def bessel_table(x):
    """Arrays ``(J0, J1, Y0, Y1, s0, s1)`` for positive ``x`` in one pass."""
    xa = np.asarray(x, dtype=float)
    return tuple(v.reshape(xa.shape) for v in _evaluate(xa.ravel()))


def _check_order(order):
    if order not in (0, 1):
        raise ValueError(f"only orders 0 and 1 are supported, got {order}")


def _wrap(x, val):
    return float(val) if np.ndim(x) == 0 else val


def bessel_j(order: int, x):
    _check_order(order)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa < 0):
        raise ValueError("bessel_j requires x >= 0")
    res = np.empty_like(xa)
    zero = xa == 0
    res[zero] = 1.0 if order == 0 else 0.0
    if np.any(~zero):
        res[~zero] = _evaluate(xa[~zero])[order]
    return _wrap(x, res if np.ndim(x) else res[0])


def bessel_y(order: int, x):
    _check_order(order)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise ValueError("bessel_y requires x > 0")
    res = _evaluate(xa)[2 + order]
    return _wrap(x, res if np.ndim(x) else res[0])


def y_log_split(order: int, x):
    """Split ``Y_n(x) = (2/pi) log(x/2) J_n(x) + smooth``.

    Returns ``(smooth_part, log_coefficient)`` with
    ``log_coefficient = (2/pi) J_n(x)``. For ``n = 0`` the smooth part is
    analytic at the origin (limit ``2*gamma/pi``); for ``n = 1`` it carries the
    pole ``-2/(pi x)``.
    """
    _check_order(order)
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xa <= 0):
        raise ValueError("y_log_split requires x > 0")
    vals = _evaluate(xa)
    smooth, coeff = vals[4 + order], TWO_OVER_PI * vals[order]
    if np.ndim(x) == 0:
        return float(smooth[0]), float(coeff[0])
    return smooth, coeff


def y1_regular_part(x):
    """``Y1(x) - (2/pi) log(x/2) J1(x) + 2/(pi x)``, an odd analytic function."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(xa)
    lo = xa <= SERIES_CUTOFF
    if np.any(lo):
        j0, j1, s0, s1 = _series(xa[lo])
        out[lo] = s1 + TWO_OVER_PI / xa[lo]
    if np.any(~lo):
        out[~lo] = _evaluate(xa[~lo])[5] + TWO_OVER_PI / xa[~lo]
    return float(out[0]) if np.ndim(x) == 0 else out


def y0_smooth_at_zero() -> float:
    return TWO_OVER_PI * EULER_GAMMA


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def interp_matrix(src, dst) -> np.ndarray:
    """Lagrange interpolation matrix from ``src`` nodes to ``dst`` points.

    Uses the barycentric formula; rows for destination points coinciding with
    a source node are exact unit vectors.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    diff = src[:, None] - src[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(np.abs(diff) < 1e-300) or len(np.unique(src)) != len(src):
        raise ValueError("interpolation source nodes must be distinct")
    bw = 1.0 / np.prod(diff, axis=1)
    d = dst[:, None] - src[None, :]
    exact = d == 0.0
    d[exact] = 1.0
    tmp = bw[None, :] / d
    mat = tmp / tmp.sum(axis=1, keepdims=True)
    rows = np.any(exact, axis=1)
    if np.any(rows):
        mat[rows] = exact[rows].astype(float)
    return mat
