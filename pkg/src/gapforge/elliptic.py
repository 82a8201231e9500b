"""Jacobi elliptic functions, the complete elliptic integral K(m) and the
single-gap Lamé potential ``V(x) = 2 m sn^2(x|m)``.

Everything here uses the *parameter* convention ``sn(x|m)`` (not the modulus
``k = sqrt(m)``).  The functions are implemented directly from the
arithmetic-geometric mean (AGM); no special-function library is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError

AGM_RTOL = 1e-15
MAX_AGM_DEPTH = 32


def _check_parameter(m) -> float:
    try:
        m = float(m)
    except (TypeError, ValueError):
        raise PreconditionError(f"elliptic parameter m must be a real number, got {m!r}", "m")
    if not math.isfinite(m) or m < 0.0 or m >= 1.0:
        if m == 1.0:
            raise PreconditionError(
                "m = 1 is the degenerate (non-periodic) limit and is not supported", "m"
            )
        raise PreconditionError(f"elliptic parameter m must lie in [0, 1), got {m!r}", "m")
    return m


def _agm_sequence(m: float):
    """Return the AGM ladders ``(a_n, c_n)`` started from ``(1, sqrt(1-m))``."""
    a = [1.0]
    c = [math.sqrt(m)]
    b = math.sqrt(1.0 - m)
    for _ in range(MAX_AGM_DEPTH):
        an, bn = a[-1], b
        if abs(an - bn) < AGM_RTOL * an:
            break
        a.append(0.5 * (an + bn))
        c.append(0.5 * (an - bn))
        b = math.sqrt(an * bn)
    return a, c


def complete_elliptic_K(m) -> float:
    """Quarter period ``K(m) = pi / (2 AGM(1, sqrt(1-m)))``.

    Raises :class:`PreconditionError` for ``m`` outside ``[0, 1)``.
    """
    m = _check_parameter(m)
    a, _ = _agm_sequence(m)
    return math.pi / (2.0 * a[-1])


@dataclass(frozen=True)
class EllipticValues:
    """Values of ``sn, cn, dn`` at one point (or an array of points) and ``K(m)``."""

    sn: np.ndarray | float
    cn: np.ndarray | float
    dn: np.ndarray | float
    K: float
    m: float


def jacobi_elliptic(x, m) -> EllipticValues:
    """Evaluate ``sn(x|m)``, ``cn(x|m)``, ``dn(x|m)`` by the descending Landen
    (AGM) scheme with backward recursion of the amplitude.

    ``x`` may be a scalar or an array; the result has the same shape.
    """
    m = _check_parameter(m)
    xa = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(xa)):
        raise PreconditionError("jacobi_elliptic needs finite arguments", "x")
    a, c = _agm_sequence(m)
    depth = len(a) - 1
    phi = (2.0**depth) * a[-1] * xa
    for n in range(depth, 0, -1):
        phi = 0.5 * (phi + np.arcsin(c[n] * np.sin(phi) / a[n]))
    sn = np.sin(phi)
    cn = np.cos(phi)
    dn = np.sqrt(1.0 - m * sn * sn)
    K = math.pi / (2.0 * a[-1])
    if xa.ndim == 0:
        return EllipticValues(float(sn), float(cn), float(dn), K, m)
    return EllipticValues(sn, cn, dn, K, m)


@dataclass(frozen=True)
class PotentialSpec:
    """A real periodic potential ``V(x + period) = V(x)``.

    ``derivative`` is optional; when present it returns ``V'(x)`` and is used
    for exact derivatives of transformed eigenfunctions.
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    period: float
    params: dict = field(default_factory=dict)
    name: str = "custom"
    derivative: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x):
        return self.evaluator(x)

    def is_even(self, samples: int = 257, tol: float = 1e-12) -> bool:
        x = np.linspace(0.0, self.period, samples)
        return bool(np.max(np.abs(self(x) - self(-x))) <= tol)


def lame_potential(m) -> PotentialSpec:
    """The Lamé potential ``2 m sn^2(x|m)`` with period ``2 K(m)``.

    ``m = 0`` gives the free particle ``V = 0`` with period ``pi``.
    """
    m = _check_parameter(m)
    K = complete_elliptic_K(m)

    def V(x):
        s = jacobi_elliptic(x, m).sn
        return 2.0 * m * np.square(s)

    def dV(x):
        e = jacobi_elliptic(x, m)
        return 4.0 * m * e.sn * e.cn * e.dn

    return PotentialSpec(V, 2.0 * K, {"m": m, "K": K}, "lame", dV)


def free_potential(period: float = math.pi) -> PotentialSpec:
    """``V = 0`` regarded as periodic with the given period."""
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    return PotentialSpec(zero, float(period), {"m": 0.0}, "free", zero)


def lame_edge_functions(m):
    """Analytic band-edge eigenfunctions of the Lamé potential.

    Returns ``[(energy, f, df), ...]`` for ``dn`` (E = m, periodic),
    ``cn`` (E = 1, antiperiodic) and ``sn`` (E = 1 + m, antiperiodic).
    """
    m = _check_parameter(m)

    def dn(x):
        return jacobi_elliptic(x, m).dn

    def ddn(x):
        e = jacobi_elliptic(x, m)
        return -m * e.sn * e.cn

    def cn(x):
        return jacobi_elliptic(x, m).cn

    def dcn(x):
        e = jacobi_elliptic(x, m)
        return -e.sn * e.dn

    def sn(x):
        return jacobi_elliptic(x, m).sn

    def dsn(x):
        e = jacobi_elliptic(x, m)
        return e.cn * e.dn

    return [(m, dn, ddn), (1.0, cn, dcn), (1.0 + m, sn, dsn)]
