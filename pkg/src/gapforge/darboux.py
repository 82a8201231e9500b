"""First- and second-order Darboux (susy) transformations on sampled traces.

Conventions
-----------
* ``beta = -u'/u``, ``V1 = V0 + 2 beta' = V0 - 2 (ln u)''``.
* ``V2 = V0 - 2 (ln W(u_a, u))''`` with ``W = u_a u' - u_a' u``.

Derivatives that enter a transformed potential or eigenfunction come from the
integrated ``psi'`` traces and exact identities:

* Riccati: ``beta' = beta^2 - V0 + eps``;
* Wronskian: ``W' = (eps_a - eps) u_a u`` and ``W'' = (eps_a - eps)(u_a' u + u_a u')``.

Finite differences are only used by the independent cross-check routes and
the residual diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, PreconditionError
from .spectral import (MINUS_INF, PLUS_INF, BlochPair, SolutionTrace, count_nodes,
                       node_locations)


# --------------------------------------------------------------------------
# finite-difference diagnostics
# --------------------------------------------------------------------------

def d1_central4(f, h):
    """Fourth-order central first derivative; the two samples at each end are NaN."""
    f = np.asarray(f, dtype=float)
    out = np.full_like(f, np.nan)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * h)
    return out


def d2_central4(f, h):
    """Fourth-order central second derivative; the two samples at each end are NaN."""
    f = np.asarray(f, dtype=float)
    out = np.full_like(f, np.nan)
    out[2:-2] = (-f[:-4] + 16.0 * f[1:-3] - 30.0 * f[2:-2] + 16.0 * f[3:-1] - f[4:]) / (12.0 * h * h)
    return out


def sample_potential(V, x):
    """Samples of ``V`` on ``x``; ``V`` is a callable potential or an array already on ``x``."""
    if callable(V):
        return np.asarray(V(x), dtype=float)
    arr = np.asarray(V, dtype=float)
    if arr.shape != np.shape(x):
        raise PreconditionError("sampled potential does not match the grid", "V")
    return arr


def schrodinger_residual(trace: SolutionTrace, V, energy=None) -> float:
    """``max |-phi'' + V phi - eps phi| / max |phi|`` with ``phi''`` from 4th-order
    central differences.  Samples whose stencil touches a non-finite value
    (pole cells of a singular potential) are skipped."""
    eps = trace.energy if energy is None else energy
    x, phi = trace.x, trace.psi
    Vs = sample_potential(V, x)
    r = -d2_central4(phi, trace.h) + (Vs - eps) * phi
    ok = np.isfinite(r)
    if np.count_nonzero(ok) == 0:
        raise NumericalError("no finite samples for the Schrodinger residual")
    scale = np.max(np.abs(phi[np.isfinite(phi)]))
    return float(np.max(np.abs(r[ok])) / scale)


# --------------------------------------------------------------------------
# transformation functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TransformationFunction:
    """A solution ``u(x, eps)`` used to generate a Darboux transformation.

    ``trace`` is normalised to ``max|u| = 1``; ``coefficients`` are the weights
    on ``(v_plus, v_minus)`` when the function was built from a Bloch pair.
    ``divergence`` tags each end (``(left, right)``) as ``"grows"``,
    ``"decays"`` or ``None`` when unknown.
    """

    energy: float
    trace: SolutionTrace
    coefficients: tuple | None = None
    divergence: tuple = (None, None)
    multipliers: tuple | None = None

    @property
    def x(self):
        return self.trace.x

    @property
    def u(self):
        return self.trace.psi

    @property
    def du(self):
        return self.trace.dpsi

    @property
    def node_count(self) -> int:
        return count_nodes(self.trace.psi)

    @property
    def nodes(self) -> np.ndarray:
        return node_locations(self.trace.x, self.trace.psi)

    @classmethod
    def from_trace(cls, trace: SolutionTrace, **kw) -> "TransformationFunction":
        return cls(trace.energy, trace.normalized_max(), **kw)

    @classmethod
    def from_bloch(cls, pair: BlochPair, lam, periods: int) -> "TransformationFunction":
        """``u = v_plus + lam * v_minus`` on ``[-N period, N period]``.

        ``lam = inf`` selects the pure ``v_minus`` branch.  The combination is
        formed in log space so that neither branch overflows.
        """
        lam = float(lam)
        if math.isnan(lam):
            raise PreconditionError("mixing ratio lambda must not be NaN", "lambda")
        cp, cm = (0.0, 1.0) if math.isinf(lam) else (1.0, lam)
        x, pp, dp, lp = pair.v_plus.sample(periods)
        _, pm, dm, lm = pair.v_minus.sample(periods)
        cands = []
        if cp:
            cands.append(np.max(lp))
        if cm:
            cands.append(np.max(lm) + math.log(abs(cm)))
        top = max(cands)
        wp = cp * np.exp(lp - top) if cp else np.zeros_like(lp)
        wm = (math.copysign(1.0, cm) * np.exp(lm + math.log(abs(cm)) - top)) if cm else np.zeros_like(lm)
        psi = wp * pp + wm * pm
        dpsi = wp * dp + wm * dm
        trace = SolutionTrace(x, psi, dpsi, pair.energy, top).normalized_max()
        right = "grows" if cp else "decays"
        left = "grows" if cm else "decays"
        return cls(pair.energy, trace, (cp, cm), (left, right),
                   (pair.v_plus.multiplier, pair.v_minus.multiplier))


@dataclass(frozen=True)
class SampledFunction:
    """Samples of a function that may have poles; ``poles`` masks unevaluated samples."""

    x: np.ndarray
    values: np.ndarray
    poles: np.ndarray

    @property
    def h(self):
        return float(self.x[1] - self.x[0])


def _pole_mask(values):
    """Exact zeros and both endpoints of every sign-change cell."""
    v = np.asarray(values)
    mask = v == 0.0
    cell = np.sign(v[:-1]) * np.sign(v[1:]) < 0
    mask[:-1] |= cell
    mask[1:] |= cell
    return mask


def _common_grid(*traces):
    x = traces[0].x
    for t in traces[1:]:
        if t.x.shape != x.shape or np.max(np.abs(t.x - x)) > 1e-12 * max(1.0, np.max(np.abs(x))):
            raise PreconditionError("traces live on different grids", "grid")
    return x


def _tf(u):
    if isinstance(u, SolutionTrace):
        return TransformationFunction.from_trace(u)
    return u


# --------------------------------------------------------------------------
# first order
# --------------------------------------------------------------------------

def beta_from_u(u) -> SampledFunction:
    """``beta = -u'/u`` from the trace values; node cells are masked as poles."""
    u = _tf(u)
    mask = _pole_mask(u.u)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = -u.du / u.u
    beta = np.where(mask, np.nan, beta)
    return SampledFunction(u.x, beta, mask)


def riccati_residual(beta: SampledFunction, V, eps, relative=False) -> float:
    """``max |-beta' + beta^2 - V + eps|`` over non-pole samples, ``beta'`` by
    4th-order central differences.  With ``relative=True`` each sample is
    divided by ``1 + beta^2``, which keeps the measure meaningful next to poles."""
    b = np.where(beta.poles, np.nan, beta.values)
    good = np.isfinite(b)
    run = best = 0
    for g in good:
        run = run + 1 if g else 0
        best = max(best, run)
    if best < 5:
        raise PreconditionError("fewer than 5 contiguous non-pole samples", "beta")
    Vs = sample_potential(V, beta.x)
    r = -d1_central4(b, beta.h) + b * b - Vs + eps
    if relative:
        r = r / (1.0 + b * b)
    r = r[np.isfinite(r)]
    return float(np.max(np.abs(r)))


@dataclass(frozen=True)
class DarbouxResult:
    """A transformed potential sampled on the transformation grid.

    ``V_out`` is NaN at pole samples.  ``V_check`` holds the same potential
    computed by an independent route (second differences of ``ln|u|`` for
    order 1, a numerical derivative of ``W'/W`` for order 2).
    """

    order: int
    energies: tuple
    x: np.ndarray
    V0: np.ndarray
    V_out: np.ndarray
    V_check: np.ndarray
    beta: SampledFunction
    regular: bool
    poles: np.ndarray
    functions: tuple
    residuals: dict = field(default_factory=dict)
    wronskian: np.ndarray | None = None

    @property
    def h(self):
        return float(self.x[1] - self.x[0])


def _route_agreement(a, b, guard_mask):
    ok = np.isfinite(a) & np.isfinite(b) & ~guard_mask
    if not np.any(ok):
        return float("nan")
    return float(np.max(np.abs(a[ok] - b[ok])))


def _near(mask, width):
    """Dilate a boolean mask by ``width`` samples on each side."""
    out = mask.copy()
    for s in range(1, width + 1):
        out[s:] |= mask[:-s]
        out[:-s] |= mask[s:]
    return out


def transform_potential_1(V, u) -> DarbouxResult:
    """First-order transform ``V1 = V0 + 2 beta'`` with ``beta'`` from the Riccati identity."""
    u = _tf(u)
    x = u.x
    V0 = sample_potential(V, x)
    beta = beta_from_u(u)
    V1 = 2.0 * beta.values**2 - V0 + 2.0 * u.energy
    with np.errstate(divide="ignore", invalid="ignore"):
        logu = np.where(beta.poles, np.nan, np.log(np.abs(u.u)))
    V1_check = V0 - 2.0 * d2_central4(logu, u.trace.h)
    guard = _near(beta.poles, 8)
    res = {
        "route_agreement": _route_agreement(V1, V1_check, guard),
        "riccati": riccati_residual(beta, V0, u.energy, relative=bool(np.any(beta.poles))),
    }
    return DarbouxResult(1, (u.energy,), x, V0, V1, V1_check, beta, not np.any(beta.poles),
                         u.nodes, (u,), res)


def map_eigenfunction_1(u, psi: SolutionTrace) -> SolutionTrace:
    """``phi = W(u, psi)/u = psi' + beta psi``, an eigenfunction of ``H1`` at ``psi.energy``.

    ``phi' = (beta^2 + eps - eps') psi + beta psi'`` follows from the Riccati
    identity and ``psi'' = (V0 - eps') psi``.
    """
    u = _tf(u)
    _common_grid(u.trace, psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = -u.du / u.u
    phi = psi.dpsi + beta * psi.psi
    dphi = (beta * beta + u.energy - psi.energy) * psi.psi + beta * psi.dpsi
    return SolutionTrace(psi.x, phi, dphi, psi.energy, psi.log_scale)


def missing_state_1(u) -> SolutionTrace:
    """``phi = 1/u``, the eigenfunction of ``H1`` at the factorisation energy."""
    u = _tf(u)
    if u.node_count > 0 or np.any(u.u == 0.0):
        raise PreconditionError(
            f"transformation function has {u.node_count} node(s); 1/u is not square integrable", "u")
    phi = 1.0 / u.u
    dphi = -u.du / (u.u * u.u)
    return SolutionTrace(u.x, phi, dphi, u.energy, -u.trace.log_scale)


# --------------------------------------------------------------------------
# second order
# --------------------------------------------------------------------------

def wronskian_pair(u_a, u):
    """``(W, W', W'')`` of two transformation functions, derivatives from the
    Wronskian identity (mantissas only; scale factors drop out of every ratio)."""
    de = u_a.energy - u.energy
    W = u_a.u * u.du - u_a.du * u.u
    dW = de * (u_a.u * u.u)
    d2W = de * (u_a.du * u.u + u_a.u * u.du)
    return W, dW, d2W


def transform_potential_2(V, u_a, u) -> DarbouxResult:
    """Second-order transform ``V2 = V0 - 2 (ln W(u_a, u))''``.

    ``(ln W)'' = W''/W - (W'/W)^2`` with both derivatives exact; the check
    route differentiates ``W'/W`` numerically once.  The result is symmetric
    under ``u_a <-> u`` to the last bit.
    """
    u_a, u = _tf(u_a), _tf(u)
    if u_a.energy == u.energy:
        raise PreconditionError("second-order transform needs two distinct energies", "eps")
    x = _common_grid(u_a.trace, u.trace)
    V0 = sample_potential(V, x)
    W, dW, d2W = wronskian_pair(u_a, u)
    mask = _pole_mask(W)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = dW / W
        lnW2 = d2W / W - r * r
    V2 = np.where(mask, np.nan, V0 - 2.0 * lnW2)
    r = np.where(mask, np.nan, r)
    V2_check = V0 - 2.0 * d1_central4(r, x[1] - x[0])
    beta = SampledFunction(x, np.where(mask, np.nan, -r), mask)
    guard = _near(mask, 8)
    res = {"route_agreement": _route_agreement(V2, V2_check, guard)}
    # chain route: V1(eps_a) + 2 beta2' with beta2 = -(ln(W/u_a))', both by Riccati
    with np.errstate(divide="ignore", invalid="ignore"):
        ba = -u_a.du / u_a.u
        V1 = 2.0 * ba * ba - V0 + 2.0 * u_a.energy
        b2 = -r - ba
        V2_chain = 2.0 * b2 * b2 - V1 + 2.0 * u.energy
    chain_guard = guard | _near(_pole_mask(u_a.u), 8)
    res["chain_agreement"] = _route_agreement(V2, V2_chain, chain_guard)
    return DarbouxResult(2, (u_a.energy, u.energy), x, V0, V2, V2_check, beta,
                         not np.any(mask), node_locations(x, W), (u_a, u), res, W)


def map_eigenfunction_2(u_a, u, psi: SolutionTrace) -> SolutionTrace:
    """``phi = W(u_a, u, psi) / W(u_a, u)``, an eigenfunction of ``H2`` at ``psi.energy``.

    Second and third derivatives in the 3x3 Wronskian are removed with
    ``f'' = (V0 - e_f) f``; after row reduction ``V0`` cancels entirely.
    """
    u_a, u = _tf(u_a), _tf(u)
    _common_grid(u_a.trace, u.trace, psi)
    ea, e, ep = u_a.energy, u.energy, psi.energy
    if ea == e:
        raise PreconditionError("degenerate factorisation energies", "eps")
    a, da, b, db, p, dp = u_a.u, u_a.du, u.u, u.du, psi.psi, psi.dpsi
    W, dW, _ = wronskian_pair(u_a, u)
    W3 = (e - ea) * a * b * dp + p * ((ea - ep) * a * db - (e - ep) * da * b)
    dW3 = (e - ep) * a * db * dp + (ep - ea) * b * da * dp + (ea - e) * p * da * db
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = W3 / W
        dphi = (dW3 * W - W3 * dW) / (W * W)
    return SolutionTrace(psi.x, phi, dphi, ep, psi.log_scale)


def missing_state_2(u_a, u):
    """The two bound states of ``H2``: ``u_a/W`` at ``eps`` and ``u/W`` at ``eps_a``.

    Returns ``(phi_at_eps_a, phi_at_eps)``.
    """
    u_a, u = _tf(u_a), _tf(u)
    _common_grid(u_a.trace, u.trace)
    if u_a.energy == u.energy:
        raise PreconditionError("degenerate factorisation energies", "eps")
    W, dW, _ = wronskian_pair(u_a, u)
    nodes = count_nodes(W)
    if nodes or np.any(W == 0.0):
        raise PreconditionError(f"W(u_a, u) has {nodes} node(s); missing states are singular", "W")
    logW = u_a.trace.log_scale + u.trace.log_scale
    phi_e = SolutionTrace(u.x, u_a.u / W, (u_a.du * W - u_a.u * dW) / (W * W), u.energy,
                          u_a.trace.log_scale - logW)
    phi_a = SolutionTrace(u.x, u.u / W, (u.du * W - u.u * dW) / (W * W), u_a.energy,
                          u.trace.log_scale - logW)
    return phi_a, phi_e


__all__ = [
    "TransformationFunction", "SampledFunction", "DarbouxResult",
    "beta_from_u", "riccati_residual", "transform_potential_1", "map_eigenfunction_1",
    "missing_state_1", "transform_potential_2", "map_eigenfunction_2", "missing_state_2",
    "wronskian_pair", "schrodinger_residual", "d1_central4", "d2_central4",
    "PLUS_INF", "MINUS_INF",
]
