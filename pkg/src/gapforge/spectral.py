"""Solutions of ``-psi'' + V psi = eps psi`` for real ``eps``, the monodromy
(period-translation) matrix, the Hill discriminant, band edges and Bloch
solutions.

The integrator is classical fixed-step RK4 on ``(psi, psi')``.  The potential
is sampled once on the half-step grid, so several initial conditions and
several energies can be advanced together as array columns.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, PreconditionError

DEFAULT_STEPS = 4000
MIN_STEPS = 1000
MIN_SCAN_STEPS = 64
EDGE_TOL = 1e-7
ROOT_TOL = 1e-9


@dataclass(frozen=True)
class SolutionTrace:
    """A sampled solution on a uniform grid.

    True values are ``psi * exp(log_scale)``; the mantissa is kept bounded so
    that exponentially growing gap solutions never overflow.
    """

    x: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    energy: float
    log_scale: float = 0.0

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    def __len__(self):
        return len(self.x)

    def scaled(self, factor: float) -> "SolutionTrace":
        return SolutionTrace(self.x, self.psi * factor, self.dpsi * factor, self.energy, self.log_scale)

    def normalized_max(self) -> "SolutionTrace":
        """Rescale so that ``max|psi| = 1``, moving the factor into ``log_scale``."""
        peak = float(np.max(np.abs(self.psi)))
        if peak == 0.0 or not math.isfinite(peak):
            return self
        return SolutionTrace(self.x, self.psi / peak, self.dpsi / peak, self.energy,
                             self.log_scale + math.log(peak))


def uniform_grid(x0: float, n: int, h: float) -> np.ndarray:
    return x0 + h * np.arange(n + 1, dtype=float)


def _rk4(q, h, psi, dpsi, store=False):
    """Advance ``psi' = p, p' = q psi`` where ``q = V - eps`` is given at half steps.

    ``q`` has shape ``(2n + 1, ...)``; ``psi``/``dpsi`` broadcast against ``q[0]``.
    """
    n = (q.shape[0] - 1) // 2
    psi = np.array(psi, dtype=float) + np.zeros_like(q[0])
    dpsi = np.array(dpsi, dtype=float) + np.zeros_like(q[0])
    if store:
        P = np.empty((n + 1,) + psi.shape)
        D = np.empty_like(P)
        P[0], D[0] = psi, dpsi
    h2 = 0.5 * h
    h6 = h / 6.0
    for i in range(n):
        qa, qb, qc = q[2 * i], q[2 * i + 1], q[2 * i + 2]
        k1p, k1d = dpsi, qa * psi
        p2 = psi + h2 * k1p
        k2p, k2d = dpsi + h2 * k1d, qb * p2
        p3 = psi + h2 * k2p
        k3p, k3d = dpsi + h2 * k2d, qb * p3
        p4 = psi + h * k3p
        k4p, k4d = dpsi + h * k3d, qc * p4
        psi = psi + h6 * (k1p + 2.0 * (k2p + k3p) + k4p)
        dpsi = dpsi + h6 * (k1d + 2.0 * (k2d + k3d) + k4d)
        if store:
            P[i + 1], D[i + 1] = psi, dpsi
    if store:
        return P, D
    return psi, dpsi


def _half_step_samples(V, x0, n, h):
    xs = x0 + 0.5 * h * np.arange(2 * n + 1, dtype=float)
    vs = np.asarray(V(xs), dtype=float)
    if not np.all(np.isfinite(vs)):
        raise NumericalError("potential returned non-finite samples")
    return vs


def integrate(V, eps, x0, x1, psi0, dpsi0, h=None) -> SolutionTrace:
    """Integrate ``-psi'' + V psi = eps psi`` from ``x0`` to ``x1``.

    The step is adjusted down so that an integer number of steps lands on
    ``x1``.  It must not exceed ``period / 1000``.  Backward integration
    (``x1 < x0``) is allowed; the returned grid is always increasing.
    """
    if x1 == x0:
        raise PreconditionError("integration interval is empty (x0 == x1)", "x1")
    if h is None:
        h = V.period / DEFAULT_STEPS
    length = x1 - x0
    n = max(1, int(math.ceil(abs(length) / abs(h) - 1e-9)))
    step = length / n
    if abs(step) > V.period / MIN_STEPS * (1 + 1e-12):
        raise PreconditionError(
            f"step {abs(step):.3g} is too coarse; need h <= period/{MIN_STEPS}", "h")
    q = _half_step_samples(V, x0, n, step) - float(eps)
    P, D = _rk4(q, step, float(psi0), float(dpsi0), store=True)
    x = x0 + step * np.arange(n + 1, dtype=float)
    if step < 0:
        x, P, D = x[::-1], P[::-1], D[::-1]
    return SolutionTrace(x, P, D, float(eps))


def canonical_solutions(V, eps, x0=0.0, steps=DEFAULT_STEPS):
    """Traces of the solutions with data (1, 0) and (0, 1) at ``x0`` over one period.

    Returns ``(x, psi, dpsi)`` with ``psi[:, 0]`` the (1, 0) solution and
    ``psi[:, 1]`` the (0, 1) solution.
    """
    _check_steps(steps)
    h = V.period / steps
    q = (_half_step_samples(V, x0, steps, h) - float(eps))[:, None]
    P, D = _rk4(q, h, np.array([1.0, 0.0]), np.array([0.0, 1.0]), store=True)
    return uniform_grid(x0, steps, h), P, D


def _check_steps(steps, minimum=MIN_SCAN_STEPS):
    if int(steps) != steps or steps < minimum:
        raise PreconditionError(f"steps per period must be an integer >= {minimum}", "steps")


@dataclass(frozen=True)
class Monodromy:
    """Period map ``(psi, psi')(x0) -> (psi, psi')(x0 + period)``.

    Columns are the images of the canonical data (1, 0) and (0, 1).
    """

    a: float
    b: float
    c: float
    d: float
    energy: float
    x0: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def discriminant(self) -> float:
        return self.a + self.d

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    @property
    def multipliers(self):
        """``(t_plus, t_minus)``; real with ``|t_plus| >= 1`` in gaps, unit-modulus complex in bands."""
        D = self.discriminant
        disc = D * D - 4.0
        if disc >= 0.0:
            root = math.sqrt(disc)
            big = 0.5 * (D + math.copysign(root, D))
            return big, 1.0 / big
        theta = math.acos(max(-1.0, min(1.0, 0.5 * D)))
        return complex(math.cos(theta), math.sin(theta)), complex(math.cos(theta), -math.sin(theta))

    @property
    def t_plus(self):
        return self.multipliers[0]

    @property
    def t_minus(self):
        return self.multipliers[1]

    def eigenvector(self, t: float) -> np.ndarray:
        """Real eigenvector for the real multiplier ``t``."""
        v1 = np.array([self.b, t - self.a])
        v2 = np.array([t - self.d, self.c])
        v = v1 if np.linalg.norm(v1) >= np.linalg.norm(v2) else v2
        nv = np.linalg.norm(v)
        if nv == 0.0:
            raise NumericalError("monodromy eigenvector is degenerate (energy at a band edge?)")
        return v / nv


def monodromy(V, eps, x0=0.0, steps=DEFAULT_STEPS) -> Monodromy:
    """Monodromy matrix at energy ``eps`` with base point ``x0``."""
    _check_steps(steps)
    h = V.period / steps
    q = (_half_step_samples(V, x0, steps, h) - float(eps))[:, None]
    P, D = _rk4(q, h, np.array([1.0, 0.0]), np.array([0.0, 1.0]))
    return Monodromy(float(P[0]), float(P[1]), float(D[0]), float(D[1]), float(eps), float(x0))


def discriminant(V, energies, x0=0.0, steps=DEFAULT_STEPS) -> np.ndarray:
    """Hill discriminant ``D(eps)`` for an array of energies, integrated in one vectorised sweep."""
    _check_steps(steps)
    e = np.atleast_1d(np.asarray(energies, dtype=float))
    h = V.period / steps
    q = _half_step_samples(V, x0, steps, h)[:, None, None] - e[None, None, :]
    psi0 = np.array([1.0, 0.0])[:, None]
    dpsi0 = np.array([0.0, 1.0])[:, None]
    P, D = _rk4(q, h, psi0, dpsi0)
    out = P[0] + D[1]
    return out if np.ndim(energies) else float(out[0])


BAND, GAP, EDGE = "band", "gap", "edge"
PERIODIC, ANTIPERIODIC = "periodic", "antiperiodic"


@dataclass(frozen=True)
class SpectralClassification:
    kind: str
    detail: str | None = None
    discriminant: float = float("nan")


def classify(M, edge_tol=EDGE_TOL) -> SpectralClassification:
    """Band if ``|D| < 2 - tol``, gap if ``|D| > 2 + tol``, edge otherwise.

    Accepts a :class:`Monodromy` or a bare discriminant value.
    """
    D = M.discriminant if isinstance(M, Monodromy) else float(M)
    if abs(D) < 2.0 - edge_tol:
        return SpectralClassification(BAND, None, D)
    if abs(D) > 2.0 + edge_tol:
        return SpectralClassification(GAP, None, D)
    return SpectralClassification(EDGE, PERIODIC if D > 0 else ANTIPERIODIC, D)


def classify_energy(V, eps, steps=DEFAULT_STEPS, edge_tol=EDGE_TOL) -> SpectralClassification:
    return classify(monodromy(V, eps, steps=steps), edge_tol)


@dataclass(frozen=True)
class BandStructure:
    """Edges, bands and gaps found in a scanned energy window.

    ``gaps[0]`` has ``-inf`` as lower bound when ``open_lower`` is set, i.e.
    the window starts below the lowest band edge.
    """

    edges: list
    edge_kinds: list
    bands: list
    gaps: list
    window: tuple
    open_lower: bool
    closures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    scan_energies: np.ndarray | None = None
    scan_discriminant: np.ndarray | None = None

    @property
    def lowest_edge(self) -> float:
        return self.edges[0]

    def gap_containing(self, eps):
        for lo, hi in self.gaps:
            if lo < eps < hi:
                return (lo, hi)
        return None


def _refine_roots(V, brackets, target, steps, x0, tol=ROOT_TOL, maxiter=100):
    """Solve ``D(eps) = target`` on each bracket at once by safeguarded
    regula falsi (Illinois weighting, bisection when the bracket stalls)."""
    if not brackets:
        return []
    a = np.array([b[0] for b in brackets], float)
    b = np.array([b[1] for b in brackets], float)
    fa = discriminant(V, a, x0, steps) - target
    fb = discriminant(V, b, x0, steps) - target
    best = np.where(np.abs(fa) < np.abs(fb), a, b)
    fbest = np.minimum(np.abs(fa), np.abs(fb))
    side = np.zeros(len(a), int)
    width0 = b - a
    for it in range(maxiter):
        done = (fbest < tol * 1e-3) | (np.abs(b - a) < 1e-15 * np.maximum(1.0, np.abs(a)))
        if np.all(done):
            break
        x = (a * fb - b * fa) / (fb - fa)
        bad = ~np.isfinite(x) | (x <= np.minimum(a, b)) | (x >= np.maximum(a, b))
        # bisect every third pass unless the bracket has at least halved
        stall = (it % 3 == 2) & (np.abs(b - a) > 0.5 * width0)
        x = np.where(bad | stall, 0.5 * (a + b), x)
        if it % 3 == 2:
            width0 = np.abs(b - a)
        fx = discriminant(V, x, x0, steps) - target
        improve = np.abs(fx) < fbest
        best = np.where(improve, x, best)
        fbest = np.where(improve, np.abs(fx), fbest)
        left = np.sign(fx) == np.sign(fa)
        # Illinois: halve the stale endpoint's value when the same side repeats
        fb = np.where(left & (side == 1), 0.5 * fb, fb)
        fa = np.where(~left & (side == -1), 0.5 * fa, fa)
        a, fa = np.where(left, x, a), np.where(left, fx, fa)
        b, fb = np.where(left, b, x), np.where(left, fb, fx)
        side = np.where(left, 1, -1)
        a = np.where(done, best, a)
        b = np.where(done, best, b)
    if np.any(fbest > tol):
        raise NumericalError(f"band-edge refinement stalled: max |D -/+ 2| = {fbest.max():.2e}")
    return list(best)


def _refine_extremum(V, lo, hi, sign, steps, x0):
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda e: -sign * discriminant(V, e, x0, steps),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(-res.fun)


def gap_index(V, eps, steps=DEFAULT_STEPS, x0=0.0) -> int:
    """Zeros per period of a Bloch solution at the gap energy ``eps``.

    Oscillation theory: 0 in the gap below the lowest band, ``j`` in the
    ``j``-th finite gap.
    """
    x, P, Dp = canonical_solutions(V, eps, x0, steps)
    M = Monodromy(P[-1, 0], P[-1, 1], Dp[-1, 0], Dp[-1, 1], float(eps), x0)
    if classify(M).kind != GAP:
        raise PreconditionError(f"energy {eps} is not in a gap", "eps")
    v = P[:-1] @ M.eigenvector(M.t_plus)
    return count_nodes(np.append(v, M.t_plus * v[0]))


def _is_bottom_gap(V, eps, steps, x0):
    return gap_index(V, eps, steps, x0) == 0


def find_band_edges(V, window, n_scan=400, steps=DEFAULT_STEPS, x0=0.0,
                    closure_tol=1e-6) -> BandStructure:
    """Scan ``D`` on ``n_scan`` energies in ``window`` and locate every edge.

    Sign changes of ``D - 2`` and ``D + 2`` give brackets that are refined to
    ``|D -/+ 2| < 1e-9``.  Local extrema of ``D`` that approach ``+/-2``
    without a sign change are refined as well: if they overshoot, a narrow
    gap was missed by the scan and both of its edges are recovered; if they
    touch within ``closure_tol`` the gap is closed and the point is reported
    in ``closures`` instead of ``edges``.
    """
    lo, hi = float(window[0]), float(window[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise PreconditionError(f"invalid energy window {window!r}", "window")
    if n_scan < 100:
        raise PreconditionError("n_scan must be at least 100", "n_scan")
    E = np.linspace(lo, hi, int(n_scan))
    D = discriminant(V, E, x0, steps)

    brackets = {2.0: [], -2.0: []}
    for target in (2.0, -2.0):
        g = D - target
        for i in np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) <= 0)[0]:
            if g[i] == 0.0 and i > 0 and g[i - 1] * g[i + 1] > 0:
                continue
            brackets[target].append((E[i], E[i + 1]))

    closures = []
    for i in range(1, len(E) - 1):
        for sign in (1.0, -1.0):
            s = sign * D
            if not (s[i] >= s[i - 1] and s[i] >= s[i + 1]):
                continue
            if s[i] < 2.0 - 0.25 or s[i] > 2.0 + closure_tol:
                continue
            emax, smax = _refine_extremum(V, E[i - 1], E[i + 1], sign, steps, x0)
            if smax > 2.0 + closure_tol:
                brackets[2.0 * sign].extend([(E[i - 1], emax), (emax, E[i + 1])])
            elif smax >= 2.0 - closure_tol:
                closures.append({"energy": emax, "discriminant": sign * smax,
                                 "kind": PERIODIC if sign > 0 else ANTIPERIODIC})

    found = []
    for target in (2.0, -2.0):
        uniq = sorted(set(brackets[target]))
        for root in _refine_roots(V, uniq, target, steps, x0):
            found.append((root, PERIODIC if target > 0 else ANTIPERIODIC))
    found.sort()
    merged = []
    for e, k in found:
        if merged and abs(e - merged[-1][0]) < 1e-10 and k == merged[-1][1]:
            continue
        merged.append((e, k))
    if not merged:
        raise NumericalError(f"no edges found in window [{lo}, {hi}]")
    edges = [e for e, _ in merged]
    kinds = [k for _, k in merged]

    starts_in_gap = abs(D[0]) > 2.0
    open_lower = bool(starts_in_gap and D[0] > 2.0 and _is_bottom_gap(V, lo, steps, x0))
    notes = []
    if open_lower:
        expect = [PERIODIC]
        while len(expect) < len(kinds):
            nxt = ANTIPERIODIC if ((len(expect) + 1) // 2) % 2 == 1 else PERIODIC
            expect.append(nxt)
        if kinds != expect:
            msg = f"edge parity pattern {kinds} differs from the expected {expect}; an edge may be missing"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)

    bounds = [(-math.inf if open_lower else lo)] + edges + [hi]
    bands, gaps = [], []
    in_gap = starts_in_gap
    for left, right in zip(bounds[:-1], bounds[1:]):
        (gaps if in_gap else bands).append((left, right))
        in_gap = not in_gap
    return BandStructure(edges, kinds, bands, gaps, (lo, hi), open_lower, closures, notes, E, D)


# --------------------------------------------------------------------------
# Bloch solutions
# --------------------------------------------------------------------------

PLUS_INF, MINUS_INF = "+inf", "-inf"


@dataclass(frozen=True)
class BlochBranch:
    """One Bloch solution: its trace over a single period ``[0, period]`` and
    its multiplier ``t`` (``v(x + period) = t v(x)``)."""

    multiplier: float
    x: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    energy: float
    grows_toward: str

    @property
    def steps(self) -> int:
        return len(self.x) - 1

    @property
    def period(self) -> float:
        return float(self.x[-1] - self.x[0])

    def sample(self, periods: int):
        """Values on ``[-N period, N period]`` as ``(x, psi, dpsi, log_amp)``.

        The true value at each sample is ``psi * exp(log_amp)``; the mantissa
        repeats the single-period trace with sign ``sign(t)^k`` in cell ``k``.
        """
        n = self.steps
        N = int(periods)
        h = self.period / n
        j = np.arange(2 * N * n + 1)
        k = j // n - N
        i = j % n
        x = -N * self.period + h * j
        sign = np.where((k % 2 == 0) | (self.multiplier > 0), 1.0, -1.0)
        log_amp = k * math.log(abs(self.multiplier))
        return x, sign * self.psi[i], sign * self.dpsi[i], log_amp

    def trace(self, periods: int) -> SolutionTrace:
        x, p, d, la = self.sample(periods)
        top = float(np.max(la))
        w = np.exp(la - top)
        return SolutionTrace(x, p * w, d * w, self.energy, top).normalized_max()


@dataclass(frozen=True)
class BlochPair:
    v_plus: BlochBranch
    v_minus: BlochBranch
    monodromy: Monodromy

    @property
    def energy(self) -> float:
        return self.monodromy.energy


def _bloch_branch(M, t, x, P, Dp, grows):
    v = M.eigenvector(t)
    psi = P @ v
    dpsi = Dp @ v
    # scale-free and mirror-compatible normalisation: |(v, v')(0)| = 1, v(0) > 0
    s = math.hypot(psi[0], dpsi[0])
    ref = psi[0] if abs(psi[0]) > 1e-8 * s else dpsi[0] * (1.0 if grows == PLUS_INF else -1.0)
    s = s if ref > 0 else -s
    return BlochBranch(float(t), x, psi / s, dpsi / s, M.energy, grows)


def _backward_canonical(V, eps, x0, steps):
    """Canonical solutions with data (1, 0), (0, 1) at ``x0 + period``,
    integrated back to ``x0``; returned on the increasing grid."""
    h = V.period / steps
    xs = x0 + V.period - 0.5 * h * np.arange(2 * steps + 1, dtype=float)
    q = (np.asarray(V(xs), dtype=float) - float(eps))[:, None]
    P, D = _rk4(q, -h, np.array([1.0, 0.0]), np.array([0.0, 1.0]), store=True)
    return P[::-1], D[::-1]


def bloch_pair(V, eps, steps=DEFAULT_STEPS, edge_tol=EDGE_TOL) -> BlochPair:
    """Bloch solutions at a gap energy ``eps``.

    ``v_plus`` has ``|t| > 1`` and grows toward ``+inf``; ``v_minus`` decays
    toward ``+inf`` and grows toward ``-inf``.  Each branch is integrated in
    the direction in which it dominates (``v_minus`` backward), so neither
    trace is polluted by cancellation against the growing solution.
    Energies in a band (complex multipliers) or at an edge (defective
    monodromy) are rejected.
    """
    x, P, Dp = canonical_solutions(V, eps, 0.0, steps)
    M = Monodromy(P[-1, 0], P[-1, 1], Dp[-1, 0], Dp[-1, 1], float(eps), 0.0)
    cls = classify(M, edge_tol)
    if cls.kind == BAND:
        raise PreconditionError(f"energy {eps} lies in a band (|D| = {abs(cls.discriminant):.6g} < 2)", "eps")
    if cls.kind == EDGE:
        raise PreconditionError(f"energy {eps} is at a band edge ({cls.detail}); Bloch pair is degenerate", "eps")
    tp = M.t_plus
    Pb, Db = _backward_canonical(V, eps, 0.0, steps)
    # backward period map (data at period -> data at 0); v_minus is its dominant eigenvector
    B = Monodromy(Pb[0, 0], Pb[0, 1], Db[0, 0], Db[0, 1], float(eps), 0.0)
    tb = B.t_plus
    minus = _bloch_branch(B, tb, x, Pb, Db, MINUS_INF)
    minus = BlochBranch(1.0 / tb, minus.x, minus.psi, minus.dpsi, minus.energy, MINUS_INF)
    return BlochPair(_bloch_branch(M, tp, x, P, Dp, PLUS_INF), minus, M)


def wronskian(f, df, g, dg):
    return f * dg - df * g


def count_nodes(values) -> int:
    """Number of sign changes in a sampled function (exact zeros are skipped)."""
    v = np.asarray(values)
    s = np.sign(v[v != 0.0])
    return int(np.count_nonzero(s[1:] != s[:-1]))


def node_locations(x, values) -> np.ndarray:
    """Linearly interpolated zero crossings."""
    v = np.asarray(values)
    idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
    xz = x[idx] - v[idx] * (x[idx + 1] - x[idx]) / (v[idx + 1] - v[idx])
    exact = x[np.nonzero(v == 0.0)[0]]
    return np.sort(np.concatenate([xz, exact]))
