"""Zeros of the zeta function: counting, location, strip counts and τ(σ)."""
from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dynamics import hausdorff_dimension, pressure_derivative, pressure_eig
from .errors import (
    ContourTooCloseToZero,
    InsufficientData,
    NewtonDiverged,
    NonIntegerWindingNumber,
    NuOutOfRange,
)
from .geometry import SchottkyGroup, distortion_report
from .zeta import DEFAULT_K, DEFAULT_K_REFINED, REFINE_ABOVE, ZetaEvaluator

GL_NODES = 16
PERTURB = (1e-2, 2e-2, 4e-2)
MIN_DIST = 1e-3
INTEGER_TOL = 0.05
MULT_SQUARE = 1e-4
MIN_CELL = 1e-6
# largest cell count solved directly from contour power sums
DL_MAX = 5
THETA_WORD_LENGTH = 8
# initial panel length along contour edges
PANEL = 1.0
# quadrature error allowed per unit contour length
QUAD_TOL = 1e-6
# panel length times max |Z'/Z| on it; a zero at distance d forces panels below ~8 d / m
PANEL_RESOLVE = 8.0

_X, _W = np.polynomial.legendre.leggauss(GL_NODES)


@dataclass(frozen=True)
class Rect:
    """``[re0, re1] x [im0, im1]``."""

    re0: float
    re1: float
    im0: float
    im1: float

    @classmethod
    def around(cls, s: complex, side: float) -> "Rect":
        s = complex(s)
        return cls(s.real - side / 2, s.real + side / 2, s.imag - side / 2, s.imag + side / 2)

    @property
    def area(self) -> float:
        return (self.re1 - self.re0) * (self.im1 - self.im0)

    @property
    def diam(self) -> float:
        return math.hypot(self.re1 - self.re0, self.im1 - self.im0)

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.re0 + self.re1), 0.5 * (self.im0 + self.im1))

    def corners(self) -> list[complex]:
        return [complex(self.re0, self.im0), complex(self.re1, self.im0),
                complex(self.re1, self.im1), complex(self.re0, self.im1)]

    def grow(self, eps: float) -> "Rect":
        return Rect(self.re0 - eps, self.re1 + eps, self.im0 - eps, self.im1 + eps)

    def contains(self, s: complex, slack: float = 0.0) -> bool:
        return (self.re0 - slack <= s.real <= self.re1 + slack
                and self.im0 - slack <= s.imag <= self.im1 + slack)

    def conjugate(self) -> "Rect":
        return Rect(self.re0, self.re1, -self.im1, -self.im0)


@dataclass(frozen=True)
class Resonance:
    s: complex
    multiplicity: int
    newton_residual: float
    box_id: str


@dataclass(frozen=True)
class Unresolved:
    rect: Rect
    count: int
    box_id: str


@dataclass
class ZeroScan:
    rect: Rect
    total: int
    zeros: list[Resonance]
    unresolved: list[Unresolved] = field(default_factory=list)

    @property
    def resolved_count(self) -> int:
        return sum(z.multiplicity for z in self.zeros)


@dataclass(frozen=True)
class StripCount:
    sigma: float
    T: float
    N: int
    M: int
    lower: int
    upper: int


@dataclass(frozen=True)
class TauCurve:
    nu: float
    samples: tuple[tuple[float, float], ...]
    derivative_at_half: float
    delta: float
    metadata: dict = field(default_factory=dict)


# ---------------------------------------------------------------- contours

class SegmentCache:
    """Quadrature samples of ``Z'/Z`` per contour segment.

    Neighbouring cells traverse their shared cut line in opposite
    directions; the samples are reused with the sign of ``ds`` flipped.
    """

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    def get(self, a: complex, b: complex):
        with self._lock:
            hit = self._data.get((a, b))
            if hit is not None:
                return hit
            hit = self._data.get((b, a))
        if hit is not None:
            s, wds, vals, vmax = hit
            return s, -wds, vals, vmax
        return None

    def put(self, a: complex, b: complex, entry) -> None:
        with self._lock:
            self._data[(a, b)] = entry


def _segment(ev: ZetaEvaluator, a: complex, b: complex, min_dist: float, tol: float,
             cache: SegmentCache | None = None):
    """Adaptive Gauss–Legendre samples ``(s, w ds, Z'/Z(s))`` on the segment ``a -> b``.

    A panel is accepted when the rule on it and the sum of the rules on its
    halves agree to ``tol`` times the panel length and the panel is short
    against ``1/|Z'/Z|``; otherwise each half is treated the same way.  The
    second test keeps a zero lying on the segment from passing unnoticed as
    a principal value.
    """
    hit = cache.get(a, b) if cache is not None else None
    if hit is None:
        nodes, weights, values = [], [], []

        def panel(lo, hi):
            mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
            s = mid + half * _X
            vals = ev.log_derivative_many(s)
            if np.any(~np.isfinite(vals)):
                raise ContourTooCloseToZero(f"Z'/Z not finite on the segment {lo}..{hi}")
            return s, half * _W, vals, complex(np.sum(half * _W * vals))

        def rec(lo, hi, whole, level):
            mid = 0.5 * (lo + hi)
            left, right = panel(lo, mid), panel(mid, hi)
            vmax = max(np.max(np.abs(left[2])), np.max(np.abs(right[2])))
            if (abs(left[3] + right[3] - whole[3]) <= tol * abs(hi - lo)
                    and abs(hi - lo) * vmax <= PANEL_RESOLVE):
                for part in (left, right):
                    nodes.append(part[0]), weights.append(part[1]), values.append(part[2])
                return
            if level >= 24:
                raise ContourTooCloseToZero(f"quadrature did not settle on {lo}..{hi}")
            rec(lo, mid, left, level + 1)
            rec(mid, hi, right, level + 1)

        n0 = max(1, math.ceil(abs(b - a) / PANEL))
        pts = [a + (b - a) * k / n0 for k in range(n0 + 1)]
        for lo, hi in zip(pts[:-1], pts[1:]):
            rec(lo, hi, panel(lo, hi), 0)
        vals = np.concatenate(values)
        hit = (np.concatenate(nodes), np.concatenate(weights), vals, float(np.max(np.abs(vals))))
        if cache is not None:
            cache.put(a, b, hit)
    if hit[3] * min_dist > 2.0:
        raise ContourTooCloseToZero(f"|Z'/Z| = {hit[3]:.3g} on the segment {a}..{b}")
    return hit


def contour_moments(ev: ZetaEvaluator, rect: Rect, kmax: int = 2, min_dist: float = MIN_DIST,
                    tol: float = QUAD_TOL, cache: SegmentCache | None = None) -> np.ndarray:
    """``(1/2πi) ∮ (s - c)^k Z'/Z ds`` for ``k = 0..kmax``, ``c`` the rectangle centre."""
    c = rect.corners()
    center = rect.center
    total = np.zeros(kmax + 1, dtype=complex)
    for i in range(4):
        s, wds, vals, _ = _segment(ev, c[i], c[(i + 1) % 4], min_dist, tol, cache)
        f = wds * vals
        u = s - center
        total += np.array([np.sum(f * u ** k) for k in range(kmax + 1)])
    return total / (2j * math.pi)


def _winding(m0: complex) -> int:
    n = round(m0.real)
    if abs(m0 - n) > INTEGER_TOL:
        raise NonIntegerWindingNumber(f"winding number {m0} is not an integer")
    return int(n)


def _cell_dist(rect: Rect, min_dist: float) -> float:
    return min(min_dist, 0.05 * min(rect.re1 - rect.re0, rect.im1 - rect.im0))


def count_zeros_box(g: SchottkyGroup, rect, K: int = DEFAULT_K, evaluator: ZetaEvaluator | None = None,
                    perturb=PERTURB, min_dist: float = MIN_DIST, threads: int = 1) -> int:
    """Zeros of ``Z`` inside ``rect``, with multiplicity, by the argument principle.

    When the contour passes within ``min_dist`` of a zero the rectangle is
    grown outward by each entry of ``perturb`` in turn.
    """
    return count_zeros_with_rect(g, rect, K, evaluator, perturb, min_dist, threads)[0]


def count_zeros_with_rect(g, rect, K=DEFAULT_K, evaluator=None, perturb=PERTURB, min_dist=MIN_DIST,
                          threads=1, cache=None):
    """As :func:`count_zeros_box`, also returning the rectangle actually used."""
    rect = rect if isinstance(rect, Rect) else Rect(*rect)
    if rect.area <= 0:
        return 0, rect
    ev = evaluator or ZetaEvaluator(g, K, threads=threads)
    last = None
    for eps in (0.0, *perturb):
        r = rect.grow(eps)
        try:
            return _winding(contour_moments(ev, r, 0, min_dist, cache=cache)[0]), r
        except ContourTooCloseToZero as exc:
            last = exc
    raise ContourTooCloseToZero(f"{last}; perturbations {perturb} exhausted")


# ---------------------------------------------------------------- location

def _newton(ev: ZetaEvaluator, s0: complex, m: int, tol: float, max_iter: int = 60) -> tuple[complex, float]:
    """Modified Newton ``s <- s - m / (Z'/Z)``; returns the point and the last step."""
    s = complex(s0)
    step = math.inf
    for _ in range(max_iter):
        d = ev.log_derivative(s)
        if not np.isfinite(d) or d == 0:
            raise NewtonDiverged(f"Z'/Z = {d} at {s}")
        delta = m / d
        s -= delta
        step = abs(delta)
        if step <= tol:
            # one more step for the residual at the returned point
            step = abs(m / ev.log_derivative(s))
            return s, step
    raise NewtonDiverged(f"no convergence from {s0}: last step {step}")


def _power_sum_roots(p: np.ndarray) -> np.ndarray:
    """Roots of the monic polynomial whose roots have power sums ``p[1..n]``."""
    n = len(p) - 1
    e = [1.0 + 0j]
    for k in range(1, n + 1):
        e.append(sum((-1) ** (i - 1) * e[k - i] * p[i] for i in range(1, k + 1)) / k)
    return np.roots([(-1) ** k * e[k] for k in range(n + 1)])


def _delves_lyness(ev, cache, rect: Rect, count: int, box_id: str, tol: float, min_dist: float):
    """All zeros of a cell from contour power sums, polished by Newton; ``None`` if unverified."""
    rho = 0.5 * max(rect.re1 - rect.re0, rect.im1 - rect.im0)
    mom = contour_moments(ev, rect, count, _cell_dist(rect, min_dist), cache=cache)
    scaled = mom / rho ** np.arange(count + 1)
    guesses = rect.center + rho * _power_sum_roots(scaled)
    pts = []
    for z0 in guesses:
        try:
            pts.append(_newton(ev, z0, 1, max(tol, 1e-9))[0])
        except NewtonDiverged:
            return None
    # points that met at a multiple zero form one cluster
    clusters: list[list[complex]] = []
    for z in sorted(pts, key=lambda z: (z.imag, z.real)):
        for c in clusters:
            if abs(z - c[0]) <= 1e-6 * max(1.0, rho):
                c.append(z)
                break
        else:
            clusters.append([z])
    out = []
    for c in clusters:
        m = len(c)
        try:
            s, res = _newton(ev, sum(c) / m, m, tol)
        except NewtonDiverged:
            return None
        if not rect.contains(s):
            return None
        mult = count_zeros_box(ev.g, Rect.around(s, MULT_SQUARE), evaluator=ev,
                               perturb=(MULT_SQUARE / 4, MULT_SQUARE / 2), min_dist=MULT_SQUARE / 20)
        if mult != m:
            return None
        out.append(Resonance(s, m, res, box_id))
    if sum(z.multiplicity for z in out) != count:
        return None
    return out


def _cuts(rect: Rect):
    """Candidate child partitions: bisect the long side of elongated cells, else quadrisect."""
    w, h = rect.re1 - rect.re0, rect.im1 - rect.im0
    for shift in (0.0, 0.1, -0.1, 0.2, -0.2, 0.3):
        xm = rect.re0 + (0.5 + shift) * w
        ym = rect.im0 + (0.5 - shift) * h
        if h >= 2 * w:
            yield [Rect(rect.re0, rect.re1, rect.im0, ym), Rect(rect.re0, rect.re1, ym, rect.im1)]
        elif w >= 2 * h:
            yield [Rect(rect.re0, xm, rect.im0, rect.im1), Rect(xm, rect.re1, rect.im0, rect.im1)]
        else:
            yield [Rect(rect.re0, xm, rect.im0, ym), Rect(xm, rect.re1, rect.im0, ym),
                   Rect(rect.re0, xm, ym, rect.im1), Rect(xm, rect.re1, ym, rect.im1)]


def _split(ev, cache, rect: Rect, min_dist: float) -> list[tuple[Rect, int]]:
    for kids in _cuts(rect):
        try:
            return [(k, _winding(contour_moments(ev, k, 0, _cell_dist(k, min_dist), cache=cache)[0]))
                    for k in kids]
        except ContourTooCloseToZero:
            continue
    raise ContourTooCloseToZero(f"every cut of {rect} passes near a zero")


def _resolve_cell(ev, cache, rect: Rect, count: int, box_id: str, tol: float, min_dist: float):
    """Process one cell: its zeros, an unresolved region, or children to subdivide."""
    if count <= DL_MAX:
        found = _delves_lyness(ev, cache, rect, count, box_id, tol, min_dist)
        if found is not None:
            return "zeros", found
    if rect.diam <= MIN_CELL:
        return "unresolved", Unresolved(rect, count, box_id)
    try:
        return "split", _split(ev, cache, rect, min_dist)
    except ContourTooCloseToZero:
        return "unresolved", Unresolved(rect, count, box_id)


def locate_zeros(g: SchottkyGroup, rect, tol: float = 1e-10, K: int = DEFAULT_K,
                 K_refined: int = DEFAULT_K_REFINED, threads: int = 1, min_dist: float = MIN_DIST,
                 refine_above: float = REFINE_ABOVE, M: int | None = None) -> ZeroScan:
    """Zeros in ``rect`` by subdivision, contour power sums and Newton polishing.

    Cells holding at most ``DL_MAX`` zeros are solved from their power sums;
    every candidate is polished by modified Newton and its multiplicity is
    confirmed on a ``1e-4`` square.  Cells that fail are subdivided.  Cells of
    one level are processed in parallel and merged in index order; cells
    whose zeros cannot be isolated are returned as ``unresolved``.
    """
    ev = ZetaEvaluator(g, K, K_refined, refine_above, M, threads=threads)
    cache = SegmentCache()
    total, used = count_zeros_with_rect(g, rect, evaluator=ev, min_dist=min_dist, cache=cache)
    zeros, unresolved = [], []
    level = [(used, total, "0")] if total else []
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while level:
            results = list(pool.map(lambda c: _resolve_cell(ev, cache, c[0], c[1], c[2], tol, min_dist), level))
            nxt = []
            for (r, n, bid), (kind, out) in zip(level, results):
                if kind == "zeros":
                    zeros.extend(out)
                elif kind == "unresolved":
                    unresolved.append(out)
                elif sum(k for _, k in out) != n:
                    unresolved.append(Unresolved(r, n, bid))
                else:
                    nxt.extend((kr, kn, f"{bid}.{i}") for i, (kr, kn) in enumerate(out) if kn)
            level = nxt
    zeros.sort(key=lambda z: (round(z.s.imag, 9), round(z.s.real, 9)))
    return ZeroScan(used, total, zeros, unresolved)


# ---------------------------------------------------------------- strip counts

def strip_counts(g: SchottkyGroup, sigmas, Ts, K: int = DEFAULT_K, threads: int = 1,
                 scan: ZeroScan | None = None, **operator) -> list[StripCount]:
    """``N(σ,T)`` over ``σ <= Re s <= δ, 0 <= Im s <= T`` and ``M(σ,T)`` over ``T/2 < Im s <= T``.

    One scan of the enclosing rectangle serves every ``(σ, T)``; unresolved
    cells widen counts into ``[lower, upper]``.  Extra keywords go to
    :func:`locate_zeros`.
    """
    sigmas, Ts = sorted(map(float, sigmas)), sorted(map(float, Ts))
    if Ts and Ts[-1] > 200:
        raise ValueError("T above the desk bound 200")
    delta = hausdorff_dimension(g).delta
    if scan is None:
        # margins keep the contour clear of s = δ and of zeros on the real axis
        rect = Rect(sigmas[0] - 0.013, delta + 0.017, -0.011, Ts[-1] + 0.019)
        scan = locate_zeros(g, rect, K=K, threads=threads, **operator)
    eps = 1e-9
    out = []
    for sig in sigmas:
        for T in Ts:
            def inside(s, lo_im):
                return sig - eps <= s.real <= delta + eps and lo_im < s.imag <= T + eps

            n = sum(z.multiplicity for z in scan.zeros if inside(z.s, -eps))
            m = sum(z.multiplicity for z in scan.zeros if inside(z.s, T / 2 + eps))
            extra = sum(u.count for u in scan.unresolved
                        if u.rect.re1 >= sig and u.rect.re0 <= delta and u.rect.im1 >= 0 and u.rect.im0 <= T)
            out.append(StripCount(sig, T, n, m, n, n + extra))
    return out


def weyl_fit(counts) -> dict[float, dict]:
    """Least-squares slope of ``log N`` against ``log T`` for each ``σ``."""
    delta = None
    rows: dict[float, list] = {}
    for c in counts:
        rows.setdefault(c.sigma, []).append(c)
    out = {}
    for sig, cs in sorted(rows.items()):
        pts = sorted({(c.T, c.N) for c in cs})
        if len({t for t, _ in pts}) < 4 or any(n <= 0 for _, n in pts):
            raise InsufficientData(f"σ={sig}: need >= 4 distinct T with N > 0")
        x = np.log([t for t, _ in pts])
        y = np.log([n for _, n in pts])
        coef, res, *_ = np.polyfit(x, y, 1, full=True)
        out[sig] = {"exponent": float(coef[0]), "residual": float(math.sqrt(res[0] / len(x))) if len(res) else 0.0}
    return out


def flag_weyl(fits: dict[float, dict], delta: float) -> dict[float, dict]:
    """Mark rows whose exponent exceeds ``1 + δ + 0.1``."""
    return {s: {**f, "flagged": f["exponent"] > 1 + delta + 0.1} for s, f in fits.items()}


# ---------------------------------------------------------------- τ(σ)

def default_nu(g: SchottkyGroup, delta: float | None = None, K: int = DEFAULT_K) -> tuple[float, dict]:
    """``min{δ/(8|log θ̄|), δ/(16 P(δ/2)), (1-δ)/P(δ/2)}`` with measured ``θ̄``."""
    delta = hausdorff_dimension(g, K=K).delta if delta is None else delta
    if delta <= 0:
        raise NuOutOfRange("δ = 0: the τ curve is degenerate")
    theta = distortion_report(g, THETA_WORD_LENGTH).theta_bar
    p_half = pressure_eig(g, delta / 2, K)
    nu = min(delta / (8 * abs(math.log(theta))), delta / (16 * p_half), (1 - delta) / p_half)
    return nu, {"theta_bar": theta, "theta_word_length": THETA_WORD_LENGTH, "P_half_delta": p_half}


def tau_curve(g: SchottkyGroup, nu: float | None = None, sigma_grid=None, K: int = DEFAULT_K,
              n_grid: int = 21) -> TauCurve:
    """``τ(σ) = max{δ + (ν/2) P(σ + δ/2), 7δ/8}`` on ``[δ/2, δ]``."""
    delta = hausdorff_dimension(g, K=K).delta
    nu_max, meta = default_nu(g, delta, K)
    if nu is None:
        nu = nu_max
    elif not 0 < nu <= nu_max * (1 + 1e-12):
        raise NuOutOfRange(f"ν = {nu} outside (0, {nu_max}]")
    if sigma_grid is None:
        sigma_grid = np.linspace(delta / 2, delta, n_grid)
    sigma_grid = [float(s) for s in sigma_grid]
    if any(s < delta / 2 - 1e-12 or s > delta + 1e-12 for s in sigma_grid):
        raise ValueError("σ grid must lie in [δ/2, δ]")
    samples = []
    for s in sigma_grid:
        p = pressure_eig(g, s + delta / 2, K)
        samples.append((s, max(delta + 0.5 * nu * p, 7 * delta / 8)))
    deriv = 0.5 * nu * pressure_derivative(g, delta, K)
    epsilons = {s: 2 * (delta - t) for s, t in samples}
    return TauCurve(nu, tuple(samples), deriv, delta, {**meta, "epsilon": epsilons})


def tau_value(g: SchottkyGroup, sigma: float, nu: float, delta: float, K: int = DEFAULT_K) -> float:
    return max(delta + 0.5 * nu * pressure_eig(g, sigma + delta / 2, K), 7 * delta / 8)
