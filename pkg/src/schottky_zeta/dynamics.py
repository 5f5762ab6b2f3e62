"""Bowen-Series dynamics: periodic orbits, pressure and dimension."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .bergman import OperatorAssembler, coarse_cover
from .errors import DegenerateEigenpair, NonConvergedEigenvalue, NonHyperbolicElement
from .geometry import SchottkyGroup, compose_word, cyclic_word_table, word_table

DEFAULT_K = 40


@dataclass(frozen=True)
class BowenSeriesMap:
    """``T(x) = γ_j(x)`` on ``I_j = D_j ∩ R``."""

    group: SchottkyGroup

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return [d.interval for d in self.group.discs]

    def branch(self, x: float) -> int:
        for j, (lo, hi) in enumerate(self.intervals, start=1):
            if lo <= x <= hi:
                return j
        raise ValueError(f"{x} lies in no interval I_j")

    def __call__(self, x: float) -> float:
        return float(self.group.letter(self.branch(x))(x))

    def derivative(self, x: float) -> float:
        return float(self.group.letter(self.branch(x)).derivative(x))


@dataclass(frozen=True)
class OrbitClass:
    word: tuple[int, ...]
    fixed_point: float
    multiplier: float
    primitive: bool
    geodesic_length: float


@dataclass(frozen=True)
class PressureCurve:
    samples: tuple[tuple[float, float], ...]
    method: str
    truncation: int


@dataclass(frozen=True)
class DimensionResult:
    delta: float
    residual: float
    bracket: tuple[float, float]
    K: int
    method: str = "eigenvalue"


def canonical_rotation(w: tuple[int, ...]) -> tuple[int, ...]:
    return min(w[i:] + w[:i] for i in range(len(w)))


def minimal_period(w: tuple[int, ...]) -> int:
    n = len(w)
    for d in range(1, n + 1):
        if n % d == 0 and w[d:] + w[:d] == w:
            return d
    return n


def attracting_fixed_point(m) -> float:
    """Root of ``c x^2 + (d - a) x - b = 0`` with ``|γ'(x)| < 1``."""
    a, b, c, d = m.a, m.b, m.c, m.d
    tr = a + d
    if abs(tr) <= 2:
        raise NonHyperbolicElement(f"|trace| = {abs(tr)} <= 2")
    if c == 0:
        raise NonHyperbolicElement("element fixes infinity")
    disc = math.sqrt((d - a) ** 2 + 4 * b * c)
    roots = [((a - d) + disc) / (2 * c), ((a - d) - disc) / (2 * c)]
    return min(roots, key=lambda x: abs(c * x + d) ** -2)


def periodic_orbits(g: SchottkyGroup, n: int) -> list[OrbitClass]:
    """One orbit class per cyclically admissible word of length ``n`` up to rotation."""
    words, _ = cyclic_word_table(g, n)
    seen = set()
    out = []
    for row in words:
        w = canonical_rotation(tuple(int(a) for a in row))
        if w in seen:
            continue
        seen.add(w)
        m = compose_word(g, w)
        x = attracting_fixed_point(m)
        tr = abs(m.trace)
        lam = 0.5 * (tr + math.sqrt(tr * tr - 4))
        out.append(OrbitClass(w, x, lam * lam, minimal_period(w) == n, 2 * math.log(lam)))
    out.sort(key=lambda o: o.word)
    return out


def _logsumexp(v: np.ndarray) -> float:
    v = np.sort(np.asarray(v, dtype=float))[::-1]
    top = v[0]
    return top + math.log(math.fsum(np.exp(v - top)))


def pressure_orbit(g: SchottkyGroup, sigma: float, n: int) -> float:
    """``(1/n) log Σ_{T^n x = x} |(T^n)'(x)|^{-σ}``."""
    _, lengths = cyclic_word_table(g, n)
    return _logsumexp(-sigma * lengths) / n


@lru_cache(maxsize=16)
def _assembler(g: SchottkyGroup, K: int) -> OperatorAssembler:
    return OperatorAssembler(g, coarse_cover(g), K)


def _leading(g: SchottkyGroup, sigma: float, K: int, left: bool = False):
    if K < 4:
        raise ValueError("K must be >= 4")
    mat = _assembler(g, K).matrix(sigma).real
    if left:
        vals, vl, vr = scipy.linalg.eig(mat, left=True, right=True)
    else:
        vals, vr = np.linalg.eig(mat)
        vl = None
    i = int(np.argmax(np.abs(vals)))
    lam = vals[i]
    if not (lam.real > 0 and abs(lam.imag) <= 1e-10 * abs(lam)):
        raise NonConvergedEigenvalue(f"leading eigenvalue {lam} is not real positive")
    return mat, lam.real, i, vals, vl, vr


def pressure_eig(g: SchottkyGroup, sigma: float, K: int = DEFAULT_K) -> float:
    """Log of the leading eigenvalue of the coarse-cover operator at real ``σ``."""
    _, lam, *_ = _leading(g, float(sigma), K)
    return math.log(lam)


def pressure_curve(g: SchottkyGroup, sigmas, method: str = "eigenvalue", truncation: int = DEFAULT_K) -> PressureCurve:
    if method == "eigenvalue":
        vals = [pressure_eig(g, s, truncation) for s in sigmas]
    else:
        vals = [pressure_orbit(g, s, truncation) for s in sigmas]
    return PressureCurve(tuple(zip(map(float, sigmas), vals)), method, truncation)


def pressure_derivative(g: SchottkyGroup, sigma: float, K: int = DEFAULT_K) -> float:
    """``dP/dσ = u^H M' v / (λ u^H v)`` for the leading eigenpair.

    A semisimple leading eigenvalue (the cylinder has two identical blocks)
    is handled by differentiating the mean of the eigenvalue cluster.
    """
    _, lam, _, vals, vl, vr = _leading(g, float(sigma), K, left=True)
    idx = np.nonzero(np.abs(vals - lam) <= 1e-8 * lam)[0]
    dmat = _assembler(g, K).derivative(float(sigma)).real
    u, v = vl[:, idx], vr[:, idx]
    gram = np.conj(u.T) @ v
    if np.linalg.cond(gram) > 1e10:
        raise DegenerateEigenpair("leading eigenvalue is defective")
    dlam = np.trace(np.linalg.solve(gram, np.conj(u.T) @ dmat @ v)) / len(idx)
    return float((dlam / lam).real)


def hausdorff_dimension(g: SchottkyGroup, tol: float = 1e-12, K: int = DEFAULT_K) -> DimensionResult:
    """Root of ``σ -> P(σ)`` on ``[0, 1]``; ``0`` when ``P(0) <= 0``."""
    p0 = pressure_eig(g, 0.0, K)
    if p0 <= tol:
        return DimensionResult(0.0, abs(p0), (0.0, 0.0), K)
    f = lambda s: pressure_eig(g, s, K)
    delta = brentq(f, 0.0, 1.0, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    res = abs(f(delta))
    if res > tol:
        # brentq stops on the bracket width; polish with secant steps
        d0, d1 = delta - 1e-7, delta
        for _ in range(8):
            f0, f1 = f(d0), f(d1)
            if f1 == f0:
                break
            d0, d1 = d1, d1 - f1 * (d1 - d0) / (f1 - f0)
        delta, res = d1, abs(f(d1))
    return DimensionResult(float(delta), float(res), (0.0, 1.0), K)


def word_intervals(g: SchottkyGroup, n: int) -> np.ndarray:
    """Lengths of the generation-``n`` intervals ``γ_α(I_j)``, ``α ∈ W_n^j``."""
    words, mats = word_table(g, n)
    out = []
    for j in range(1, 2 * g.p + 1):
        lo, hi = g.discs[j - 1].interval
        m = mats[words[:, -1] != j]
        # |γ(hi) - γ(lo)| = (hi - lo) / |(c hi + d)(c lo + d)| avoids cancellation
        out.append((hi - lo) / np.abs((m[:, 1, 0] * hi + m[:, 1, 1]) * (m[:, 1, 0] * lo + m[:, 1, 1])))
    return np.concatenate(out)


def cover_dimension_estimate(g: SchottkyGroup, depth: int = 12) -> float:
    """Dimension from interval covers alone.

    Solves ``Σ_{|α|=n+1} |I_α|^d = Σ_{|α|=n} |I_α|^d`` for ``d`` with
    ``n = depth - 1``: the two sums grow like ``e^{nP(d)}`` so their ratio
    equals one exactly at the dimension, up to an error geometric in ``n``.
    """
    log_a = np.log(word_intervals(g, depth))
    log_b = np.log(word_intervals(g, depth - 1))
    f = lambda d: _logsumexp(d * log_a) - _logsumexp(d * log_b)
    if f(1e-12) <= 0:
        return 0.0
    return float(brentq(f, 1e-12, 1.0, xtol=1e-14))


def box_counting_estimate(g: SchottkyGroup, depth: int = 12, scales=None) -> float:
    """Box-counting slope of the depth-``depth`` limit-set approximation.

    Each word interval is represented by one point.  The default scales run
    in quarter octaves from ``span / 64`` down to ``64 * max |I_α|``, the
    finest scale at which the point set still resolves the limit set,
    floored by the floating-point resolution of the points; a long
    scale range averages out the log-periodic oscillation of the counts.
    """
    words, mats = word_table(g, depth)
    pts = []
    for j in range(1, 2 * g.p + 1):
        lo, hi = g.discs[j - 1].interval
        m = mats[words[:, -1] != j]
        mid = 0.5 * (lo + hi)
        pts.append((m[:, 0, 0] * mid + m[:, 0, 1]) / (m[:, 1, 0] * mid + m[:, 1, 1]))
    pts = np.sort(np.concatenate(pts))
    pts -= pts[0]
    if scales is None:
        span = max(pts[-1], g.r_min)
        # points carry absolute error ~1e-16 * span
        finest = max(64 * word_intervals(g, depth).max(), 1e-12 * span)
        k0, k1 = math.log2(64 / span), math.log2(1 / finest)
        scales = 2.0 ** -np.arange(k0, k1, 0.25)
    scales = np.asarray(scales, dtype=float)
    counts = [len(np.unique(np.floor(pts / eps).astype(np.int64))) for eps in scales]
    return float(np.polyfit(np.log(1 / scales), np.log(counts), 1)[0])


def primitive_classes(g: SchottkyGroup, n_max: int) -> list[OrbitClass]:
    out = []
    for n in range(1, n_max + 1):
        out.extend(o for o in periodic_orbits(g, n) if o.primitive)
    out.sort(key=lambda o: (o.geodesic_length, o.word))
    return out


def length_spectrum(g: SchottkyGroup, n_max: int, rtol: float = 1e-10) -> list[tuple[float, int]]:
    """Primitive geodesic lengths (oriented classes) with multiplicities."""
    spec: list[list] = []
    for o in primitive_classes(g, n_max):
        if spec and abs(o.geodesic_length - spec[-1][0]) <= rtol * spec[-1][0]:
            spec[-1][1] += 1
        else:
            spec.append([o.geodesic_length, 1])
    return [(float(l), int(m)) for l, m in spec]
