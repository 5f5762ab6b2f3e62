"""Selberg zeta function by determinant, trace expansion and Euler product."""
from __future__ import annotations

import cmath
import math
import threading
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .bergman import (
    OperatorAssembler,
    certified_n_op,
    coarse_cover,
    h_for,
    refined_cover,
    trace_oracle,
)
from .errors import CutoffTooSmall, SeparationNotCertified
from .geometry import SchottkyGroup, cyclic_word_table

DEFAULT_K = 40
DEFAULT_K_REFINED = 16
REFINE_ABOVE = 10.0
EULER_DROP = 1e-14
GRID_JUMP = 5.0


class GridResolutionWarning(UserWarning):
    pass


class DivergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ZetaValue:
    s: complex
    value: complex
    log_abs: float
    method: str
    truncation: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ZetaGrid:
    sigmas: np.ndarray
    ts: np.ndarray
    log_abs: np.ndarray
    arg: np.ndarray
    spacing: tuple[float, float]

    @property
    def max_jump(self) -> float:
        """Largest change of ``log|Z|`` between neighbouring samples."""
        jumps = [np.abs(np.diff(self.log_abs, axis=a)) for a in (0, 1) if self.log_abs.shape[a] > 1]
        finite = [j[np.isfinite(j)] for j in jumps]
        return max((float(j.max()) for j in finite if j.size), default=0.0)

    @property
    def resolved(self) -> bool:
        # neighbours differing by 5 or more usually straddle an unresolved zero
        return self.max_jump < GRID_JUMP


def _slogdet(a: np.ndarray) -> tuple[complex, float]:
    """Phase and log-modulus of ``det(a)`` by partial-pivot LU."""
    lu, piv = scipy.linalg.lu_factor(a, check_finite=False)
    d = np.diag(lu)
    flips = int(np.count_nonzero(piv != np.arange(len(piv))))
    if np.any(d == 0):
        return 0j, -math.inf
    phase = np.prod(d / np.abs(d)) * (-1) ** flips
    return complex(phase), float(np.sum(np.log(np.abs(d))))


class ZetaEvaluator:
    """Determinant-route evaluation with cached operator assemblers.

    ``|Im s| <= refine_above`` uses the 2p-disc cover at order ``K``; above
    that the refined cover at ``h = h_for(s)`` and order ``K_refined`` is used
    whenever single-letter branches map it into itself.
    """

    def __init__(self, g: SchottkyGroup, K: int = DEFAULT_K, K_refined: int = DEFAULT_K_REFINED,
                 refine_above: float = REFINE_ABOVE, M: int | None = None, threads: int = 1):
        self.g, self.K, self.K_refined, self.refine_above, self.M = g, K, K_refined, refine_above, M
        self.threads = max(1, int(threads))
        self._cache: dict = {}
        self._lock = threading.Lock()
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def assembler(self, s: complex) -> OperatorAssembler:
        key = None
        if abs(complex(s).imag) > self.refine_above:
            key = h_for(s, self.g)
        with self._lock:
            if key not in self._cache:
                self._cache[key] = self._make(key)
            return self._cache[key]

    def _make(self, h):
        if h is not None:
            cover = refined_cover(self.g, h)
            try:
                if certified_n_op(self.g, cover, 1) == 1:
                    return OperatorAssembler(self.g, cover, self.K_refined, 1, self.M)
            except SeparationNotCertified:
                warnings.warn(f"refined cover at h={h} needs n_op > 1; using the coarse cover")
        return OperatorAssembler(self.g, coarse_cover(self.g), self.K, 1, self.M)

    def metadata(self, s: complex) -> dict:
        a = self.assembler(s)
        return {"K": a.K, "cover": "coarse" if a.cover.h is None else "refined",
                "h": a.cover.h, "N": a.cover.size}

    def _i_minus(self, s: complex, n: int = 1):
        a = self.assembler(s)
        m = a.matrix(s)
        mn = np.linalg.matrix_power(m, n) if n > 1 else m
        return a, m, np.eye(a.dim) - mn

    def value(self, s: complex, n: int = 1) -> tuple[complex, float]:
        """``(det(I - M^n), log|det|)``."""
        _, _, a = self._i_minus(s, n)
        phase, logabs = _slogdet(a)
        if logabs == -math.inf:
            return 0j, logabs
        return phase * math.exp(logabs) if logabs < 700 else phase * math.inf, logabs

    def log_derivative(self, s: complex, n: int = 1) -> complex:
        """``Z'/Z = -tr((I - M^n)^{-1} d(M^n)/ds)``."""
        asm, m, a = self._i_minus(s, n)
        dm = asm.derivative(s)
        if n > 1:
            powers = [np.eye(asm.dim)]
            for _ in range(n - 1):
                powers.append(powers[-1] @ m)
            dm = sum(powers[k] @ dm @ powers[n - 1 - k] for k in range(n))
        lu = scipy.linalg.lu_factor(a, check_finite=False)
        return complex(-np.trace(scipy.linalg.lu_solve(lu, dm, check_finite=False)))

    def log_derivative_many(self, points) -> np.ndarray:
        """``Z'/Z`` at each point, in input order; parallel when ``threads > 1``."""
        if self._pool is None:
            return np.array([self.log_derivative(x) for x in points])
        return np.array(list(self._pool.map(self.log_derivative, points)))

    def value_and_log_derivative(self, s: complex, n: int = 1) -> tuple[complex, complex]:
        return self.value(s, n)[0], self.log_derivative(s, n)


@lru_cache(maxsize=8)
def evaluator(g: SchottkyGroup, K: int = DEFAULT_K, K_refined: int = DEFAULT_K_REFINED,
              refine_above: float = REFINE_ABOVE, M: int | None = None) -> ZetaEvaluator:
    return ZetaEvaluator(g, K, K_refined, refine_above, M)


def zeta_det(g: SchottkyGroup, s: complex, K: int = DEFAULT_K, K_refined: int = DEFAULT_K_REFINED,
             refine_above: float = REFINE_ABOVE, M: int | None = None) -> ZetaValue:
    """``Z(s) = det(I - L_s)`` on the finite-rank operator."""
    ev = evaluator(g, K, K_refined, refine_above, M)
    val, logabs = ev.value(s)
    return ZetaValue(complex(s), val, logabs, "det", ev.metadata(s))


def zeta_det_power(g: SchottkyGroup, s: complex, n: int, K: int = DEFAULT_K,
                   K_refined: int = DEFAULT_K_REFINED, refine_above: float = REFINE_ABOVE,
                   M: int | None = None) -> ZetaValue:
    """``Z^{(n)}(s) = det(I - L_s^n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    ev = evaluator(g, K, K_refined, refine_above, M)
    val, logabs = ev.value(s, n)
    return ZetaValue(complex(s), val, logabs, "det", {**ev.metadata(s), "n": n})


def zeta_trace_exp(g: SchottkyGroup, s: complex, q_max: int = 12) -> ZetaValue:
    """``exp(-Σ_{q <= q_max} Tr(L_s^q) / q)`` from periodic-orbit traces."""
    terms = [trace_oracle(g, s, q) / q for q in range(1, q_max + 1)]
    if q_max >= 3 and abs(terms[-1]) > abs(terms[-2]) > abs(terms[-3]):
        warnings.warn(f"trace series not converging at s={s}", DivergenceWarning)
    total = math.fsum(t.real for t in terms) + 1j * math.fsum(t.imag for t in terms)
    val = cmath.exp(-total)
    return ZetaValue(complex(s), val, -total.real, "trace", {"q_max": q_max})


def letter_length_bound(g: SchottkyGroup) -> float:
    """Lower bound on geodesic length added per letter: ``min -log |γ_a'|``
    over the intervals ``I_i``, ``i != a`` (``|γ_a'|`` is monotone there, so
    endpoints suffice)."""
    worst = 0.0
    for a in range(1, 2 * g.p + 1):
        (_, _), (c, d) = g.mats[a - 1]
        for i, disc in enumerate(g.discs, start=1):
            if i == a:
                continue
            for x in disc.interval:
                worst = max(worst, (c * x + d) ** -2)
    return -math.log(worst)


def euler_cutoff_for_words(g: SchottkyGroup, n: int) -> float:
    """Largest length cutoff for which word length ``<= n`` enumerates every class."""
    return (n + 1) * letter_length_bound(g)


def _primitive_mask(words: np.ndarray) -> np.ndarray:
    n = words.shape[1]
    mask = np.ones(len(words), dtype=bool)
    for d in range(1, n):
        if n % d == 0:
            mask &= ~np.all(words == np.roll(words, d, axis=1), axis=1)
    return mask


def zeta_euler(g: SchottkyGroup, s: complex, len_cutoff: float) -> ZetaValue:
    """Product over primitive oriented classes with ``l <= len_cutoff``.

    Classes are enumerated up to the word length that guarantees every class
    below the cutoff is seen; factors with ``|e^{-(s+k) l}| < 1e-14`` are dropped.
    """
    s = complex(s)
    l0 = letter_length_bound(g)
    n_words = max(1, math.ceil(len_cutoff / l0) - 1)
    _, shortest = cyclic_word_table(g, 1)
    if len_cutoff <= shortest.min():
        raise CutoffTooSmall(f"cutoff {len_cutoff} below the shortest geodesic {shortest.min()}")
    re_parts, im_parts = [], []
    for n in range(1, n_words + 1):
        words, lengths = cyclic_word_table(g, n)
        keep = _primitive_mask(words) & (lengths <= len_cutoff)
        lengths = lengths[keep]
        if lengths.size == 0:
            continue
        k_max = max(0, math.ceil(-math.log(EULER_DROP) / lengths.min() - s.real))
        for k in range(k_max + 1):
            x = np.exp(-(s + k) * lengths)
            big = np.abs(x) >= EULER_DROP
            if not big.any():
                break
            # each primitive class appears once per rotation
            v = np.log1p(-x[big]) / n
            re_parts.append(math.fsum(v.real))
            im_parts.append(math.fsum(v.imag))
    total = math.fsum(re_parts) + 1j * math.fsum(im_parts)
    delta_bound = _delta_hint(g)
    tail = math.exp((delta_bound - s.real) * len_cutoff)
    return ZetaValue(s, cmath.exp(total), total.real, "euler",
                     {"len_cutoff": len_cutoff, "word_length": n_words, "tail_bound": tail})


@lru_cache(maxsize=8)
def _delta_hint(g: SchottkyGroup) -> float:
    from .dynamics import hausdorff_dimension

    return hausdorff_dimension(g).delta


def log_zeta_grid(g: SchottkyGroup, rect: tuple[float, float, float, float], spacing, K: int = DEFAULT_K,
                  n: int = 1, threads: int = 1, K_refined: int = DEFAULT_K_REFINED,
                  refine_above: float = REFINE_ABOVE, M: int | None = None) -> ZetaGrid:
    """``log|Z|`` and a continuous argument on a rectangular grid.

    ``rect = (sigma_min, sigma_max, t_min, t_max)``; ``spacing`` is a scalar
    or ``(dsigma, dt)``.  Rows (fixed ``sigma``) run in parallel.
    """
    s0, s1, t0, t1 = map(float, rect)
    if not (-2 <= s0 <= s1 <= 2 and max(abs(t0), abs(t1)) <= 200):
        raise ValueError("grid outside the desk bound sigma in [-2, 2], |t| <= 200")
    ds, dt = (spacing, spacing) if np.isscalar(spacing) else spacing
    sigmas = np.linspace(s0, s1, max(1, int(round((s1 - s0) / ds)) + 1)) if s1 > s0 else np.array([s0])
    ts = np.linspace(t0, t1, max(1, int(round((t1 - t0) / dt)) + 1)) if t1 > t0 else np.array([t0])

    def row(sig):
        ev = ZetaEvaluator(g, K, K_refined, refine_above, M)
        out = [ev.value(complex(sig, t), n) for t in ts]
        return [o[1] for o in out], [cmath.phase(o[0]) if o[0] != 0 else 0.0 for o in out]

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(row, sigmas))
    log_abs = np.array([r[0] for r in rows])
    arg = np.unwrap(np.array([r[1] for r in rows]), axis=1)
    grid = ZetaGrid(sigmas, ts, log_abs, arg, (float(ds), float(dt)))
    if not grid.resolved:
        warnings.warn(f"adjacent log|Z| differ by {grid.max_jump:.3g}; refine the spacing near zeros",
                      GridResolutionWarning, stacklevel=2)
    return grid
