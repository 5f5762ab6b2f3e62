"""Finite-rank transfer operators on Bergman spaces over disc covers.

The operator ``L_s`` acts on ``f = (f_ℓ)`` by
``(L_s f)_ℓ(z) = Σ (γ'_α(z))^s f_ℓ'(γ_α z)`` where the sum runs over the
branches ``α`` of length ``n_op`` admissible on the parent Schottky disc
of ``ℓ``.  Matrix entries are taken in the orthonormal monomial basis
``e_k = sqrt((k+1)/π) / r * ((z - c) / r)^k`` by sampling each image
function on the boundary circle of the target disc and applying an FFT.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ImageEscapesCover, RefinementBudgetExceeded, SeparationNotCertified
from .geometry import _renormalize, Disc, SchottkyGroup, branch_log_points, cyclic_word_table, word_table

H_MIN = 1e-4
MAX_REFINE_DEPTH = 80
MAX_LEAVES = 2_000_000


@dataclass(frozen=True)
class DiscCover:
    """Discs orthogonal to the real line, each owned by a Schottky disc.

    ``parents[ℓ]`` is the 1-based index of the Schottky disc containing
    disc ``ℓ``.  ``h`` is ``None`` for the coarse (Schottky) cover.
    """

    discs: tuple[Disc, ...]
    parents: tuple[int, ...]
    h: Optional[float] = None

    @property
    def size(self) -> int:
        return len(self.discs)

    @property
    def max_diam(self) -> float:
        return max(2 * d.radius for d in self.discs)

    @property
    def scale(self) -> float:
        return 1.0 if self.h is None else self.h

    def locate(self, lo: float, hi: float) -> tuple[int, float]:
        """Index of the cover disc whose interval contains ``[lo, hi]`` and the
        boundary gap, or ``(-1, -inf)``."""
        los = np.array([d.center - d.radius for d in self.discs])
        k = int(np.searchsorted(los, lo, side="right")) - 1
        if k < 0:
            return -1, -math.inf
        a, b = self.discs[k].interval
        gap = min(lo - a, b - hi)
        return (k, gap) if gap > 0 else (-1, gap)


def coarse_cover(g: SchottkyGroup) -> DiscCover:
    order = np.argsort([d.center for d in g.discs])
    return DiscCover(tuple(g.discs[i] for i in order), tuple(int(i) + 1 for i in order))


def _limit_intervals(g: SchottkyGroup, h: float, max_depth: int) -> list[tuple[float, float, int]]:
    """Word intervals ``γ_α(I_b)`` refined until each has length <= h / 4."""
    leaves = []
    stack = [(np.eye(2), b, 0, b) for b in range(1, 2 * g.p + 1)]
    while stack:
        w, b, depth, parent = stack.pop()
        lo, hi = g.discs[b - 1].interval
        x = (w[0, 0] * np.array([lo, hi]) + w[0, 1]) / (w[1, 0] * np.array([lo, hi]) + w[1, 1])
        a, z = sorted(x)
        if z - a <= h / 4:
            leaves.append((a, z, parent))
            if len(leaves) > MAX_LEAVES:
                raise RefinementBudgetExceeded(f"more than {MAX_LEAVES} leaf intervals at h={h}")
            continue
        if depth >= max_depth:
            raise RefinementBudgetExceeded(f"word length cap {max_depth} reached at h={h}")
        c = g.inverse_letter(b)
        wc = w @ g.mats[c - 1]
        _renormalize(wc[None])
        for e in range(1, 2 * g.p + 1):
            if e != c:
                stack.append((wc, e, depth + 1, parent))
    leaves.sort()
    return leaves


def refined_cover(g: SchottkyGroup, h: float, max_depth: int = MAX_REFINE_DEPTH) -> DiscCover:
    """Discs on the connected components of the ``h``-neighbourhood of the
    limit set, approximated by word intervals of length at most ``h / 4``."""
    if not 0 < h < g.r_min:
        raise ValueError(f"need 0 < h < {g.r_min}, got {h}")
    leaves = _limit_intervals(g, h, max_depth)
    comps: list[list] = []
    for a, b, parent in leaves:
        a, b = a - h, b + h
        if comps and a <= comps[-1][1]:
            if comps[-1][2] != parent:
                raise RefinementBudgetExceeded(f"h={h} merges limit pieces of different discs")
            comps[-1][1] = max(comps[-1][1], b)
        else:
            comps.append([a, b, parent])
    discs = tuple(Disc(0.5 * (a + b), 0.5 * (b - a)) for a, b, _ in comps)
    return DiscCover(discs, tuple(c[2] for c in comps), h)


def h_for(s: complex, g: SchottkyGroup) -> float:
    """Scale ``1/|Im s|`` clamped to ``[1e-4, r_min/4]`` and rounded down to a
    power of two so nearby ``s`` share one cover."""
    t = abs(complex(s).imag)
    h = 1.0 / t if t > 0 else math.inf
    h = min(max(h, H_MIN), g.r_min / 4)
    return 2.0 ** math.floor(math.log2(h))


@dataclass(frozen=True)
class Branch:
    source: int
    target: int
    word: tuple[int, ...]
    margin: float


def branch_table(g: SchottkyGroup, cover: DiscCover, n: int = 1) -> list[Branch]:
    """All ``(ℓ, α)`` with ``α ∈ W_n^{parent(ℓ)}`` and the disc receiving ``γ_α(D_ℓ)``."""
    words, mats = word_table(g, n)
    out = []
    for ell, (d, j) in enumerate(zip(cover.discs, cover.parents)):
        sel = words[:, -1] != j
        lo, hi = d.interval
        for w, m in zip(words[sel], mats[sel]):
            x = (m[0, 0] * np.array([lo, hi]) + m[0, 1]) / (m[1, 0] * np.array([lo, hi]) + m[1, 1])
            a, b = sorted(x)
            k, gap = cover.locate(a, b)
            if k < 0:
                raise ImageEscapesCover(f"γ_{tuple(int(v) for v in w)} maps disc {ell} outside the cover")
            out.append(Branch(ell, k, tuple(int(v) for v in w), gap))
    return out


def check_separation(g: SchottkyGroup, cover: DiscCover, n: int) -> float:
    """Smallest boundary gap of image discs, in units of ``h``."""
    return min(b.margin for b in branch_table(g, cover, n)) / cover.scale


def certified_n_op(g: SchottkyGroup, cover: DiscCover, n_max: int = 6) -> int:
    """Smallest branch length for which the cover is mapped into itself."""
    for n in range(1, n_max + 1):
        try:
            if check_separation(g, cover, n) > 0:
                return n
        except ImageEscapesCover:
            continue
    raise SeparationNotCertified(f"no n <= {n_max} maps the cover into itself")


@dataclass(frozen=True)
class BergmanBasisElement:
    disc: Disc
    k: int

    @property
    def norm(self) -> float:
        return math.sqrt((self.k + 1) / math.pi) / self.disc.radius

    def __call__(self, z):
        return self.norm * ((np.asarray(z) - self.disc.center) / self.disc.radius) ** self.k


@dataclass(frozen=True)
class DiscretizedTransferOperator:
    s: complex
    K: int
    cover: DiscCover
    matrix: np.ndarray = field(repr=False)
    n_op: int = 1

    def block(self, ell: int) -> slice:
        return slice(ell * self.K, (ell + 1) * self.K)


class OperatorAssembler:
    """Precomputes everything in the operator matrix that does not depend on ``s``.

    For fixed ``(group, cover, K, n_op)`` the image points, branch logarithms
    and basis values are stored once; :meth:`matrix` and :meth:`derivative`
    then cost one FFT per branch.
    """

    def __init__(self, g: SchottkyGroup, cover: DiscCover, K: int, n_op: int = 1, M: int | None = None):
        if K < 2:
            raise ValueError("K must be >= 2")
        self.g, self.cover, self.K, self.n_op = g, cover, K, n_op
        self.M = M or 4 * K
        self.branches = branch_table(g, cover, n_op)
        theta = 2 * np.pi * np.arange(self.M) / self.M
        unit = np.exp(1j * theta)
        k = np.arange(K)
        logs, basis = [], []
        for br in self.branches:
            src, dst = cover.discs[br.source], cover.discs[br.target]
            z = src.center + src.radius * unit
            w, lg = branch_log_points(g, br.word, z)
            u = (w - dst.center) / dst.radius
            basis.append(np.sqrt((k + 1) / np.pi) / dst.radius * u[:, None] ** k[None, :])
            logs.append(lg)
        self.logs = np.array(logs)
        self.basis = np.array(basis)
        self.src = np.array([b.source for b in self.branches])
        self.dst = np.array([b.target for b in self.branches])
        radii = np.array([d.radius for d in cover.discs])
        # coefficient of ((z-c)/r)^n  ->  coefficient of e_n
        self.rowscale = radii[self.src][:, None] * np.sqrt(np.pi / (k + 1))[None, :]

    @property
    def dim(self) -> int:
        return self.cover.size * self.K

    def _assemble(self, weights: np.ndarray) -> np.ndarray:
        vals = weights[:, :, None] * self.basis
        coef = np.fft.fft(vals, axis=1)[:, : self.K, :] / self.M
        coef *= self.rowscale[:, :, None]
        n = self.cover.size
        blocks = np.zeros((n, n, self.K, self.K), dtype=complex)
        np.add.at(blocks, (self.src, self.dst), coef)
        return blocks.transpose(0, 2, 1, 3).reshape(self.dim, self.dim)

    def matrix(self, s: complex) -> np.ndarray:
        return self._assemble(np.exp(complex(s) * self.logs))

    def derivative(self, s: complex) -> np.ndarray:
        return self._assemble(self.logs * np.exp(complex(s) * self.logs))

    def operator(self, s: complex) -> DiscretizedTransferOperator:
        return DiscretizedTransferOperator(complex(s), self.K, self.cover, self.matrix(s), self.n_op)


def build_operator(g: SchottkyGroup, cover: DiscCover, s: complex, K: int,
                   n_op: int = 1, M: int | None = None) -> DiscretizedTransferOperator:
    if cover.h is not None and check_separation(g, cover, n_op) <= 0:
        raise SeparationNotCertified(f"n_op={n_op} does not map the cover into itself")
    return OperatorAssembler(g, cover, K, n_op, M).operator(s)


def operator_derivative(g: SchottkyGroup, cover: DiscCover, s: complex, K: int,
                        n_op: int = 1, M: int | None = None) -> np.ndarray:
    """Matrix of ``d/ds`` of the discretised operator."""
    return OperatorAssembler(g, cover, K, n_op, M).derivative(s)


def operator_trace(op: DiscretizedTransferOperator, q: int = 1) -> complex:
    """Trace of the ``q``-th power of the operator matrix."""
    return complex(np.trace(np.linalg.matrix_power(op.matrix, q)))


def trace_oracle(g: SchottkyGroup, s: complex, q: int) -> complex:
    """``Tr L_s^q`` from periodic points: ``Σ λ^s / (1 - λ)`` with ``λ = e^{-l}``."""
    _, lengths = cyclic_word_table(g, q)
    lam = np.exp(-lengths)
    terms = np.exp(-complex(s) * lengths) / (1.0 - lam)
    order = np.argsort(-np.abs(terms))
    return complex(math.fsum(terms.real[order]), math.fsum(terms.imag[order]))


def coefficient_decay(op: DiscretizedTransferOperator) -> float:
    """Geometric rate of row-coefficient decay, fitted over degrees."""
    K, n = op.K, op.cover.size
    rows = np.abs(op.matrix).reshape(n, K, -1).max(axis=(0, 2))
    k = np.arange(K)
    good = rows > 1e-300
    slope = np.polyfit(k[good], np.log(rows[good]), 1)[0]
    return float(math.exp(slope))
