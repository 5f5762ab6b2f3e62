"""Möbius algebra over Fuchsian Schottky data.

Letters are 1-based, ``1..2p``; letter ``p + i`` denotes the inverse of
generator ``i``.  A word ``(a_1, ..., a_n)`` stands for the composition
``γ_{a_1} ∘ ... ∘ γ_{a_n}`` (the last letter acts first).
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadLetter,
    BranchCutHit,
    ConfigInvalid,
    DegenerateDiscs,
    DiscsOverlap,
    NonUnitDeterminant,
    PairingViolated,
    PoleEncountered,
    WordLengthMismatch,
    ZeroEncountered,
)

BOUNDARY_POINTS = 64
PAIRING_TOL = 1e-8
GRID_POINTS = 64


@dataclass(frozen=True)
class Mobius:
    """Real Möbius map ``z -> (a z + b) / (c z + d)``."""

    a: float
    b: float
    c: float
    d: float

    @classmethod
    def identity(cls) -> "Mobius":
        return cls(1.0, 0.0, 0.0, 1.0)

    @classmethod
    def from_array(cls, m) -> "Mobius":
        m = np.asarray(m, dtype=float).reshape(2, 2)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def as_array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    def normalized(self) -> "Mobius":
        det = self.det
        if not det > 0:
            raise NonUnitDeterminant(f"determinant {det!r} cannot be scaled to +1")
        k = 1.0 / math.sqrt(det)
        return Mobius(self.a * k, self.b * k, self.c * k, self.d * k)

    def __matmul__(self, other: "Mobius") -> "Mobius":
        return Mobius(
            self.a * other.a + self.b * other.c,
            self.a * other.b + self.b * other.d,
            self.c * other.a + self.d * other.c,
            self.c * other.b + self.d * other.d,
        )

    def inverse(self) -> "Mobius":
        return Mobius(self.d, -self.b, -self.c, self.a)

    def __call__(self, z):
        return (self.a * z + self.b) / (self.c * z + self.d)

    def derivative(self, z):
        """``γ'(z) = det / (c z + d)^2``."""
        return self.det / (self.c * z + self.d) ** 2

    @property
    def trace(self) -> float:
        return self.a + self.d


@dataclass(frozen=True)
class Disc:
    center: float
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise DegenerateDiscs(f"radius must be positive, got {self.radius!r}")

    @property
    def interval(self) -> tuple[float, float]:
        return (self.center - self.radius, self.center + self.radius)

    def boundary(self, m: int = BOUNDARY_POINTS) -> np.ndarray:
        theta = 2 * np.pi * np.arange(m) / m
        return self.center + self.radius * np.exp(1j * theta)

    def contains(self, z, strict: bool = True) -> np.ndarray:
        dist = np.abs(np.asarray(z) - self.center)
        return dist < self.radius if strict else dist <= self.radius


@dataclass(frozen=True)
class SchottkyGroup:
    """Validated Schottky data; build with :func:`validate_schottky`."""

    p: int
    discs: tuple[Disc, ...]
    generators: tuple[Mobius, ...]
    elementary: bool = False
    margins: tuple[float, ...] = ()
    mats: np.ndarray = field(default=None, repr=False, compare=False)

    def inverse_letter(self, a: int) -> int:
        return a + self.p if a <= self.p else a - self.p

    def letter(self, a: int) -> Mobius:
        if not 1 <= a <= 2 * self.p:
            raise BadLetter(f"letter {a!r} outside 1..{2 * self.p}")
        if a <= self.p:
            return self.generators[a - 1]
        return self.generators[a - 1 - self.p].inverse()

    @property
    def r_min(self) -> float:
        return min(d.radius for d in self.discs)

    def to_json(self) -> dict:
        return {
            "p": self.p,
            "discs": [{"center": d.center, "radius": d.radius} for d in self.discs],
            "generators": [[m.a, m.b, m.c, m.d] for m in self.generators],
        }


@dataclass(frozen=True)
class BranchLog:
    """Value of the branch-consistent logarithm of ``γ'_α(z)``."""

    value: complex

    def power(self, s: complex) -> complex:
        return complex(np.exp(s * self.value))


def make_pairing(d_from: Disc, d_to: Disc) -> Mobius:
    """Canonical generator ``z -> c_to - r_from r_to / (z - c_from)``.

    Maps the boundary of ``d_from`` onto that of ``d_to`` and the interior of
    ``d_from`` onto the exterior of the closed ``d_to``.
    """
    rr = d_from.radius * d_to.radius
    if not rr > 0:
        raise DegenerateDiscs("radii product must be positive")
    m = Mobius(d_to.center, -d_from.center * d_to.center - rr, 1.0, -d_from.center)
    return m.normalized()


def validate_schottky(discs: Sequence, generators: Sequence) -> SchottkyGroup:
    """Check disc/generator data and return a :class:`SchottkyGroup`.

    ``discs`` holds ``Disc`` objects or ``(center, radius)`` pairs,
    ``generators`` holds ``Mobius`` objects or ``[a, b, c, d]`` rows; the
    generators are rescaled to unit determinant.
    """
    discs = tuple(d if isinstance(d, Disc) else Disc(float(d[0]), float(d[1])) for d in discs)
    p = len(generators)
    if p < 1 or len(discs) != 2 * p:
        raise PairingViolated(f"need 2p discs for p={p} generators, got {len(discs)}")
    gens = []
    for m in generators:
        m = m if isinstance(m, Mobius) else Mobius.from_array(m)
        gens.append(m.normalized())

    margins = []
    for i in range(2 * p):
        for j in range(i + 1, 2 * p):
            gap = abs(discs[i].center - discs[j].center) - discs[i].radius - discs[j].radius
            if gap <= 0:
                raise DiscsOverlap(f"closed discs {i + 1} and {j + 1} intersect (gap {gap:.3g})")
            margins.append(gap)

    for i, m in enumerate(gens):
        src, dst = discs[i], discs[i + p]
        # interior -> exterior forces the pole strictly inside the source disc
        if m.c == 0 or not abs(-m.d / m.c - src.center) < src.radius:
            raise PairingViolated(f"generator {i + 1} has no pole inside disc {i + 1}")
        img = m(src.boundary())
        err = np.max(np.abs(np.abs(img - dst.center) - dst.radius))
        if err > PAIRING_TOL * max(1.0, dst.radius):
            raise PairingViolated(f"generator {i + 1}: boundary image off by {err:.3g}")
        probe = src.center + 0.5 * src.radius
        if abs(m(probe) - dst.center) <= dst.radius:
            raise PairingViolated(f"generator {i + 1} maps interior of disc {i + 1} into disc {i + p + 1}")

    mats = np.empty((2 * p, 2, 2))
    for i, m in enumerate(gens):
        mats[i] = m.as_array()
        mats[i + p] = m.inverse().as_array()
    return SchottkyGroup(p, discs, tuple(gens), p == 1, tuple(margins), mats)


# -- fixtures ---------------------------------------------------------------

def cylinder(t: float = 1.0) -> SchottkyGroup:
    """Hyperbolic cylinder with closed geodesic of length ``2t`` (p = 1)."""
    c, r = math.cosh(t) / math.sinh(t), 1.0 / math.sinh(t)
    gen = Mobius(math.cosh(t), math.sinh(t), math.sinh(t), math.cosh(t))
    return validate_schottky([(-c, r), (c, r)], [gen])


def symmetric(centers: Sequence[float] = (-3.0, -1.0, 1.0, 3.0), radius: float = 0.5) -> SchottkyGroup:
    """Discs of equal radius; generator ``i`` pairs disc ``i`` with disc ``i + p``."""
    if len(centers) % 2:
        raise ConfigInvalid("need an even number of centers", "group.centers")
    discs = [Disc(float(c), float(radius)) for c in centers]
    p = len(discs) // 2
    gens = [make_pairing(discs[i], discs[i + p]) for i in range(p)]
    return validate_schottky(discs, gens)


def conjugate_group(g: SchottkyGroup, h: Mobius) -> SchottkyGroup:
    """Conjugate every generator by ``h`` and move the discs accordingly."""
    h = h.normalized()
    discs = []
    for d in g.discs:
        lo, hi = sorted(float(h(x)) for x in d.interval)
        discs.append(Disc(0.5 * (lo + hi), 0.5 * (hi - lo)))
    gens = [h @ m @ h.inverse() for m in g.generators]
    return validate_schottky(discs, gens)


_FIXTURE_RE = re.compile(r"^(\w+)(?::(.*))?$")


def _split_args(text: str) -> dict[str, str]:
    out, depth, key, buf = {}, 0, None, ""
    for ch in text + ",":
        if ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
        if ch == "," and depth == 0:
            if buf.strip():
                k, _, v = buf.partition("=")
                out[k.strip()] = v.strip()
            buf = ""
        else:
            buf += ch
    return out


def parse_fixture(spec: str) -> SchottkyGroup:
    """Build a group from ``cylinder:t=<real>`` or
    ``symmetric:p=<int>,centers=[c1,...],radius=<real>``.

    Centers may also be separated by ``;``.  A path to a JSON group file
    is accepted as well.
    """
    path = Path(spec)
    if spec.endswith(".json") or path.is_file():
        return load_group(path)
    m = _FIXTURE_RE.match(spec.strip())
    if not m:
        raise ConfigInvalid(f"unparseable fixture {spec!r}", "group")
    name, args = m.group(1), _split_args(m.group(2) or "")
    try:
        if name == "cylinder":
            return cylinder(float(args.get("t", 1.0)))
        if name == "symmetric":
            raw = args.get("centers", "[-3,-1,1,3]").strip("[]")
            centers = [float(x) for x in re.split(r"[;,\s]+", raw) if x]
            if "p" in args and int(args["p"]) * 2 != len(centers):
                raise ConfigInvalid(f"p={args['p']} needs {2 * int(args['p'])} centers", "group.centers")
            return symmetric(centers, float(args.get("radius", 0.5)))
    except ValueError as exc:
        raise ConfigInvalid(str(exc), "group") from exc
    raise ConfigInvalid(f"unknown fixture {name!r}", "group")


def load_group(path) -> SchottkyGroup:
    data = json.loads(Path(path).read_text())
    return group_from_json(data)


def group_from_json(data: dict) -> SchottkyGroup:
    try:
        discs = [(d["center"], d["radius"]) for d in data["discs"]]
        gens = [list(map(float, row)) for row in data["generators"]]
    except (KeyError, TypeError) as exc:
        raise ConfigInvalid(f"malformed group document ({exc})", "group") from exc
    g = validate_schottky(discs, gens)
    if "p" in data and int(data["p"]) != g.p:
        raise ConfigInvalid("p does not match generator count", "group.p")
    return g


# -- words ------------------------------------------------------------------

def _check_word(g: SchottkyGroup, w: Sequence[int]) -> tuple[int, ...]:
    w = tuple(int(a) for a in w)
    for a in w:
        if not 1 <= a <= 2 * g.p:
            raise BadLetter(f"letter {a!r} outside 1..{2 * g.p}")
    return w


def is_admissible(g: SchottkyGroup, w: Sequence[int]) -> bool:
    return all(b != g.inverse_letter(a) for a, b in zip(w, w[1:]))


def compose_word(g: SchottkyGroup, w: Sequence[int]) -> Mobius:
    """Matrix of ``γ_{w_1} ∘ ... ∘ γ_{w_n}``; the empty word gives the identity."""
    w = _check_word(g, w)
    m = np.eye(2)
    for a in w:
        m = m @ g.mats[a - 1]
        _renormalize(m[None])
    return Mobius.from_array(m)


RENORM_LIMIT = 1e8


def _renormalize(mats: np.ndarray) -> None:
    """Rescale a stack of matrices to unit determinant, in place.

    Skipped where ``|a d|`` exceeds ``RENORM_LIMIT``: there ``ad - bc`` is
    dominated by cancellation and rescaling by it would add error.
    """
    ad = mats[:, 0, 0] * mats[:, 1, 1]
    det = ad - mats[:, 0, 1] * mats[:, 1, 0]
    ok = np.abs(ad) <= RENORM_LIMIT
    mats[ok] /= np.sqrt(det[ok])[:, None, None]


def reverse_inverse(g: SchottkyGroup, w: Sequence[int]) -> tuple[int, ...]:
    return tuple(g.inverse_letter(a) for a in reversed(tuple(w)))


def word_derivative(g: SchottkyGroup, w: Sequence[int], z: complex) -> complex:
    """``γ'_w(z)`` as the chain-rule product of per-letter derivatives."""
    w = _check_word(g, w)
    der, y = 1.0 + 0j, complex(z)
    for a in reversed(w):
        (_, _), (c, d) = g.mats[a - 1]
        q = c * y + d
        if q == 0:
            raise PoleEncountered(f"pole of letter {a} hit at {y}")
        der /= q * q
        y = (g.mats[a - 1][0, 0] * y + g.mats[a - 1][0, 1]) / q
    return der


def _letter_log(q):
    """Principal logarithm of ``1 / q^2``; raises on the negative real axis."""
    sq = q * q
    if np.any((np.real(sq) < 0) & (np.abs(np.imag(sq)) <= 1e-14 * np.abs(sq))):
        raise BranchCutHit("derivative factor lies on the negative real axis")
    return -np.log(sq)


def branch_log_points(g: SchottkyGroup, w: Sequence[int], z) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``(γ_w(z), L(γ'_w(z)))`` for an array of points ``z``."""
    y = np.array(z, dtype=complex)
    total = np.zeros_like(y)
    for a in reversed(tuple(w)):
        (ma, mb), (mc, md) = g.mats[a - 1]
        q = mc * y + md
        if np.any(q == 0):
            raise PoleEncountered(f"pole of letter {a} hit")
        total += _letter_log(q)
        y = (ma * y + mb) / q
    return y, total


def branch_log_derivative(g: SchottkyGroup, w: Sequence[int], z: complex) -> BranchLog:
    w = _check_word(g, w)
    _, val = branch_log_points(g, w, np.array([z], dtype=complex))
    return BranchLog(complex(val[0]))


def enumerate_words(g: SchottkyGroup, n: int, j: int | None = None) -> Iterator[tuple[int, ...]]:
    """Lazily yield admissible words of length ``n`` in lexicographic order.

    With ``j`` given, words whose last letter equals ``j`` are skipped.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    letters = range(1, 2 * g.p + 1)
    stack: list[tuple[int, ...]] = [(a,) for a in reversed(letters)]
    while stack:
        w = stack.pop()
        if len(w) == n:
            if j is None or w[-1] != j:
                yield w
            continue
        forbidden = g.inverse_letter(w[-1])
        stack.extend(w + (a,) for a in reversed(letters) if a != forbidden)


def count_words(g: SchottkyGroup, n: int, j: int | None = None) -> int:
    """Exact count of admissible words via the transfer-matrix recursion."""
    q = 2 * g.p
    ends = np.ones(q, dtype=object)
    for _ in range(n - 1):
        total = sum(ends)
        ends = np.array([total - ends[g.inverse_letter(a + 1) - 1] for a in range(q)], dtype=object)
    return int(sum(ends) - (ends[j - 1] if j is not None else 0))


def word_table(g: SchottkyGroup, n: int) -> tuple[np.ndarray, np.ndarray]:
    """All admissible words of length ``n`` (lexicographic) and their matrices.

    Returns ``(words, mats)`` with ``words`` of shape ``(N, n)`` (1-based
    letters) and unit-determinant ``mats`` of shape ``(N, 2, 2)``.
    """
    q = 2 * g.p
    inv = np.array([g.inverse_letter(a) for a in range(1, q + 1)])
    words = np.arange(1, q + 1, dtype=np.int16)[:, None]
    mats = g.mats.copy()
    for _ in range(n - 1):
        last = words[:, -1]
        keep = np.arange(1, q + 1)[None, :] != inv[last - 1][:, None]
        rows, cols = np.nonzero(keep)
        words = np.concatenate([words[rows], (cols + 1).astype(np.int16)[:, None]], axis=1)
        mats = np.einsum("nij,njk->nik", mats[rows], g.mats[cols])
        _renormalize(mats)
    return words, mats


# -- diagnostics ------------------------------------------------------------

def min_c_entry(g: SchottkyGroup, n_max: int) -> float:
    """Minimum of ``|c|`` over nonidentity reduced words of length ``<= n_max``."""
    best = math.inf
    for n in range(1, n_max + 1):
        _, mats = word_table(g, n)
        best = min(best, float(np.min(np.abs(mats[:, 1, 0]))))
    if not best > 1e-14:
        raise ZeroEncountered(f"reduced word with c = {best!r}")
    return best


def _log_derivative_slope(g: SchottkyGroup, w: tuple[int, ...], x: float) -> float:
    # d/dx log γ'_w(x) via the chain rule over letters
    y, dy, total = float(x), 1.0, 0.0
    for a in reversed(w):
        (ma, mb), (mc, md) = g.mats[a - 1]
        q = mc * y + md
        total += -2.0 * mc / q * dy
        dy /= q * q
        y = (ma * y + mb) / q
    return total


def phase_derivative(g: SchottkyGroup, alpha: Sequence[int], beta: Sequence[int], x: float) -> float:
    """Derivative in ``x`` of ``log γ'_α(x) - log γ'_β(x)``."""
    alpha, beta = _check_word(g, alpha), _check_word(g, beta)
    if len(alpha) != len(beta):
        raise WordLengthMismatch(f"lengths {len(alpha)} and {len(beta)} differ")
    return _log_derivative_slope(g, alpha, x) - _log_derivative_slope(g, beta, x)


def phase_derivative_closed(g: SchottkyGroup, alpha: Sequence[int], beta: Sequence[int], x: float) -> float:
    """Closed form ``2 (c_β d_α - c_α d_β) / ((c_α x + d_α)(c_β x + d_β))``."""
    ma, mb = compose_word(g, alpha), compose_word(g, beta)
    return 2 * (mb.c * ma.d - ma.c * mb.d) / ((ma.c * x + ma.d) * (mb.c * x + mb.d))


@dataclass(frozen=True)
class DistortionReport:
    n: int
    theta_low: float
    theta_high: float
    M1_estimate: float

    # uniform hyperbolicity reads C^-1 θ̄^n <= sup|γ'_α| <= C θ^n with θ̄ < θ
    @property
    def theta(self) -> float:
        return self.theta_high

    @property
    def theta_bar(self) -> float:
        return self.theta_low


def interval_grid(d: Disc, m: int = GRID_POINTS) -> np.ndarray:
    lo, hi = d.interval
    return np.linspace(lo, hi, m)


def distortion_report(g: SchottkyGroup, n: int, chunk: int = 1 << 15) -> DistortionReport:
    """Empirical hyperbolicity rates and distortion constant at word length ``n``."""
    words, mats = word_table(g, n)
    lo, hi, m1 = math.inf, 0.0, 0.0
    for j in range(1, 2 * g.p + 1):
        x = interval_grid(g.discs[j - 1])
        sel = mats[words[:, -1] != j]
        for start in range(0, len(sel), chunk):
            c = sel[start:start + chunk, 1, 0][:, None]
            d = sel[start:start + chunk, 1, 1][:, None]
            q = np.abs(c * x[None, :] + d)
            rate = np.max(q ** -2.0, axis=1) ** (1.0 / n)
            lo, hi = min(lo, rate.min()), max(hi, rate.max())
            m1 = max(m1, float(np.max(2 * np.abs(c) / q)))
    return DistortionReport(n, float(lo), float(hi), m1)


def phase_lower_bound(g: SchottkyGroup, n: int, theta_bar: float) -> float:
    """``min |Φ'_{α,β}(x)| / θ̄^n`` over ``α != β`` in each ``W_n^j`` and grid ``x``."""
    words, mats = word_table(g, n)
    best = math.inf
    for j in range(1, 2 * g.p + 1):
        sel = mats[words[:, -1] != j]
        if len(sel) < 2:
            continue
        c, d = sel[:, 1, 0], sel[:, 1, 1]
        cross = np.abs(np.outer(d, c) - np.outer(c, d))
        np.fill_diagonal(cross, np.inf)
        for x in interval_grid(g.discs[j - 1]):
            q = np.abs(c * x + d)
            val = 2 * cross / np.outer(q, q)
            best = min(best, float(val.min()))
    return best / theta_bar ** n


def contraction_margin(g: SchottkyGroup, n: int) -> float:
    """Smallest gap between ``γ_α(∂D_j)`` and ``∂D_{α_1 + p}`` over ``α ∈ W_n^j``."""
    words, mats = word_table(g, n)
    worst = math.inf
    for j in range(1, 2 * g.p + 1):
        z = g.discs[j - 1].boundary(16)
        sel = words[:, -1] != j
        for w, m in zip(words[sel], mats[sel]):
            target = g.discs[g.inverse_letter(int(w[0])) - 1]
            img = (m[0, 0] * z + m[0, 1]) / (m[1, 0] * z + m[1, 1])
            worst = min(worst, float(np.min(target.radius - np.abs(img - target.center))))
    return worst


def cyclic_word_table(g: SchottkyGroup, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Cyclically admissible words of length ``n`` and their geodesic lengths.

    Each such word ``α`` has exactly one attracting fixed point ``x`` with
    ``γ_α'(x) = exp(-l_α)`` where ``l_α = 2 arccosh(|tr γ_α| / 2)``.
    """
    from .errors import NonHyperbolicElement

    words, mats = word_table(g, n)
    inv = np.array([g.inverse_letter(a) for a in range(1, 2 * g.p + 1)])
    keep = words[:, 0] != inv[words[:, -1] - 1]
    words, mats = words[keep], mats[keep]
    tr = np.abs(mats[:, 0, 0] + mats[:, 1, 1])
    if np.any(tr <= 2.0):
        raise NonHyperbolicElement("word with |trace| <= 2")
    return words, 2.0 * np.arccosh(0.5 * tr)
