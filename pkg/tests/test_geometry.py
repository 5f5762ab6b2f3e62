import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from schottky_zeta.errors import (
    BadLetter,
    ConfigInvalid,
    DegenerateDiscs,
    DiscsOverlap,
    NonUnitDeterminant,
    PairingViolated,
    WordLengthMismatch,
)
from schottky_zeta.geometry import (
    Disc,
    Mobius,
    branch_log_derivative,
    compose_word,
    conjugate_group,
    count_words,
    cylinder,
    distortion_report,
    enumerate_words,
    group_from_json,
    is_admissible,
    make_pairing,
    min_c_entry,
    parse_fixture,
    phase_derivative,
    phase_derivative_closed,
    phase_lower_bound,
    reverse_inverse,
    symmetric,
    validate_schottky,
    word_derivative,
    word_table,
    contraction_margin,
)

SYM = symmetric()
CYL = cylinder(1.0)

reals = st.floats(-3, 3, allow_nan=False)


def _sl2(a, b, c):
    # unit-determinant matrix from three entries, avoiding a ~ 0
    if abs(a) < 0.1:
        a = 0.1 + abs(a)
    return Mobius(a, b, c, (1 + b * c) / a)


@given(reals, reals, reals, reals, reals, reals)
def test_composition_is_associative_with_evaluation(a1, b1, c1, a2, b2, c2):
    f, g = _sl2(a1, b1, c1), _sl2(a2, b2, c2)
    z = 0.3 + 1.7j
    lhs = (f @ g)(z)
    rhs = f(g(z))
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(rhs))


@given(reals, reals, reals)
def test_inverse_undoes_map(a, b, c):
    f = _sl2(a, b, c)
    z = -0.4 + 0.9j
    assert abs(f.inverse()(f(z)) - z) <= 1e-8 * max(1.0, abs(z))


def test_normalized_rejects_nonpositive_det():
    with pytest.raises(NonUnitDeterminant):
        Mobius(0.0, 1.0, 1.0, 0.0).normalized()
    assert Mobius(2.0, 0.0, 0.0, 2.0).normalized().det == pytest.approx(1.0)


def test_cylinder_generator_maps_disc_boundary():
    m = CYL.generators[0]
    src, dst = CYL.discs
    img = m(src.boundary(32))
    assert np.max(np.abs(np.abs(img - dst.center) - dst.radius)) < 1e-12


def test_make_pairing_swaps_interior_and_exterior():
    d1, d2 = Disc(-1.0, 0.3), Disc(2.0, 0.4)
    m = make_pairing(d1, d2)
    assert m.det == pytest.approx(1.0)
    assert abs(m(-1.0 + 0.1) - 2.0) > 0.4
    assert np.allclose(np.abs(m(d1.boundary(16)) - 2.0), 0.4)


def test_validation_errors():
    with pytest.raises(DiscsOverlap):
        symmetric(centers=(-1.0, -0.5, 0.5, 1.0), radius=0.5)
    with pytest.raises(DegenerateDiscs):
        Disc(0.0, 0.0)
    m = make_pairing(Disc(-3, 0.5), Disc(1, 0.5))
    with pytest.raises(PairingViolated):
        validate_schottky([(-3, 0.5), (-1, 0.5), (1, 0.5), (3, 0.5)], [m, m])


def test_fixture_strings():
    assert parse_fixture("cylinder:t=1").p == 1
    assert parse_fixture("symmetric:p=2").discs == SYM.discs
    g = parse_fixture("symmetric:p=2,centers=[-3;-1;1;3],radius=0.25")
    assert g.r_min == 0.25
    with pytest.raises(ConfigInvalid):
        parse_fixture("torus:g=2")
    with pytest.raises(ConfigInvalid):
        parse_fixture("symmetric:p=3")


def test_group_json_roundtrip(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(SYM.to_json()))
    g = parse_fixture(str(path))
    assert g.discs == SYM.discs
    assert group_from_json(json.loads(path.read_text())).generators == SYM.generators


def test_conjugate_group_keeps_traces():
    h = Mobius(1.0, 0.5, 0.0, 1.0)
    g = conjugate_group(SYM, h)
    for w in [(1,), (1, 2), (2, 3, 2)]:
        assert abs(compose_word(g, w).trace) == pytest.approx(abs(compose_word(SYM, w).trace), rel=1e-10)


@pytest.mark.parametrize("n", [1, 2, 3, 5])
def test_word_counts(n):
    words = list(enumerate_words(SYM, n))
    assert len(words) == 4 * 3 ** (n - 1) == count_words(SYM, n)
    assert words == sorted(words)
    assert all(is_admissible(SYM, w) for w in words)
    assert len(list(enumerate_words(SYM, n, j=1))) == count_words(SYM, n, j=1)


def test_word_table_matches_enumeration():
    words, mats = word_table(SYM, 4)
    assert [tuple(int(a) for a in w) for w in words] == list(enumerate_words(SYM, 4))
    for w, m in zip(words[::17], mats[::17]):
        assert np.allclose(m, compose_word(SYM, [int(a) for a in w]).as_array(), rtol=1e-12)
    assert np.allclose(mats[:, 0, 0] * mats[:, 1, 1] - mats[:, 0, 1] * mats[:, 1, 0], 1.0)


def test_bad_letter():
    with pytest.raises(BadLetter):
        compose_word(SYM, [5])
    with pytest.raises(BadLetter):
        SYM.letter(0)


@settings(max_examples=30)
@given(st.lists(st.integers(1, 4), min_size=1, max_size=6))
def test_reverse_inverse_is_group_inverse(w):
    m = compose_word(SYM, w) @ compose_word(SYM, reverse_inverse(SYM, w))
    assert np.allclose(m.as_array() / np.sign(m.a), np.eye(2), atol=1e-8 * max(1, abs(m.a)))


def test_word_derivative_chain_rule_and_branch_log():
    w = (1, 2, 4)
    z = SYM.discs[0].center + 0.1j
    m = compose_word(SYM, w)
    assert word_derivative(SYM, w, z) == pytest.approx(m.derivative(z), rel=1e-10)
    bl = branch_log_derivative(SYM, w, z)
    assert np.exp(bl.value) == pytest.approx(m.derivative(z), rel=1e-10)
    assert bl.power(0.5) ** 2 == pytest.approx(m.derivative(z), rel=1e-10)


def test_phase_derivative_closed_form():
    for a, b in [((1, 2), (2, 3)), ((3, 3, 2), (2, 1, 1))]:
        x = 0.2
        assert phase_derivative(SYM, a, b, x) == pytest.approx(phase_derivative_closed(SYM, a, b, x), rel=1e-9)
    with pytest.raises(WordLengthMismatch):
        phase_derivative(SYM, (1,), (1, 2), 0.0)


def test_cylinder_contraction_rate_tends_to_exp_minus_two():
    # the generator is the same at every point only in the limit; the rate at
    # finite n is a sup over the interval and decreases towards e^{-2}
    rates = [distortion_report(CYL, n).theta_high for n in (1, 4, 10, 20)]
    assert all(x > y for x, y in zip(rates, rates[1:]))
    assert abs(rates[-1] - math.exp(-2)) < 0.01
    assert distortion_report(CYL, 10).theta_low == pytest.approx(distortion_report(CYL, 10).theta_high)


def test_diagnostics_positive():
    assert min_c_entry(CYL, 6) == pytest.approx(math.sinh(1.0))
    assert min_c_entry(SYM, 6) > 0
    assert contraction_margin(SYM, 3) > 0
    theta = distortion_report(SYM, 6).theta_bar
    assert phase_lower_bound(SYM, 3, theta) > 0
