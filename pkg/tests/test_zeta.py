import cmath
import warnings

import numpy as np
import pytest

from schottky_zeta.dynamics import hausdorff_dimension
from schottky_zeta.errors import CutoffTooSmall
from schottky_zeta.geometry import cylinder, symmetric
from schottky_zeta.zeta import (
    DivergenceWarning,
    GridResolutionWarning,
    ZetaEvaluator,
    euler_cutoff_for_words,
    letter_length_bound,
    log_zeta_grid,
    zeta_det,
    zeta_det_power,
    zeta_euler,
    zeta_trace_exp,
)

SYM = symmetric()
CYL = cylinder(1.0)


def cylinder_product(s, k_max=40):
    out = 1.0
    for k in range(k_max + 1):
        out *= (1 - cmath.exp(-2 * (s + k))) ** 2
    return out


def rel(a, b):
    return abs(a - b) / abs(a)


def test_cylinder_closed_form():
    assert abs(zeta_det(CYL, 1.0).value - cylinder_product(1.0)) < 1e-10
    s = 0.3 + 2j
    assert rel(zeta_det(CYL, s).value, cylinder_product(s)) < 1e-10


def test_zero_at_delta():
    d = hausdorff_dimension(SYM).delta
    assert abs(zeta_det(SYM, d).value) <= 1e-8


def test_real_value_at_three():
    v = zeta_det(SYM, 3.0).value
    assert abs(v.imag) < 1e-14 and 0 < v.real <= 1


def test_metadata_and_refined_selection():
    lo = zeta_det(SYM, 0.5 + 5j)
    hi = zeta_det(SYM, 0.5 + 30j)
    assert lo.truncation["cover"] == "coarse" and lo.truncation["K"] == 40
    assert hi.truncation["cover"] == "refined" and hi.truncation["h"] == 2.0 ** -5
    assert lo.method == "det"


@pytest.mark.parametrize("s", [0.7 + 4j, 0.2 + 25j, -0.3 + 1j])
def test_conjugate_symmetry_det(s):
    a, b = zeta_det(SYM, s).value, zeta_det(SYM, s.conjugate()).value
    assert abs(a - b.conjugate()) <= 1e-10 * max(1.0, abs(a))


def test_conjugate_symmetry_orbit_routes():
    s = 2 + 3j
    a, b = zeta_trace_exp(SYM, s).value, zeta_trace_exp(SYM, s.conjugate()).value
    assert abs(a - b.conjugate()) <= 1e-10
    cut = euler_cutoff_for_words(SYM, 8)
    a, b = zeta_euler(SYM, s, cut).value, zeta_euler(SYM, s.conjugate(), cut).value
    assert abs(a - b.conjugate()) <= 1e-10


def test_power_determinant():
    s = 0.4 + 1.5j
    assert zeta_det_power(SYM, s, 1).value == zeta_det(SYM, s).value
    # det(I - M^2) = prod(1 - λ^2) over the eigenvalues of M
    ev = ZetaEvaluator(CYL, 30)
    lam = np.linalg.eigvals(ev.assembler(s).matrix(s))
    expect = np.prod(1 - lam ** 2)
    got = ZetaEvaluator(CYL, 30).value(s, 2)[0]
    assert rel(got, expect) < 1e-10
    with pytest.raises(ValueError):
        zeta_det_power(SYM, s, 0)


def test_power_determinant_bounded_away_from_zero():
    ev = ZetaEvaluator(SYM, 24, 12)
    vals = [ev.value(complex(2.0, t), 4)[0].real for t in np.arange(0, 50.01, 0.1)]
    assert min(vals) > 0.5


@pytest.mark.parametrize("s,tol", [(2.0, 1e-8), (2 + 3j, 1e-6)])
def test_trace_route(s, tol):
    assert rel(zeta_det(SYM, s).value, zeta_trace_exp(SYM, s, 12).value) <= tol


def test_trace_route_cylinder():
    s = 2.0
    assert rel(cylinder_product(s), zeta_trace_exp(CYL, s, 20).value) < 1e-12


def test_trace_route_warns_outside_convergence():
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        zeta_trace_exp(SYM, -1.0, 6)
    assert any(issubclass(w.category, DivergenceWarning) for w in rec)


def test_euler_route():
    assert rel(zeta_det(CYL, 1.5).value, zeta_euler(CYL, 1.5, 60.0).value) < 1e-12
    assert abs(zeta_euler(SYM, 20.0, euler_cutoff_for_words(SYM, 4)).value - 1) < 1e-8
    with pytest.raises(CutoffTooSmall):
        zeta_euler(SYM, 2.0, 1.0)
    v = zeta_euler(SYM, 2.0, euler_cutoff_for_words(SYM, 6))
    assert v.truncation["word_length"] == 6 and v.truncation["tail_bound"] < 1e-10
    assert euler_cutoff_for_words(SYM, 6) == pytest.approx(7 * letter_length_bound(SYM))


def test_log_derivative_matches_finite_difference():
    ev = ZetaEvaluator(SYM, 30)
    s, h = 0.4 + 2j, 1e-5
    fd = (cmath.log(ev.value(s + h)[0]) - cmath.log(ev.value(s - h)[0])) / (2 * h)
    assert abs(ev.log_derivative(s) - fd) < 1e-7
    n2 = ev.log_derivative(s, 2)
    fd2 = (cmath.log(ev.value(s + h, 2)[0]) - cmath.log(ev.value(s - h, 2)[0])) / (2 * h)
    assert abs(n2 - fd2) < 1e-6


def test_grid():
    with pytest.warns(GridResolutionWarning):
        # the t = 0 row passes close to the real zero near 0.006
        grid = log_zeta_grid(SYM, (0.0, 0.4, -3.0, 3.0), (0.2, 0.25), K=24)
    assert grid.log_abs.shape == (3, 25) and not grid.resolved
    assert np.allclose(grid.log_abs, grid.log_abs[:, ::-1], atol=1e-10)
    # conjugation flips the argument; compare increments to drop unwrap offsets
    assert np.allclose(np.diff(grid.arg, axis=1), np.diff(grid.arg[:, ::-1], axis=1) * -1, atol=1e-8)
    fine = log_zeta_grid(SYM, (1.0, 1.5, 0.0, 4.0), 0.25, K=24)
    assert fine.resolved and fine.max_jump < 5
    single = log_zeta_grid(SYM, (0.5, 0.5, 2.0, 2.0), 0.1, K=24)
    v = ZetaEvaluator(SYM, 24).value(0.5 + 2j)[1]
    assert single.log_abs[0, 0] == pytest.approx(v, abs=1e-13)
    with pytest.raises(ValueError):
        log_zeta_grid(SYM, (0.0, 3.0, 0.0, 1.0), 0.5)


def test_grid_threads_identical():
    a = log_zeta_grid(SYM, (0.05, 0.35, 0.5, 2.5), 0.1, K=16, threads=1)
    b = log_zeta_grid(SYM, (0.05, 0.35, 0.5, 2.5), 0.1, K=16, threads=4)
    assert np.array_equal(a.log_abs, b.log_abs) and np.array_equal(a.arg, b.arg)
