import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pivotdecode.contrast import (
    apply_pivot_gate,
    gated_subtract,
    init_gate,
    projection_coefficient,
    sigmoid,
)
from pivotdecode.errors import IndexOutOfRange, LengthMismatch, RangeError

# Independent scalar evaluation: 0.1 + 0.2 / (1 + exp(-1.0)).
GATE_AT_SIGMA_ONE = 0.24621171572600098

logits = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def vectors(n_min=1, n_max=32):
    return st.integers(n_min, n_max).flatmap(lambda n: arrays(np.float64, n, elements=logits))


@pytest.mark.parametrize("size,eps,expected", [
    (4, 0.1, [0.1] * 4),
    (1, 0.0, [0.0]),
    (3, 0.25, [0.25] * 3),
])
def test_init_gate(size, eps, expected):
    gate = init_gate(size, eps)
    assert gate.tolist() == expected
    assert not gate.flags.writeable


def test_init_gate_rejects_empty_vocab():
    with pytest.raises(RangeError):
        init_gate(0, 0.1)


def test_sigmoid_is_stable_at_extremes():
    assert sigmoid(0.0) == 0.5
    assert sigmoid(1000.0) == 1.0
    assert sigmoid(-1000.0) == 0.0


def test_pivot_gate_at_zero_conflict_logit():
    gate = apply_pivot_gate(init_gate(3, 0.1), [0.0, 0.0, 0.0], {1}, 0.2, 0.1)
    assert gate[1] == pytest.approx(0.2, abs=1e-15)
    assert gate[0] == gate[2] == 0.1


def test_pivot_gate_oracle_value():
    gate = apply_pivot_gate(init_gate(2, 0.1), [10.0, 0.0], {0}, 0.2, 0.1)
    assert gate[0] == pytest.approx(GATE_AT_SIGMA_ONE, abs=1e-15)


def test_empty_pivot_set_returns_gate_unchanged():
    base = init_gate(4, 0.1)
    assert apply_pivot_gate(base, np.arange(4.0), frozenset(), 0.2, 0.1) is base


def test_pivot_gate_does_not_mutate_input():
    base = np.full(3, 0.1)
    out = apply_pivot_gate(base, [5.0, 5.0, 5.0], {0, 2}, 0.2, 0.1)
    assert base.tolist() == [0.1, 0.1, 0.1]
    assert out[0] > 0.1


def test_pivot_gate_errors():
    with pytest.raises(LengthMismatch):
        apply_pivot_gate(init_gate(3, 0.1), [0.0, 0.0], {0}, 0.2, 0.1)
    with pytest.raises(IndexOutOfRange):
        apply_pivot_gate(init_gate(3, 0.1), [0.0] * 3, {3}, 0.2, 0.1)


@given(vectors(), st.data())
def test_gate_envelope(l_conf, data):
    n = l_conf.shape[0]
    pivots = data.draw(st.sets(st.integers(0, n - 1)))
    eps, beta = 0.1, 0.2
    gate = apply_pivot_gate(init_gate(n, eps), l_conf, pivots, beta, 0.1)
    for v in range(n):
        if v in pivots:
            assert eps <= gate[v] <= eps + beta
        else:
            assert gate[v] == eps


@given(st.floats(-100, 100), st.floats(0.01, 10))
def test_gate_strictly_increasing_in_conflict_logit(x, step):
    lo = apply_pivot_gate(init_gate(1, 0.1), [x], {0}, 0.2, 0.1)[0]
    hi = apply_pivot_gate(init_gate(1, 0.1), [x + step], {0}, 0.2, 0.1)[0]
    assert hi > lo


def test_projection_coefficient_examples():
    assert projection_coefficient([1.0, 2.0], [0.0, 1.0], 1e-12) == pytest.approx(2.0, rel=1e-11)
    assert projection_coefficient([5.0, -3.0], [0.0, 0.0], 1e-6) == 0.0
    assert projection_coefficient([3.0, 4.0], [3.0, 4.0], 1e-12) == pytest.approx(1.0, rel=1e-12)


def test_projection_coefficient_errors():
    with pytest.raises(LengthMismatch):
        projection_coefficient([1.0], [1.0, 2.0], 1e-6)
    with pytest.raises(RangeError):
        projection_coefficient([1.0], [1.0], 0.0)


def test_gated_subtract_orthogonal_residual():
    l_final, proj = gated_subtract([1.0, 2.0], [0.0, 1.0], [1.0, 1.0], 1e-12)
    assert l_final.tolist() == pytest.approx([1.0, 0.0], abs=1e-11)
    assert float(l_final @ np.array([0.0, 1.0])) == pytest.approx(0.0, abs=1e-11)
    assert proj.c == pytest.approx(2.0)
    assert proj.l_proj.tolist() == pytest.approx([0.0, 2.0])


def test_gated_subtract_zero_gate_is_identity():
    l_std = np.array([0.3, -1.2, 7.0])
    l_final, _ = gated_subtract(l_std, [1.0, 2.0, 3.0], np.zeros(3), 1e-6)
    assert np.array_equal(l_final, l_std)


def test_gated_subtract_self_projection_scales_by_one_minus_eps():
    l_final, proj = gated_subtract([2.0, 2.0], [2.0, 2.0], [0.1, 0.1], 1e-12)
    assert proj.c == pytest.approx(1.0, rel=1e-12)
    assert l_final.tolist() == pytest.approx([1.8, 1.8], rel=1e-12)


def test_gated_subtract_length_checks():
    with pytest.raises(LengthMismatch):
        gated_subtract([1.0, 2.0], [1.0, 2.0], [1.0], 1e-6)


def test_gated_subtract_without_projection_is_linear_contrast():
    l_std, l_conf = np.array([2.0, 1.0]), np.array([3.0, 0.0])
    l_final, proj = gated_subtract(l_std, l_conf, np.full(2, 1.0), 1e-6, project=False)
    assert proj.c == 1.0
    assert l_final.tolist() == [-1.0, 1.0]


@given(vectors(2), st.data())
def test_residual_closed_form(l_std, data):
    l_conf = data.draw(arrays(np.float64, l_std.shape[0], elements=logits))
    delta = 1e-6
    l_final, proj = gated_subtract(l_std, l_conf, np.ones_like(l_std), delta)
    dot = float(l_std @ l_conf)
    norm2 = float(l_conf @ l_conf)
    expected = abs(dot) * delta / (norm2 + delta)
    # Rounding in the two inner products is bounded by a few ulps of the
    # summed magnitudes, so the check is absolute at that scale.
    scale = float(np.abs(l_std) @ np.abs(l_conf)) + 1.0
    assert abs(float(l_final @ l_conf)) == pytest.approx(expected, abs=64 * np.finfo(float).eps * scale)
    assert np.array_equal(proj.l_proj, proj.c * l_conf)
    assert np.isfinite(proj.c)


def test_orthogonal_inputs_leave_standard_logits_untouched():
    l_std = np.array([1.0, 0.0, 2.0])
    l_conf = np.array([0.0, 5.0, 0.0])
    l_final, proj = gated_subtract(l_std, l_conf, np.full(3, 0.3), 1e-6)
    assert proj.c == 0.0
    assert np.array_equal(l_final, l_std)


@given(vectors(1, 16), st.data())
def test_operations_are_pure(l_std, data):
    l_conf = data.draw(arrays(np.float64, l_std.shape[0], elements=logits))
    gate = np.full(l_std.shape[0], 0.4)
    a, pa = gated_subtract(l_std, l_conf, gate, 1e-6)
    b, pb = gated_subtract(l_std, l_conf, gate, 1e-6)
    assert a.tobytes() == b.tobytes() and pa.c == pb.c
    g1 = apply_pivot_gate(gate, l_conf, {0}, 0.2, 0.1)
    g2 = apply_pivot_gate(gate, l_conf, {0}, 0.2, 0.1)
    assert g1.tobytes() == g2.tobytes()
