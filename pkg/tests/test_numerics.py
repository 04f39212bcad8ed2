"""Primitive ops: forward values, taped adjoints vs finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointhebb import numerics as nm
from pointhebb.numerics import Tape, Tensor


def _fd_scalar(f, theta, h=1e-6):
    """Independent central-difference gradient for a plain-numpy scalar f."""
    theta = np.asarray(theta, dtype=np.float64)
    g = np.zeros_like(theta)
    flat = theta.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += h
        hi = f(bumped.reshape(theta.shape))
        bumped[i] -= 2 * h
        lo = f(bumped.reshape(theta.shape))
        g.reshape(-1)[i] = (hi - lo) / (2 * h)
    return g


class TestScalarExamples:
    def test_relu_negative_branch(self):
        x = Tensor(np.array(-3.0), requires_grad=True)
        with Tape() as tape:
            y = nm.relu(x)
        assert y.item() == 0.0
        assert tape.gradient(y, [x])[0] == 0.0

    def test_tanh_at_zero(self):
        x = Tensor(np.array(0.0), requires_grad=True)
        with Tape() as tape:
            y = nm.tanh(x)
        assert y.item() == 0.0
        assert tape.gradient(y, [x])[0] == 1.0

    def test_sigmoid_extremes_are_finite(self):
        y = nm.sigmoid(Tensor(np.array([-1e4, 0.0, 1e4])))
        assert np.all(np.isfinite(y.data))
        np.testing.assert_allclose(y.data, [0.0, 0.5, 1.0], atol=1e-12)


class TestLinear:
    def test_forward_matches_numpy(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(5, 3))
        w = rng.normal(size=(4, 3))
        b = rng.normal(size=4)
        y = nm.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_array_equal(y.data, x @ w.T + b)

    def test_gradient_vs_central_difference(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=3)
        w0 = rng.normal(size=(4, 3))

        def loss(w):
            return nm.reduce_mean(nm.linear(Tensor(x), w))

        assert nm.finite_diff_check(loss, w0, h=1e-6) < 1e-6

    def test_shape_mismatch_raises(self):
        with pytest.raises(nm.ShapeError, match="linear"):
            nm.linear(Tensor(np.zeros(3)), Tensor(np.zeros((4, 2))))


# every taped primitive, exercised through a scalar loss and checked against
# central differences in double precision
_PRIMITIVE_CASES = {
    "relu": lambda t, aux: nm.reduce_mean(nm.relu(t)),
    "sigmoid": lambda t, aux: nm.reduce_mean(nm.sigmoid(t)),
    "tanh": lambda t, aux: nm.reduce_mean(nm.tanh(t)),
    "add": lambda t, aux: nm.reduce_mean(nm.add(t, Tensor(aux))),
    "mul": lambda t, aux: nm.reduce_mean(nm.mul(t, Tensor(aux))),
    "scale": lambda t, aux: nm.reduce_mean(nm.scale(t, 2.5)),
    "concat": lambda t, aux: nm.reduce_mean(nm.sigmoid(nm.concat(t, Tensor(aux)))),
    "max_over_rows": lambda t, aux: nm.reduce_mean(nm.max_over_rows(t)),
    "max_normalize_rows": lambda t, aux: nm.reduce_mean(
        nm.mul(nm.max_normalize_rows(t), Tensor(aux))
    ),
}


@pytest.mark.parametrize("name", sorted(_PRIMITIVE_CASES))
def test_primitive_adjoints_match_finite_differences(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    x = rng.uniform(0.2, 2.0, size=(4, 5))  # positive, away from kinks
    aux = rng.uniform(0.2, 2.0, size=(4, 5))
    f = _PRIMITIVE_CASES[name]
    err = nm.finite_diff_check(lambda t: f(t, aux), x, h=1e-6)
    assert err < 1e-4, f"{name}: fd mismatch {err}"


def test_tile_rows_adjoint():
    rng = np.random.default_rng(7)
    v = rng.normal(size=6)
    weights = rng.normal(size=(3, 6))

    def loss(t):
        return nm.reduce_mean(nm.mul(nm.tile_rows(t, 3), Tensor(weights)))

    assert nm.finite_diff_check(loss, v, h=1e-6) < 1e-6


class TestMaxOps:
    def test_max_over_rows_permutation_invariant_bitwise(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(10, 7)).astype(np.float32)
        base = nm.max_over_rows(Tensor(x)).data
        for seed in range(20):
            perm = np.random.default_rng(seed).permutation(10)
            np.testing.assert_array_equal(nm.max_over_rows(Tensor(x[perm])).data, base)

    def test_max_over_rows_ties_route_to_lowest_index(self):
        x = Tensor(np.array([[1.0, 2.0], [1.0, 2.0]]), requires_grad=True)
        with Tape() as tape:
            y = nm.reduce_mean(nm.max_over_rows(x))
        g = tape.gradient(y, [x])[0]
        np.testing.assert_array_equal(g, [[0.5, 0.5], [0.0, 0.0]])

    def test_max_normalize_zero_row_passthrough(self):
        x = np.array([[0.0, 0.0, 0.0], [1.0, 2.0, 4.0]])
        y = nm.max_normalize_rows(Tensor(x))
        np.testing.assert_array_equal(y.data[0], [0.0, 0.0, 0.0])
        np.testing.assert_allclose(y.data[1], [0.25, 0.5, 1.0])


class TestChamferOp:
    def test_hand_computed_pair(self):
        v, _, _ = nm.chamfer_forward(np.array([[0.0, 0.0]]), np.array([[0.3, 0.4]]))
        assert v == pytest.approx(0.25, abs=1e-12)

    def test_gradient_vs_central_difference(self):
        rng = np.random.default_rng(11)
        pred = rng.uniform(0.1, 0.9, size=(6, 2))
        target = rng.uniform(0.1, 0.9, size=(9, 2))

        def loss(t):
            return nm.chamfer_smooth_l1(t, target)

        assert nm.finite_diff_check(loss, pred, h=1e-7) < 1e-4

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            nm.chamfer_forward(np.zeros((0, 2)), np.zeros((3, 2)))


class TestTape:
    def test_forward_identical_with_and_without_taping(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3)).astype(np.float32)
        w = rng.normal(size=(6, 3)).astype(np.float32)

        def forward():
            return nm.relu(nm.linear(Tensor(x), Tensor(w, requires_grad=True))).data

        untaped = forward()
        with Tape():
            taped = forward()
        np.testing.assert_array_equal(untaped, taped)

    def test_reused_input_accumulates(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        with Tape() as tape:
            y = nm.add(nm.mul(x, x), x)  # x^2 + x
        assert tape.gradient(y, [x])[0] == pytest.approx(7.0)

    def test_untouched_source_gets_zero(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        other = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = nm.mul(x, x)
        assert np.all(tape.gradient(y, [other])[0] == 0.0)

    def test_gradient_of_intermediate_source(self):
        x = Tensor(np.array(2.0), requires_grad=True)
        with Tape() as tape:
            mid = nm.mul(x, x)
            y = nm.mul(mid, x)
        assert tape.gradient(y, [mid])[0] == pytest.approx(2.0)

    def test_nested_tapes_rejected(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_no_recording_without_requires_grad(self):
        with Tape() as tape:
            nm.relu(Tensor(np.ones(3)))
        assert len(tape) == 0


class TestFiniteDiffCheck:
    def test_quadratic_is_exact(self):
        def f(t):
            return nm.reduce_mean(nm.mul(t, t))

        assert nm.finite_diff_check(f, np.array([1.0, 2.0]), h=1e-5) < 1e-8

    def test_nonfinite_loss_rejected(self):
        def f(t):
            return Tensor(np.array(np.inf))

        with pytest.raises(ValueError, match="non-finite"):
            nm.finite_diff_check(f, np.ones(2))

    def test_matches_independent_fd_oracle(self):
        rng = np.random.default_rng(13)
        w = rng.normal(size=(3, 4))
        x = rng.normal(size=4)

        def taped(t):
            return nm.reduce_mean(nm.tanh(nm.linear(Tensor(x), t)))

        def plain(arr):
            return float(np.tanh(x @ arr.reshape(3, 4).T).mean())

        param = Tensor(w.copy(), requires_grad=True)
        with Tape() as tape:
            loss = taped(param)
        analytic = tape.gradient(loss, [param])[0]
        oracle = _fd_scalar(plain, w)
        np.testing.assert_allclose(analytic, oracle, rtol=1e-6, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-50, max_value=50, allow_nan=False),
        min_size=2,
        max_size=12,
    )
)
def test_primitives_keep_values_finite(values):
    x = Tensor(np.asarray(values, dtype=np.float64).reshape(1, -1))
    for op in (nm.relu, nm.sigmoid, nm.tanh, nm.max_normalize_rows):
        out = op(nm.relu(x) if op is nm.max_normalize_rows else x)
        assert np.all(np.isfinite(out.data))


def test_adam_descends_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = nm.Adam([p], lr=0.1)
    for _ in range(300):
        with Tape() as tape:
            loss = nm.reduce_mean(nm.mul(p, p))
        opt.step(tape.gradient(loss, [p]))
    assert np.all(np.abs(p.data) < 1e-2)
