import numpy as np
import pytest

import oracles
from fpsearch import residual
from fpsearch.residual import (
    GradientReport,
    ResidualLayer,
    ResidualStack,
    backward,
    forward,
    gradient_decomposition,
    random_stack,
    zero_stack,
)


def linear_layer(weight, shortcut="identity", projection=None):
    weight = np.asarray(weight, dtype=float)
    return ResidualLayer(
        weight=weight,
        bias=np.zeros(weight.shape[0]),
        shortcut_kind=shortcut,
        projection=projection,
        nonlinearity="linear",
    )


class TestForward:
    def test_zero_h_is_identity_at_every_layer(self):
        stack = zero_stack([4, 4, 4, 4])
        x = np.array([0.3, -1.2, 0.0, 2.5])
        acts = forward(stack, x)
        for act in acts:
            assert np.array_equal(act, x)

    def test_single_linear_layer_is_w_plus_i(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(3, 3))
        stack = ResidualStack([linear_layer(w)])
        x = rng.normal(size=3)
        out = forward(stack, x)[-1]
        assert np.allclose(out, (w + np.eye(3)) @ x)

    def test_dimension_mismatch_raises(self):
        stack = zero_stack([4, 4])
        with pytest.raises(ValueError):
            forward(stack, np.zeros(5))

    def test_projection_shortcut_changes_dims(self):
        rng = np.random.default_rng(1)
        stack = random_stack([3, 5], rng)
        out = forward(stack, rng.normal(size=3))[-1]
        assert out.shape == (5,)

    def test_output_sensitivity_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        stack = random_stack([4, 4, 4, 4], rng)
        x = rng.normal(size=4)
        g = rng.normal(size=4)
        acts = forward(stack, x)
        analytic = backward(stack, acts, g)[0][0]
        numeric = oracles.stack_input_fd_gradient(stack, x, g)
        assert oracles.relative_error(analytic, numeric) <= 1e-6


class TestBackward:
    def test_zero_h_passes_gradient_through_unchanged(self):
        stack = zero_stack([4, 4, 4])
        x = np.array([1.0, -2.0, 3.0, 0.5])
        g = np.array([0.1, 0.2, -0.3, 0.4])
        acts = forward(stack, x)
        grads, _ = backward(stack, acts, g)
        for layer_grad in grads:
            assert np.array_equal(layer_grad, g)

    def test_single_linear_layer_analytic_gradient(self):
        rng = np.random.default_rng(3)
        w = rng.normal(size=(3, 3))
        stack = ResidualStack([linear_layer(w)])
        x = rng.normal(size=3)
        g = rng.normal(size=3)
        acts = forward(stack, x)
        grads, _ = backward(stack, acts, g)
        assert np.allclose(grads[0], (w + np.eye(3)).T @ g)

    def test_upstream_shape_mismatch_raises(self):
        stack = zero_stack([4, 4])
        acts = forward(stack, np.zeros(4))
        with pytest.raises(ValueError):
            backward(stack, acts, np.zeros(3))

    @pytest.mark.parametrize("dims", [[4, 4, 4, 4], [3, 5, 5, 2]])
    def test_input_gradient_matches_finite_differences(self, dims):
        rng = np.random.default_rng(4)
        stack = random_stack(dims, rng)
        x = rng.normal(size=dims[0])
        g = rng.normal(size=dims[-1])
        acts = forward(stack, x)
        analytic = backward(stack, acts, g)[0][0]
        numeric = oracles.stack_input_fd_gradient(stack, x, g)
        assert oracles.relative_error(analytic, numeric) <= 1e-6

    def test_weight_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        stack = random_stack([3, 5, 4], rng)
        x = rng.normal(size=3)
        g = rng.normal(size=4)
        acts = forward(stack, x)
        _, layer_grads = backward(stack, acts, g)

        def loss():
            return float(g @ forward(stack, x)[-1])

        for li, layer in enumerate(stack.layers):
            for arr, analytic in (
                (layer.weight, layer_grads[li].weight),
                (layer.bias, layer_grads[li].bias),
                (layer.projection, layer_grads[li].projection),
            ):
                if arr is None:
                    continue
                numeric = oracles.fd_gradient(loss, arr)
                assert oracles.relative_error(analytic, numeric) <= 1e-6


class TestGradientDecomposition:
    def test_zero_h_gives_zero_path_terms(self):
        stack = zero_stack([4, 4, 4])
        x = np.ones(4)
        g = np.array([1.0, -1.0, 2.0, 0.0])
        report = gradient_decomposition(stack, x, g)
        assert np.array_equal(report.direct_term, g)
        for term in report.path_terms:
            assert np.allclose(term, 0.0)
        assert np.array_equal(report.total_gradient, g)

    def test_single_linear_layer_single_path_term(self):
        rng = np.random.default_rng(6)
        w = rng.normal(size=(3, 3))
        stack = ResidualStack([linear_layer(w)])
        x = rng.normal(size=3)
        g = rng.normal(size=3)
        report = gradient_decomposition(stack, x, g)
        assert len(report.path_terms) == 1
        assert np.allclose(report.path_terms[0], w.T @ g)

    def test_three_layer_tanh_residual_below_1e8(self):
        rng = np.random.default_rng(7)
        stack = random_stack([5, 5, 5, 5], rng)
        report = gradient_decomposition(
            stack, rng.normal(size=5), rng.normal(size=5)
        )
        assert isinstance(report, GradientReport)
        assert report.max_abs_residual <= 1e-8
        recombined = report.direct_term + sum(report.path_terms)
        assert np.allclose(recombined, report.total_gradient, atol=1e-12)

    def test_projection_shortcut_rejected(self):
        rng = np.random.default_rng(8)
        stack = random_stack([3, 5], rng)
        with pytest.raises(ValueError, match="identity"):
            gradient_decomposition(stack, np.zeros(3), np.zeros(5))


class TestLayerValidation:
    def test_identity_requires_matching_dims(self):
        with pytest.raises(ValueError):
            ResidualLayer(weight=np.zeros((3, 4)), bias=np.zeros(3))

    def test_projection_requires_matrix(self):
        with pytest.raises(ValueError):
            ResidualLayer(
                weight=np.zeros((3, 4)),
                bias=np.zeros(3),
                shortcut_kind=residual.PROJECTION,
            )

    def test_stack_dims_must_chain(self):
        rng = np.random.default_rng(9)
        a = random_stack([3, 4], rng).layers[0]
        b = random_stack([5, 5], rng).layers[0]
        with pytest.raises(ValueError):
            ResidualStack([a, b])
