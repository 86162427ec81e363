import numpy as np
import pytest

from roughmdp.errors import ValidationError
from roughmdp.fields import (
    CoefficientField,
    bilinear_field,
    build_field,
    central_difference,
    linear_field,
    tanh_field,
)


@pytest.fixture
def probes():
    return np.random.default_rng(0).normal(size=(6, 2))


@pytest.mark.parametrize(
    "field",
    [
        linear_field(2, 2, A=[[0.1, 0.2], [-0.3, 0.0]], c=[1.0, 0.0]),
        bilinear_field(3, 2, A=[[0.0, 1.0], [-1.0, 0.0]], S=np.ones((2, 3)), B=np.arange(12.0).reshape(2, 3, 2) / 10),
        tanh_field(2, 2, A=[[-1.0, 0.5], [0.0, -2.0]], S=[[1.0, 0.2], [0.0, 0.7]], gamma=0.4),
    ],
    ids=["linear", "bilinear", "tanh"],
)
def test_closed_derivatives_match_finite_differences(field, probes):
    errors = field.check_derivatives(probes)
    assert set(errors) == {"db", "d2b", "dsigma", "d2sigma", "d3sigma"}
    assert max(errors.values()) < 1e-4
    assert not field.finite_difference


def test_shapes_follow_convention(probes):
    f = tanh_field(3, 2)
    assert f.b(probes).shape == (6, 2)
    assert f.grad_b(probes).shape == (6, 2, 2)
    assert f.hess_b(probes).shape == (6, 2, 2, 2)
    assert f.sigma(probes).shape == (6, 2, 3)
    assert f.grad_sigma(probes).shape == (6, 2, 3, 2)
    assert f.hess_sigma(probes).shape == (6, 2, 3, 2, 2)
    assert f.third_sigma(probes).shape == (6, 2, 3, 2, 2, 2)


def test_finite_difference_fallback_is_flagged(probes):
    f = CoefficientField(d=1, e=2, b=lambda y: np.sin(y), sigma=lambda y: np.cos(y)[..., None])
    assert f.finite_difference
    expected = np.cos(probes)[..., :, None] * np.eye(2)
    np.testing.assert_allclose(f.grad_b(probes), expected, atol=1e-8)


def test_inconsistent_derivative_rejected(probes):
    f = CoefficientField(
        d=1, e=2, b=lambda y: y**2, db=lambda y: np.zeros(y.shape + (2,)),
        sigma=lambda y: np.ones(y.shape + (1,)),
    )
    with pytest.raises(ValidationError):
        f.check_derivatives(probes)


def test_central_difference_axis_last():
    jac = central_difference(lambda y: np.stack([y[..., 0] * y[..., 1], y[..., 0]], axis=-1), np.array([2.0, 3.0]))
    np.testing.assert_allclose(jac, [[3.0, 2.0], [1.0, 0.0]], atol=1e-9)


def test_bilinear_sigma():
    f = bilinear_field(1, 1, B=[[[1.0]]])
    assert f.sigma(np.array([2.5]))[0, 0] == 2.5
    assert f.grad_sigma(np.array([2.5]))[0, 0, 0] == 1.0


class TestRegistry:
    def test_build_by_name(self):
        f = build_field("linear", 2, 2, {"A": [[0.0, 1.0], [-1.0, 0.0]]})
        assert f.name == "linear"
        np.testing.assert_array_equal(f.b(np.array([1.0, 0.0])), [0.0, -1.0])

    def test_unknown_name(self):
        with pytest.raises(ValidationError) as info:
            build_field("cubic", 1, 1)
        assert info.value.field == "field.name"

    def test_unknown_param(self):
        with pytest.raises(ValidationError):
            build_field("linear", 1, 1, {"gamma": 0.1})

    def test_bad_shape_names_param(self):
        with pytest.raises(ValidationError) as info:
            build_field("linear", 2, 2, {"S": [[1.0, 0.0]]})
        assert info.value.field == "field.params.S"

    def test_tanh_gamma_range(self):
        with pytest.raises(ValidationError):
            build_field("tanh", 1, 1, {"gamma": 1.5})
