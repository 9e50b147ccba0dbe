import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from landsharp import nn
from landsharp.nn import ModelSpec, QuadraticModel, build_model, count_params, model_loss


def _batch(n=6, frames=12, seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 64, frames)).astype(np.float32), np.arange(n) % 10


def test_build_is_deterministic_and_seed_sensitive():
    a = build_model(ModelSpec("Mini10"), 42)
    b = build_model(ModelSpec("Mini10"), 42)
    c = build_model(ModelSpec("Mini10"), 43)
    assert all(a.params[k].tobytes() == b.params[k].tobytes() for k in a.params)
    assert any(a.params[k].tobytes() != c.params[k].tobytes() for k in a.params)


def test_batchnorm_buffers_start_at_zero_mean_unit_variance():
    s = build_model(ModelSpec("Mini14"), 0)
    for k, v in s.buffers.items():
        np.testing.assert_array_equal(v, 0.0 if k.endswith("mean") else 1.0)


def test_mini10_parameter_count():
    # conv 1->16, 16->16, 16->32, 32->32 (3x3, no bias); 4 BN layers; 32->10 linear
    expected = 144 + 2304 + 4608 + 9216 + 2 * (16 + 16 + 32 + 32) + 320 + 10
    assert count_params(ModelSpec("Mini10")) == expected == 16794


def test_mini14_has_three_blocks():
    shapes = nn.param_shapes(ModelSpec("Mini14"))
    assert shapes["block2.conv1.weight"] == (64, 64, 3, 3)
    assert shapes["fc.weight"] == (10, 64)


@pytest.mark.parametrize("bad", [dict(arch="Mini12"), dict(class_count=1),
                                 dict(arch="Quadratic", channel_widths=[])])
def test_invalid_specs(bad):
    with pytest.raises(ValueError):
        ModelSpec(**bad)


def test_untrained_loss_near_log_classes():
    s = build_model(ModelSpec("Mini10"), 42)
    assert abs(model_loss(s, _batch(), "eval") - math.log(10)) < 0.5


def test_eval_loss_is_pure():
    s = build_model(ModelSpec("Mini10"), 1)
    before = {k: v.copy() for k, v in s.buffers.items()}
    a = model_loss(s, _batch(), "eval")
    b = model_loss(s, _batch(), "eval")
    assert a == b
    assert all(np.array_equal(before[k], s.buffers[k]) for k in before)


def test_train_mode_updates_running_stats():
    s = build_model(ModelSpec("Mini10"), 1)
    model_loss(s, _batch(), "train")
    assert not np.all(s.buffers["block0.bn0.running_mean"] == 0)


def test_label_out_of_range():
    s = build_model(ModelSpec("Mini10"), 0)
    x, _ = _batch(2)
    with pytest.raises(ValueError, match="labels"):
        model_loss(s, (x, np.array([0, 10])), "eval")


def test_wrong_input_bins():
    s = build_model(ModelSpec("Mini10"), 0)
    with pytest.raises(ValueError):
        model_loss(s, (np.zeros((2, 32, 10), np.float32), np.array([0, 1])))


def test_confident_correct_logits_give_vanishing_loss():
    from landsharp.tensor import per_sample_cross_entropy
    logits = np.full((3, 10), -1e3)
    logits[np.arange(3), [1, 2, 3]] = 1e3
    assert per_sample_cross_entropy(logits, np.array([1, 2, 3])).max() < 1e-12


def test_quadratic_zero_at_center_and_gradient_zero():
    q = QuadraticModel(np.array([[1.0, 2.0], [3.0, -1.0]]), np.array([[1.0, 2.0], [0.5, 3.0]]))
    st_ = q.state()
    assert model_loss(st_, None) == 0.0
    _, _, grads = nn.loss_and_grads(st_, None)
    np.testing.assert_array_equal(grads["weight"], 0.0)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-10, 10)))
def test_quadratic_is_exactly_analytic(v):
    center = np.array([[0.5, -1.0, 2.0], [1.0, 0.0, -0.25]])
    curv = np.array([[1.0, 2.0, 0.5], [4.0, 0.25, 1.0]])
    q = QuadraticModel(center, curv)
    theta = center + v
    d = theta - center  # the offset that survives rounding, not v itself
    s = q.state().with_params({"weight": theta})
    assert model_loss(s, None) == pytest.approx(float(np.sum(curv * d * d)), rel=1e-12, abs=1e-300)


def test_quadratic_rejects_non_positive_curvature():
    with pytest.raises(ValueError):
        QuadraticModel(np.ones((1, 2)), np.array([1.0, 0.0]))


def test_filters_addressable_by_layer_and_index():
    s = build_model(ModelSpec("Mini10"), 0)
    filters = list(nn.iter_filters(s))
    layers = sorted({f[0] for f in filters})
    assert layers == [0, 1, 2, 3, 4]  # four convs and the linear head
    assert sum(1 for f in filters if f[0] == 4) == 10
    assert not any(f[2].endswith(("gamma", "beta", "bias")) for f in filters)


def test_copy_is_independent_and_fingerprint_tracks_params():
    s = build_model(ModelSpec("Mini10"), 0)
    c = s.copy()
    c.params["fc.bias"][0] += 1
    assert s.params["fc.bias"][0] == 0
    assert s.fingerprint() != c.fingerprint()
    assert s.fingerprint() == s.copy().fingerprint()


def test_gradients_have_parameter_shapes():
    s = build_model(ModelSpec("Mini14"), 0)
    loss, logits, grads = nn.loss_and_grads(s, _batch(4, 16))
    assert logits.shape == (4, 10)
    assert {k: g.shape for k, g in grads.items()} == {k: v.shape for k, v in s.params.items()}
