import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from priorflow.flow import (
    CouplingLayer,
    FlowModel,
    NonFiniteError,
    TrainConfig,
    UnknownAttributeError,
    build_flow,
    coupling_forward,
    coupling_inverse,
    dumps_model,
    flow_forward,
    flow_inverse,
    load_model,
    log_prob,
    log_prob_all,
    nll,
    nll_and_grad,
    parameter_vector,
    save_model,
    train,
    with_parameter_vector,
)
from priorflow.numerics import MlpParams, init_mlp
from priorflow.priors import DiagonalGaussian, gaussian_log_pdf
from priorflow.synthlab import DatasetError, LatentDataset, generate_dataset
from priorflow.verify import jacobian_det_error


def _const_net(value):
    """Single affine layer with zero weights: outputs ``value`` regardless of input."""
    return MlpParams([np.zeros((1, 1))], [np.array([float(value)])])


def _randomised(model, seed=0, scale=0.3):
    rng = np.random.default_rng(seed)
    vec = parameter_vector(model, "fixed")
    return with_parameter_vector(model, vec + scale * rng.normal(size=vec.size), "fixed")


@pytest.fixture
def random_flow():
    m = build_flow(3, ["a", "b"], n_layers=4, hidden=(16,), seed=1)
    return _randomised(m, 2)


def test_identity_coupling():
    layer = CouplingLayer([True, False], _const_net(0.0), _const_net(0.0))
    z, ld = coupling_forward(layer, [0.4, -1.3])
    np.testing.assert_array_equal(z, [0.4, -1.3])
    assert ld == 0.0


def test_constant_coupling_hand_computed():
    raw = 2.0 * math.atanh(math.log(2.0) / 2.0)  # clamp(raw) = log 2
    layer = CouplingLayer([True, False], _const_net(raw), _const_net(1.0))
    z, ld = coupling_forward(layer, [1.0, 1.0])
    np.testing.assert_allclose(z, [1.0, 3.0], atol=1e-14)
    assert ld == pytest.approx(math.log(2.0), abs=1e-14)
    x, ild = coupling_inverse(layer, z)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-14)
    assert ild == pytest.approx(-math.log(2.0), abs=1e-14)


def test_scale_is_clamped():
    layer = CouplingLayer([True, False], _const_net(1e6), _const_net(0.0), scale_clamp=2.0)
    _, ld = coupling_forward(layer, [0.0, 1.0])
    assert ld == pytest.approx(2.0)


def test_bad_mask():
    with pytest.raises(ValueError):
        CouplingLayer([True, True], _const_net(0.0), _const_net(0.0))


def test_identity_initialised_flow_is_identity():
    m = build_flow(4, ["a"], seed=0)
    x = np.random.default_rng(0).normal(size=(10, 4))
    z, ld = flow_forward(m, x)
    np.testing.assert_array_equal(z, x)
    np.testing.assert_array_equal(ld, 0.0)


def test_log_det_matches_finite_differences(random_flow):
    x = np.random.default_rng(3).normal(size=(25, 3))
    assert jacobian_det_error(random_flow, x).max() < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-4, 4), min_size=3, max_size=3))
def test_round_trip_property(x):
    m = _randomised(build_flow(3, ["a"], n_layers=4, hidden=(8,), seed=0), 1)
    z, ld = flow_forward(m, np.array(x))
    back, ild = flow_inverse(m, z, return_log_det=True)
    np.testing.assert_allclose(back, x, atol=1e-10)
    assert ld + ild == pytest.approx(0.0, abs=1e-10)


def test_inverse_then_forward(random_flow):
    z = np.random.default_rng(4).normal(size=(100, 3)) * 2
    np.testing.assert_allclose(flow_forward(random_flow, flow_inverse(random_flow, z))[0], z, atol=1e-10)


def test_log_prob_at_prior_mode():
    m = build_flow(2, ["a"], seed=0)
    m.priors["a"] = DiagonalGaussian([0.0, 0.0], [1.0, 1.0])
    assert log_prob(m, "a", [0.0, 0.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_log_prob_integrates_to_one():
    m = _randomised(build_flow(2, ["a"], n_layers=4, hidden=(16,), seed=0), 5, 0.2)
    m.priors["a"] = DiagonalGaussian([0.2, -0.1], [0.8, 1.1])
    g = np.linspace(-8, 8, 401)
    xx, yy = np.meshgrid(g, g)
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    mass = np.exp(log_prob(m, "a", pts)).sum() * (g[1] - g[0]) ** 2
    assert mass == pytest.approx(1.0, abs=0.02)


def test_density_gap_is_flow_independent(random_flow):
    random_flow.priors["a"] = DiagonalGaussian([0, 0, 0], [1, 1, 1])
    random_flow.priors["b"] = DiagonalGaussian([1, -1, 0.5], [0.5, 2.0, 1.0])
    x = np.random.default_rng(0).normal(size=(50, 3))
    z, _ = flow_forward(random_flow, x)
    lat = log_prob_all(random_flow, x)
    pri = gaussian_log_pdf(random_flow.priors["a"], z) - gaussian_log_pdf(random_flow.priors["b"], z)
    np.testing.assert_allclose(lat[:, 0] - lat[:, 1], pri, atol=1e-10)


def test_unknown_attribute(random_flow):
    with pytest.raises(UnknownAttributeError, match="zzz"):
        log_prob(random_flow, "zzz", [0, 0, 0])


def test_non_finite_input_reports_layer():
    m = build_flow(2, ["a"], n_layers=2, hidden=(4,), seed=0)
    with pytest.raises(NonFiniteError, match="layer 0"):
        flow_forward(m, [[np.inf, 0.0]])


@pytest.mark.parametrize("prior_mode", ["learned", "fixed"])
def test_objective_gradient_matches_finite_differences(prior_mode):
    m = _randomised(build_flow(2, ["a", "b"], n_layers=1, hidden=(4,), seed=0), 7, 0.5)
    m.priors["a"] = DiagonalGaussian([0.3, -0.2], [0.9, 1.2])
    m.priors["b"] = DiagonalGaussian([-0.5, 0.4], [1.1, 0.7])
    rng = np.random.default_rng(8)
    x = rng.normal(size=(12, 2))
    labels = np.array(["a", "b"] * 6, dtype=object)
    _, grad = nll_and_grad(m, x, labels, prior_mode)
    vec = parameter_vector(m, prior_mode)
    fd = np.empty_like(vec)
    h = 1e-6
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = h
        up = nll(with_parameter_vector(m, vec + e, prior_mode), x, labels)
        down = nll(with_parameter_vector(m, vec - e, prior_mode), x, labels)
        fd[i] = (up - down) / (2 * h)
    rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
    assert rel <= 1e-4


def _two_blob_data(n=400, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal([-1, 0], 0.5, size=(n, 2)), rng.normal([1, 0.5], 0.7, size=(n, 2))])
    return LatentDataset(x, np.array(["a"] * n + ["b"] * n, dtype=object))


def test_training_reduces_loss_and_is_deterministic():
    data = _two_blob_data()
    m = build_flow(2, data.attributes, n_layers=2, hidden=(8,), seed=0)
    cfg = TrainConfig(epochs=15, batch_size=64, learning_rate=5e-3, seed=1)
    m1, trace1 = train(m, data, cfg)
    m2, trace2 = train(m, data, cfg)
    assert trace1 == trace2
    assert dumps_model(m1) == dumps_model(m2)
    assert trace1[-1] < trace1[0]
    # the input model is left untouched
    assert dumps_model(m) == dumps_model(build_flow(2, data.attributes, n_layers=2, hidden=(8,), seed=0))


def test_fixed_priors_stay_put():
    data = _two_blob_data()
    m = build_flow(2, data.attributes, n_layers=2, hidden=(8,), seed=0)
    m.priors["a"] = DiagonalGaussian([-1, 0], [0.5, 0.5])
    trained, _ = train(m, data, TrainConfig(epochs=3, prior_mode="fixed"))
    np.testing.assert_array_equal(trained.priors["a"].mean, [-1, 0])
    np.testing.assert_array_equal(trained.priors["a"].std, [0.5, 0.5])


def test_training_rejects_mismatches():
    data = _two_blob_data()
    with pytest.raises(ValueError):
        train(build_flow(3, ["a", "b"], seed=0), data)
    with pytest.raises(UnknownAttributeError):
        train(build_flow(2, ["a"], seed=0), data)
    with pytest.raises(ValueError):
        TrainConfig(prior_mode="sometimes")


def test_unbalanced_dataset_rejected():
    x = np.zeros((130, 2))
    with pytest.raises(DatasetError, match="unbalanced"):
        LatentDataset(x, np.array(["a"] * 80 + ["b"] * 50, dtype=object))


def test_serialization_round_trip(tmp_path, random_flow):
    random_flow.priors["a"] = DiagonalGaussian([0.1, 0.2, 0.3], [1.0, 0.5, 2.0])
    p1, p2 = tmp_path / "m1.json", tmp_path / "m2.json"
    save_model(random_flow, p1, note="x")
    loaded, meta = load_model(p1, with_meta=True)
    assert meta == {"note": "x"}
    save_model(loaded, p2, note="x")
    assert p1.read_bytes() == p2.read_bytes()
    x = np.random.default_rng(0).normal(size=(20, 3))
    np.testing.assert_array_equal(log_prob_all(loaded, x), log_prob_all(random_flow, x))


def test_truncated_model_file(tmp_path, random_flow):
    p = tmp_path / "m.json"
    save_model(random_flow, p)
    text = p.read_text()
    p.write_text(text[: len(text) // 2])
    with pytest.raises(ValueError, match="cannot parse"):
        load_model(p)
    p.write_text('{"format": "priorflow-model", "version": 1}')
    with pytest.raises(ValueError, match="incomplete"):
        load_model(p)
    p.write_text('{"format": "other"}')
    with pytest.raises(ValueError):
        load_model(p)
