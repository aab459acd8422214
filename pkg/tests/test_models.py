import numpy as np
import pytest

from soarlab import diffcore as dc
from soarlab.models import (LinearRegressor, LogisticClassifier, MlpClassifier, load_checkpoint,
                            logistic_closed_forms, logistic_inner_max_closed_form, save_checkpoint)


def test_logistic_loss_at_origin_is_log2():
    m = LogisticClassifier([1.0, 0.0])
    assert dc.eval_loss(m, np.zeros(2), 1) == pytest.approx(np.log(2), abs=1e-15)


def test_logistic_closed_forms_match_autodiff(rng):
    for _ in range(20):
        d = rng.integers(1, 8)
        m = LogisticClassifier(rng.normal(size=d))
        x, y = rng.normal(size=d), rng.integers(0, 2)
        cf = logistic_closed_forms(m, x, y)
        np.testing.assert_allclose(cf.grad, dc.input_gradient(m, x, y), rtol=1e-10, atol=1e-14)
        fd_hess = dc.central_difference(lambda v: dc.input_gradient(m, v, y), x, 1e-5)
        np.testing.assert_allclose(cf.hessian, fd_hess, rtol=1e-5, atol=1e-9)


def test_logistic_probabilities_are_clipped():
    m = LogisticClassifier([100.0])
    p = m.predict_proba(np.array([[50.0]]))
    assert p[0, 0] >= 1e-12 and p[0, 1] <= 1 - 1e-12


def test_logistic_loss_stays_finite_when_saturated():
    m = LogisticClassifier([1.0])
    assert np.isfinite(dc.eval_loss(m, np.array([-800.0]), 1))


def test_inner_max_closed_form_at_zero_eps():
    m = LogisticClassifier([0.3, -1.2])
    x = np.array([0.5, 0.1])
    assert logistic_inner_max_closed_form(m, x, 1, 0.0) == dc.eval_loss(m, x, 1)


def test_mlp_probabilities_sum_to_one(rng):
    m = MlpClassifier(3, (7, 7), 4, seed=1)
    p = m.predict_proba(rng.normal(size=(5, 3)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    assert m.num_params == 3 * 7 + 7 + 7 * 7 + 7 + 7 * 4 + 4


def test_mlp_init_is_seeded():
    a, b = MlpClassifier(2, seed=5), MlpClassifier(2, seed=5)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_linear_regressor_is_not_a_classifier():
    with pytest.raises(TypeError):
        LinearRegressor([1.0]).predict_proba([[1.0]])


@pytest.mark.parametrize("model", [LogisticClassifier([0.2, -0.4]), MlpClassifier(2, (5,), 3, seed=2),
                                   LinearRegressor([1.0, 2.0])])
def test_checkpoint_roundtrip(tmp_path, model):
    path = tmp_path / "m.npz"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.descriptor() == model.descriptor()
    for k in model.params:
        np.testing.assert_array_equal(back.params[k], model.params[k])


def test_copy_is_independent():
    m = LogisticClassifier([1.0, 2.0])
    c = m.copy()
    c.params["w"][0] = 5.0
    assert m.params["w"][0] == 1.0
