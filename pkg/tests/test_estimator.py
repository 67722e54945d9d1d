import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from causalmask.estimator import CausalMaskClassifier


def data(rng, n=200, d=6):
    y = rng.integers(0, 2, n)
    X = rng.normal(size=(n, d)) * 0.3
    X[:, 0] += 2 * y - 1
    return X, np.where(y == 1, "fake", "real")


def test_params_round_trip():
    est = CausalMaskClassifier(alpha=0.3, max_epochs=5)
    assert est.get_params()["alpha"] == 0.3
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(beta=0.0)
    assert c.beta == 0.0


def test_fit_predict_transform(rng):
    X, y = data(rng)
    est = CausalMaskClassifier(max_epochs=20, batch_size=32).fit(X, y)
    assert set(est.classes_) == {"fake", "real"}
    proba = est.predict_proba(X)
    assert proba.shape == (200, 2) and np.allclose(proba.sum(axis=1), 1)
    assert est.score(X, y) > 0.9
    Z = est.transform(X)
    assert Z.shape == X.shape
    assert est.feature_mask_.shape == (6,)
    again = CausalMaskClassifier(max_epochs=20, batch_size=32).fit(X, y)
    assert np.array_equal(again.predict_proba(X), proba)


def test_input_validation(rng):
    X, y = data(rng)
    with pytest.raises(NotFittedError):
        CausalMaskClassifier().predict(X)
    with pytest.raises(ValueError):
        CausalMaskClassifier().fit(X, np.zeros(len(X)))
    est = CausalMaskClassifier(max_epochs=1).fit(X, y)
    with pytest.raises(ValueError):
        est.predict(X[:, :3])
    with pytest.raises(ValueError):
        est.predict(np.full((2, 6), np.nan))
