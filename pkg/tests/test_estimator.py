import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from squeezetime import SyntheticVideoSpec, generate_dataset
from squeezetime.estimator import SqueezeTimeClassifier, check_labels, check_videos


@pytest.fixture(scope="module")
def videos():
    recs = generate_dataset(SyntheticVideoSpec(num_samples=3, resolution=(32, 32), length=8, object_size=4, seed=0))
    X = np.stack([r.frames for r in recs])
    y = np.array(["right", "left", "up", "down"])[[r.label for r in recs]]
    return X, y


@pytest.fixture(scope="module")
def fitted(videos):
    X, y = videos
    return SqueezeTimeClassifier(epochs=2, warmup_epochs=1, batch_size=4, clips_per_video=1, seed=1).fit(X, y)


def test_params_roundtrip_through_clone():
    est = SqueezeTimeClassifier(frames=2, epochs=5, n_clips=3)
    c = clone(est)
    assert c.get_params() == est.get_params()
    assert c.set_params(epochs=7).epochs == 7


def test_fit_predict_shapes_and_labels(fitted, videos):
    X, y = videos
    proba = fitted.predict_proba(X)
    assert proba.shape == (len(X), 4)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-6)
    assert set(fitted.predict(X)) <= set(y)
    assert list(fitted.classes_) == sorted(set(y))
    assert len(fitted.history_) == 2 and fitted.n_features_in_ == 3 * 8 * 32 * 32
    assert 0.0 <= fitted.score(X, y) <= 1.0


def test_transform_gives_pooled_features(fitted, videos):
    X, _ = videos
    assert fitted.transform(X[:2]).shape == (2, 64)


def test_fit_is_deterministic(videos, fitted):
    X, y = videos
    again = clone(fitted).fit(X, y)
    assert np.array_equal(again.predict_proba(X), fitted.predict_proba(X))


def test_unfitted_estimator_raises(videos):
    with pytest.raises(NotFittedError):
        SqueezeTimeClassifier().predict(videos[0])


def test_multiview_prediction(fitted, videos):
    X, _ = videos
    est = clone(fitted).set_params(n_clips=2, n_crops=3)
    est.model_, est.classes_ = fitted.model_, fitted.classes_
    assert est.predict_proba(X).shape == (len(X), 4)


@pytest.mark.parametrize("bad", [np.zeros((2, 3, 4, 8)), np.zeros((2, 1, 4, 8, 8)), np.zeros((0, 3, 4, 8, 8)),
                                 np.full((1, 3, 4, 8, 8), np.nan), np.zeros((1, 3, 4, 8, 8), dtype=object)])
def test_check_videos_rejects(bad):
    with pytest.raises(ValueError):
        check_videos(bad)


def test_check_videos_min_frames_and_labels():
    with pytest.raises(ValueError):
        check_videos(np.zeros((1, 3, 2, 4, 4)), min_frames=3)
    assert check_videos(np.zeros((1, 3, 2, 4, 4), dtype=np.float64)).dtype == np.float32
    with pytest.raises(ValueError):
        check_labels([0, 1], 3)


def test_single_class_is_rejected(videos):
    X, _ = videos
    with pytest.raises(ValueError):
        SqueezeTimeClassifier(epochs=1, warmup_epochs=0).fit(X[:4], np.zeros(4))
