"""Scikit-learn style wrapper around the pipeline."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from drivedetect.estimator import BehaviorDetector
from drivedetect.taxonomy import NUM_CLASSES


def _fast_detector(**overrides):
    params = dict(
        variant="fusion-all",
        hidden_size=8,
        can_feature_dim=6,
        reduce_channels={"depth": 2, "seg": 2},
        segment_length=20,
        n_lanes=2,
        epochs=1,
        lr=1e-3,
        seed=0,
    )
    params.update(overrides)
    return BehaviorDetector(**params)


class TestSklearnProtocol:
    def test_get_params_round_trip(self):
        det = _fast_detector(epochs=3, lr=2e-3)
        params = det.get_params()
        rebuilt = BehaviorDetector(**params)
        assert rebuilt.get_params() == params

    def test_clone_preserves_params_drops_state(self, small_dataset):
        det = _fast_detector()
        det.fit(small_dataset)
        copy = clone(det)
        assert copy.get_params() == det.get_params()
        with pytest.raises(NotFittedError):
            copy.predict(small_dataset[:1])

    def test_set_params_chains(self):
        det = _fast_detector()
        assert det.set_params(epochs=5) is det
        assert det.get_params()["epochs"] == 5

    def test_unfitted_predict_rejected(self, small_dataset):
        with pytest.raises(NotFittedError):
            _fast_detector().predict(small_dataset[:1])
        with pytest.raises(NotFittedError):
            _fast_detector().predict_proba(small_dataset[:1])


@pytest.fixture(scope="module")
def fitted(small_dataset):
    det = _fast_detector()
    det.fit(small_dataset[:3])
    return det


class TestFitPredict:

    def test_fit_sets_learned_attributes(self, fitted, small_dataset):
        assert fitted.model_ is not None
        assert fitted.config_.variant.value == "fusion-all"
        assert fitted.n_steps_ > 0
        assert len(fitted.train_log_) > 0
        assert list(fitted.classes_) == list(range(NUM_CLASSES))

    def test_shapes_derived_from_data(self, fitted, small_dataset):
        first = small_dataset[0].frames[0]
        for name, arr in first.features.items():
            assert fitted.config_.stream_shapes[name] == arr.shape
        assert fitted.config_.can_dim == first.can.shape[0]

    def test_predict_shapes(self, fitted, small_dataset):
        test = small_dataset[3:]
        labels = fitted.predict(test)
        probs = fitted.predict_proba(test)
        assert len(labels) == len(test) == len(probs)
        for session, y, p in zip(test, labels, probs):
            assert y.shape == (len(session.frames),)
            assert p.shape == (len(session.frames), NUM_CLASSES)
            assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
            assert np.array_equal(y, p.argmax(axis=1))
            assert y.min() >= 0 and y.max() < NUM_CLASSES

    def test_single_session_accepted(self, fitted, small_dataset):
        one = fitted.predict(small_dataset[3])
        many = fitted.predict(small_dataset[3:4])
        assert np.array_equal(one[0], many[0])

    def test_score_matches_report(self, fitted, small_dataset):
        test = small_dataset[3:]
        score = fitted.score(test)
        report = fitted.evaluation_report(test)
        assert score == pytest.approx(report.mean_ap / 100.0)
        assert 0.0 <= score <= 1.0

    def test_refit_same_seed_is_deterministic(self, small_dataset):
        a = _fast_detector().fit(small_dataset[:3])
        b = _fast_detector().fit(small_dataset[:3])
        assert a.train_log_ == b.train_log_
        preds_a = a.predict(small_dataset[3:4])[0]
        preds_b = b.predict(small_dataset[3:4])[0]
        assert np.array_equal(preds_a, preds_b)

    def test_seed_changes_fit(self, small_dataset):
        a = _fast_detector().fit(small_dataset[:3])
        b = _fast_detector(seed=1).fit(small_dataset[:3])
        assert a.train_log_ != b.train_log_

    def test_variant_restricts_required_streams(self, small_dataset):
        det = _fast_detector(variant="depth-can", reduce_channels={"depth": 2})
        det.fit(small_dataset[:2])
        assert det.config_.variant.feature_streams == ("depth",)
        det.predict(small_dataset[2:3])
