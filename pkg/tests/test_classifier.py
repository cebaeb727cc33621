import numpy as np
import pytest

import tensor_core as tc
from classifier import Classifier, train_classifier
from config import ClassifierConfig
from errors import DimensionError, PreconditionError


def test_classifier_separates_mixture(gmm_classifier, gmm_data):
    assert gmm_classifier.converged
    assert gmm_classifier.model.accuracy(gmm_data.data, gmm_data.labels) > 0.9


def test_predict_shape():
    model = Classifier.create(tc.RngStream(0), 4, 3, hidden=8)
    assert model.predict(np.zeros((5, 4))).shape == (5,)
    with pytest.raises(DimensionError):
        model.logits(np.zeros((5, 3)))


def test_state_round_trip():
    model = Classifier.create(tc.RngStream(0), 4, 3, hidden=8)
    again = Classifier.from_state(*model.to_state())
    x = np.ones((2, 4), dtype=np.float32)
    np.testing.assert_array_equal(model.logits(x).data, again.logits(x).data)


def test_training_needs_data():
    with pytest.raises(PreconditionError):
        train_classifier(np.zeros((0, 2)), np.zeros(0), 2, ClassifierConfig(steps=1), tc.RngStream(0))
