import numpy as np
import pytest
from sklearn.base import clone
from sklearn.pipeline import make_pipeline

from advsep.attack import AttackSpec, generate_noise_set
from advsep.estimators import AdversarialNoise, LinearProbe, PerceptronCertifier, TwoLayerReLUClassifier
from advsep.model import LabeledDataset, forward, init_network, two_cluster_dataset
from advsep.numerics import make_rng


@pytest.fixture
def data():
    ds = two_cluster_dataset(60, 8, 1.0, make_rng(0))
    return ds.X, ds.y


@pytest.mark.parametrize("est", [TwoLayerReLUClassifier(width=32, lr=0.1, steps=5),
                                 AdversarialNoise(width=16, eta=0.5),
                                 PerceptronCertifier(max_epochs=7),
                                 LinearProbe(max_iter=10)])
def test_clone_and_params(est):
    c = clone(est)
    assert c.get_params() == est.get_params()
    c.set_params(**est.get_params())


def test_classifier_matches_functional_core(data):
    X, y = data
    clf = TwoLayerReLUClassifier(width=64, random_state=3).fit(X, y)
    p0 = init_network(8, 64, make_rng(3))
    assert np.array_equal(clf.init_params_.W, p0.W)
    assert np.allclose(clf.decision_function(X), forward(p0, X))
    assert set(clf.predict(X)) <= {-1, 1} and list(clf.classes_) == [-1, 1]


def test_classifier_trains(data):
    X, y = data
    clf = TwoLayerReLUClassifier(width=128, lr=0.5, steps=50, snapshot_every=10).fit(X, y)
    assert clf.score(X, y) >= 0.9
    assert [s.step for s in clf.snapshots_] == [0, 10, 20, 30, 40, 50]


def test_classifier_rejects_bad_labels(data):
    X, _ = data
    with pytest.raises(ValueError):
        TwoLayerReLUClassifier(width=8).fit(X, np.arange(len(X)) % 3)


def test_noise_transform_matches_core(data):
    X, y = data
    p = init_network(8, 32, make_rng(1))
    tr = AdversarialNoise(network=p, eta=0.3).fit(X, y)
    R = tr.transform(X, y)
    ns = generate_noise_set(p, LabeledDataset(X, y), AttackSpec("grad_l2", eta=0.3))
    assert np.allclose(R, ns.R)
    adv = AdversarialNoise(network=p, eta=0.3, output="adversarial").fit_transform(X, y)
    assert np.allclose(adv, X + 0.3 * ns.R)


def test_noise_needs_labels(data):
    X, y = data
    tr = AdversarialNoise(width=16).fit(X, y)
    with pytest.raises(ValueError, match="labels"):
        tr.transform(X)


def test_noise_accepts_fitted_classifier(data):
    X, y = data
    clf = TwoLayerReLUClassifier(width=16).fit(X, y)
    tr = AdversarialNoise(network=clf).fit(X, y)
    assert tr.params_ is clf.params_
    with pytest.raises(ValueError):
        AdversarialNoise(network=clf).fit(X[:, :4], y)


def test_perceptron_certifier_on_noise(data):
    X, y = data
    R = AdversarialNoise(width=256, random_state=2).fit(X, y).transform(X, y)
    cert = PerceptronCertifier().fit(R, y)
    assert cert.separable_
    assert np.all(cert.predict(R) == y)


def test_perceptron_undecided_has_no_scores():
    X = np.array([[1.0], [-1.0], [2.0]])
    cert = PerceptronCertifier(max_epochs=5).fit(X, [1, 1, -1])
    assert not cert.separable_
    with pytest.raises(ValueError):
        cert.decision_function(X)


def test_pipeline_noise_then_probe(data):
    X, y = data
    noise = AdversarialNoise(width=256, random_state=2).fit(X, y)
    R = noise.transform(X, y)
    pipe = make_pipeline(LinearProbe(max_iter=50)).fit(R, y)
    assert pipe.score(R, y) == 1.0
