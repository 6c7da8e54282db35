"""scikit-learn compatible wrappers around the functional core.

The network, the attack and the perceptron are exposed as estimators so they
compose with ``Pipeline``, ``clone`` and ``get_params``.  ``LinearProbe``
lives in :mod:`advsep.separability` and is re-exported here.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attack import AttackSpec, NoiseSet, adversarial_examples, generate_noise_set
from .model import LabeledDataset, NetworkParams, forward, init_network
from .numerics import make_rng
from .separability import LinearProbe, perceptron_decide
from .training import TrainConfig, gd_train

__all__ = ["TwoLayerReLUClassifier", "AdversarialNoise", "LinearProbe", "PerceptronCertifier"]


def _pm1_labels(y):
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    return y.astype(np.int64)


class TwoLayerReLUClassifier(ClassifierMixin, BaseEstimator):
    """Binary classifier ``sign(a^T relu(W x))`` trained by full-batch GD.

    Parameters
    ----------
    width : int, default=1024
        Number of hidden units ``m``.
    lr : float, default=0.05
        Learning rate.
    steps : int, default=0
        Gradient steps; ``0`` keeps the random initialization.
    snapshot_every : int, default=0
        Snapshot cadence (step 0 and the last step are always kept).
    layers : {"both", "readout", "hidden"}, default="both"
    temperature : float, default=1.0
    random_state : int, default=0
        Seed of the initialization.

    Attributes
    ----------
    init_params_ : NetworkParams
    params_ : NetworkParams
    snapshots_ : list of Snapshot
    classes_ : ndarray, always ``[-1, 1]``
    """

    def __init__(self, width=1024, lr=0.05, steps=0, snapshot_every=0, layers="both",
                 temperature=1.0, random_state=0):
        self.width = width
        self.lr = lr
        self.steps = steps
        self.snapshot_every = snapshot_every
        self.layers = layers
        self.temperature = temperature
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _pm1_labels(y)
        cfg = TrainConfig(self.lr, self.steps, self.snapshot_every, self.layers, self.temperature,
                          self.random_state)
        p0 = init_network(X.shape[1], self.width, make_rng(self.random_state))
        self.snapshots_ = gd_train(p0, LabeledDataset(X, y), cfg)
        self.init_params_ = p0
        self.params_ = self.snapshots_[-1].params
        self.classes_ = np.array([-1, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "params_")
        return forward(self.params_, check_array(X, dtype=np.float64))

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, 1, -1)


class AdversarialNoise(TransformerMixin, BaseEstimator):
    """Transform labeled inputs into their adversarial noises.

    ``network`` may be a :class:`NetworkParams`, a fitted
    :class:`TwoLayerReLUClassifier`, or ``None``, in which case ``fit`` draws a
    fresh random network of the given ``width`` from ``random_state``.

    The labels drive the attack, so ``transform`` needs ``y`` as well.  With
    ``output="adversarial"`` it returns ``x + eta r`` (``x + r`` for PGD)
    instead of the noise ``r``.
    """

    def __init__(self, network=None, method="grad_l2", eta=1.0, steps=1, epsilon=0.0, norm="l2",
                 temperature=1.0, width=1024, random_state=0, output="noise"):
        self.network = network
        self.method = method
        self.eta = eta
        self.steps = steps
        self.epsilon = epsilon
        self.norm = norm
        self.temperature = temperature
        self.width = width
        self.random_state = random_state
        self.output = output

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.output not in ("noise", "adversarial"):
            raise ValueError("output must be 'noise' or 'adversarial'")
        if self.network is None:
            params = init_network(X.shape[1], self.width, make_rng(self.random_state))
        elif isinstance(self.network, NetworkParams):
            params = self.network
        else:
            check_is_fitted(self.network, "params_")
            params = self.network.params_
        if params.d != X.shape[1]:
            raise ValueError(f"network expects {params.d} features, got {X.shape[1]}")
        self.params_ = params
        self.spec_ = AttackSpec(self.method, self.eta, self.steps, self.epsilon, self.norm, self.temperature)
        self.n_features_in_ = X.shape[1]
        return self

    def noise_set(self, X, y):
        check_is_fitted(self, "params_")
        if y is None:
            raise ValueError("adversarial noise needs the labels y")
        X, y = check_X_y(X, y, dtype=np.float64)
        return generate_noise_set(self.params_, LabeledDataset(X, _pm1_labels(y)), self.spec_)

    def transform(self, X, y=None):
        ns = self.noise_set(X, y)
        if self.output == "adversarial":
            return adversarial_examples(X, ns)
        return ns.R

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X, y)


class PerceptronCertifier(BaseEstimator):
    """Decide separability of ``{(r_i, y_i)}`` with the bias-free perceptron.

    After ``fit``, ``separable_`` is True when a certificate was found within
    ``max_epochs``; False means *undecided*, not inseparable.
    """

    def __init__(self, max_epochs=1000):
        self.max_epochs = max_epochs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        y = _pm1_labels(y)
        decision = perceptron_decide(NoiseSet(X, y, np.arange(len(y))), self.max_epochs)
        self.separable_ = decision.separable
        self.witness_ = None if decision.witness is None else decision.witness.v
        self.epochs_ = decision.epochs
        self.mistakes_ = decision.mistakes
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "separable_")
        if self.witness_ is None:
            raise ValueError("no certificate was found; nothing to score with")
        return check_array(X, dtype=np.float64) @ self.witness_

    def predict(self, X):
        return np.where(self.decision_function(X) > 0, 1, -1)
