"""scikit-learn compatible front end to the federated simulator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .config import config_from_dict
from .data import Dataset
from .model import predict_proba
from .simulator import Simulation


class FederatedClassifier(ClassifierMixin, BaseEstimator):
    """Softmax classifier trained by simulated one-class-per-client federated learning.

    ``fit`` gives every class to its own honest client and runs ``rounds``
    rounds of local SGD plus server aggregation. Sybil attackers can be
    injected through ``adversaries`` (same keys as the JSON config); their
    ``source_class``/``target_class`` are positions in ``classes_``.

    Parameters
    ----------
    aggregator : str or dict
        ``"fedavg"``, ``"krum"``, ``"multikrum"``, ``"foolsgold"``,
        ``"safl:<nu>"``, ``"safl:decay"``, or a full aggregator mapping.
    rounds : int
    learning_rate, batch_size, local_steps : client SGD settings
    server_lr : float
    hidden_dim : int
        0 for softmax regression, otherwise the ReLU hidden layer width.
    adversaries : list of dict, optional
    random_state : int
        Master seed; every random stream is derived from it.

    Attributes
    ----------
    classes_ : ndarray
    n_features_in_ : int
    model_ : ModelState
    history_ : list of RoundRecord
    """

    def __init__(
        self,
        aggregator="fedavg",
        rounds=300,
        learning_rate=0.25,
        batch_size=16,
        local_steps=1,
        server_lr=1.0,
        hidden_dim=0,
        adversaries=None,
        random_state=0,
    ):
        self.aggregator = aggregator
        self.rounds = rounds
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.local_steps = local_steps
        self.server_lr = server_lr
        self.hidden_dim = hidden_dim
        self.adversaries = adversaries
        self.random_state = random_state

    def _config(self, n_classes: int, n_features: int):
        return config_from_dict(
            {
                "seed": int(self.random_state),
                "rounds": int(self.rounds),
                "num_honest": n_classes,
                "server_lr": float(self.server_lr),
                "data": {"num_classes": n_classes, "input_dim": n_features},
                "model": {"hidden_dim": int(self.hidden_dim)},
                "local": {
                    "learning_rate": float(self.learning_rate),
                    "batch_size": int(self.batch_size),
                    "local_steps": int(self.local_steps),
                },
                "aggregator": self.aggregator,
                "adversaries": list(self.adversaries or []),
            }
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise ValueError("FederatedClassifier needs at least two classes")
        self.n_features_in_ = X.shape[1]
        cfg = self._config(self.classes_.size, X.shape[1])
        train = Dataset(X.copy(), encoded.astype(np.int64), self.classes_.size, "array")
        sim = Simulation(cfg, train, train)
        self.history_ = sim.run()
        self.model_ = sim.model
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict_proba(self.model_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]
