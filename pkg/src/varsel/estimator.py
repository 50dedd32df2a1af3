"""scikit-learn style wrapper around the structure learner.

Rows of ``X`` are consecutive binary observation snapshots; columns are
BSVs.  ``fit`` learns a fresh model from the sequence, ``partial_fit``
continues it, and ``predict`` gives a one-step-ahead forecast per row.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .learning import build_model, process_environment_step
from .model import ACTIVE, Flag, Model, Polarity


class VarselLearner(BaseEstimator):
    """Learn a conditioning-SV model from a binary observation sequence.

    Parameters
    ----------
    feature_names : sequence of str, optional
        BSV names; defaults to ``x0, x1, ...``.
    action_columns : sequence of int, optional
        Column indices that hold actions.
    epsilon : float, optional
        Significance threshold; ``None`` disables filtering.
    """

    def __init__(self, feature_names=None, action_columns=(), epsilon=None):
        self.feature_names = feature_names
        self.action_columns = action_columns
        self.epsilon = epsilon

    def _names(self, n_features: int) -> list[str]:
        if self.feature_names is None:
            return [f"x{i}" for i in range(n_features)]
        names = [str(n) for n in self.feature_names]
        if len(names) != n_features:
            raise ValueError(f"expected {len(names)} features, got {n_features}")
        return names

    def _check(self, X) -> np.ndarray:
        X = check_array(X, dtype=None, ensure_min_samples=1)
        if not np.isin(X, (0, 1)).all():
            raise ValueError("X must be binary")
        return X.astype(bool)

    def _feed(self, X: np.ndarray, model: Model, learning: bool) -> None:
        for row in X:
            obs = dict(zip(self.names_, (bool(v) for v in row)))
            process_environment_step(model, obs, learning_enabled=learning, epsilon=self.epsilon)

    def fit(self, X, y=None):
        X = self._check(X)
        self.n_features_in_ = X.shape[1]
        self.names_ = self._names(self.n_features_in_)
        actions = {int(i) for i in self.action_columns}
        self.model_ = build_model(
            [n for i, n in enumerate(self.names_) if i not in actions],
            [n for i, n in enumerate(self.names_) if i in actions],
        )
        self._feed(X, self.model_, True)
        return self

    def partial_fit(self, X, y=None):
        if not hasattr(self, "model_"):
            return self.fit(X, y)
        X = self._check(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        self._feed(X, self.model_, True)
        return self

    def predict(self, X) -> np.ndarray:
        """Forecast of the next row for every row of ``X``.

        ``X`` is replayed on a copy of the model with learning off.  Events
        predicted by unconditional CSVs whose sources all hold are applied.
        The next action is unknown, so CSVs with action sources never fire
        and action columns are forecast as 0.
        """
        check_is_fitted(self, "model_")
        X = self._check(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        model = self.model_.copy()
        out = np.zeros_like(X, dtype=int)
        col = {model.by_name[n]: i for i, n in enumerate(self.names_)}
        for t, row in enumerate(X):
            self._feed(row[None, :], model, False)
            nxt = row.astype(int)
            for cid in sorted(model.csvs):
                csv = model.csvs[cid]
                if csv.flag is not Flag.UNCONDITIONAL:
                    continue
                if not all(model.svs[s].state is ACTIVE for s in csv.pos_sources):
                    continue
                if any(model.svs[s].state is ACTIVE for s in csv.neg_sources):
                    continue
                for target in csv.targets:
                    dsv = model.dsvs.get(target)
                    if dsv is not None:
                        nxt[col[dsv.owner]] = int(dsv.polarity is Polarity.ACTIVATION)
            for i in (int(a) for a in self.action_columns):
                nxt[i] = 0
            out[t] = nxt
        return out

    def score(self, X, y=None) -> float:
        """Fraction of next-row cells forecast correctly over ``X``."""
        X = self._check(X)
        if len(X) < 2:
            raise ValueError("need at least two rows to score")
        pred = self.predict(X)[:-1]
        return float((pred == X[1:].astype(int)).mean())
