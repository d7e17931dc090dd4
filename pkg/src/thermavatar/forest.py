"""Bagged Gini decision trees with per-tree voting.

Individual trees come from scikit-learn; bootstrap sampling, per-tree seeds
and the vote-fraction score are handled here so the score is literally the
fraction of trees voting for the positive class.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.tree import DecisionTreeClassifier

from .errors import SingleClass, TooFewCases


@dataclass
class ForestParams:
    n_trees: int = 200
    max_depth: int | None = None
    min_samples_leaf: int = 2
    seed: int = 0


@dataclass
class RandomForest:
    params: ForestParams = field(default_factory=ForestParams)
    trees: list = field(default_factory=list)
    n_features: int = 0

    def fit(self, x, y) -> "RandomForest":
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y).astype(np.int64)
        if x.shape[0] < 2:
            raise TooFewCases(f"need at least 2 cases, got {x.shape[0]}")
        if np.unique(y).size < 2:
            raise SingleClass("training labels contain a single class")
        n, d = x.shape
        self.n_features = d
        max_features = math.ceil(math.sqrt(d))
        rng = np.random.default_rng(self.params.seed)
        tree_seeds = rng.integers(0, 2**31 - 1, size=self.params.n_trees)
        self.trees = []
        for ts in tree_seeds:
            idx = rng.integers(0, n, size=n)
            tree = DecisionTreeClassifier(
                criterion="gini",
                max_depth=self.params.max_depth,
                min_samples_leaf=self.params.min_samples_leaf,
                max_features=max_features,
                random_state=int(ts),
            )
            tree.fit(x[idx], y[idx])
            self.trees.append(tree)
        return self

    def predict_score(self, x) -> np.ndarray:
        """Fraction of trees voting for class 1, one value per row."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, self.n_features)
        votes = np.zeros(x.shape[0])
        for tree in self.trees:
            votes += tree.predict(x) == 1
        return votes / len(self.trees)

    def predict(self, x) -> np.ndarray:
        return (self.predict_score(x) > 0.5).astype(np.int64)


def random_forest_fit(x, y, params: ForestParams | None = None) -> RandomForest:
    return RandomForest(params or ForestParams()).fit(x, y)


def random_forest_predict(model: RandomForest, row) -> tuple[int, float]:
    score = float(model.predict_score(np.asarray(row, dtype=np.float64).reshape(1, -1))[0])
    return int(score > 0.5), score
