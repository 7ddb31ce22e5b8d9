"""Supervised model suite, k-fold cross-validation, and the baseline.

Six families trained from scratch on a standardized feature matrix:
least squares with a ridge term, logistic regression by full-batch
gradient descent, a linear SVM by stochastic subgradient (Pegasos),
k-nearest neighbors, a bagged random forest, and SAMME AdaBoost over
depth-limited trees. Every family emits a churn score in [0, 1]; only
score ordering matters for ROC, so margin-based families are squashed
through a sigmoid rather than calibrated.

Also provides the single-feature linear-discriminant baseline: an
exhaustive threshold sweep on the training-window inactivity fraction.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .labeling import LabelSet
from .matrix import FeatureMatrix
from .metrics import classification_metrics, roc_auc
from .tree import BaggedForest, DecisionTree

FAMILIES = ("linreg", "logreg", "linear_svm", "knn", "random_forest",
            "adaboost")

_DEFAULTS = {
    "linreg": {"ridge": 1e-4},
    "logreg": {"lr": 0.1, "l2": 1e-4, "epochs": 200},
    "linear_svm": {"lam": 1e-4, "epochs": 10},
    "knn": {"k": 15},
    "random_forest": {"n_trees": 100, "max_depth": 12},
    "adaboost": {"rounds": 100, "max_depth": 2},
}

_PARAM_CHECKS = {
    "ridge": lambda v: v >= 0,
    "lr": lambda v: v > 0,
    "l2": lambda v: v >= 0,
    "epochs": lambda v: v >= 1,
    "lam": lambda v: v > 0,
    "k": lambda v: v >= 1,
    "n_trees": lambda v: v >= 1,
    "max_depth": lambda v: v is None or v >= 1,
    "rounds": lambda v: v >= 1,
}


@dataclass(frozen=True)
class ModelSpec:
    family: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown model family {self.family!r}")
        defaults = _DEFAULTS[self.family]
        for key, value in self.params.items():
            if key not in defaults:
                raise ValueError(
                    f"{self.family}: unknown hyperparameter {key!r}")
            if not _PARAM_CHECKS[key](value):
                raise ValueError(
                    f"{self.family}: hyperparameter {key}={value!r} out of range")

    def resolved(self) -> dict:
        out = dict(_DEFAULTS[self.family])
        out.update(self.params)
        return out


@dataclass
class TrainedModel:
    family: str
    target: str                 # "binary" | "continuous"
    feature_names: list[str]
    mean: np.ndarray
    sd: np.ndarray              # raw per-feature sd; 0 marks constant columns
    params: dict
    seed: int
    fitted: dict
    loss_history: list[float] | None = None

    def standardize(self, X: np.ndarray) -> np.ndarray:
        sd_safe = np.where(self.sd > 0, self.sd, 1.0)
        return (X - self.mean) / sd_safe


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def logreg_loss(w, b, Z, y, l2) -> float:
    """Mean cross-entropy plus (l2/2)||w||^2; bias unregularized."""
    z = Z @ w + b
    per_row = np.logaddexp(0.0, z) - y * z
    return float(per_row.mean() + 0.5 * l2 * (w @ w))


def logreg_gradient(w, b, Z, y, l2):
    p = _sigmoid(Z @ w + b)
    gw = Z.T @ (p - y) / len(y) + l2 * w
    gb = float((p - y).mean())
    return gw, gb


def train(spec: ModelSpec, matrix: FeatureMatrix, labels: LabelSet,
          target: str = "binary") -> TrainedModel:
    """Fit one family on the matrix; features standardized internally."""
    if target not in ("binary", "continuous"):
        raise ValueError(f"unknown target {target!r}")
    if target == "continuous" and spec.family not in ("linreg", "random_forest"):
        raise ValueError(
            f"continuous target is only supported for linreg and "
            f"random_forest, not {spec.family}")
    if matrix.ego_ids != labels.ego_ids:
        raise ValueError("matrix rows and labels are not aligned")
    X = matrix.values
    if len(X) < 2:
        raise ValueError("need at least 2 rows to train")
    if not np.isfinite(X).all():
        raise ValueError("matrix contains non-finite values")
    if target == "binary":
        y = labels.churned.astype(np.float64)
        if y.min() == y.max():
            raise ValueError("binary training data has a single class")
    else:
        y = labels.pct_inactive_eval.astype(np.float64)

    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    sd_safe = np.where(sd > 0, sd, 1.0)
    Z = (X - mean) / sd_safe
    params = spec.resolved()

    model = TrainedModel(family=spec.family, target=target,
                         feature_names=list(matrix.feature_names),
                         mean=mean, sd=sd, params=params, seed=spec.seed,
                         fitted={})
    if spec.family == "logreg":
        model.fitted, model.loss_history = _fit_logreg(Z, y, params)
    elif spec.family == "linear_svm":
        model.fitted = _fit_svm(Z, y, params, spec.seed)
    elif spec.family == "linreg":
        model.fitted = _fit_linreg(Z, y, params)
    elif spec.family == "knn":
        model.fitted = {"Z": Z.copy(), "y": y.copy(), "k": params["k"]}
    elif spec.family == "random_forest":
        forest = BaggedForest(n_trees=params["n_trees"],
                              max_depth=params["max_depth"],
                              max_features="sqrt", bootstrap=True,
                              task="classify" if target == "binary" else "regress",
                              seed=spec.seed)
        forest.fit(Z, y)
        model.fitted = {"forest": forest}
    elif spec.family == "adaboost":
        model.fitted = _fit_adaboost(Z, y, params, spec.seed)
    return model


def _fit_logreg(Z, y, params):
    n, d = Z.shape
    w = np.zeros(d)
    b = 0.0
    lr, l2 = params["lr"], params["l2"]
    history = [logreg_loss(w, b, Z, y, l2)]
    for _ in range(params["epochs"]):
        gw, gb = logreg_gradient(w, b, Z, y, l2)
        w -= lr * gw
        b -= lr * gb
        history.append(logreg_loss(w, b, Z, y, l2))
    return {"w": w, "b": b}, history


def _fit_svm(Z, y, params, seed):
    n, d = Z.shape
    yy = 2.0 * y - 1.0
    lam = params["lam"]
    w = np.zeros(d)
    b = 0.0
    t = 0
    rng = np.random.default_rng(seed)
    for _ in range(params["epochs"]):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = yy[i] * (Z[i] @ w + b)
            w *= (1.0 - eta * lam)
            if margin < 1.0:
                w += eta * yy[i] * Z[i]
                b += eta * yy[i]
    return {"w": w, "b": b}


def _fit_linreg(Z, y, params):
    n, d = Z.shape
    ym = float(y.mean())
    lhs = Z.T @ Z / n + params["ridge"] * np.eye(d)
    rhs = Z.T @ (y - ym) / n
    beta = np.linalg.solve(lhs, rhs)
    return {"beta": beta, "intercept": ym}


def _fit_adaboost(Z, y, params, seed):
    n = len(y)
    w = np.full(n, 1.0 / n)
    alphas: list[float] = []
    trees: list[DecisionTree] = []
    eps = 1e-12
    for m in range(params["rounds"]):
        tree = DecisionTree(max_depth=params["max_depth"], task="classify",
                            rng=np.random.default_rng([seed, m]))
        tree.fit(Z, y, sample_weight=w)
        pred = tree.predict(Z)
        miss = pred != y
        err = float(w[miss].sum())
        if err >= 0.5:
            # weak-learner contract broken: halt with the rounds so far
            break
        if err <= 0.0:
            alphas.append(float(np.log((1.0 - eps) / eps)))
            trees.append(tree)
            break
        alpha = float(np.log((1.0 - err) / err))
        alphas.append(alpha)
        trees.append(tree)
        w = w * np.exp(alpha * miss)
        w /= w.sum()
    if not trees:
        raise ValueError("adaboost found no weak learner better than chance")
    return {"alphas": np.asarray(alphas), "trees": trees}


def predict_scores(model: TrainedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Per-ego churn score in [0, 1] for every row of the matrix."""
    for i, (want, got) in enumerate(zip(model.feature_names,
                                        matrix.feature_names)):
        if want != got:
            raise ValueError(
                f"feature column mismatch at {i}: model expects {want!r}, "
                f"matrix has {got!r}")
    if len(matrix.feature_names) != len(model.feature_names):
        raise ValueError(
            f"feature count mismatch: model expects "
            f"{len(model.feature_names)}, matrix has {len(matrix.feature_names)}")
    Z = model.standardize(matrix.values)
    f = model.fitted
    if model.family == "logreg":
        scores = _sigmoid(Z @ f["w"] + f["b"])
    elif model.family == "linear_svm":
        scores = _sigmoid(Z @ f["w"] + f["b"])
    elif model.family == "linreg":
        scores = np.clip(Z @ f["beta"] + f["intercept"], 0.0, 1.0)
    elif model.family == "knn":
        scores = _knn_scores(f["Z"], f["y"], f["k"], Z)
    elif model.family == "random_forest":
        scores = np.clip(f["forest"].predict_score(Z), 0.0, 1.0)
    elif model.family == "adaboost":
        signed = np.zeros(len(Z))
        for alpha, tree in zip(f["alphas"], f["trees"]):
            signed += alpha * (2.0 * tree.predict(Z) - 1.0)
        scores = _sigmoid(signed)
    else:
        raise ValueError(f"unknown family {model.family!r}")
    if not np.isfinite(scores).all():
        raise ValueError("model produced non-finite scores")
    return scores


def _knn_scores(Ztr, ytr, k, Zte, block: int = 512) -> np.ndarray:
    k = min(k, len(Ztr))
    tr_norm = (Ztr ** 2).sum(axis=1)
    out = np.empty(len(Zte))
    for start in range(0, len(Zte), block):
        B = Zte[start:start + block]
        d2 = (B ** 2).sum(axis=1)[:, None] + tr_norm[None, :] - 2.0 * B @ Ztr.T
        # stable sort keeps the lowest training index among tied distances
        nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start:start + block] = ytr[nearest].mean(axis=1)
    return out


# ---------------------------------------------------------------------------
# Cross-validation
# ---------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    accuracy: float = 0.0
    precision: float = 0.0
    recall: float = 0.0
    f_score: float = 0.0
    auc: float = 0.0
    flagged: str | None = None

    def as_dict(self) -> dict:
        out = {"fold": self.fold, "accuracy": self.accuracy,
               "precision": self.precision, "recall": self.recall,
               "f_score": self.f_score, "auc": self.auc}
        if self.flagged:
            out["flagged"] = self.flagged
        return out


@dataclass
class CvReport:
    family: str
    k: int
    seed: int
    hyperparameters: dict
    folds: list[FoldResult]

    def _mean(self, attr: str) -> float:
        vals = [getattr(f, attr) for f in self.folds if f.flagged is None]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def mean_accuracy(self) -> float:
        return self._mean("accuracy")

    @property
    def mean_auc(self) -> float:
        return self._mean("auc")

    def as_dict(self) -> dict:
        return {
            "family": self.family, "k": self.k, "seed": self.seed,
            "hyperparameters": {k: v for k, v in
                                sorted(self.hyperparameters.items())},
            "folds": [f.as_dict() for f in self.folds],
            "mean": {m: self._mean(m) for m in
                     ("accuracy", "precision", "recall", "f_score", "auc")},
        }


def kfold_cv(spec: ModelSpec, matrix: FeatureMatrix, labels: LabelSet,
             k: int, seed: int, threshold: float = 0.5) -> CvReport:
    """Shuffle rows by seed, split into k near-equal folds, train on k-1.

    A fold whose training part or test part lacks one of the classes is
    flagged and excluded from the means.
    """
    n = len(matrix.ego_ids)
    if not 2 <= k <= n:
        raise ValueError(f"k={k} outside 2..{n}")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    results = []
    y_all = labels.churned
    for fi, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != fi])
        res = FoldResult(fold=fi)
        if y_all[train_idx].min() == y_all[train_idx].max():
            res.flagged = "single-class training fold"
            results.append(res)
            continue
        if y_all[test_idx].min() == y_all[test_idx].max():
            res.flagged = "single-class test fold"
            results.append(res)
            continue
        sub_train = _take(matrix, labels, train_idx)
        sub_test = _take(matrix, labels, test_idx)
        model = train(spec, sub_train[0], sub_train[1], target="binary")
        scores = predict_scores(model, sub_test[0])
        rep = classification_metrics(scores, sub_test[1], threshold)
        _, auc = roc_auc(scores, sub_test[1])
        res.accuracy = rep.accuracy
        res.precision = rep.precision
        res.recall = rep.recall
        res.f_score = rep.f_score
        res.auc = auc
        results.append(res)
    return CvReport(family=spec.family, k=k, seed=seed,
                    hyperparameters=spec.resolved(), folds=results)


def _take(matrix: FeatureMatrix, labels: LabelSet, idx: np.ndarray):
    egos = [matrix.ego_ids[i] for i in idx]
    sub_m = FeatureMatrix(egos, list(matrix.feature_names),
                          matrix.values[idx])
    sub_l = LabelSet(egos, labels.churned[idx], labels.pct_inactive_eval[idx])
    return sub_m, sub_l


# ---------------------------------------------------------------------------
# Single-feature threshold baseline
# ---------------------------------------------------------------------------

_EPS = 1e-9


@dataclass
class BaselineResult:
    threshold: float
    accuracy: float
    curve: list[tuple[float, float]]  # (threshold, accuracy), ascending


def threshold_baseline(train_inactivity, labels) -> BaselineResult:
    """Best 'churner iff inactivity > t' classifier over all thresholds.

    Candidates are midpoints between consecutive distinct values plus
    sentinels just below 0 and above 1 (classify everyone / no one).
    Ties resolve to the smallest threshold. The sentinel candidates
    make the result at least as accurate as the majority class.
    """
    v = np.asarray(train_inactivity, dtype=float)
    y = np.asarray(getattr(labels, "churned", labels), dtype=bool)
    if len(v) == 0:
        raise ValueError("empty input")
    if len(v) != len(y):
        raise ValueError("values and labels differ in length")
    if np.any((v < 0) | (v > 1)):
        raise ValueError("inactivity values must lie in [0, 1]")
    order = np.argsort(v, kind="stable")
    vs, ys = v[order], y[order]
    n = len(v)
    # group boundaries of distinct sorted values
    starts = np.concatenate([[0], np.flatnonzero(np.diff(vs)) + 1])
    ends = np.concatenate([starts[1:], [n]])
    distinct = vs[starts]
    candidates = [-_EPS]
    candidates.extend((distinct[:-1] + distinct[1:]) / 2.0)
    candidates.append(1.0 + _EPS)

    curve = []
    correct = int(y.sum())  # threshold below everything: all churners
    best_t, best_acc = candidates[0], correct / n
    curve.append((candidates[0], correct / n))
    for gi in range(len(distinct)):
        group_churn = int(ys[starts[gi]:ends[gi]].sum())
        group_n = int(ends[gi] - starts[gi])
        # group values move from "> t" to "<= t"
        correct += (group_n - group_churn) - group_churn
        t = candidates[gi + 1]
        acc = correct / n
        curve.append((float(t), acc))
        if acc > best_acc:
            best_acc, best_t = acc, float(t)
    return BaselineResult(threshold=float(best_t), accuracy=float(best_acc),
                          curve=curve)


# ---------------------------------------------------------------------------
# Model artifact format (magic CFMD)
# ---------------------------------------------------------------------------

_MAGIC = b"CFMD"
_VERSION = 1


def _w_blob(fh, data: bytes) -> None:
    fh.write(struct.pack("<Q", len(data)))
    fh.write(data)


def _r_blob(fh) -> bytes:
    (n,) = struct.unpack("<Q", fh.read(8))
    return fh.read(n)


def _w_str(fh, s: str) -> None:
    _w_blob(fh, s.encode("utf-8"))


def _r_str(fh) -> str:
    return _r_blob(fh).decode("utf-8")


def _w_arr(fh, arr: np.ndarray, dtype: str) -> None:
    _w_blob(fh, np.ascontiguousarray(arr, dtype=dtype).tobytes())


def _r_arr(fh, dtype: str) -> np.ndarray:
    return np.frombuffer(_r_blob(fh), dtype=dtype).copy()


def _w_tree(fh, tree: DecisionTree) -> None:
    _w_str(fh, tree.task)
    _w_arr(fh, tree.feature, "<i8")
    _w_arr(fh, tree.threshold, "<f8")
    _w_arr(fh, tree.left, "<i8")
    _w_arr(fh, tree.right, "<i8")
    _w_arr(fh, tree.value, "<f8")


def _r_tree(fh) -> DecisionTree:
    tree = DecisionTree(task=_r_str(fh))
    tree.feature = _r_arr(fh, "<i8")
    tree.threshold = _r_arr(fh, "<f8")
    tree.left = _r_arr(fh, "<i8")
    tree.right = _r_arr(fh, "<i8")
    tree.value = _r_arr(fh, "<f8")
    return tree


def save_model(model: TrainedModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<B", _VERSION))
        _w_str(fh, model.family)
        _w_str(fh, model.target)
        _w_str(fh, "\n".join(model.feature_names))
        _w_arr(fh, model.mean, "<f8")
        _w_arr(fh, model.sd, "<f8")
        fh.write(struct.pack("<q", model.seed))
        _w_str(fh, json.dumps(model.params, sort_keys=True))
        f = model.fitted
        if model.family in ("logreg", "linear_svm"):
            _w_arr(fh, f["w"], "<f8")
            fh.write(struct.pack("<d", f["b"]))
        elif model.family == "linreg":
            _w_arr(fh, f["beta"], "<f8")
            fh.write(struct.pack("<d", f["intercept"]))
        elif model.family == "knn":
            fh.write(struct.pack("<Q", f["k"]))
            _w_arr(fh, f["y"], "<f8")
            fh.write(struct.pack("<QQ", *f["Z"].shape))
            _w_arr(fh, f["Z"], "<f8")
        elif model.family == "random_forest":
            trees = f["forest"].trees
            fh.write(struct.pack("<Q", len(trees)))
            _w_str(fh, f["forest"].task)
            for tree in trees:
                _w_tree(fh, tree)
        elif model.family == "adaboost":
            _w_arr(fh, f["alphas"], "<f8")
            for tree in f["trees"]:
                _w_tree(fh, tree)


def load_model(path: str) -> TrainedModel:
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a CFMD model file")
        (version,) = struct.unpack("<B", fh.read(1))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        family = _r_str(fh)
        target = _r_str(fh)
        names_blob = _r_str(fh)
        feature_names = names_blob.split("\n") if names_blob else []
        mean = _r_arr(fh, "<f8")
        sd = _r_arr(fh, "<f8")
        (seed,) = struct.unpack("<q", fh.read(8))
        params = json.loads(_r_str(fh))
        model = TrainedModel(family=family, target=target,
                             feature_names=feature_names, mean=mean, sd=sd,
                             params=params, seed=seed, fitted={})
        if family in ("logreg", "linear_svm"):
            w = _r_arr(fh, "<f8")
            (b,) = struct.unpack("<d", fh.read(8))
            model.fitted = {"w": w, "b": b}
        elif family == "linreg":
            beta = _r_arr(fh, "<f8")
            (intercept,) = struct.unpack("<d", fh.read(8))
            model.fitted = {"beta": beta, "intercept": intercept}
        elif family == "knn":
            (kk,) = struct.unpack("<Q", fh.read(8))
            yv = _r_arr(fh, "<f8")
            rows, cols = struct.unpack("<QQ", fh.read(16))
            Z = _r_arr(fh, "<f8").reshape(rows, cols)
            model.fitted = {"k": int(kk), "y": yv, "Z": Z}
        elif family == "random_forest":
            (n_trees,) = struct.unpack("<Q", fh.read(8))
            task = _r_str(fh)
            forest = BaggedForest(n_trees=max(1, n_trees), task=task,
                                  seed=seed)
            forest.trees = [_r_tree(fh) for _ in range(n_trees)]
            model.fitted = {"forest": forest}
        elif family == "adaboost":
            alphas = _r_arr(fh, "<f8")
            trees = [_r_tree(fh) for _ in range(len(alphas))]
            model.fitted = {"alphas": alphas, "trees": trees}
        else:
            raise ValueError(f"{path}: unknown family {family!r}")
    return model


def write_scores(ego_ids: list[str], scores: np.ndarray, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("ego_id,churn_score\n")
        for ego, s in zip(ego_ids, scores):
            fh.write(f"{ego},{float(s)!r}\n")


def read_scores(path: str) -> tuple[list[str], np.ndarray]:
    egos, scores = [], []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "ego_id,churn_score":
            raise ValueError(f"{path}: bad scores header {header!r}")
        for line in fh:
            e, s = line.rstrip("\n").split(",")
            egos.append(e)
            scores.append(float(s))
    return egos, np.asarray(scores)
