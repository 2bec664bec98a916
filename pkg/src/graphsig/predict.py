"""Classifiers and regressors over temporal signatures, with cross-validation.

Binary high/low labeling by an accuracy threshold, a linear SVM trained by
stochastic subgradient descent, a single-hidden-layer MLP, and ordinary
least squares for predicting the accuracy value itself.  Standardization is
always fitted on the training portion of each fold; test rows only ever pass
through a scaler they did not influence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signatures import STAT_NAMES, SignatureError, compose_blocks

LABEL_LOW = "low"
LABEL_HIGH = "high"


class PredictError(Exception):
    """Training diverged or the dataset cannot support the request."""


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class RunSnapshots:
    """Per-run raw material for signatures: one stats block per epoch."""

    run_id: str
    final_accuracy: float
    blocks: np.ndarray          # (epochs, block_size)

    @property
    def num_epochs(self) -> int:
        return int(self.blocks.shape[0])


@dataclass(frozen=True)
class LabeledDataset:
    """Signature matrix with accuracy targets and high/low labels."""

    run_ids: tuple[str, ...]
    X: np.ndarray               # (n, d)
    accuracy: np.ndarray        # (n,)
    labels: np.ndarray          # (n,) of {LABEL_LOW, LABEL_HIGH}
    threshold: float

    @property
    def class_counts(self) -> dict:
        return {LABEL_LOW: int(np.sum(self.labels == LABEL_LOW)),
                LABEL_HIGH: int(np.sum(self.labels == LABEL_HIGH))}

    @property
    def single_class(self) -> bool:
        counts = self.class_counts
        return counts[LABEL_LOW] == 0 or counts[LABEL_HIGH] == 0


def median_threshold(accuracies) -> float:
    """Lower-median accuracy; 'high' is strictly above, so ties land low."""
    a = np.asarray(accuracies, dtype=np.float64)
    return float(np.partition(a, (a.size - 1) // 2)[(a.size - 1) // 2])


def label_dataset(runs, threshold: float) -> LabeledDataset:
    """Label (signature, accuracy) pairs: high iff accuracy > threshold."""
    if not runs:
        raise PredictError("empty dataset")
    run_ids, vectors, accs = [], [], []
    for sig, acc in runs:
        if not np.isfinite(acc):
            raise PredictError(f"non-finite accuracy for run {getattr(sig, 'run_id', '?')!r}")
        run_ids.append(getattr(sig, "run_id", ""))
        vectors.append(np.asarray(getattr(sig, "vector", sig), dtype=np.float64))
        accs.append(float(acc))
    lengths = {v.shape[0] for v in vectors}
    if len(lengths) != 1:
        raise PredictError(f"signature vectors have mixed lengths {sorted(lengths)}")
    acc_arr = np.array(accs)
    labels = np.where(acc_arr > threshold, LABEL_HIGH, LABEL_LOW)
    return LabeledDataset(run_ids=tuple(run_ids), X=np.vstack(vectors),
                          accuracy=acc_arr, labels=labels, threshold=float(threshold))


def prefix_vectors(runs: list[RunSnapshots], t: int, mode: str = "concat",
                   alpha: float = 0.5) -> list[np.ndarray]:
    """Temporal signature over the first t epochs of every run."""
    if t < 1:
        raise PredictError("epoch budget must be >= 1")
    vecs = []
    for r in runs:
        if r.num_epochs < t:
            raise PredictError(f"run {r.run_id!r} has {r.num_epochs} epochs, needs {t}")
        vecs.append(compose_blocks(list(r.blocks[:t]), mode=mode, alpha=alpha))
    return vecs


def window_vectors(runs: list[RunSnapshots], epochs: tuple[int, ...]) -> list[np.ndarray]:
    """Concatenated raw blocks at the given 1-based epochs (regression windows)."""
    vecs = []
    for r in runs:
        if max(epochs) > r.num_epochs:
            raise PredictError(f"run {r.run_id!r} has {r.num_epochs} epochs, needs {max(epochs)}")
        vecs.append(np.concatenate([r.blocks[e - 1] for e in epochs]))
    return vecs


# ---------------------------------------------------------------------------
# standardization


def fit_scaler(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    return mean, std


def apply_scaler(X: np.ndarray, scaler) -> np.ndarray:
    mean, std = scaler
    return (X - mean) / std


# ---------------------------------------------------------------------------
# models


@dataclass
class PredictorModel:
    kind: str                           # "linear_svm" | "mlp" | "ols_regression"
    params: dict
    scaler: tuple[np.ndarray, np.ndarray]
    metadata: dict = field(default_factory=dict)

    def decision_scores(self, X: np.ndarray) -> np.ndarray:
        Xs = apply_scaler(np.asarray(X, dtype=np.float64), self.scaler)
        if self.kind == "linear_svm":
            return Xs @ self.params["w"] + self.params["b"]
        if self.kind == "mlp":
            logits = _mlp_logits(self.params, Xs)
            return logits[:, 1] - logits[:, 0]
        raise PredictError(f"{self.kind} has no classification scores")

    def predict_labels(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.decision_scores(X) >= 0.0, LABEL_HIGH, LABEL_LOW)

    def predict_values(self, X: np.ndarray) -> np.ndarray:
        if self.kind != "ols_regression":
            raise PredictError(f"{self.kind} does not predict accuracy values")
        Xs = apply_scaler(np.asarray(X, dtype=np.float64), self.scaler)
        return Xs @ self.params["coef"] + self.params["intercept"]

    def feature_weights(self) -> np.ndarray | None:
        """Linear weights on standardized features; None for the MLP."""
        if self.kind == "linear_svm":
            return self.params["w"].copy()
        if self.kind == "ols_regression":
            return self.params["coef"].copy()
        return None


def _labels_to_pm1(labels: np.ndarray) -> np.ndarray:
    return np.where(labels == LABEL_HIGH, 1.0, -1.0)


def train_linear_svm(X: np.ndarray, labels: np.ndarray, epochs: int = 200,
                     lr: float = 0.01, l2: float = 1e-3, seed: int = 0) -> PredictorModel:
    """Hinge-loss linear classifier by per-sample subgradient descent."""
    y = _labels_to_pm1(np.asarray(labels))
    if len(np.unique(y)) < 2:
        raise PredictError("linear SVM needs both classes present")
    scaler = fit_scaler(np.asarray(X, dtype=np.float64))
    Xs = apply_scaler(np.asarray(X, dtype=np.float64), scaler)
    n, d = Xs.shape
    rng = np.random.default_rng(seed)
    w = np.zeros(d)
    b = 0.0
    for _ in range(epochs):
        for i in rng.permutation(n):
            margin = y[i] * (Xs[i] @ w + b)
            w *= 1.0 - 2.0 * lr * l2
            if margin < 1.0:
                w += lr * y[i] * Xs[i]
                b += lr * y[i]
        obj = np.mean(np.maximum(0.0, 1.0 - y * (Xs @ w + b))) + l2 * (w @ w)
        if not np.isfinite(obj):
            raise PredictError(f"linear SVM diverged (loss became non-finite at lr={lr})")
    return PredictorModel(kind="linear_svm", params={"w": w, "b": b}, scaler=scaler,
                          metadata={"epochs": epochs, "lr": lr, "l2": l2, "seed": seed})


def init_mlp(d: int, hidden: int, seed: int) -> dict:
    """Symmetry-breaking uniform init in +/- 1/sqrt(fan_in)."""
    rng = np.random.default_rng(seed)
    return {
        "W1": rng.uniform(-1.0, 1.0, size=(d, hidden)) / np.sqrt(d),
        "b1": np.zeros(hidden),
        "W2": rng.uniform(-1.0, 1.0, size=(hidden, 2)) / np.sqrt(hidden),
        "b2": np.zeros(2),
    }


def _mlp_logits(params: dict, Xs: np.ndarray) -> np.ndarray:
    hidden = np.maximum(Xs @ params["W1"] + params["b1"], 0.0)
    return hidden @ params["W2"] + params["b2"]


def mlp_loss_and_grads(params: dict, Xs: np.ndarray, y01: np.ndarray):
    """Mean softmax cross-entropy and its exact gradients (for SGD and checks)."""
    n = Xs.shape[0]
    pre = Xs @ params["W1"] + params["b1"]
    hidden = np.maximum(pre, 0.0)
    logits = hidden @ params["W2"] + params["b2"]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), y01]))
    probs = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    d_logits = probs
    d_logits[np.arange(n), y01] -= 1.0
    d_logits /= n
    d_hidden = d_logits @ params["W2"].T
    d_hidden[pre <= 0.0] = 0.0
    grads = {
        "W2": hidden.T @ d_logits,
        "b2": d_logits.sum(axis=0),
        "W1": Xs.T @ d_hidden,
        "b1": d_hidden.sum(axis=0),
    }
    return loss, grads


def train_mlp(X: np.ndarray, labels: np.ndarray, hidden: int = 32, epochs: int = 200,
              lr: float = 0.01, seed: int = 0, batch_size: int = 32) -> PredictorModel:
    """One-hidden-layer rectifier net with softmax cross-entropy, minibatch SGD."""
    y01 = (np.asarray(labels) == LABEL_HIGH).astype(np.int64)
    if len(np.unique(y01)) < 2:
        raise PredictError("MLP classifier needs both classes present")
    scaler = fit_scaler(np.asarray(X, dtype=np.float64))
    Xs = apply_scaler(np.asarray(X, dtype=np.float64), scaler)
    n, d = Xs.shape
    params = init_mlp(d, hidden, seed)
    rng = np.random.default_rng(seed + 1)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, grads = mlp_loss_and_grads(params, Xs[idx], y01[idx])
            if not np.isfinite(loss):
                raise PredictError(f"MLP diverged (loss became non-finite at lr={lr})")
            for key in params:
                params[key] -= lr * grads[key]
    return PredictorModel(kind="mlp", params=params, scaler=scaler,
                          metadata={"hidden": hidden, "epochs": epochs, "lr": lr,
                                    "seed": seed, "batch_size": batch_size})


def train_ols(X: np.ndarray, targets: np.ndarray) -> PredictorModel:
    """Least-squares accuracy regression; tiny ridge fallback if singular."""
    scaler = fit_scaler(np.asarray(X, dtype=np.float64))
    Xs = apply_scaler(np.asarray(X, dtype=np.float64), scaler)
    y = np.asarray(targets, dtype=np.float64)
    A = np.column_stack([Xs, np.ones(len(y))])
    gram = A.T @ A
    rhs = A.T @ y
    ridge_fallback = False
    try:
        chol = np.linalg.cholesky(gram)
        beta = np.linalg.solve(chol.T, np.linalg.solve(chol, rhs))
    except np.linalg.LinAlgError:
        ridge_fallback = True
        lam = 1e-6
        beta = np.linalg.solve(gram + lam * np.eye(gram.shape[0]), rhs)
    return PredictorModel(kind="ols_regression",
                          params={"coef": beta[:-1], "intercept": float(beta[-1])},
                          scaler=scaler, metadata={"ridge_fallback": ridge_fallback})


def train_model(kind: str, X, labels_or_targets, **hp) -> PredictorModel:
    if kind == "linear_svm":
        return train_linear_svm(X, labels_or_targets, **hp)
    if kind == "mlp":
        return train_mlp(X, labels_or_targets, **hp)
    if kind == "ols_regression":
        return train_ols(X, labels_or_targets)
    raise PredictError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    """Cross-validation metrics plus optional budget curve and weight table."""

    task: str                   # "classify" | "regress"
    model_kind: str
    per_fold: list
    mean_metrics: dict
    feature_weights: list | None = None     # [(position, weight)] on standardized cols
    budget_curve: list | None = None        # [{"t": int, ...metrics}]
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "task": self.task,
            "model_kind": self.model_kind,
            "per_fold": self.per_fold,
            "mean_metrics": self.mean_metrics,
            "feature_weights": self.feature_weights,
            "budget_curve": self.budget_curve,
            "notes": self.notes,
        }


def stratified_fold_assignment(labels: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Per-class round-robin assignment after a seeded shuffle."""
    n = len(labels)
    fold_of = np.empty(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def plain_fold_assignment(n: int, folds: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    fold_of[idx] = np.arange(n) % folds
    return fold_of


def _regression_metrics(y_true: np.ndarray, y_pred: np.ndarray) -> dict:
    mae = float(np.mean(np.abs(y_true - y_pred)))
    ss_res = float(np.sum((y_true - y_pred) ** 2))
    ss_tot = float(np.sum((y_true - y_true.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0.0 else 0.0
    return {"mae": mae, "r2": r2}


def cross_validate(data: LabeledDataset, model_kind: str, folds: int = 5,
                   seed: int = 0, **hp) -> EvalReport:
    """K-fold evaluation; stratified for classifiers, plain shuffled for OLS.

    With ``folds=5`` each regression fold is an 80/20 train/test split.
    Standardization and training see only the training part of each fold.
    """
    if folds < 2:
        raise PredictError("folds must be >= 2")
    hp = dict(hp)
    hp.pop("seed", None)
    task = "regress" if model_kind == "ols_regression" else "classify"
    n = len(data.run_ids)
    if task == "classify":
        fold_of = stratified_fold_assignment(data.labels, folds, seed)
    else:
        fold_of = plain_fold_assignment(n, folds, seed)

    per_fold, notes = [], []
    for k in range(folds):
        test = fold_of == k
        train = ~test
        if test.sum() == 0 or train.sum() == 0:
            notes.append(f"fold {k}: empty split, skipped")
            continue
        if task == "classify" and len(np.unique(data.labels[train])) < 2:
            notes.append(f"fold {k}: single-class training split, skipped")
            continue
        if task == "classify":
            model = train_model(model_kind, data.X[train], data.labels[train],
                                seed=seed + k, **hp)
            pred = model.predict_labels(data.X[test])
            acc = float(np.mean(pred == data.labels[test]))
            per_fold.append({"fold": k, "n_test": int(test.sum()), "accuracy": acc})
        else:
            model = train_model(model_kind, data.X[train], data.accuracy[train], **hp)
            pred = model.predict_values(data.X[test])
            metrics = _regression_metrics(data.accuracy[test], pred)
            per_fold.append({"fold": k, "n_test": int(test.sum()), **metrics})

    if not per_fold:
        raise PredictError("every fold was skipped; dataset too degenerate to evaluate")
    if task == "classify":
        mean_metrics = {"accuracy": float(np.mean([f["accuracy"] for f in per_fold]))}
    else:
        mean_metrics = {"mae": float(np.mean([f["mae"] for f in per_fold])),
                        "r2": float(np.mean([f["r2"] for f in per_fold]))}

    # weight table from a fit on the full dataset (reporting only, not a metric)
    weights = None
    try:
        target = data.labels if task == "classify" else data.accuracy
        full_model = train_model(model_kind, data.X, target, **(
            {"seed": seed, **hp} if task == "classify" else hp))
        w = full_model.feature_weights()
        if w is not None:
            weights = [(int(i), float(wi)) for i, wi in enumerate(w)]
    except PredictError as e:
        notes.append(f"full-data weight fit skipped: {e}")
    return EvalReport(task=task, model_kind=model_kind, per_fold=per_fold,
                      mean_metrics=mean_metrics, feature_weights=weights, notes=notes)


def epoch_budget_curve(runs: list[RunSnapshots], threshold: float, model_kind: str,
                       max_t: int, mode: str = "concat", alpha: float = 0.5,
                       folds: int = 5, seed: int = 0, **hp) -> EvalReport:
    """CV metric as a function of how many leading epochs the signature sees."""
    if max_t < 1:
        raise PredictError("max_t must be >= 1")
    shortest = min(r.num_epochs for r in runs)
    if shortest < max_t:
        raise PredictError(f"max_t={max_t} but the shortest run has {shortest} epochs")
    curve = []
    last = None
    for t in range(1, max_t + 1):
        vecs = prefix_vectors(runs, t, mode=mode, alpha=alpha)
        pairs = [(_Vec(r.run_id, v), r.final_accuracy) for r, v in zip(runs, vecs)]
        data = label_dataset(pairs, threshold)
        last = cross_validate(data, model_kind, folds=folds, seed=seed, **hp)
        curve.append({"t": t, **last.mean_metrics})
    report = EvalReport(task=last.task, model_kind=model_kind, per_fold=last.per_fold,
                        mean_metrics=last.mean_metrics,
                        feature_weights=last.feature_weights, budget_curve=curve)
    return report


@dataclass(frozen=True)
class _Vec:
    run_id: str
    vector: np.ndarray


def feature_positions(block_size: int, blocks: int, stat_labels=None) -> list[str]:
    """Human-readable name of every signature position, epoch-major."""
    if stat_labels is None:
        stat_labels = list(STAT_NAMES)
    if block_size % len(stat_labels):
        raise SignatureError("block size is not a multiple of the stat label count")
    reps = block_size // len(stat_labels)
    prefixes = [""] if reps == 1 else ["pos_", "neg_"] if reps == 2 else \
        [f"part{i}_" for i in range(reps)]
    names = []
    for t in range(1, blocks + 1):
        for p in prefixes:
            for s in stat_labels:
                names.append(f"epoch{t}_{p}{s}")
    return names


def feature_report(model_or_weights, runs: list[RunSnapshots], labels: np.ndarray,
                   block_size: int | None = None) -> dict:
    """Weight ranking (linear models) plus per-run aggregator trajectories.

    Returns {"weights": header+rows or None, "trajectories": header+rows}.
    """
    if isinstance(model_or_weights, PredictorModel):
        weights = model_or_weights.feature_weights()
    else:
        weights = None if model_or_weights is None else np.asarray(model_or_weights)

    if block_size is None:
        block_size = runs[0].blocks.shape[1] if runs else len(STAT_NAMES)

    weight_table = None
    if weights is not None:
        names = feature_positions(block_size, len(weights) // block_size)
        order = np.argsort(-np.abs(weights), kind="stable")
        rows = [[rank + 1, int(i), names[i], float(weights[i]), float(abs(weights[i]))]
                for rank, i in enumerate(order)]
        weight_table = {"header": ["rank", "position", "feature", "weight", "abs_weight"],
                        "rows": rows}

    reps = block_size // len(STAT_NAMES)
    stat_cols = ([s for s in STAT_NAMES] if reps == 1 else
                 [f"{p}{s}" for p in (["pos_", "neg_"] if reps == 2 else
                                      [f"part{i}_" for i in range(reps)])
                  for s in STAT_NAMES])
    traj_rows = []
    for r, label in zip(runs, labels):
        for e in range(r.num_epochs):
            traj_rows.append([r.run_id, str(label), repr(float(r.final_accuracy)), e + 1]
                             + [repr(float(x)) for x in r.blocks[e]])
    trajectories = {"header": ["run_id", "label", "final_accuracy", "epoch"] + stat_cols,
                    "rows": traj_rows}
    return {"weights": weight_table, "trajectories": trajectories}
