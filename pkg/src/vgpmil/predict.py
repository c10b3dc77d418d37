"""Instance- and bag-level prediction plus evaluation metrics."""
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import ndtr

from .bags import bag_sigma
from .errors import InputError, NumericalError
from .kernels import gram
from .truncnorm import negative_orthant_prob

__all__ = [
    "BagPrediction",
    "BinaryMetrics",
    "MetricsReport",
    "predict_latent",
    "predict_m",
    "predict_instances",
    "predict_bag",
    "predict_bag_full",
    "predict_dataset",
    "binary_metrics",
    "within_bag_variability",
    "evaluate",
]

EIG_FLOOR = 1e-10
DEFAULT_POINTS = 2**14
DEFAULT_RANDOMIZATIONS = 8


@dataclass
class BagPrediction:
    bag_id: str
    instance_probs: np.ndarray
    bag_prob: float
    mu_m: np.ndarray
    var_m: np.ndarray
    bag_prob_se: float = 0.0


def _floor_eigenvalues(S, floor=EIG_FLOOR):
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() >= floor:
        return S
    S = (V * np.maximum(w, floor)) @ V.T
    return 0.5 * (S + S.T)


def predict_latent(model, bag):
    """Sparse-GP predictive mean and covariance of the latent f at the bag."""
    X = np.atleast_2d(np.asarray(bag.X if hasattr(bag, "X") else bag, dtype=np.float64))
    if X.shape[1] != model.feature_dim:
        raise InputError(f"bag has {X.shape[1]} features, model expects {model.feature_dim}",
                         component="predictor")
    Ksz = gram(X, model.Z, model.kernel)
    Kss = gram(X, X, model.kernel)
    A = cho_solve(model.kzz_factor(), Ksz.T).T
    mu = A @ model.mu_u
    S = Kss - A @ (model.kzz() - model.Sigma_u) @ A.T
    return mu, _floor_eigenvalues(S)


def predict_m(model, bag, latent):
    """Predictive mean and covariance of the augmented variables m*."""
    mu, S = latent
    Sig = bag_sigma(bag, model.lam, model.neighborhood)
    mu_m = Sig @ mu
    S_m = Sig + Sig @ S @ Sig.T
    return mu_m, 0.5 * (S_m + S_m.T)


def predict_instances(mu_m, S_m):
    var = np.diag(np.atleast_2d(S_m))
    if np.any(~(var > 0)):
        raise NumericalError("non-positive predictive variance", component="predictor")
    return ndtr(np.asarray(mu_m) / np.sqrt(var))


def predict_bag(mu_m, S_m, n_points=DEFAULT_POINTS, n_random=DEFAULT_RANDOMIZATIONS, seed=0):
    """P(at least one m_i > 0) under the full joint N(mu_m, S_m)."""
    return predict_bag_full(mu_m, S_m, n_points, n_random, seed)[0]


def predict_bag_full(mu_m, S_m, n_points=DEFAULT_POINTS, n_random=DEFAULT_RANDOMIZATIONS, seed=0):
    """Like :func:`predict_bag` but also returns the estimator standard error."""
    S_m = _floor_eigenvalues(np.atleast_2d(np.asarray(S_m, dtype=np.float64)))
    res = negative_orthant_prob(mu_m, S_m, n_points=n_points, n_random=n_random, seed=seed)
    return 1.0 - res.prob, res.std_error


def bag_seed(model_seed, bag_id):
    # crc32 rather than hash(): str hashing is salted per process
    return [int(model_seed), zlib.crc32(str(bag_id).encode("utf-8"))]


def predict_dataset(model, dataset, n_points=DEFAULT_POINTS, n_random=DEFAULT_RANDOMIZATIONS,
                    bag_level=True):
    """Predictions for every bag. ``bag_level=False`` skips the orthant integral
    and sets ``bag_prob`` to NaN."""
    out = []
    for bag in dataset.bags:
        mu_m, S_m = predict_m(model, bag, predict_latent(model, bag))
        probs = predict_instances(mu_m, S_m)
        if bag_level:
            p, se = predict_bag_full(mu_m, S_m, n_points, n_random,
                                     seed=bag_seed(model.seed, bag.bag_id))
        else:
            p, se = float("nan"), float("nan")
        out.append(BagPrediction(bag.bag_id, probs, p, mu_m, np.diag(S_m).copy(), se))
    return out


# --- metrics -------------------------------------------------------------------

@dataclass
class BinaryMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    confusion: np.ndarray  # [[TN, FP], [FN, TP]]
    degenerate: list = field(default_factory=list)

    @property
    def tn(self):
        return int(self.confusion[0, 0])

    @property
    def fp(self):
        return int(self.confusion[0, 1])

    @property
    def fn(self):
        return int(self.confusion[1, 0])

    @property
    def tp(self):
        return int(self.confusion[1, 1])


def binary_metrics(y_true, y_pred):
    """Accuracy, precision, recall and F1 from hard 0/1 labels.

    A 0/0 ratio is reported as 0 and its name listed in ``degenerate``.
    """
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    tp = int(np.sum((y_true == 1) & (y_pred == 1)))
    tn = int(np.sum((y_true == 0) & (y_pred == 0)))
    fp = int(np.sum((y_true == 0) & (y_pred == 1)))
    fn = int(np.sum((y_true == 1) & (y_pred == 0)))
    degenerate = []

    def ratio(num, den, name):
        if den == 0:
            degenerate.append(name)
            return 0.0
        return num / den

    n = tp + tn + fp + fn
    acc = ratio(tp + tn, n, "accuracy")
    prec = ratio(tp, tp + fp, "precision")
    rec = ratio(tp, tp + fn, "recall")
    f1 = 2 * prec * rec / (prec + rec) if prec + rec > 0 else 0.0
    if prec + rec == 0:
        degenerate.append("f1")
    return BinaryMetrics(acc, prec, rec, f1, np.array([[tn, fp], [fn, tp]]), degenerate)


def within_bag_variability(predictions):
    """Mean over bags of the (population) std-dev of instance probabilities."""
    return float(np.mean([np.std(p.instance_probs) for p in predictions]))


@dataclass
class MetricsReport:
    instance: BinaryMetrics
    bag: BinaryMetrics
    variability: float
    threshold: float = 0.5

    def as_row(self):
        nan = float("nan")
        inst = self.instance
        row = {
            "inst_acc": inst.accuracy if inst else nan,
            "inst_prec": inst.precision if inst else nan,
            "inst_rec": inst.recall if inst else nan,
            "inst_f1": inst.f1 if inst else nan,
            "bag_acc": self.bag.accuracy,
            "bag_prec": self.bag.precision,
            "bag_rec": self.bag.recall,
            "bag_f1": self.bag.f1,
            "bag_variability": self.variability,
        }
        return row

    def confusion_row(self):
        row = {}
        for prefix, m in (("inst", self.instance), ("bag", self.bag)):
            for name in ("tn", "fp", "fn", "tp"):
                row[f"{prefix}_{name}"] = getattr(m, name) if m is not None else ""
        return row


def evaluate(model, dataset, threshold=0.5, predictions=None, **predict_kwargs):
    """Thresholded instance and bag metrics plus within-bag variability.

    Instance metrics are ``None`` when the dataset carries no instance labels.
    """
    if predictions is None:
        predictions = predict_dataset(model, dataset, **predict_kwargs)
    by_id = {p.bag_id: p for p in predictions}
    bags = sorted(dataset.bags, key=lambda b: b.bag_id)
    bag_true = [b.label for b in bags]
    bag_pred = [int(by_id[b.bag_id].bag_prob > threshold) for b in bags]
    inst = None
    if dataset.has_instance_labels:
        y = np.concatenate([b.instance_labels for b in bags])
        p = np.concatenate([by_id[b.bag_id].instance_probs for b in bags])
        inst = binary_metrics(y, (p > threshold).astype(np.int64))
    return MetricsReport(
        instance=inst,
        bag=binary_metrics(bag_true, bag_pred),
        variability=within_bag_variability([by_id[b.bag_id] for b in bags]),
        threshold=threshold,
    )
