"""Support-vector regression and classification on residual windows.

The regressor recovers the magnitude of a deviation from the window of
residuals preceding an alert; the classifier assigns its form.  Both are
trained by the pairwise dual solver in `smo`; the regularization trade-off
enters the solver as the box bound on the dual coefficients (the 1/M
factor on the empirical loss is absorbed into that parameterization).

Models serialize to plain JSON.  Python floats round-trip exactly through
JSON, so a reloaded model reproduces its decision function bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import smo
from .errors import ConfigError, DataError

MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SvmConfig:
    """Hyper-parameters shared by the regressor and the classifier."""

    lambda_: float = 10.0
    epsilon: float = 0.001
    kernel: str = "rbf"
    gamma: float | None = None  # None -> 1 / window length
    window: int = 25
    tolerance: float = 1e-3
    max_iterations: int = 500_000
    cache_mb: int = 512

    def __post_init__(self):
        if self.lambda_ <= 0:
            raise ConfigError("lambda must be positive")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.kernel not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel {self.kernel!r}")
        if self.gamma is not None and self.gamma <= 0:
            raise ConfigError("gamma must be positive")
        if self.window < 2:
            raise ConfigError("window length must be >= 2")

    @property
    def effective_gamma(self):
        return self.gamma if self.gamma is not None else 1.0 / self.window


def kernel_matrix(config: SvmConfig, x1, x2):
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    if config.kernel == "linear":
        return x1 @ x2.T
    sq1 = np.einsum("ij,ij->i", x1, x1)
    sq2 = np.einsum("ij,ij->i", x2, x2)
    d2 = sq1[:, None] + sq2[None, :] - 2.0 * (x1 @ x2.T)
    np.maximum(d2, 0.0, out=d2)
    return np.exp(-config.effective_gamma * d2)


def _kernel_code(config):
    return smo.KERNEL_LINEAR if config.kernel == "linear" else smo.KERNEL_RBF


@dataclass(frozen=True)
class TrainingInfo:
    n_train: int
    iterations: int
    kkt_violation: float
    objective: float
    converged: bool
    seed: int | None = None


@dataclass(frozen=True)
class SvrModel:
    """Epsilon-insensitive support-vector regressor."""

    config: SvmConfig
    support_vectors: np.ndarray  # (n_sv, m)
    coefficients: np.ndarray     # beta = alpha - alpha*, nonzero entries
    bias: float
    info: TrainingInfo

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.config.window:
            raise DataError(
                f"input window length {x.shape[1]} does not match the "
                f"model's {self.config.window}"
            )
        k = kernel_matrix(self.config, x, self.support_vectors)
        return k @ self.coefficients + self.bias


@dataclass(frozen=True)
class BinaryMachine:
    class_a: int
    class_b: int
    support_vectors: np.ndarray
    coefficients: np.ndarray  # alpha_i * y_i at the support vectors
    bias: float

    def decision(self, config, x):
        k = kernel_matrix(config, x, self.support_vectors)
        return k @ self.coefficients + self.bias


@dataclass(frozen=True)
class SvcModel:
    """One-vs-one multi-class soft-margin classifier."""

    config: SvmConfig
    classes: tuple
    machines: tuple
    info: TrainingInfo

    def predict(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.config.window:
            raise DataError(
                f"input window length {x.shape[1]} does not match the "
                f"model's {self.config.window}"
            )
        n = len(x)
        n_classes = len(self.classes)
        votes = np.zeros((n, n_classes), dtype=int)
        margins = np.zeros((n, n_classes))
        for mach in self.machines:
            d = mach.decision(self.config, x)
            ia = self.classes.index(mach.class_a)
            ib = self.classes.index(mach.class_b)
            a_wins = d > 0
            votes[:, ia] += a_wins
            votes[:, ib] += ~a_wins
            margins[:, ia] += d
            margins[:, ib] -= d
        # majority vote; ties by largest aggregate margin, then class order
        out = np.empty(n, dtype=int)
        for r in range(n):
            best = votes[r].max()
            tied = np.flatnonzero(votes[r] == best)
            if len(tied) > 1:
                tied = tied[np.argsort(-margins[r, tied], kind="stable")]
                best_margin = margins[r, tied[0]]
                tied = np.array([t for t in tied
                                 if margins[r, t] == best_margin])
            out[r] = self.classes[int(tied.min())]
        return out


def train_svr(x, y, config: SvmConfig, seed=None) -> SvrModel:
    """Fit the regressor by solving the epsilon-insensitive dual."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = len(y)
    if n < 2:
        raise ConfigError("training needs at least 2 instances")
    if x.shape != (n, config.window):
        raise DataError(f"expected instances of shape ({n}, {config.window})")
    p = np.concatenate([config.epsilon - y, config.epsilon + y])
    s = np.concatenate([np.ones(n), -np.ones(n)])
    res = smo.solve_dual(x, p, s, c_bound=config.lambda_,
                         kernel_code=_kernel_code(config),
                         gamma=config.effective_gamma,
                         tolerance=config.tolerance,
                         max_iterations=config.max_iterations,
                         cache_bytes=config.cache_mb * 2**20)
    beta = res.a[:n] - res.a[n:]
    keep = np.abs(beta) > 1e-12
    info = TrainingInfo(n, res.iterations, res.kkt_violation, res.objective,
                        res.converged, seed)
    return SvrModel(config, x[keep].copy(), beta[keep], res.bias, info)


def train_binary_svc(x, y_signs, config: SvmConfig):
    """Soft-margin binary machine; y_signs in {-1, +1}."""
    n = len(y_signs)
    res = smo.solve_dual(x, -np.ones(n), y_signs, c_bound=config.lambda_,
                         kernel_code=_kernel_code(config),
                         gamma=config.effective_gamma,
                         tolerance=config.tolerance,
                         max_iterations=config.max_iterations,
                         cache_bytes=config.cache_mb * 2**20)
    coeff = res.a * y_signs
    keep = res.a > 1e-12
    return x[keep].copy(), coeff[keep], res.bias, res


def train_svc(x, labels, config: SvmConfig, seed=None) -> SvcModel:
    """Fit the one-vs-one multi-class classifier."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.asarray(labels, dtype=int).ravel()
    classes = tuple(sorted(np.unique(labels).tolist()))
    if len(classes) < 2:
        raise ConfigError("classification needs at least 2 classes")
    if x.shape[1] != config.window:
        raise DataError(f"expected window length {config.window}")
    machines = []
    total_iters = 0
    worst_violation = 0.0
    objective = 0.0
    converged = True
    for ai in range(len(classes)):
        for bi in range(ai + 1, len(classes)):
            ca, cb = classes[ai], classes[bi]
            sel = (labels == ca) | (labels == cb)
            xs = x[sel]
            ys = np.where(labels[sel] == ca, 1.0, -1.0)
            sv, coeff, bias, res = train_binary_svc(xs, ys, config)
            machines.append(BinaryMachine(ca, cb, sv, coeff, bias))
            total_iters += res.iterations
            worst_violation = max(worst_violation, res.kkt_violation)
            objective += res.objective
            converged &= res.converged
    info = TrainingInfo(len(labels), total_iters, worst_violation, objective,
                        converged, seed)
    return SvcModel(config, classes, tuple(machines), info)


# -- metrics ---------------------------------------------------------------

def regression_metrics(y_true, y_pred):
    """MAPE (percent) and normalized RMSE."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if len(y_true) == 0:
        raise ConfigError("empty test set")
    if np.any(y_true == 0):
        raise ConfigError("MAPE undefined: a true label is zero")
    mape = float(np.mean(np.abs((y_true - y_pred) / y_true)) * 100.0)
    nrmse = float(np.sqrt(np.sum((y_true - y_pred) ** 2) / np.sum(y_true**2)))
    return {"mape": mape, "nrmse": nrmse}


def classification_metrics(y_true, y_pred, classes):
    """Accuracy (percent) plus confusion matrices in counts and percent.

    Confusion rows are the true labels, columns the predictions.
    """
    y_true = np.asarray(y_true, dtype=int)
    y_pred = np.asarray(y_pred, dtype=int)
    if len(y_true) == 0:
        raise ConfigError("empty test set")
    classes = list(classes)
    k = len(classes)
    index = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((k, k), dtype=int)
    for t, p in zip(y_true, y_pred):
        confusion[index[t], index[p]] += 1
    accuracy = float(np.trace(confusion) / len(y_true) * 100.0)
    percent = confusion / len(y_true) * 100.0
    return {"accuracy": accuracy, "confusion": confusion,
            "confusion_percent": percent, "classes": classes}


# -- persistence -----------------------------------------------------------

def _config_to_dict(config: SvmConfig):
    return {
        "lambda": config.lambda_,
        "epsilon": config.epsilon,
        "kernel": config.kernel,
        "gamma": config.gamma,
        "window": config.window,
        "tolerance": config.tolerance,
        "max_iterations": config.max_iterations,
        "cache_mb": config.cache_mb,
    }


def _config_from_dict(d):
    return SvmConfig(
        lambda_=d["lambda"], epsilon=d["epsilon"], kernel=d["kernel"],
        gamma=d["gamma"], window=d["window"], tolerance=d["tolerance"],
        max_iterations=d["max_iterations"], cache_mb=d["cache_mb"],
    )


def _info_to_dict(info: TrainingInfo):
    return {
        "n_train": info.n_train, "iterations": info.iterations,
        "kkt_violation": info.kkt_violation, "objective": info.objective,
        "converged": info.converged, "seed": info.seed,
    }


def _info_from_dict(d):
    return TrainingInfo(d["n_train"], d["iterations"], d["kkt_violation"],
                        d["objective"], d["converged"], d.get("seed"))


def model_to_dict(model):
    if isinstance(model, SvrModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "svr",
            "config": _config_to_dict(model.config),
            "support_vectors": model.support_vectors.tolist(),
            "coefficients": model.coefficients.tolist(),
            "bias": model.bias,
            "info": _info_to_dict(model.info),
        }
    if isinstance(model, SvcModel):
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "kind": "svc",
            "config": _config_to_dict(model.config),
            "classes": list(model.classes),
            "machines": [
                {
                    "class_a": m.class_a,
                    "class_b": m.class_b,
                    "support_vectors": m.support_vectors.tolist(),
                    "coefficients": m.coefficients.tolist(),
                    "bias": m.bias,
                }
                for m in model.machines
            ],
            "info": _info_to_dict(model.info),
        }
    raise ConfigError(f"cannot serialize {type(model).__name__}")


def model_from_dict(d):
    version = d.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise DataError(
            f"model format version {version} is not supported by this "
            f"build (expected {MODEL_FORMAT_VERSION})"
        )
    config = _config_from_dict(d["config"])
    info = _info_from_dict(d["info"])
    if d["kind"] == "svr":
        return SvrModel(config, np.asarray(d["support_vectors"], dtype=float),
                        np.asarray(d["coefficients"], dtype=float),
                        d["bias"], info)
    if d["kind"] == "svc":
        machines = tuple(
            BinaryMachine(m["class_a"], m["class_b"],
                          np.asarray(m["support_vectors"], dtype=float),
                          np.asarray(m["coefficients"], dtype=float),
                          m["bias"])
            for m in d["machines"]
        )
        return SvcModel(config, tuple(d["classes"]), machines, info)
    raise DataError(f"unknown model kind {d.get('kind')!r}")


def save_model(model, path):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
