"""Non-tree classifiers: multinomial logit, Gaussian naive Bayes, k-nearest neighbours,
one-vs-rest linear SVM and a one-hidden-layer perceptron.

Every weighted loss is a weight-normalized average, so multiplying all sample
weights by a constant leaves the optimization path unchanged. MNL, SVM and the
MLP standardize features internally (weighted mean 0, variance 1) and keep the
transform with the fitted parameters. Classes with no training weight are
masked out and predicted with probability 0.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..dataset.encoding import EncodedDataset
from ..dataset.schema import N_CLASSES
from ..errors import NumericalError, ValidationError
from .core import Family, FittedModel, LearnerSpec, fit, log_softmax, present_classes, register, softmax


class Standardizer:
    """Weighted z-scoring; zero-variance columns are centred but not scaled."""

    def __init__(self, mean, scale):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, X, w):
        p = w / w.sum()
        mean = p @ X
        var = p @ (X - mean) ** 2
        scale = np.sqrt(var)
        scale[scale == 0] = 1.0
        return cls(mean, scale)

    def __call__(self, X):
        return (X - self.mean) / self.scale

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["mean"], doc["scale"])


def _with_intercept(Z):
    return np.hstack([Z, np.ones((Z.shape[0], 1))])


def _masked(scores, present):
    return np.where(present, scores, -np.inf)


def _meta_of(data: EncodedDataset):
    return {"n_features": data.n_features, "n_samples": data.n_samples, "feature_names": data.feature_names}


def _meta(doc):
    return {"n_features": doc["n_features"], "n_samples": doc["n_samples"], "feature_names": doc.get("feature_names")}


# ---------------------------------------------------------------- multinomial logit


def mnl_loss_and_grad(coef, Z1, y, w, present=None):
    """Weighted mean cross-entropy of ``softmax(Z1 @ coef.T)`` and its gradient in ``coef``.

    ``coef`` is (5, D+1) with the intercept last; ``Z1`` already carries the
    column of ones. Rows of absent classes are masked out of the softmax.
    """
    present = np.ones(coef.shape[0], dtype=bool) if present is None else present
    scores = _masked(Z1 @ coef.T, present)
    logp = log_softmax(scores)
    W = w.sum()
    n = Z1.shape[0]
    loss = -np.dot(w, logp[np.arange(n), y]) / W
    resid = np.exp(logp)
    resid[np.arange(n), y] -= 1.0
    grad = (resid * (w / W)[:, None]).T @ Z1
    grad[~present] = 0.0
    return loss, grad


def _mnl_hessian(P, Z1, w, free):
    """Hessian of the weighted cross-entropy over the free class rows (block layout, class-major)."""
    Zw = Z1 * (w / w.sum())[:, None]
    m = len(free)
    d = Z1.shape[1]
    H = np.empty((m * d, m * d))
    for a, ka in enumerate(free):
        for b, kb in enumerate(free[a:], start=a):
            c = -P[:, ka] * P[:, kb]
            if ka == kb:
                c = c + P[:, ka]
            block = (Zw * c[:, None]).T @ Z1
            H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
            H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block.T
    return H


class MnlModel(FittedModel):
    """``coef`` is (5, D+1) in standardized feature space, intercept last; the reference row is zero."""

    def __init__(self, spec, coef, present, standardizer, **meta):
        super().__init__(spec, **meta)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.present = np.asarray(present, dtype=bool)
        self.standardizer = standardizer

    def _proba(self, X):
        Z1 = _with_intercept(self.standardizer(X))
        return softmax(_masked(Z1 @ self.coef.T, self.present))

    def _params(self):
        return {"coef": self.coef, "present": self.present.tolist(), "standardizer": self.standardizer.to_dict()}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, params["coef"], params["present"], Standardizer.from_dict(params["standardizer"]),
                   **_meta(meta))


@register(Family.MNL, MnlModel)
def _fit_mnl(data: EncodedDataset, spec: LearnerSpec) -> MnlModel:
    """Damped Newton with Armijo backtracking; the loss never increases between iterates."""
    hp = spec.hyperparameters
    present = present_classes(data)
    free = np.flatnonzero(present)[1:]  # lowest present class is the zero reference
    X, y, w = data.features, data.labels, data.weights
    std = Standardizer.fit(X, w)
    Z1 = _with_intercept(std(X))
    d = Z1.shape[1]
    coef = np.zeros((N_CLASSES, d))
    loss, grad = mnl_loss_and_grad(coef, Z1, y, w, present)
    history = [float(loss)]
    converged = free.size == 0
    it = 0
    while not converged and it < hp["max_iter"]:
        g = grad[free].ravel()
        if np.max(np.abs(g)) < hp["tol"]:
            converged = True
            break
        it += 1
        P = softmax(_masked(Z1 @ coef.T, present))
        H = _mnl_hessian(P, Z1, w, free)
        step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = np.dot(g, step)
        if not np.all(np.isfinite(step)) or slope >= 0:
            step, slope = -g, -np.dot(g, g)
        t = 1.0
        while True:
            trial = coef.copy()
            trial[free] += t * step.reshape(len(free), d)
            new_loss, new_grad = mnl_loss_and_grad(trial, Z1, y, w, present)
            if not np.isfinite(new_loss):
                raise NumericalError("MNL loss became non-finite", iteration=it)
            if new_loss <= loss + 1e-4 * t * slope:
                break
            t *= 0.5
            if t < 1e-12:
                break
        if new_loss > loss:
            # no descent possible at machine precision; the current point is final
            break
        coef, loss, grad = trial, new_loss, new_grad
        history.append(float(loss))
    info = {"converged": bool(converged), "iterations": it, "loss": float(loss), "loss_history": history}
    return MnlModel(spec, coef, present, std, info=info, **_meta_of(data))


# ---------------------------------------------------------------- Gaussian naive Bayes


class GaussianNbModel(FittedModel):
    def __init__(self, spec, prior, mean, var, epsilon, **meta):
        super().__init__(spec, **meta)
        self.prior = np.asarray(prior, dtype=np.float64)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.var = np.asarray(var, dtype=np.float64)
        self.epsilon = float(epsilon)

    def joint_log_likelihood(self, X):
        present = self.prior > 0
        jll = np.full((X.shape[0], N_CLASSES), -np.inf)
        for k in np.flatnonzero(present):
            v = self.var[k]
            ll = -0.5 * np.sum(np.log(2.0 * np.pi * v)) - 0.5 * np.sum((X - self.mean[k]) ** 2 / v, axis=1)
            jll[:, k] = np.log(self.prior[k]) + ll
        return jll

    def _proba(self, X):
        return softmax(self.joint_log_likelihood(X))

    def _params(self):
        return {"prior": self.prior, "mean": self.mean, "var": self.var, "epsilon": self.epsilon}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, params["prior"], params["mean"], params["var"], params["epsilon"], **_meta(meta))


@register(Family.NB, GaussianNbModel)
def _fit_nb(data: EncodedDataset, spec: LearnerSpec) -> GaussianNbModel:
    X, y, w = data.features, data.labels, data.weights
    p = w / w.sum()
    overall = p @ (X - p @ X) ** 2
    eps = spec.hyperparameters["var_smoothing"] * overall.max()
    if eps <= 0:
        eps = spec.hyperparameters["var_smoothing"]
    totals = np.bincount(y, weights=w, minlength=N_CLASSES)
    D = X.shape[1]
    mean = np.zeros((N_CLASSES, D))
    var = np.ones((N_CLASSES, D))
    for k in np.flatnonzero(totals > 0):
        rows = y == k
        wk = w[rows] / totals[k]
        mean[k] = wk @ X[rows]
        var[k] = wk @ (X[rows] - mean[k]) ** 2 + eps
    return GaussianNbModel(spec, totals / totals.sum(), mean, var, eps, **_meta_of(data))


# ---------------------------------------------------------------- k nearest neighbours


@njit(cache=True)
def _knn_votes(Q, X, y, w, k, n_classes):
    """Weighted class votes of the ``k`` nearest rows of ``X`` for each query.

    Exact squared distances; among equidistant rows the lower index wins, so
    the neighbour set is unique.
    """
    m, n, D = Q.shape[0], X.shape[0], X.shape[1]
    votes = np.zeros((m, n_classes))
    best_d = np.empty(k)
    best_i = np.empty(k, dtype=np.int64)
    for q in range(m):
        filled = 0
        for i in range(n):
            d = 0.0
            for f in range(D):
                diff = Q[q, f] - X[i, f]
                d += diff * diff
            if filled < k:
                pos = filled
                filled += 1
            elif d < best_d[k - 1]:
                pos = k - 1
            else:
                continue
            # insertion keeps the list sorted by distance, earlier index first on ties
            while pos > 0 and best_d[pos - 1] > d:
                best_d[pos] = best_d[pos - 1]
                best_i[pos] = best_i[pos - 1]
                pos -= 1
            best_d[pos] = d
            best_i[pos] = i
        for t in range(k):
            votes[q, y[best_i[t]]] += w[best_i[t]]
    return votes


class KnnModel(FittedModel):
    """Stores the (canonically ordered) training rows; probabilities are weighted vote shares."""

    def __init__(self, spec, X, y, w, **meta):
        super().__init__(spec, **meta)
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.w = np.asarray(w, dtype=np.float64)
        self.k = int(spec.hyperparameters["k"])

    def _proba(self, X):
        votes = _knn_votes(np.ascontiguousarray(X), self.X, self.y, self.w, self.k, N_CLASSES)
        return votes / votes.sum(axis=1, keepdims=True)

    def _params(self):
        return {"X": self.X, "y": self.y, "w": self.w}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, params["X"], params["y"], params["w"], **_meta(meta))


@register(Family.KNN, KnnModel)
def _fit_knn(data: EncodedDataset, spec: LearnerSpec) -> KnnModel:
    k = spec.hyperparameters["k"]
    if k > data.n_samples:
        raise ValidationError(f"k = {k} exceeds the {data.n_samples} training rows")
    return KnnModel(spec, data.features, data.labels, data.weights, **_meta_of(data))


# ---------------------------------------------------------------- linear SVM


def svm_objective_and_grad(coef, Z1, T, w, lam, present=None):
    """One-vs-rest objective summed over classes, and a subgradient.

    Per class: ``lam / 2 * |coef[k, :-1]|^2 + sum_i w_i max(0, 1 - T_ik s_ik) / sum_i w_i``
    with ``s = Z1 @ coef.T``; the intercept (last column) is not penalized.
    ``T`` holds +1 for the class and -1 otherwise.
    """
    present = np.ones(coef.shape[0], dtype=bool) if present is None else present
    p = w / w.sum()
    margin = T * (Z1 @ coef.T)
    hinge = np.maximum(0.0, 1.0 - margin)
    reg = coef.copy()
    reg[:, -1] = 0.0
    obj = 0.5 * lam * np.sum(reg[present] ** 2) + np.sum((p @ hinge)[present])
    active = (margin < 1.0) * T * p[:, None]
    grad = lam * reg - active.T @ Z1
    grad[~present] = 0.0
    return obj, grad


class LinearSvmModel(FittedModel):
    """Decision values ``s_k = coef[k] . [z, 1]``; probabilities are their softmax (a reporting surrogate)."""

    def __init__(self, spec, coef, present, standardizer, **meta):
        super().__init__(spec, **meta)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.present = np.asarray(present, dtype=bool)
        self.standardizer = standardizer

    def decision_function(self, X):
        X = self._check_X(X)
        return _masked(_with_intercept(self.standardizer(X)) @ self.coef.T, self.present)

    def _proba(self, X):
        return softmax(self.decision_function(X))

    def _params(self):
        return {"coef": self.coef, "present": self.present.tolist(), "standardizer": self.standardizer.to_dict()}

    @classmethod
    def _from_params(cls, spec, meta, params):
        return cls(spec, params["coef"], params["present"], Standardizer.from_dict(params["standardizer"]),
                   **_meta(meta))


@register(Family.SVM, LinearSvmModel)
def _fit_svm(data: EncodedDataset, spec: LearnerSpec) -> LinearSvmModel:
    """Full-batch Pegasos: step ``1 / (lam t)``, iterates averaged over the second half of the run."""
    hp = spec.hyperparameters
    lam = 1.0 / hp["C"]
    T_max = hp["max_iter"]
    X, y, w = data.features, data.labels, data.weights
    present = present_classes(data)
    std = Standardizer.fit(X, w)
    Z1 = _with_intercept(std(X))
    T = np.where(y[:, None] == np.arange(N_CLASSES), 1.0, -1.0)
    coef = np.zeros((N_CLASSES, Z1.shape[1]))
    avg = np.zeros_like(coef)
    n_avg = 0
    start = T_max // 2
    objective = []
    for t in range(1, T_max + 1):
        obj, grad = svm_objective_and_grad(coef, Z1, T, w, lam, present)
        if not np.isfinite(obj):
            raise NumericalError("SVM objective became non-finite", iteration=t)
        objective.append(obj)
        coef = coef - grad / (lam * t)
        if t > start:
            n_avg += 1
            avg += (coef - avg) / n_avg
    final, _ = svm_objective_and_grad(avg, Z1, T, w, lam, present)
    # converged: averaged iterate is no worse than the best raw iterate of the last tenth
    tail = objective[-max(1, T_max // 10):]
    converged = bool(final <= min(tail) + 1e-3 * max(1.0, abs(final)))
    info = {"objective": float(final), "converged": converged, "iterations": T_max}
    return LinearSvmModel(spec, avg, present, std, info=info, **_meta_of(data))


# ---------------------------------------------------------------- multilayer perceptron


def mlp_forward(params, Z, present):
    W1, b1, W2, b2 = params
    pre = Z @ W1 + b1
    H = np.maximum(pre, 0.0)
    return H, _masked(H @ W2 + b2, present)


def mlp_loss_and_grad(params, Z, y, w, present=None):
    """Weighted mean cross-entropy of the network and its gradients ``(dW1, db1, dW2, db2)``."""
    W1, b1, W2, b2 = params
    present = np.ones(W2.shape[1], dtype=bool) if present is None else present
    H, scores = mlp_forward(params, Z, present)
    logp = log_softmax(scores)
    n = Z.shape[0]
    p = w / w.sum()
    loss = -np.dot(p, logp[np.arange(n), y])
    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta *= p[:, None]
    dW2 = H.T @ delta
    db2 = delta.sum(axis=0)
    dH = (delta @ W2.T) * (H > 0)
    dW1 = Z.T @ dH
    db1 = dH.sum(axis=0)
    return loss, (dW1, db1, dW2, db2)


class MlpModel(FittedModel):
    def __init__(self, spec, params, present, standardizer, **meta):
        super().__init__(spec, **meta)
        self.params = tuple(np.asarray(a, dtype=np.float64) for a in params)
        self.present = np.asarray(present, dtype=bool)
        self.standardizer = standardizer

    def _proba(self, X):
        _, scores = mlp_forward(self.params, self.standardizer(X), self.present)
        return softmax(scores)

    def _params(self):
        W1, b1, W2, b2 = self.params
        return {"W1": W1, "b1": b1, "W2": W2, "b2": b2, "present": self.present.tolist(),
                "standardizer": self.standardizer.to_dict()}

    @classmethod
    def _from_params(cls, spec, meta, params):
        arrays = [params[k] for k in ("W1", "b1", "W2", "b2")]
        return cls(spec, arrays, params["present"], Standardizer.from_dict(params["standardizer"]), **_meta(meta))


def glorot_init(rng, n_in, n_hidden, n_out):
    def layer(a, b):
        bound = np.sqrt(6.0 / (a + b))
        return rng.uniform(-bound, bound, size=(a, b)), rng.uniform(-bound, bound, size=b)

    W1, b1 = layer(n_in, n_hidden)
    W2, b2 = layer(n_hidden, n_out)
    return [W1, b1, W2, b2]


@register(Family.ANN, MlpModel)
def _fit_mlp(data: EncodedDataset, spec: LearnerSpec) -> MlpModel:
    """Mini-batch Adam on the weighted cross-entropy.

    Batches follow a seeded permutation of the (canonically ordered) rows each
    epoch. Training stops early once the epoch loss has failed to improve on
    the best value by ``tol`` for ``n_iter_no_change`` consecutive epochs.
    """
    hp = spec.hyperparameters
    rng = np.random.default_rng(spec.seed)
    X, y, w = data.features, data.labels, data.weights
    present = present_classes(data)
    std = Standardizer.fit(X, w)
    Z = std(X)
    n = Z.shape[0]
    params = glorot_init(rng, Z.shape[1], hp["hidden_units"], N_CLASSES)
    m = [np.zeros_like(a) for a in params]
    v = [np.zeros_like(a) for a in params]
    beta1, beta2, eps_adam = 0.9, 0.999, 1e-8
    lr, bs = hp["learning_rate"], hp["batch_size"]
    W_total = w.sum()
    best, stall, step = np.inf, 0, 0
    history = []
    converged = False
    for epoch in range(hp["epochs"]):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, bs):
            idx = perm[lo:lo + bs]
            loss, grads = mlp_loss_and_grad(params, Z[idx], y[idx], w[idx], present)
            if not np.isfinite(loss):
                raise NumericalError("MLP loss became non-finite", iteration=epoch)
            epoch_loss += loss * w[idx].sum() / W_total
            step += 1
            for a, g, ma, va in zip(params, grads, m, v):
                ma *= beta1
                ma += (1 - beta1) * g
                va *= beta2
                va += (1 - beta2) * g * g
                a -= lr * (ma / (1 - beta1 ** step)) / (np.sqrt(va / (1 - beta2 ** step)) + eps_adam)
        history.append(float(epoch_loss))
        if epoch_loss > best - hp["tol"]:
            stall += 1
        else:
            stall = 0
        best = min(best, epoch_loss)
        if stall >= hp["n_iter_no_change"]:
            converged = True
            break
    info = {"converged": converged, "epochs": len(history), "loss_history": history}
    return MlpModel(spec, params, present, std, info=info, **_meta_of(data))


# ---------------------------------------------------------------- public API


def fit_mnl(data: EncodedDataset, max_iter=1000, tol=1e-6) -> MnlModel:
    return fit(LearnerSpec(Family.MNL, {"max_iter": max_iter, "tol": tol}), data)


def fit_gaussian_nb(data: EncodedDataset, var_smoothing=1e-9) -> GaussianNbModel:
    return fit(LearnerSpec(Family.NB, {"var_smoothing": var_smoothing}), data)


def fit_knn(data: EncodedDataset, k=5) -> KnnModel:
    return fit(LearnerSpec(Family.KNN, {"k": k}), data)


def fit_linear_svm(data: EncodedDataset, C=1.0, max_iter=1000) -> LinearSvmModel:
    return fit(LearnerSpec(Family.SVM, {"C": C, "max_iter": max_iter}), data)


def fit_mlp(data: EncodedDataset, epochs=200, learning_rate=1e-3, batch_size=200, seed=0,
            **hyperparameters) -> MlpModel:
    hp = {"epochs": epochs, "learning_rate": learning_rate, "batch_size": batch_size, **hyperparameters}
    return fit(LearnerSpec(Family.ANN, hp, seed), data)
