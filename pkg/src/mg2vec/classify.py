"""Supervised read classifiers over feature vectors.

Three baselines: multinomial logistic regression (deterministic Newton-CG
fit), a 2x256 ReLU MLP trained with Adam at a fixed learning rate, and a
deeper 256/512/1024 ReLU net with a projected residual connection from the
first hidden layer to the third layer's input, trained with weighted
cross-entropy and the warmup learning-rate schedule. The neural nets are
plain NumPy with hand-written backprop; fits are deterministic per seed.
"""

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from mg2vec.errors import (
    ArtifactFormatError,
    DomainError,
    TrainingDivergedError,
    ValidationError,
)
from mg2vec.optim import Adam, warmup_lr


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray    # (n,) int class indices
    classes: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValidationError("features and labels must align")
        if not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain non-finite values")
        if len(self.classes) < 2:
            raise ValidationError("training needs at least 2 classes")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.classes)):
            raise ValidationError("label index outside class catalog")

    @classmethod
    def from_names(cls, features, names, classes=None):
        classes = list(classes) if classes is not None else sorted(set(names))
        index = {c: i for i, c in enumerate(classes)}
        labels = np.array([index[n] for n in names], dtype=np.int64)
        return cls(features=features, labels=labels, classes=classes)


def _softmax(scores):
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def class_weights_from_counts(counts):
    """Inverse-frequency class weights normalized to mean 1.

    Classes with zero training support get weight 0 (nothing to reweight);
    the normalization averages over the supported classes.
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.sum() <= 0:
        raise DomainError("class counts are all zero")
    weights = np.zeros_like(counts)
    present = counts > 0
    weights[present] = counts[present].sum() / counts[present]
    weights /= weights[present].mean()
    return weights


@dataclass
class LinearClassifier:
    weights: np.ndarray  # (dim, n_classes)
    bias: np.ndarray     # (n_classes,)
    classes: list[str]
    converged: bool = True

    def scores(self, features):
        return _softmax(np.asarray(features) @ self.weights + self.bias)

    def predict(self, features):
        return self.scores(features).argmax(axis=1)

    def predict_names(self, features):
        return [self.classes[i] for i in self.predict(features)]


def train_logreg(dataset, l2_penalty=0.1, max_iters=10000, tol=1e-6):
    """Multinomial logistic regression via Newton-CG (bias unpenalized).

    Deterministic (zero initialization, exact gradient and Hessian-vector
    products). If the iteration cap is hit before the gradient norm drops
    below tol, the best iterate is returned with converged=False.
    """
    X = dataset.features
    n, dim = X.shape
    n_classes = len(dataset.classes)
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), dataset.labels] = 1.0

    def unpack(theta):
        w = theta[: dim * n_classes].reshape(dim, n_classes)
        b = theta[dim * n_classes:]
        return w, b

    def value(theta):
        w, b = unpack(theta)
        scores = X @ w + b
        shifted = scores - scores.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        ll = shifted[np.arange(n), dataset.labels] - log_z
        return -ll.mean() + 0.5 * l2_penalty * float((w * w).sum())

    def gradient(theta):
        w, b = unpack(theta)
        delta = (_softmax(X @ w + b) - onehot) / n
        return np.concatenate([
            (X.T @ delta + l2_penalty * w).ravel(), delta.sum(axis=0),
        ])

    def hessp(theta, vec):
        w, b = unpack(theta)
        vw, vb = unpack(vec)
        probs = _softmax(X @ w + b)
        s = X @ vw + vb
        a = probs * (s - (probs * s).sum(axis=1, keepdims=True)) / n
        return np.concatenate([(X.T @ a + l2_penalty * vw).ravel(), a.sum(axis=0)])

    theta0 = np.zeros(dim * n_classes + n_classes)
    result = scipy.optimize.minimize(
        value, theta0, jac=gradient, hessp=hessp, method="Newton-CG",
        options={"maxiter": max_iters, "xtol": 1e-10},
    )
    weights, bias = unpack(result.x)
    converged = bool(np.max(np.abs(gradient(result.x))) < tol) or bool(result.success)
    return LinearClassifier(
        weights=weights, bias=bias, classes=list(dataset.classes), converged=converged,
    )


@dataclass
class NeuralClassifier:
    params: dict
    classes: list[str]
    arch: str  # "mlp" or "deep"
    epoch_losses: list[float] = field(default_factory=list)

    def scores(self, features):
        logits, _ = _net_forward(self.arch, self.params, np.asarray(features, float))
        return _softmax(logits)

    def predict(self, features):
        return self.scores(features).argmax(axis=1)

    def predict_names(self, features):
        return [self.classes[i] for i in self.predict(features)]


def _he_init(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def _init_net(arch, dim, n_classes, hidden, seed):
    rng = np.random.default_rng(seed)
    params = {}
    if arch == "mlp":
        widths = [dim, hidden, hidden]
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            params[f"w{i}"] = _he_init(rng, a, b)
            params[f"b{i}"] = np.zeros(b)
        params["w_out"] = _he_init(rng, widths[-1], n_classes)
        params["b_out"] = np.zeros(n_classes)
    elif arch == "deep":
        w1, w2, w3 = 256, 512, 1024
        params["w0"], params["b0"] = _he_init(rng, dim, w1), np.zeros(w1)
        params["w1"], params["b1"] = _he_init(rng, w1, w2), np.zeros(w2)
        params["w_res"] = _he_init(rng, w1, w2)  # projects the residual to width 512
        params["w2"], params["b2"] = _he_init(rng, w2, w3), np.zeros(w3)
        params["w_out"], params["b_out"] = _he_init(rng, w3, n_classes), np.zeros(n_classes)
    else:
        raise DomainError(f"unknown architecture {arch!r}")
    return params


def _net_forward(arch, params, x):
    cache = {"x": x}
    if arch == "mlp":
        z0 = x @ params["w0"] + params["b0"]
        h0 = np.maximum(z0, 0.0)
        z1 = h0 @ params["w1"] + params["b1"]
        h1 = np.maximum(z1, 0.0)
        logits = h1 @ params["w_out"] + params["b_out"]
        cache.update(z0=z0, h0=h0, z1=z1, h1=h1)
        return logits, cache
    z0 = x @ params["w0"] + params["b0"]
    h0 = np.maximum(z0, 0.0)
    z1 = h0 @ params["w1"] + params["b1"]
    h1 = np.maximum(z1, 0.0)
    joined = h1 + h0 @ params["w_res"]  # residual from layer 1 into layer 3 input
    z2 = joined @ params["w2"] + params["b2"]
    h2 = np.maximum(z2, 0.0)
    logits = h2 @ params["w_out"] + params["b_out"]
    cache.update(z0=z0, h0=h0, z1=z1, h1=h1, joined=joined, z2=z2, h2=h2)
    return logits, cache


def _net_backward(arch, params, cache, dlogits):
    grads = {}
    if arch == "mlp":
        grads["w_out"] = cache["h1"].T @ dlogits
        grads["b_out"] = dlogits.sum(axis=0)
        dh1 = dlogits @ params["w_out"].T
        dz1 = dh1 * (cache["z1"] > 0)
        grads["w1"] = cache["h0"].T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        dh0 = dz1 @ params["w1"].T
        dz0 = dh0 * (cache["z0"] > 0)
        grads["w0"] = cache["x"].T @ dz0
        grads["b0"] = dz0.sum(axis=0)
        return grads
    grads["w_out"] = cache["h2"].T @ dlogits
    grads["b_out"] = dlogits.sum(axis=0)
    dh2 = dlogits @ params["w_out"].T
    dz2 = dh2 * (cache["z2"] > 0)
    grads["w2"] = cache["joined"].T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    djoined = dz2 @ params["w2"].T
    dz1 = djoined * (cache["z1"] > 0)
    grads["w1"] = cache["h0"].T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    grads["w_res"] = cache["h0"].T @ djoined
    dh0 = dz1 @ params["w1"].T + djoined @ params["w_res"].T
    dz0 = dh0 * (cache["z0"] > 0)
    grads["w0"] = cache["x"].T @ dz0
    grads["b0"] = dz0.sum(axis=0)
    return grads


def _weighted_xent(logits, labels, sample_weights):
    n = len(labels)
    probs = _softmax(logits)
    picked = np.clip(probs[np.arange(n), labels], 1e-300, None)
    loss = float((sample_weights * -np.log(picked)).sum() / n)
    dlogits = probs
    dlogits[np.arange(n), labels] -= 1.0
    dlogits *= sample_weights[:, None] / n
    return loss, dlogits


def _fit_net(arch, dataset, seed, epochs, batch_size, lr_for_step, l2_penalty,
             class_weights, hidden=256):
    X, y = dataset.features, dataset.labels
    params = _init_net(arch, X.shape[1], len(dataset.classes), hidden, seed)
    optimizer = Adam(params)
    shuffle_rng = np.random.default_rng([seed, 17])
    if class_weights is None:
        class_weights = np.ones(len(dataset.classes))
    step = 0
    epoch_losses = []
    for _epoch in range(epochs):
        order = shuffle_rng.permutation(len(X))
        losses = []
        for lo in range(0, len(order), batch_size):
            pick = order[lo:lo + batch_size]
            logits, cache = _net_forward(arch, params, X[pick])
            loss, dlogits = _weighted_xent(logits, y[pick], class_weights[y[pick]])
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"{arch} loss became non-finite")
            grads = _net_backward(arch, params, cache, dlogits)
            if l2_penalty:
                for name in grads:
                    if name.startswith("w"):
                        grads[name] += l2_penalty * params[name]
                        loss += 0.5 * l2_penalty * float((params[name] ** 2).sum())
            step += 1
            optimizer.step(grads, lr_for_step(step))
            losses.append(loss)
        epoch_losses.append(float(np.mean(losses)))
    return NeuralClassifier(
        params=params, classes=list(dataset.classes), arch=arch,
        epoch_losses=epoch_losses,
    )


def train_mlp(dataset, seed=0, epochs=200, batch_size=32, learning_rate=4e-5,
              l2_penalty=1e-5, hidden=256):
    """2 hidden ReLU layers (256 each), Adam at a fixed learning rate."""
    return _fit_net(
        "mlp", dataset, seed, epochs, batch_size,
        lambda step: learning_rate, l2_penalty, class_weights=None, hidden=hidden,
    )


CLASSIFIER_FORMAT_VERSION = 1


def save_classifier(path, classifier):
    if isinstance(classifier, LinearClassifier):
        kind = "logreg"
        arrays = {"weights": classifier.weights, "bias": classifier.bias}
        extra = {"converged": classifier.converged}
    elif isinstance(classifier, NeuralClassifier):
        kind = classifier.arch
        arrays = classifier.params
        extra = {}
    else:
        raise ValidationError(f"cannot save classifier of type {type(classifier)!r}")
    names = sorted(arrays)
    header = {
        "format": "mg2vec-classifier",
        "version": CLASSIFIER_FORMAT_VERSION,
        "kind": kind,
        "classes": list(classifier.classes),
        "arrays": [[name, list(arrays[name].shape)] for name in names],
        **extra,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("ascii") + b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())


def load_classifier(path):
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline())
        except ValueError:
            raise ArtifactFormatError(f"{path}: missing classifier header") from None
        if header.get("format") != "mg2vec-classifier":
            raise ArtifactFormatError(f"{path}: not a classifier checkpoint")
        if header.get("version") != CLASSIFIER_FORMAT_VERSION:
            raise ArtifactFormatError(f"{path}: unsupported classifier version")
        arrays = {}
        for name, shape in header["arrays"]:
            size = int(np.prod(shape)) * 8
            payload = fh.read(size)
            if len(payload) != size:
                raise ArtifactFormatError(f"{path}: truncated classifier payload")
            arrays[name] = np.frombuffer(payload, dtype=np.float64).reshape(shape).copy()
    classes = list(header["classes"])
    if header["kind"] == "logreg":
        return LinearClassifier(
            weights=arrays["weights"], bias=arrays["bias"], classes=classes,
            converged=bool(header.get("converged", True)),
        )
    return NeuralClassifier(params=arrays, classes=classes, arch=header["kind"])


def train_deep(dataset, class_weights=None, seed=0, epochs=10, batch_size=64,
               warmup_steps=400, schedule_dim=256):
    """Residual 256/512/1024 net with weighted cross-entropy.

    class_weights defaults to inverse label frequency normalized to mean 1;
    the learning rate follows the warmup schedule keyed to the first hidden
    width. The 15-epoch/batch-512 profile is reachable via the arguments.
    """
    if class_weights is None:
        counts = np.bincount(dataset.labels, minlength=len(dataset.classes))
        class_weights = class_weights_from_counts(counts)
    class_weights = np.asarray(class_weights, dtype=np.float64)
    if len(class_weights) != len(dataset.classes):
        raise ValidationError("one class weight per class required")
    return _fit_net(
        "deep", dataset, seed, epochs, batch_size,
        lambda step: warmup_lr(step, schedule_dim, warmup_steps),
        l2_penalty=0.0, class_weights=class_weights,
    )
