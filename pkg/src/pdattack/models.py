"""Small differentiable classifiers with exact input gradients.

Two architectures are provided, a linear model and a ReLU multi-layer
perceptron.  Both follow the scikit-learn estimator protocol (``fit``,
``predict``, ``decision_function``, ``get_params``) and additionally expose
the per-example quantities the attacks need: the prediction margin, the
logistic surrogate loss of the margin and its gradient with respect to the
input, computed by a hand-written reverse pass.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import ShapeError, as_vector, check_label

FORMAT_HEADER = "pdattack-model 1"


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    ez = np.exp(z)
    return ez / (1.0 + ez)


def logistic_loss(m):
    """``log(1 + exp(m))`` without overflow for large ``m``."""
    m = float(m)
    if m > 0:
        return m + np.log1p(np.exp(-m))
    return float(np.log1p(np.exp(m)))


def _runner_up(f, y):
    """Index of the largest score other than ``y``; lowest index on ties."""
    masked = f.copy()
    masked[y] = -np.inf
    return int(np.argmax(masked))


class _Network(ClassifierMixin, BaseEstimator):
    """Shared machinery of the built-in networks.

    Fitted state is the tuple ``weights_`` holding ``(W1, b1, W2, b2, ...)``
    with ``W`` of shape ``(n_out, n_in)``.  Hidden layers use ReLU whose
    derivative at zero is taken as zero.  All arrays are made read-only after
    fitting so a fitted model can be shared between attack workers.
    """

    kind = None

    # -- construction -----------------------------------------------------

    @classmethod
    def from_weights(cls, weights, **params):
        """Build a fitted model directly from a list of weight arrays."""
        model = cls(**params)
        model._set_weights(weights)
        return model

    def _set_weights(self, weights):
        arrays = []
        for w in weights:
            a = np.array(w, dtype=np.float64)
            a.setflags(write=False)
            arrays.append(a)
        if len(arrays) < 2 or len(arrays) % 2:
            raise ShapeError("weights must alternate matrices and bias vectors")
        for i in range(0, len(arrays), 2):
            W, b = arrays[i], arrays[i + 1]
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {i // 2}: bias shape {b.shape} does not match {W.shape}")
            if i and W.shape[1] != arrays[i - 2].shape[0]:
                raise ShapeError(f"layer {i // 2} expects {W.shape[1]} inputs")
        if self.kind == "linear" and len(arrays) != 2:
            raise ShapeError("a linear model has exactly one layer")
        if arrays[-1].shape[0] < 2:
            raise ShapeError("at least two classes are required")
        self.weights_ = tuple(arrays)
        self.n_features_in_ = arrays[0].shape[1]
        self.n_classes_ = arrays[-1].shape[0]
        self.classes_ = np.arange(self.n_classes_)
        return self

    # -- forward / backward -------------------------------------------------

    def _forward(self, X):
        """Batched forward pass; returns logits and the hidden pre-activations."""
        h = X
        pre = []
        n_layers = len(self.weights_) // 2
        for i in range(n_layers):
            W, b = self.weights_[2 * i], self.weights_[2 * i + 1]
            z = h @ W.T + b
            if i < n_layers - 1:
                pre.append(z)
                h = np.maximum(z, 0.0)
            else:
                h = z
        return h, pre

    def _backward_input(self, pre, grad_out):
        """Pull a gradient on the logits back to the input."""
        n_layers = len(self.weights_) // 2
        g = grad_out
        for i in range(n_layers - 1, -1, -1):
            g = g @ self.weights_[2 * i]
            if i > 0:
                g = g * (pre[i - 1] > 0.0)
        return g

    def _vector(self, x):
        check_is_fitted(self, "weights_")
        return as_vector(x, self.n_features_in_)

    def logits(self, x):
        """Class scores for a single input vector."""
        f, _ = self._forward(self._vector(x)[None, :])
        return f[0]

    def margin(self, x, y):
        """Score of ``y`` minus the best competing score (negative iff misclassified)."""
        f = self.logits(x)
        y = check_label(y, self.n_classes_)
        return float(f[y] - f[_runner_up(f, y)])

    def surrogate_loss(self, x, y):
        return logistic_loss(self.margin(x, y))

    def loss_and_gradient(self, x, y):
        """Surrogate loss, margin and the input gradient of the loss in one pass."""
        return self._loss_and_gradient(self._vector(x), check_label(y, self.n_classes_))

    def _loss_and_gradient(self, x, y):
        # unchecked variant for the attack inner loop
        f, pre = self._forward(x[None, :])
        f = f[0]
        j = _runner_up(f, y)
        m = float(f[y] - f[j])
        grad_f = np.zeros(self.n_classes_)
        s = _sigmoid(m)
        grad_f[y] = s
        grad_f[j] = -s
        g = self._backward_input(pre, grad_f[None, :])[0]
        return logistic_loss(m), m, g

    def input_gradient(self, x, y):
        return self.loss_and_gradient(x, y)[2]

    # -- estimator API --------------------------------------------------------

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ShapeError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self._forward(X)[0]

    def predict(self, X):
        # np.argmax returns the first maximiser, which is the tie-break we want
        return np.argmax(self.decision_function(X), axis=1)

    def _layer_sizes(self, n_features, n_classes):
        raise NotImplementedError

    def fit(self, X, y):
        """Mini-batch gradient descent on softmax cross-entropy.

        Labels must be integers in ``[0, n_classes)``.  Runs a fixed number of
        epochs from a seeded initialisation, so results are reproducible.
        """
        X, y = check_X_y(X, y, dtype=np.float64)
        if not np.all(y == np.round(y)) or np.any(y < 0):
            raise ValueError("labels must be non-negative integers")
        y = y.astype(np.int64)
        n_classes = self.n_classes if self.n_classes is not None else max(2, int(y.max()) + 1)
        if y.max() >= n_classes:
            raise ValueError(f"label {y.max()} out of range for {n_classes} classes")
        rng = np.random.default_rng(self.random_state)
        sizes = self._layer_sizes(X.shape[1], n_classes)
        weights = []
        for layer, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
            weights.append(W)
            if layer == 0 and len(sizes) > 2:
                # first hidden hyperplanes pass through the centre of the unit box
                weights.append(-W @ np.full(n_in, 0.5))
            else:
                weights.append(np.zeros(n_out))
        if self.kind == "linear":
            weights[0] *= 0.01
        n = X.shape[0]
        onehot = np.eye(n_classes)[y]
        batch = min(self.batch_size, n)
        self.weights_ = tuple(weights)
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, batch):
                idx = order[start:start + batch]
                grads = self._cross_entropy_grads(X[idx], onehot[idx])
                weights = [w - self.learning_rate * g for w, g in zip(weights, grads)]
                self.weights_ = tuple(weights)
        self._set_weights(weights)
        return self

    def _cross_entropy_grads(self, X, onehot):
        f, pre = self._forward(X)
        f = f - f.max(axis=1, keepdims=True)
        p = np.exp(f)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - onehot) / X.shape[0]
        n_layers = len(self.weights_) // 2
        acts = [X] + [np.maximum(z, 0.0) for z in pre]
        grads = [None] * len(self.weights_)
        for i in range(n_layers - 1, -1, -1):
            grads[2 * i] = g.T @ acts[i]
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.weights_[2 * i]) * (pre[i - 1] > 0.0)
        return grads


class LinearClassifier(_Network):
    """Affine scores ``W @ x + b``."""

    kind = "linear"

    def __init__(self, epochs=200, learning_rate=0.5, batch_size=32, n_classes=None,
                 random_state=0):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.random_state = random_state

    def _layer_sizes(self, n_features, n_classes):
        return [n_features, n_classes]


class MLPClassifier(_Network):
    """Fully connected ReLU network."""

    kind = "mlp"

    def __init__(self, hidden_layer_sizes=(16,), epochs=1000, learning_rate=0.5, batch_size=32,
                 n_classes=None, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.n_classes = n_classes
        self.random_state = random_state

    def _layer_sizes(self, n_features, n_classes):
        return [n_features, *self.hidden_layer_sizes, n_classes]


# -- functional interface -------------------------------------------------------


def logits(model, x):
    return model.logits(x)


def predict(model, x):
    """Predicted class of a single input, lowest index winning ties."""
    return int(np.argmax(model.logits(x)))


def margin(model, x, y):
    return model.margin(x, y)


def surrogate_loss(model, x, y):
    return model.surrogate_loss(x, y)


def input_gradient(model, x, y):
    return model.input_gradient(x, y)


def train_classifier(X, y, kind="linear", **params):
    """Fit a built-in classifier of the given ``kind`` ("linear" or "mlp")."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty 2-D array")
    if np.asarray(y).shape != (X.shape[0],):
        raise ShapeError("labels do not match the number of examples")
    try:
        cls = {"linear": LinearClassifier, "mlp": MLPClassifier}[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
    return cls(**params).fit(X, y)


# -- serialisation --------------------------------------------------------------


def dumps(model):
    """Text serialisation: header, kind, layer sizes, then weights in layer order.

    Values are written with 17 significant digits so a round trip through
    :func:`loads` reproduces every float64 bit for bit.
    """
    check_is_fitted(model, "weights_")
    sizes = [model.n_features_in_] + [w.shape[0] for w in model.weights_[::2]]
    lines = [FORMAT_HEADER, f"kind {model.kind}", "dims " + " ".join(map(str, sizes))]
    for w in model.weights_:
        lines.append(" ".join(f"{v:.17g}" for v in w.ravel()))
    return "\n".join(lines) + "\n"


def loads(text):
    lines = text.strip().splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ValueError("not a pdattack model file")
    fields = dict(line.split(None, 1) for line in lines[1:3])
    kind = fields.get("kind")
    try:
        cls = {"linear": LinearClassifier, "mlp": MLPClassifier}[kind]
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None
    sizes = [int(s) for s in fields["dims"].split()]
    values = np.array(" ".join(lines[3:]).split(), dtype=np.float64)
    weights = []
    pos = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        for shape in ((n_out, n_in), (n_out,)):
            size = int(np.prod(shape))
            if pos + size > values.size:
                raise ValueError("model file is truncated")
            weights.append(values[pos:pos + size].reshape(shape))
            pos += size
    if pos != values.size:
        raise ValueError("model file has trailing values")
    params = {}
    if kind == "mlp":
        params["hidden_layer_sizes"] = tuple(sizes[1:-1])
    return cls.from_weights(weights, **params)


def save_model(model, path):
    with open(path, "w") as fh:
        fh.write(dumps(model))


def load_model(path):
    with open(path) as fh:
        return loads(fh.read())
