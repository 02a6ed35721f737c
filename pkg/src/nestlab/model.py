"""Per-pixel segmentation model: small ReLU backbone plus linear head.

The head stores one weight column per class (column 0 is background).
Backprop is hand-written; `snapshot` deep-copies a model into a frozen
"old model" whose parameters must never change afterwards.
"""

import copy
import json

import numpy as np

from .errors import ShapeError


def relu(x):
    return np.maximum(x, 0.0)


class Backbone:
    """Stack of linear layers with ReLU after each; zero layers = identity."""

    def __init__(self, layers, input_dim):
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers]
        self.input_dim = input_dim
        dim = input_dim
        for w, b in self.layers:
            if w.shape[1] != dim or b.shape[0] != w.shape[0]:
                raise ShapeError(f"layer shape {w.shape} does not chain from dim {dim}")
            dim = w.shape[0]
        self.output_dim = dim

    @classmethod
    def identity(cls, dim):
        return cls([], dim)

    @classmethod
    def single_relu(cls, input_dim, output_dim, rng, scale=None):
        if scale is None:
            scale = 1.0 / np.sqrt(input_dim)
        w = rng.normal((output_dim, input_dim), std=scale)
        b = np.zeros(output_dim)
        return cls([(w, b)], input_dim)

    def forward(self, x):
        """x: (P, d_in) -> (P, d)."""
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"input dim {x.shape[1]} != {self.input_dim}")
        for w, b in self.layers:
            x = relu(x @ w.T + b)
        return x

    def forward_cache(self, x):
        if x.shape[1] != self.input_dim:
            raise ShapeError(f"input dim {x.shape[1]} != {self.input_dim}")
        acts = [x]
        for w, b in self.layers:
            x = relu(x @ w.T + b)
            acts.append(x)
        return x, acts

    def backward(self, dout, acts):
        """Returns per-layer (dW, db) and the gradient w.r.t. the input."""
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            # ReLU subgradient: 0 at 0
            dpre = dout * (acts[i + 1] > 0)
            grads[i] = (dpre.T @ acts[i], dpre.sum(axis=0))
            dout = dpre @ w
        return grads, dout


class Head:
    """Linear classifier: weights (d, C), optional per-class biases."""

    def __init__(self, weights, biases=None):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.biases = None if biases is None else np.asarray(biases, dtype=np.float64)
        if self.biases is not None and self.biases.shape[0] != self.weights.shape[1]:
            raise ShapeError("bias count must match column count")

    @property
    def num_classes(self):
        return self.weights.shape[1]

    @property
    def dim(self):
        return self.weights.shape[0]

    def logits(self, feats):
        z = feats @ self.weights
        if self.biases is not None:
            z = z + self.biases
        return z

    def copy(self):
        return Head(self.weights.copy(), None if self.biases is None else self.biases.copy())


def grow_head(head, new_columns, new_biases=None):
    """Append columns (and biases) without touching existing ones."""
    new_columns = np.asarray(new_columns, dtype=np.float64)
    if new_columns.size and new_columns.shape[0] != head.dim:
        raise ShapeError(f"new columns have {new_columns.shape[0]} rows, head dim is {head.dim}")
    if new_columns.size == 0:
        return head.copy()
    weights = np.concatenate([head.weights, new_columns], axis=1)
    biases = None
    if head.biases is not None:
        if new_biases is None:
            new_biases = np.zeros(new_columns.shape[1])
        biases = np.concatenate([head.biases, np.asarray(new_biases, dtype=np.float64)])
    return Head(weights, biases)


class SegModel:
    def __init__(self, backbone, head, frozen=False):
        self.backbone = backbone
        self.head = head
        self.frozen = frozen

    def snapshot(self):
        """Deep frozen copy; training the live model never touches it."""
        return SegModel(copy.deepcopy(self.backbone), self.head.copy(), frozen=True)

    def param_bytes(self):
        parts = [w.tobytes() + b.tobytes() for w, b in self.backbone.layers]
        parts.append(self.head.weights.tobytes())
        if self.head.biases is not None:
            parts.append(self.head.biases.tobytes())
        return b"".join(parts)

    def flat_params(self):
        parts = [p.ravel() for w, b in self.backbone.layers for p in (w, b)]
        parts.append(self.head.weights.ravel())
        if self.head.biases is not None:
            parts.append(self.head.biases.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    def set_flat_params(self, flat):
        i = 0
        for li, (w, b) in enumerate(self.backbone.layers):
            nw, nb = w.size, b.size
            self.backbone.layers[li] = (
                flat[i : i + nw].reshape(w.shape).copy(),
                flat[i + nw : i + nw + nb].copy(),
            )
            i += nw + nb
        hw = self.head.weights
        self.head.weights = flat[i : i + hw.size].reshape(hw.shape).copy()
        i += hw.size
        if self.head.biases is not None:
            self.head.biases = flat[i : i + self.head.biases.size].copy()


def features(model, image):
    """Backbone output per pixel, shaped (H, W, d)."""
    h, w, d_in = image.features.shape
    out = model.backbone.forward(image.features.reshape(-1, d_in))
    return out.reshape(h, w, -1)


def logits(model, image):
    """Head output per pixel, shaped (H, W, C)."""
    h, w, d_in = image.features.shape
    feats = model.backbone.forward(image.features.reshape(-1, d_in))
    return model.head.logits(feats).reshape(h, w, -1)


def save_checkpoint(model, path):
    """JSON header line followed by raw float64 parameters in fixed order."""
    header = {
        "input_dim": model.backbone.input_dim,
        "layer_dims": [list(w.shape) for w, _ in model.backbone.layers],
        "head_cols": model.head.num_classes,
        "head_dim": model.head.dim,
        "has_bias": model.head.biases is not None,
    }
    with open(path, "wb") as fh:
        fh.write((json.dumps(header) + "\n").encode())
        fh.write(model.param_bytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        raw = fh.read()
    flat = np.frombuffer(raw, dtype=np.float64).copy()
    i = 0
    layers = []
    for out_d, in_d in header["layer_dims"]:
        w = flat[i : i + out_d * in_d].reshape(out_d, in_d)
        i += out_d * in_d
        b = flat[i : i + out_d]
        i += out_d
        layers.append((w, b))
    backbone = Backbone(layers, header["input_dim"])
    d, c = header["head_dim"], header["head_cols"]
    weights = flat[i : i + d * c].reshape(d, c)
    i += d * c
    biases = flat[i : i + c] if header["has_bias"] else None
    return SegModel(backbone, Head(weights, biases))
