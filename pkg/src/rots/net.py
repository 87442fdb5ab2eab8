"""A small hand-differentiated 1D-CNN classifier.

Layers: valid 1D convolution, max-pooling with stride equal to its width,
ReLU, and dense (which flattens its input). One backward pass returns the
gradient of the mean cross-entropy with respect to the weights and, for every
batch element, the gradient of that element's own loss with respect to its
input; the latter drives attacks and the perturbation ascent.

Weights live in one flat float64 vector; layers read views into it.
"""

import re
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from rots.errors import ArchError, NumericError, ShapeError
from rots.seeding import stream

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class ArchSpec:
    """Layer list plus the input shape ``(C, T)`` it expects.

    Layers are tuples: ``("conv1d", out_channels, kernel)``,
    ``("maxpool1d", width)``, ``("relu",)``, ``("dense", units)``.
    The last layer must be dense with ``num_classes`` units.
    """

    layers: tuple
    input_shape: tuple

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(l) for l in self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        self.shapes()  # validates

    @property
    def num_classes(self):
        return self.layers[-1][1]

    def shapes(self):
        """Per-layer (input_shape, param_shapes) with shapes checked."""
        if not self.layers or self.layers[-1][0] != "dense":
            raise ArchError("architecture must end with a dense output layer")
        shape = self.input_shape
        out = []
        for idx, layer in enumerate(self.layers):
            kind = layer[0]
            if kind == "conv1d":
                o, k = layer[1], layer[2]
                if len(shape) != 2 or shape[1] < k or o < 1 or k < 1:
                    raise ArchError(f"layer {idx} conv1d(k={k}) cannot take input {shape}")
                params = [(o, shape[0], k), (o,)]
                nxt = (o, shape[1] - k + 1)
            elif kind == "maxpool1d":
                w = layer[1]
                if len(shape) != 2 or w < 1 or shape[1] // w < 1:
                    raise ArchError(f"layer {idx} maxpool1d({w}) cannot take input {shape}")
                params = []
                nxt = (shape[0], shape[1] // w)
            elif kind == "relu":
                params = []
                nxt = shape
            elif kind == "dense":
                u = layer[1]
                if u < 1:
                    raise ArchError(f"layer {idx} dense needs at least one unit")
                params = [(u, int(np.prod(shape))), (u,)]
                nxt = (u,)
            else:
                raise ArchError(f"unknown layer kind {kind!r}")
            out.append((shape, params))
            shape = nxt
        return out

    def num_params(self):
        return sum(int(np.prod(p)) for _, ps in self.shapes() for p in ps)

    def to_string(self):
        toks = []
        layers = list(self.layers[:-1])
        i = 0
        while i < len(layers):
            kind = layers[i][0]
            nxt = layers[i + 1][0] if i + 1 < len(layers) else None
            if kind == "conv1d" and nxt == "relu":
                toks.append(f"C:{layers[i][1]},K:{layers[i][2]}")
                i += 2
            elif kind == "dense" and nxt == "relu":
                toks.append(f"R:{layers[i][1]}")
                i += 2
            elif kind == "maxpool1d":
                toks.append(f"P:{layers[i][1]}")
                i += 1
            else:
                raise ArchError("layer sequence has no compact string form")
        return ";".join(toks)

    @classmethod
    def parse(cls, text, input_shape, num_classes):
        """Parse ``C:100,K:5;C:50,K:5;P:4;R:200;R:100`` and append the output layer.

        ``C``/``K`` pairs become conv1d + relu, ``P`` a max-pool, ``R`` a dense
        + relu layer. Braces and either separator are accepted.
        """
        toks = [t for t in re.split(r"[;,\s{}]+", text) if t]
        layers = []
        pending_conv = None
        for tok in toks:
            m = re.fullmatch(r"([CKPR]):(\d+)", tok)
            if not m:
                raise ArchError(f"bad architecture token {tok!r}")
            key, val = m.group(1), int(m.group(2))
            if pending_conv is not None and key != "K":
                raise ArchError("C:<channels> must be followed by K:<kernel>")
            if key == "C":
                pending_conv = val
            elif key == "K":
                if pending_conv is None:
                    raise ArchError("K:<kernel> without preceding C:<channels>")
                layers += [("conv1d", pending_conv, val), ("relu",)]
                pending_conv = None
            elif key == "P":
                layers.append(("maxpool1d", val))
            else:
                layers += [("dense", val), ("relu",)]
        if pending_conv is not None:
            raise ArchError("dangling C:<channels> without kernel size")
        layers.append(("dense", int(num_classes)))
        return cls(tuple(layers), tuple(input_shape))


@dataclass
class Model:
    arch: ArchSpec
    weights: np.ndarray
    seed: int = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (self.arch.num_params(),):
            raise ArchError(
                f"weight vector has {self.weights.size} entries, arch needs "
                f"{self.arch.num_params()}"
            )

    def params(self, weights=None):
        """Per-layer list of parameter views into ``weights``."""
        w = self.weights if weights is None else weights
        out, pos = [], 0
        for _, shapes in self.arch.shapes():
            views = []
            for shp in shapes:
                size = int(np.prod(shp))
                views.append(w[pos:pos + size].reshape(shp))
                pos += size
            out.append(views)
        return out

    def copy(self, weights=None):
        return Model(self.arch, self.weights.copy() if weights is None else weights, self.seed)


@dataclass
class GradPair:
    weight_grad: np.ndarray
    input_grad: np.ndarray


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, model):
        return cls(np.zeros_like(model.weights), np.zeros_like(model.weights), 0)


def init_model(arch, seed):
    """Kaiming-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    rng = stream(seed, "init_model")
    chunks = []
    for in_shape, shapes in arch.shapes():
        if not shapes:
            continue
        wshape, bshape = shapes
        fan_in = int(np.prod(wshape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        chunks.append(rng.uniform(-bound, bound, size=int(np.prod(wshape))))
        chunks.append(np.zeros(int(np.prod(bshape))))
    return Model(arch, np.concatenate(chunks), seed)


def _check_batch(model, X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != model.arch.input_shape:
        raise ShapeError(f"batch shape {X.shape[1:]} != arch input {model.arch.input_shape}")
    return X


def _forward(model, X, keep):
    params = model.params()
    caches = []
    h = X
    # overflow surfaces as the NumericError below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for idx, (layer, p) in enumerate(zip(model.arch.layers, params)):
            kind = layer[0]
            if kind == "conv1d":
                W, b = p
                k = W.shape[2]
                win = sliding_window_view(h, k, axis=2)  # (B, C, T', K)
                B, C, Tp, _ = win.shape
                cols = win.transpose(0, 2, 1, 3).reshape(B * Tp, C * k)
                out = (cols @ W.reshape(W.shape[0], -1).T).reshape(B, Tp, -1).transpose(0, 2, 1)
                out = out + b[None, :, None]
                cache = (cols, h.shape)
            elif kind == "maxpool1d":
                w = layer[1]
                B, C, T = h.shape
                To = T // w
                hr = h[:, :, :To * w].reshape(B, C, To, w)
                arg = hr.argmax(axis=3)
                out = np.take_along_axis(hr, arg[..., None], axis=3)[..., 0]
                cache = (arg, h.shape)
            elif kind == "relu":
                out = np.maximum(h, 0.0)
                cache = h > 0
            else:
                W, b = p
                flat = h.reshape(len(h), -1)
                out = flat @ W.T + b
                cache = (flat, h.shape)
            if not np.all(np.isfinite(out)):
                raise NumericError(f"non-finite activations after layer {idx} ({kind})")
            if keep:
                caches.append(cache)
            h = out
    return h, caches


def _backward(model, caches, dout):
    params = model.params()
    grads = [None] * len(params)
    for idx in range(len(params) - 1, -1, -1):
        layer, p, cache = model.arch.layers[idx], params[idx], caches[idx]
        kind = layer[0]
        if kind == "conv1d":
            W, _ = p
            cols, in_shape = cache
            B, O, Tp = dout.shape
            D = dout.transpose(0, 2, 1).reshape(B * Tp, O)
            gW = (D.T @ cols).reshape(W.shape)
            gb = dout.sum(axis=(0, 2))
            dcols = (D @ W.reshape(O, -1)).reshape(B, Tp, in_shape[1], W.shape[2])
            dx = np.zeros(in_shape)
            for k in range(W.shape[2]):
                dx[:, :, k:k + Tp] += dcols[:, :, :, k].transpose(0, 2, 1)
            grads[idx] = [gW, gb]
            dout = dx
        elif kind == "maxpool1d":
            arg, in_shape = cache
            B, C, To = arg.shape
            w = layer[1]
            dr = np.zeros((B, C, To, w))
            np.put_along_axis(dr, arg[..., None], dout[..., None], axis=3)
            dx = np.zeros(in_shape)
            dx[:, :, :To * w] = dr.reshape(B, C, To * w)
            grads[idx] = []
            dout = dx
        elif kind == "relu":
            grads[idx] = []
            dout = dout * cache
        else:
            W, _ = p
            flat, in_shape = cache
            grads[idx] = [dout.T @ flat, dout.sum(axis=0)]
            dout = (dout @ W).reshape(in_shape)
    flat_grad = np.concatenate([g.ravel() for gs in grads for g in gs])
    return flat_grad, dout


def forward(model, batch):
    """Logits of shape ``(batch, num_classes)``."""
    logits, _ = _forward(model, _check_batch(model, batch), keep=False)
    return logits


def forward_with_cache(model, batch):
    return _forward(model, _check_batch(model, batch), keep=True)


def backward(model, caches, dlogits):
    """Return ``(weight_grad, input_grad)`` for an upstream logit gradient."""
    return _backward(model, caches, np.asarray(dlogits, dtype=float))


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels):
    """Per-sample softmax cross-entropy."""
    labels = np.asarray(labels, dtype=int)
    return -log_softmax(logits)[np.arange(len(labels)), labels]


def loss_and_grads(model, batch, labels):
    """Mean cross-entropy and its gradients.

    ``weight_grad`` is the gradient of the batch mean; ``input_grad[b]`` is
    the gradient of sample ``b``'s own loss with respect to its input.
    """
    X = _check_batch(model, batch)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (len(X),):
        raise ShapeError("one label per batch element expected")
    if labels.min() < 0 or labels.max() >= model.arch.num_classes:
        raise ValueError("label out of range")
    logits, caches = _forward(model, X, keep=True)
    losses = cross_entropy(logits, labels)
    dlogits = softmax(logits)
    dlogits[np.arange(len(X)), labels] -= 1.0
    wgrad, xgrad = _backward(model, caches, dlogits)
    return float(losses.mean()), GradPair(wgrad / len(X), xgrad)


def predict(model, batch):
    return forward(model, batch).argmax(axis=1)


def sgd_step(model, grad, eta):
    if not eta > 0:
        raise ValueError("eta must be positive")
    return model.copy(model.weights - eta * grad)


def adam_step(state, model, grad, eta):
    """One bias-corrected Adam update; returns ``(new_state, new_model)``."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    t = state.t + 1
    m = ADAM_BETA1 * state.m + (1 - ADAM_BETA1) * grad
    v = ADAM_BETA2 * state.v + (1 - ADAM_BETA2) * grad * grad
    m_hat = m / (1 - ADAM_BETA1 ** t)
    v_hat = v / (1 - ADAM_BETA2 ** t)
    new = model.weights - eta * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return AdamState(m, v, t), model.copy(new)


DEFAULT_ARCH = "C:100,K:5;C:50,K:5;P:4;R:200;R:100"
