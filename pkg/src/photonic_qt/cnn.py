"""The target CNN, evaluated from a flat weight vector.

Layer sequence: Conv2D -> MaxPool -> Conv2D -> AvgPool -> Flatten -> Linear ->
ReLU -> Linear. Convolutions are valid (no padding) with stride 1; pools use a
2x2 window with stride 2 and drop an odd trailing row/column.
"""

from dataclasses import dataclass
from math import prod

import numpy as np

from . import kernels
from .errors import CapacityError, DimensionMismatchError

TARGET_PARAMS = 6690
IMAGE_SIZE = 28
N_CLASSES = 10


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv2d | maxpool | avgpool | flatten | linear | relu
    weight_shape: tuple[int, ...] = ()
    bias_len: int = 0
    name: str = ""

    @property
    def param_count(self) -> int:
        if not self.weight_shape:
            return 0
        return prod(self.weight_shape) + self.bias_len

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        return [self.weight_shape, (self.bias_len,)] if self.weight_shape else []


@dataclass(frozen=True)
class CnnTemplate:
    layers: tuple[LayerSpec, ...]

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers)

    @property
    def parameterized(self) -> list[LayerSpec]:
        return [layer for layer in self.layers if layer.param_count]

    def slices(self) -> list[tuple[str, int, int, tuple[int, ...]]]:
        """(tensor name, start, stop, shape) for every weight and bias, in allocation order."""
        out, c = [], 0
        for layer in self.parameterized:
            for suffix, shape in zip(("weight", "bias"), layer.shapes):
                n = prod(shape)
                out.append((f"{layer.name}.{suffix}", c, c + n, shape))
                c += n
        return out


def _pooled(size: int) -> int:
    return size // 2


def template_from_hparams(k1: int, k2: int, c1: int, c2: int, hidden: int) -> CnnTemplate:
    s = _pooled(_pooled(IMAGE_SIZE - k1 + 1) - k2 + 1)
    flat = c2 * s * s
    return CnnTemplate(
        (
            LayerSpec("conv2d", (c1, 1, k1, k1), c1, "conv1"),
            LayerSpec("maxpool", name="pool1"),
            LayerSpec("conv2d", (c2, c1, k2, k2), c2, "conv2"),
            LayerSpec("avgpool", name="pool2"),
            LayerSpec("flatten", name="flatten"),
            LayerSpec("linear", (hidden, flat), hidden, "fc1"),
            LayerSpec("relu", name="relu"),
            LayerSpec("linear", (N_CLASSES, hidden), N_CLASSES, "fc2"),
        )
    )


def search_templates(
    total: int = TARGET_PARAMS,
    kernels=(3, 5),
    channels=range(1, 17),
    hidden=range(8, 65),
):
    """Yield (k1, k2, c1, c2, hidden) with exactly ``total`` parameters, in loop order."""
    for k1 in kernels:
        for k2 in kernels:
            for c1 in channels:
                for c2 in channels:
                    for h in hidden:
                        s = _pooled(IMAGE_SIZE - k1 + 1) - k2 + 1
                        if s < 2:
                            continue
                        if template_from_hparams(k1, k2, c1, c2, h).param_count == total:
                            yield (k1, k2, c1, c2, h)


# First hit of search_templates(): conv 1->10 (3x3), conv 10->4 (3x3), 100 -> 56 -> 10.
CANONICAL_HPARAMS = (3, 3, 10, 4, 56)


def build_template() -> CnnTemplate:
    return template_from_hparams(*CANONICAL_HPARAMS)


def allocate(v, template: CnnTemplate) -> dict[str, np.ndarray]:
    """Reshape consecutive slices of ``v`` into the template's tensors (views, no copy)."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size < template.param_count:
        raise CapacityError(f"template needs {template.param_count} values, got {v.size}")
    return {name: v[a:b].reshape(shape) for name, a, b, shape in template.slices()}


def flatten_weights(weights: dict[str, np.ndarray], template: CnnTemplate) -> np.ndarray:
    return np.concatenate([weights[name].ravel() for name, *_ in template.slices()])


# --------------------------------------------------------------------------
# layer primitives (conv and max-pool kernels live in ``kernels``)
# --------------------------------------------------------------------------


def _pool_view(x):
    bsz, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    return x[:, :, : 2 * h2, : 2 * w2].reshape(bsz, c, h2, 2, w2, 2)


def _avgpool_forward(x):
    return _pool_view(x).mean(axis=(3, 5))


def _avgpool_backward(dout, in_shape):
    bsz, c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    dx = np.zeros(in_shape)
    dx[:, :, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(dout, 2, axis=2), 2, axis=3) * 0.25
    return dx


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


def _as_nchw(images) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None, :, :]
    elif x.ndim == 4 and x.shape[-1] == 1:
        x = x.transpose(0, 3, 1, 2)
    if x.ndim != 4 or x.shape[1] != 1:
        raise DimensionMismatchError(f"expected (B, 28, 28) or (B, 28, 28, 1) images, got {np.shape(images)}")
    return x


def forward(weights: dict[str, np.ndarray], images, template: CnnTemplate | None = None, *, return_cache=False):
    template = template or build_template()
    x = _as_nchw(images)
    cache = []
    for layer in template.layers:
        try:
            if layer.kind == "conv2d":
                w, b = weights[f"{layer.name}.weight"], weights[f"{layer.name}.bias"]
                if x.shape[1] != w.shape[1]:
                    raise DimensionMismatchError(f"{x.shape[1]} input channels, kernel expects {w.shape[1]}")
                cache.append(x)
                x = kernels.conv2d_forward(x, w, b)
            elif layer.kind == "maxpool":
                height, width = x.shape[2], x.shape[3]
                x, arg = kernels.maxpool2_forward(x)
                cache.append((arg, height, width))
            elif layer.kind == "avgpool":
                cache.append(x.shape)
                x = _avgpool_forward(x)
            elif layer.kind == "flatten":
                cache.append(x.shape)
                x = x.reshape(x.shape[0], -1)
            elif layer.kind == "linear":
                w, b = weights[f"{layer.name}.weight"], weights[f"{layer.name}.bias"]
                if x.shape[1] != w.shape[1]:
                    raise DimensionMismatchError(f"{x.shape[1]} features, weight expects {w.shape[1]}")
                cache.append(x)
                x = x @ w.T + b
            elif layer.kind == "relu":
                cache.append(x > 0)
                x = np.maximum(x, 0.0)
            else:
                raise DimensionMismatchError(f"unknown layer kind {layer.kind!r}")
        except DimensionMismatchError as exc:
            raise DimensionMismatchError(f"layer {layer.name} ({layer.kind}): {exc}") from None
    if return_cache:
        return x, cache
    return x


def _backward(weights, template, cache, dlogits) -> dict[str, np.ndarray]:
    grads = {}
    d = dlogits
    first_param = template.parameterized[0].name
    for layer, saved in zip(reversed(template.layers), reversed(cache)):
        if layer.kind == "linear":
            w = weights[f"{layer.name}.weight"]
            grads[f"{layer.name}.weight"] = d.T @ saved
            grads[f"{layer.name}.bias"] = d.sum(axis=0)
            d = d @ w
        elif layer.kind == "relu":
            d = d * saved
        elif layer.kind == "flatten":
            d = d.reshape(saved)
        elif layer.kind == "avgpool":
            d = _avgpool_backward(d, saved)
        elif layer.kind == "maxpool":
            d = kernels.maxpool2_backward(d, *saved)
        elif layer.kind == "conv2d":
            w = weights[f"{layer.name}.weight"]
            dw, db, d = kernels.conv2d_backward(d, saved, w, layer.name != first_param)
            grads[f"{layer.name}.weight"] = dw
            grads[f"{layer.name}.bias"] = db
    return grads


def loss_and_grad(logits, labels):
    """Mean softmax cross-entropy and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    n = len(labels)
    loss = -log_p[np.arange(n), labels].mean()
    grad = np.exp(log_p)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), grad / n


def backward_to_weights(weights, images, labels, template: CnnTemplate | None = None):
    """Returns (loss, logits, flat gradient in allocation order)."""
    template = template or build_template()
    logits, cache = forward(weights, images, template, return_cache=True)
    loss, dlogits = loss_and_grad(logits, labels)
    grads = _backward(weights, template, cache, dlogits)
    return loss, logits, flatten_weights(grads, template)


def vector_loss_and_grad(v, images, labels, template: CnnTemplate | None = None):
    """Loss, logits, and gradient for a flat weight vector (first ``param_count`` entries used)."""
    template = template or build_template()
    return backward_to_weights(allocate(v, template), images, labels, template)


def evaluate(v, images, labels, template: CnnTemplate | None = None, chunk: int = 1000):
    """(mean loss, accuracy in percent) over a whole split, chunked to bound memory."""
    template = template or build_template()
    weights = allocate(v, template)
    n = len(labels)
    if n == 0:
        return float("nan"), float("nan")
    total_loss, correct = 0.0, 0
    for start in range(0, n, chunk):
        xb, yb = images[start : start + chunk], labels[start : start + chunk]
        logits = forward(weights, xb, template)
        loss, _ = loss_and_grad(logits, yb)
        total_loss += loss * len(yb)
        correct += int((logits.argmax(axis=1) == yb).sum())
    return total_loss / n, 100.0 * correct / n


def init_weights(template: CnnTemplate, rng: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, the usual default for these layers."""
    parts = []
    for layer in template.parameterized:
        fan_in = prod(layer.weight_shape[1:])
        bound = 1.0 / np.sqrt(fan_in)
        for shape in layer.shapes:
            parts.append(rng.uniform(-bound, bound, prod(shape)))
    return np.concatenate(parts)
