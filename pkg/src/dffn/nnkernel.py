"""Small dense neural-network kernel on numpy.

Layers work on batched arrays: convolution and pooling take ``(n, c, h, w)``
(a single ``(c, h, w)`` example is accepted by the functional forms), fully
connected layers take ``(n, in)``. Every layer caches what its backward pass
needs; calling ``backward`` before a forward raises :class:`StateError`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from dffn.errors import DomainError, NumericError, ShapeError, StateError

DEFAULT_DTYPE = np.float32


@dataclass(frozen=True)
class Mode:
    """Train mode samples RReLU slopes from ``seed``; eval mode is deterministic."""

    training: bool
    seed: int | None = None

    @classmethod
    def train(cls, seed: int) -> "Mode":
        return cls(True, int(seed))

    @classmethod
    def eval(cls) -> "Mode":
        return cls(False)

    def rng(self) -> np.random.Generator | None:
        return np.random.default_rng(self.seed) if self.training else None


EVAL = Mode(False)


@dataclass(frozen=True)
class RReluConfig:
    lower: float = 0.125
    upper: float = 0.333
    # "mean_slope": x * (l+u)/2 ; "divide_by_mean": x / ((l+u)/2)
    eval_rule: str = "mean_slope"

    def __post_init__(self):
        if not (0.0 <= self.lower < self.upper < 1.0):
            raise ValueError(f"need 0 <= l < u < 1, got l={self.lower}, u={self.upper}")
        if self.eval_rule not in ("mean_slope", "divide_by_mean"):
            raise ValueError(f"unknown RReLU eval rule {self.eval_rule!r}")

    @property
    def eval_slope(self) -> float:
        mean = (self.lower + self.upper) / 2.0
        return mean if self.eval_rule == "mean_slope" else 1.0 / mean


@dataclass(frozen=True)
class PoolSpec:
    window: tuple[int, int]
    stride: tuple[int, int]

    def __post_init__(self):
        if min(self.window) < 1 or min(self.stride) < 1:
            raise ValueError(f"pool window and stride must be >= 1: {self}")


def conv_output_hw(h, w, kernel, stride):
    return (h - kernel[0]) // stride[0] + 1, (w - kernel[1]) // stride[1] + 1


def _as_batch(x, ndim):
    x = np.asarray(x)
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ShapeError(f"expected a {ndim - 1}-D or {ndim}-D array, got shape {x.shape}")
    return x, False


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=DEFAULT_DTYPE):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer. Subclasses fill ``params`` and, after backward, ``grads``."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, mode: Mode = EVAL, rng=None):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def kink_state(self):
        """Discrete forward state (pool winners, activation signs), if any."""
        return None

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called without a cached forward pass")
        return self._cache

    def astype(self, dtype):
        clone = copy.deepcopy(self)
        clone.params = {k: v.astype(dtype) for k, v in self.params.items()}
        clone.grads = {}
        clone._cache = None
        return clone


# --- convolution ------------------------------------------------------------


class ConvLayer(Layer):
    def __init__(self, filters, bias, stride=(1, 1)):
        super().__init__()
        filters = np.asarray(filters)
        bias = np.asarray(bias)
        if filters.ndim != 4:
            raise ShapeError(f"conv filters must be 4-D (out, in, kh, kw), got {filters.shape}")
        if bias.shape != (filters.shape[0],):
            raise ShapeError(f"conv bias shape {bias.shape} does not match filters {filters.shape}")
        if min(filters.shape[2:]) < 1 or min(stride) < 1:
            raise ShapeError(f"bad kernel {filters.shape[2:]} or stride {stride}")
        self.params = {"W": filters, "b": bias}
        self.stride = tuple(int(s) for s in stride)

    @classmethod
    def init(cls, rng, in_ch, out_ch, kernel, stride=(1, 1), dtype=DEFAULT_DTYPE):
        kh, kw = kernel
        W = glorot_uniform(rng, (out_ch, in_ch, kh, kw), in_ch * kh * kw, out_ch * kh * kw, dtype)
        return cls(W, np.zeros(out_ch, dtype=dtype), stride)

    @property
    def kernel(self):
        return self.params["W"].shape[2:]

    def output_shape(self, c, h, w):
        o, ci, kh, kw = self.params["W"].shape
        if c != ci or h < kh or w < kw:
            raise ShapeError(f"conv input shape {(c, h, w)} incompatible with filters {self.params['W'].shape}")
        return (o, *conv_output_hw(h, w, (kh, kw), self.stride))

    def forward(self, x, mode=EVAL, rng=None):
        x, single = _as_batch(x, 4)
        W, b = self.params["W"], self.params["b"]
        _, oh, ow = self.output_shape(*x.shape[1:])
        sh, sw = self.stride
        kh, kw = W.shape[2:]
        out = np.zeros((x.shape[0], W.shape[0], oh, ow))
        for i in range(kh):
            for j in range(kw):
                patch = x[:, :, i : i + sh * (oh - 1) + 1 : sh, j : j + sw * (ow - 1) + 1 : sw]
                out += np.einsum("nchw,oc->nohw", patch, W[:, :, i, j].astype(np.float64), optimize=True)
        out += b.astype(np.float64)[None, :, None, None]
        self._cache = (x, single)
        out = out.astype(x.dtype)
        return out[0] if single else out

    def backward(self, dy):
        x, single = self._cached()
        dy = np.asarray(dy, dtype=np.float64).reshape((x.shape[0], -1, *np.shape(dy)[-2:]))
        W = self.params["W"]
        sh, sw = self.stride
        kh, kw = W.shape[2:]
        oh, ow = dy.shape[2:]
        dW = np.zeros(W.shape)
        dx = np.zeros(x.shape)
        W64 = W.astype(np.float64)
        for i in range(kh):
            for j in range(kw):
                rows = slice(i, i + sh * (oh - 1) + 1, sh)
                cols = slice(j, j + sw * (ow - 1) + 1, sw)
                dW[:, :, i, j] = np.einsum("nohw,nchw->oc", dy, x[:, :, rows, cols], optimize=True)
                dx[:, :, rows, cols] += np.einsum("nohw,oc->nchw", dy, W64[:, :, i, j], optimize=True)
        self.grads = {"W": dW.astype(W.dtype), "b": dy.sum(axis=(0, 2, 3)).astype(W.dtype)}
        dx = dx.astype(x.dtype)
        return dx[0] if single else dx


def conv2d_forward(x, layer: ConvLayer):
    """Valid cross-correlation of ``x`` (c, h, w) or (n, c, h, w) with ``layer``."""
    return layer.forward(x)


# --- max pooling ------------------------------------------------------------


def maxpool_forward(x, spec: PoolSpec):
    """Return (pooled, argmax) where argmax is the flat index into each h*w plane.

    Ties resolve to the first row-major position inside the window.
    """
    x, single = _as_batch(x, 4)
    n, c, h, w = x.shape
    ph, pw = spec.window
    sh, sw = spec.stride
    if h < ph or w < pw:
        raise ShapeError(f"pool window {spec.window} larger than input plane {(h, w)}")
    oh, ow = conv_output_hw(h, w, spec.window, spec.stride)
    win = sliding_window_view(x, (ph, pw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :oh, :ow]
    win = win.reshape(n, c, oh, ow, ph * pw)
    k = win.argmax(axis=-1)
    out = np.take_along_axis(win, k[..., None], axis=-1)[..., 0]
    rows = np.arange(oh)[:, None] * sh + k // pw
    cols = np.arange(ow)[None, :] * sw + k % pw
    argmax = rows * w + cols
    if single:
        return out[0], argmax[0]
    return out, argmax


class MaxPool(Layer):
    def __init__(self, spec: PoolSpec):
        super().__init__()
        self.spec = spec

    def output_shape(self, c, h, w):
        if h < self.spec.window[0] or w < self.spec.window[1]:
            raise ShapeError(f"pool window {self.spec.window} larger than input plane {(h, w)}")
        return (c, *conv_output_hw(h, w, self.spec.window, self.spec.stride))

    def forward(self, x, mode=EVAL, rng=None):
        x, single = _as_batch(x, 4)
        out, argmax = maxpool_forward(x, self.spec)
        self._cache = (x.shape, argmax)
        return out[0] if single else out

    def backward(self, dy):
        shape, argmax = self._cached()
        n, c, h, w = shape
        plane = (np.arange(n * c) * (h * w)).reshape(n, c, 1, 1)
        flat = np.bincount(
            (argmax + plane).ravel(),
            weights=np.asarray(dy, dtype=np.float64).ravel(),
            minlength=n * c * h * w,
        )
        return flat.reshape(shape).astype(np.asarray(dy).dtype)

    def kink_state(self):
        return None if self._cache is None else self._cache[1]


# --- RReLU ------------------------------------------------------------------


def rrelu(x, cfg: RReluConfig, mode: Mode = EVAL, rng=None):
    """Randomized leaky rectifier. Returns (output, per-element slopes).

    Train mode draws a slope ~ U(l, u) for every element from ``rng`` (or a
    generator seeded by the mode) so the random stream does not depend on the
    sign pattern. Eval mode uses the fixed slope of ``cfg.eval_rule``.
    """
    x = np.asarray(x)
    if mode.training:
        if rng is None:
            rng = mode.rng()
        a = rng.uniform(cfg.lower, cfg.upper, size=x.shape)
    else:
        a = cfg.eval_slope
    slopes = np.where(x >= 0, 1.0, a)
    return (x * slopes).astype(x.dtype), slopes


class RReLU(Layer):
    def __init__(self, cfg: RReluConfig | None = None):
        super().__init__()
        self.cfg = cfg or RReluConfig()

    def output_shape(self, *shape):
        return shape

    def forward(self, x, mode=EVAL, rng=None):
        out, slopes = rrelu(x, self.cfg, mode, rng)
        self._cache = (slopes, np.asarray(x) < 0)
        return out

    def backward(self, dy):
        slopes, _ = self._cached()
        return (np.asarray(dy) * slopes).astype(np.asarray(dy).dtype)

    def kink_state(self):
        return None if self._cache is None else self._cache[1]


class Flatten(Layer):
    def output_shape(self, *shape):
        return (int(np.prod(shape)),)

    def forward(self, x, mode=EVAL, rng=None):
        x = np.asarray(x)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return np.asarray(dy).reshape(self._cached())


# --- fully connected ----------------------------------------------------------


class FcLayer(Layer):
    def __init__(self, W, b):
        super().__init__()
        W = np.asarray(W)
        b = np.asarray(b)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ShapeError(f"fc weight {W.shape} and bias {b.shape} are incompatible")
        self.params = {"W": W, "b": b}

    @classmethod
    def init(cls, rng, n_in, n_out, dtype=DEFAULT_DTYPE):
        W = glorot_uniform(rng, (n_out, n_in), n_in, n_out, dtype)
        return cls(W, np.zeros(n_out, dtype=dtype))

    @property
    def n_in(self):
        return self.params["W"].shape[1]

    @property
    def n_out(self):
        return self.params["W"].shape[0]

    def output_shape(self, n_in):
        if n_in != self.n_in:
            raise ShapeError(f"fc expects {self.n_in} inputs, got {n_in}")
        return (self.n_out,)

    def forward(self, x, mode=EVAL, rng=None):
        x, single = _as_batch(x, 2)
        if x.shape[1] != self.n_in:
            raise ShapeError(f"fc input shape {x.shape[1:]} does not match weight shape {self.params['W'].shape}")
        W, b = self.params["W"], self.params["b"]
        out = x.astype(np.float64) @ W.T.astype(np.float64) + b
        self._cache = x
        out = out.astype(x.dtype)
        return out[0] if single else out

    def backward(self, dy):
        x = self._cached()
        dy = np.asarray(dy, dtype=np.float64).reshape(x.shape[0], -1)
        W = self.params["W"]
        self.grads = {
            "W": (dy.T @ x.astype(np.float64)).astype(W.dtype),
            "b": dy.sum(axis=0).astype(W.dtype),
        }
        return (dy @ W.astype(np.float64)).astype(x.dtype)


def fc_forward(x, layer: FcLayer):
    return layer.forward(x)


# --- containers ---------------------------------------------------------------


class Sequential:
    """A layer stack; parameter names are ``"<index>.<param>"``."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, mode: Mode = EVAL, rng=None):
        if mode.training and rng is None:
            rng = mode.rng()
        for layer in self.layers:
            x = layer.forward(x, mode, rng)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def output_shape(self, *shape):
        for layer in self.layers:
            shape = layer.output_shape(*shape)
        return shape

    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{i}.{k}": v for i, layer in enumerate(self.layers) for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                if k not in layer.grads:
                    raise StateError(f"no gradient for {i}.{k}; run backward first")
                out[f"{i}.{k}"] = layer.grads[k]
        return out

    def kink_state(self):
        return [s for layer in self.layers if (s := layer.kink_state()) is not None]

    def astype(self, dtype):
        return Sequential([layer.astype(dtype) for layer in self.layers])

    def clear(self):
        for layer in self.layers:
            layer._cache = None
            layer.grads = {}


def backprop(network, upstream):
    """Run the backward pass for ``upstream`` and return gradients per parameter."""
    network.backward(upstream)
    return network.gradients()


# --- loss ---------------------------------------------------------------------


def smooth_l1(p, t, n: int | None = None) -> float:
    """Batch-mean SmoothL1: 0.5 d^2 for |d| < 1, |d| - 0.5 otherwise."""
    p = np.asarray(p, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    n = len(p) if n is None else n
    if n < 1:
        raise DomainError("SmoothL1 needs a batch of at least one example")
    if len(p) != len(t) or len(p) != n:
        raise ShapeError(f"SmoothL1 length mismatch: p={len(p)}, t={len(t)}, n={n}")
    d = np.abs(p - t)
    return float(np.where(d < 1.0, 0.5 * d * d, d - 0.5).sum() / n)


def smooth_l1_grad(p, t, n: int | None = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).ravel()
    t = np.asarray(t, dtype=np.float64).ravel()
    n = len(p) if n is None else n
    if n < 1:
        raise DomainError("SmoothL1 needs a batch of at least one example")
    return np.clip(p - t, -1.0, 1.0) / n


# --- optimizer ------------------------------------------------------------------


@dataclass
class AdagradState:
    learning_rate: float = 0.01
    epsilon: float = 1e-8
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)


def adagrad_step(params: dict, grads: dict, state: AdagradState) -> tuple[dict, AdagradState]:
    """In-place Adagrad update; ``params`` and ``state`` are returned for chaining."""
    for name, g in grads.items():
        p = params[name]
        if p.shape != g.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros(p.shape)
        acc += g * g
        p -= (state.learning_rate * g / (np.sqrt(acc) + state.epsilon)).astype(p.dtype)
    return params, state


# --- gradient checking ------------------------------------------------------------


@dataclass
class LayerGradReport:
    name: str
    n_params: int
    max_rel_error: float
    mean_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    layers: list[LayerGradReport]
    tolerance: float
    epsilon: float
    kink_retries: int = 0

    @property
    def passed(self) -> bool:
        return all(layer.passed for layer in self.layers)

    @property
    def max_rel_error(self) -> float:
        return max((layer.max_rel_error for layer in self.layers), default=0.0)

    def lines(self) -> list[str]:
        out = [
            f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} n={r.n_params:<6} "
            f"max_rel={r.max_rel_error:.3e}  mean_rel={r.mean_rel_error:.3e}"
            for r in self.layers
        ]
        out.append(f"{'PASS' if self.passed else 'FAIL'}  overall max_rel={self.max_rel_error:.3e} tol={self.tolerance:g}")
        return out


def _same_state(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(network, inputs, targets, epsilon=1e-3, tolerance=1e-3, seed=0, dtype=np.float64):
    """Compare backprop gradients of the SmoothL1 loss with central differences.

    ``network`` needs ``parameters()``, ``forward(inputs, mode)``,
    ``backward(dscores)``, ``gradients()`` and ``kink_state()``; it is cast
    to ``dtype`` first. The same Train seed is used for every pass so sampled
    RReLU slopes agree. When a perturbation flips a discrete choice (pool
    winner, activation sign, loss branch) the step is shrunk up to twice.
    """
    if dtype is not None and hasattr(network, "astype"):
        network = network.astype(dtype)
    mode = Mode.train(seed)
    targets = np.asarray(targets, dtype=np.float64).ravel()

    def loss_and_state():
        scores = network.forward(inputs, mode)
        p = np.asarray(scores, dtype=np.float64).ravel()
        state = list(network.kink_state()) + [np.abs(p - targets) < 1.0]
        return smooth_l1(p, targets), state, scores

    _, base_state, scores = loss_and_state()
    p = np.asarray(scores, dtype=np.float64).ravel()
    network.backward(smooth_l1_grad(p, targets).reshape(np.shape(scores)))
    analytic = {k: np.array(v, dtype=np.float64) for k, v in network.gradients().items()}

    groups: dict[str, list[float]] = {}
    retries = 0
    for name, param in network.parameters().items():
        if name not in analytic:
            continue
        errs = groups.setdefault(name.rsplit(".", 1)[0], [])
        flat = param.reshape(-1)
        ana = analytic[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            step = epsilon
            for attempt in range(3):
                flat[idx] = orig + step
                lp, sp, _ = loss_and_state()
                flat[idx] = orig - step
                lm, sm, _ = loss_and_state()
                flat[idx] = orig
                if _same_state(sp, base_state) and _same_state(sm, base_state):
                    break
                retries += 1
                step /= 10.0
            num = (lp - lm) / (2.0 * step)
            a = ana[idx]
            errs.append(abs(a - num) / max(abs(a), abs(num), 1e-8))
    layers = [
        LayerGradReport(
            name=name,
            n_params=len(errs),
            max_rel_error=float(max(errs, default=0.0)),
            mean_rel_error=float(np.mean(errs)) if errs else 0.0,
            passed=bool(errs) and max(errs) < tolerance,
        )
        for name, errs in groups.items()
    ]
    return GradCheckReport(layers, tolerance, epsilon, retries)
