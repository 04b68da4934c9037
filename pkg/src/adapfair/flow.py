"""Invertible preprocessors built from affine coupling blocks.

Each block splits the coordinates with a binary mask. The conditioning half
passes through unchanged and feeds two small tanh MLPs (the scale head and
the shift head); the other half is mapped as ``x * exp(s) + t``. Masks
alternate between blocks so every coordinate gets transformed.

Parameter layout of the flat vector (fixed; gradients use the same order):
blocks in order; inside a block the scale head then the shift head; inside a
head ``W1, b1, W2, b2, W3, b3`` with weights stored row-major as
``(fan_in, fan_out)``.

Also here: a plain fully connected preprocessor with the same interface, used
for the non-invertible ablation.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput, UnsupportedDimension
from .serialization import read_params, write_params

LOG_SCALE_BOUND = 5.0
DEFAULT_BLOCKS = 10
DEFAULT_HIDDEN = 20


def _mlp_shapes(sizes):
    shapes = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        shapes += [(fan_in, fan_out), (fan_out,)]
    return shapes


class _Layout:
    """Slices of a flat vector, one per weight/bias array."""

    def __init__(self, shapes):
        self.shapes = list(shapes)
        self.slices = []
        start = 0
        for shape in self.shapes:
            size = int(np.prod(shape))
            self.slices.append(slice(start, start + size))
            start += size
        self.size = start

    def views(self, flat):
        return [flat[s].reshape(shape) for s, shape in zip(self.slices, self.shapes)]


def _as_batch(x, dim, name="x"):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] != dim:
        raise InvalidInput(f"{name} must have {dim} columns, got shape {np.shape(x)}")
    return x, single


def _mlp_forward(h, layers):
    """Tanh hidden layers, linear output. Returns output and activations."""
    acts = [h]
    n = len(layers) // 2
    for k in range(n):
        W, b = layers[2 * k], layers[2 * k + 1]
        h = h @ W + b
        if k < n - 1:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def _mlp_backward(grad_out, layers, acts, grads):
    """Accumulate parameter gradients into ``grads``; return grad w.r.t. input."""
    n = len(layers) // 2
    g = grad_out
    for k in reversed(range(n)):
        if k < n - 1:
            g = g * (1.0 - acts[k + 1] ** 2)
        grads[2 * k] += acts[k].T @ g
        grads[2 * k + 1] += g.sum(axis=0)
        g = g @ layers[2 * k].T
    return g


class FlowPreprocessor:
    """Stack of affine coupling blocks with a flat parameter vector."""

    kind = "flow"

    def __init__(self, dim: int, n_blocks: int = DEFAULT_BLOCKS, hidden_width: int = DEFAULT_HIDDEN,
                 seed: int = 0, params=None):
        if dim < 2:
            raise UnsupportedDimension(
                "coupling flows need dim >= 2; pad 1-D inputs with a constant coordinate"
            )
        if n_blocks < 1 or hidden_width < 1:
            raise InvalidInput("n_blocks and hidden_width must be positive")
        self.dim = int(dim)
        self.n_blocks = int(n_blocks)
        self.hidden_width = int(hidden_width)
        self.seed = int(seed)
        self.masks = [(np.arange(dim) + k) % 2 == 0 for k in range(n_blocks)]
        shapes = []
        for mask in self.masks:
            sizes = [int(mask.sum()), hidden_width, hidden_width, int((~mask).sum())]
            shapes += _mlp_shapes(sizes) * 2
        self.layout = _Layout(shapes)
        self.params = np.zeros(self.layout.size) if params is None else np.array(params, dtype=float)
        if self.params.shape != (self.layout.size,):
            raise InvalidInput(f"expected {self.layout.size} parameters, got {self.params.size}")

    @property
    def param_count(self) -> int:
        return self.layout.size

    def with_params(self, params) -> "FlowPreprocessor":
        return FlowPreprocessor(self.dim, self.n_blocks, self.hidden_width, self.seed, params)

    def _heads(self, params=None):
        views = self.layout.views(self.params if params is None else params)
        return [(views[12 * k : 12 * k + 6], views[12 * k + 6 : 12 * k + 12]) for k in range(self.n_blocks)]

    @staticmethod
    def _log_scale(raw):
        return LOG_SCALE_BOUND * np.tanh(raw / LOG_SCALE_BOUND)

    def forward(self, x):
        x, single = _as_batch(x, self.dim)
        y = x.copy()
        for mask, (scale, shift) in zip(self.masks, self._heads()):
            xc = y[:, mask]
            s = self._log_scale(_mlp_forward(xc, scale)[0])
            t = _mlp_forward(xc, shift)[0]
            y[:, ~mask] = y[:, ~mask] * np.exp(s) + t
        return y[0] if single else y

    def inverse(self, x_tilde):
        y, single = _as_batch(x_tilde, self.dim, "x_tilde")
        x = y.copy()
        for mask, (scale, shift) in reversed(list(zip(self.masks, self._heads()))):
            xc = x[:, mask]
            s = self._log_scale(_mlp_forward(xc, scale)[0])
            t = _mlp_forward(xc, shift)[0]
            x[:, ~mask] = (x[:, ~mask] - t) * np.exp(-s)
        return x[0] if single else x

    def vjp_params(self, x, upstream) -> np.ndarray:
        """``sum_n upstream[n]^T dT(x[n])/dtheta`` as a flat vector."""
        x, _ = _as_batch(x, self.dim)
        upstream, _ = _as_batch(upstream, self.dim, "upstream")
        if upstream.shape != x.shape:
            raise InvalidInput("upstream must match x in shape")
        if not np.all(np.isfinite(upstream)):
            raise InvalidInput("upstream contains non-finite values")
        heads = self._heads()
        grad = np.zeros(self.layout.size)
        grad_heads = self._heads(grad)

        tape = []
        h = x.copy()
        for mask, (scale, shift) in zip(self.masks, heads):
            xc = h[:, mask]
            raw, acts_s = _mlp_forward(xc, scale)
            t, acts_t = _mlp_forward(xc, shift)
            s = self._log_scale(raw)
            xt = h[:, ~mask].copy()
            tape.append((xt, raw, s, acts_s, acts_t))
            h[:, ~mask] = xt * np.exp(s) + t

        g = upstream.copy()
        for k in reversed(range(self.n_blocks)):
            mask = self.masks[k]
            xt, raw, s, acts_s, acts_t = tape[k]
            (scale, shift), (g_scale, g_shift) = heads[k], grad_heads[k]
            gt = g[:, ~mask]
            es = np.exp(s)
            g_raw = gt * xt * es * (1.0 - np.tanh(raw / LOG_SCALE_BOUND) ** 2)
            gc = g[:, mask]
            gc = gc + _mlp_backward(g_raw, scale, acts_s, g_scale)
            gc = gc + _mlp_backward(gt, shift, acts_t, g_shift)
            g = np.empty_like(g)
            g[:, mask] = gc
            g[:, ~mask] = gt * es
        return grad

    def save(self, path) -> None:
        header = {"dim": self.dim, "blocks": self.n_blocks, "hidden_width": self.hidden_width, "seed": self.seed}
        write_params(path, self.kind, header, self.params)


def init_flow(dim: int, n_blocks: int = DEFAULT_BLOCKS, hidden_width: int = DEFAULT_HIDDEN,
              seed: int = 0) -> FlowPreprocessor:
    """Seeded flow whose output layers start at zero, so it begins as the identity."""
    flow = FlowPreprocessor(dim, n_blocks, hidden_width, seed)
    rng = np.random.default_rng(seed)
    views = flow.layout.views(flow.params)
    for idx, view in enumerate(views):
        layer_in_head = idx % 6
        if view.ndim == 2 and layer_in_head != 4:
            view[...] = rng.normal(0.0, np.sqrt(1.0 / view.shape[0]), size=view.shape)
    return flow


def flow_forward(T: FlowPreprocessor, x):
    return T.forward(x)


def flow_inverse(T: FlowPreprocessor, x_tilde):
    return T.inverse(x_tilde)


def flow_vjp_params(T: FlowPreprocessor, x, upstream) -> np.ndarray:
    return T.vjp_params(x, upstream)


class FcnnPreprocessor:
    """Fully connected map R^d -> R^d; no invertibility.

    ``depth`` hidden layers of ``width`` tanh units, linear output layer.
    ``FcnnPreprocessor(d, depth=10, width=20)`` is the L10W20 variant.
    """

    kind = "fcnn"

    def __init__(self, dim: int, depth: int = 10, width: int = 20, seed: int = 0, params=None,
                 activation: str = "tanh"):
        if activation != "tanh":
            raise InvalidInput(f"unsupported activation {activation!r}")
        self.dim, self.depth, self.width, self.seed = int(dim), int(depth), int(width), int(seed)
        self.activation = activation
        self.layout = _Layout(_mlp_shapes([dim] + [width] * depth + [dim]))
        self.params = np.zeros(self.layout.size) if params is None else np.array(params, dtype=float)
        if self.params.shape != (self.layout.size,):
            raise InvalidInput(f"expected {self.layout.size} parameters, got {self.params.size}")

    @property
    def name(self) -> str:
        return f"FCNN_L{self.depth}W{self.width}"

    @property
    def param_count(self) -> int:
        return self.layout.size

    @classmethod
    def init(cls, dim: int, depth: int = 10, width: int = 20, seed: int = 0) -> "FcnnPreprocessor":
        net = cls(dim, depth, width, seed)
        rng = np.random.default_rng(seed)
        for view in net.layout.views(net.params):
            if view.ndim == 2:
                view[...] = rng.normal(0.0, np.sqrt(1.0 / view.shape[0]), size=view.shape)
        return net

    def with_params(self, params) -> "FcnnPreprocessor":
        return FcnnPreprocessor(self.dim, self.depth, self.width, self.seed, params, self.activation)

    def forward(self, x):
        x, single = _as_batch(x, self.dim)
        y = _mlp_forward(x, self.layout.views(self.params))[0]
        return y[0] if single else y

    def vjp_params(self, x, upstream) -> np.ndarray:
        x, _ = _as_batch(x, self.dim)
        upstream, _ = _as_batch(upstream, self.dim, "upstream")
        if upstream.shape != x.shape:
            raise InvalidInput("upstream must match x in shape")
        if not np.all(np.isfinite(upstream)):
            raise InvalidInput("upstream contains non-finite values")
        layers = self.layout.views(self.params)
        grad = np.zeros(self.layout.size)
        _, acts = _mlp_forward(x, layers)
        _mlp_backward(upstream, layers, acts, self.layout.views(grad))
        return grad

    def save(self, path) -> None:
        header = {"dim": self.dim, "depth": self.depth, "width": self.width, "seed": self.seed,
                  "activation": self.activation}
        write_params(path, self.kind, header, self.params)


def fcnn_forward(F: FcnnPreprocessor, x):
    return F.forward(x)


def fcnn_vjp_params(F: FcnnPreprocessor, x, upstream) -> np.ndarray:
    return F.vjp_params(x, upstream)


def load_preprocessor(path):
    kind, header, params = read_params(path)
    if kind == "flow":
        return FlowPreprocessor(header["dim"], header["blocks"], header["hidden_width"], header["seed"], params)
    if kind == "fcnn":
        return FcnnPreprocessor(header["dim"], header["depth"], header["width"], header["seed"], params,
                                header.get("activation", "tanh"))
    raise InvalidInput(f"{path}: expected a preprocessor file, found {kind!r}")
