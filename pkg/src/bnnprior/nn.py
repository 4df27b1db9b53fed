"""Fixed-topology feedforward networks on flat parameter vectors.

All differentiation is done with explicit passes over the MLP: a forward
pass, a reverse pass for parameter gradients, and a tangent (forward-mode)
pass along selected input coordinates whose reverse gives parameter
gradients of input-gradient penalties.

Parameters are a flat float64 vector laid out layer by layer as the weight
matrix (out x in, row-major) followed by the bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMask, InvalidShape

ACTIVATIONS = ("relu", "softplus")
HEADS = ("identity", "sigmoid", "softmax")
_HEAD_ALIASES = {"softmax-logits": "softmax", "softmax_logits": "softmax"}


@dataclass(frozen=True)
class ArchSpec:
    layer_sizes: tuple
    activation: str = "relu"
    output_head: str = "identity"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise InvalidShape(f"layer_sizes must have >= 2 positive entries, got {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)
        head = _HEAD_ALIASES.get(self.output_head, self.output_head)
        if head not in HEADS:
            raise InvalidShape(f"unknown output head {self.output_head!r}")
        object.__setattr__(self, "output_head", head)
        if self.activation not in ACTIVATIONS:
            raise InvalidShape(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def n_params(self) -> int:
        s = self.layer_sizes
        return sum((s[i] + 1) * s[i + 1] for i in range(len(s) - 1))

    def layer_slices(self):
        """(weight_slice, bias_slice, (out, in)) for every layer, in order."""
        out, start = [], 0
        s = self.layer_sizes
        for i in range(len(s) - 1):
            n_in, n_out = s[i], s[i + 1]
            w_end = start + n_in * n_out
            out.append((slice(start, w_end), slice(w_end, w_end + n_out), (n_out, n_in)))
            start = w_end + n_out
        return out

    def widened(self, factor: int) -> "ArchSpec":
        """Same depth and head with every hidden width multiplied by ``factor``."""
        s = self.layer_sizes
        hidden = tuple(h * factor for h in s[1:-1])
        return ArchSpec((s[0],) + hidden + (s[-1],), self.activation, self.output_head)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": list(self.layer_sizes),
            "activation": self.activation,
            "output_head": self.output_head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ArchSpec":
        return cls(tuple(d["layer_sizes"]), d.get("activation", "relu"), d.get("output_head", "identity"))

    @classmethod
    def parse(cls, text: str, activation: str = "relu", output_head: str = "identity") -> "ArchSpec":
        """Parse ``"4,16,4"`` style layer-size strings."""
        try:
            sizes = tuple(int(t) for t in text.replace(" ", "").split(",") if t)
        except ValueError as exc:
            raise InvalidShape(f"bad layer sizes {text!r}") from exc
        return cls(sizes, activation, output_head)


def param_count(arch: ArchSpec) -> int:
    return arch.n_params


def _check_params(arch: ArchSpec, params) -> np.ndarray:
    w = np.asarray(params, dtype=np.float64)
    if w.shape != (arch.n_params,):
        raise InvalidShape(f"expected {arch.n_params} parameters, got shape {w.shape}")
    return w


def unflatten(arch: ArchSpec, params) -> list:
    """Split a flat vector into ``[(W, b), ...]`` views (no copies)."""
    w = _check_params(arch, params)
    return [(w[ws].reshape(shape), w[bs]) for ws, bs, shape in arch.layer_slices()]


def flatten(arch: ArchSpec, layers) -> np.ndarray:
    parts = []
    for (W, b), (_, _, shape) in zip(layers, arch.layer_slices()):
        W = np.asarray(W, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        if W.shape != shape or b.shape != (shape[0],):
            raise InvalidShape(f"layer shapes {W.shape}, {b.shape} do not match {shape}")
        parts.extend([W.ravel(), b])
    return np.concatenate(parts)


def coordinate(arch: ArchSpec, index: int) -> tuple:
    """Map a flat index to ``(layer, "weight", row, col)`` or ``(layer, "bias", row)``."""
    if not 0 <= index < arch.n_params:
        raise IndexError(index)
    for layer, (ws, bs, (n_out, n_in)) in enumerate(arch.layer_slices()):
        if ws.start <= index < ws.stop:
            row, col = divmod(index - ws.start, n_in)
            return (layer, "weight", row, col)
        if bs.start <= index < bs.stop:
            return (layer, "bias", index - bs.start)
    raise AssertionError("unreachable")


def init_params(arch: ArchSpec, rng: np.random.Generator) -> np.ndarray:
    """He initialization: weights ~ N(0, 2/fan_in), biases zero."""
    w = np.zeros(arch.n_params)
    for ws, _, (n_out, n_in) in arch.layer_slices():
        w[ws] = rng.normal(0.0, np.sqrt(2.0 / n_in), size=n_out * n_in)
    return w


# activations -------------------------------------------------------------

def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    return np.logaddexp(0.0, z)


def _dact(name, z):
    if name == "relu":
        return (z > 0).astype(np.float64)
    return sigmoid(z)


def _ddact(name, z):
    if name == "relu":
        return np.zeros_like(z)
    s = sigmoid(z)
    return s * (1.0 - s)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def apply_head(arch: ArchSpec, outputs):
    """Map pre-head outputs to predictions (probabilities or raw values)."""
    if arch.output_head == "sigmoid":
        return sigmoid(outputs)
    if arch.output_head == "softmax":
        return softmax(outputs)
    return np.asarray(outputs, dtype=np.float64)


# forward / reverse -------------------------------------------------------

def _as_batch(arch, x):
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != arch.input_dim:
        raise InvalidShape(f"expected input dim {arch.input_dim}, got shape {np.shape(x)}")
    return X, single


def forward_cache(arch: ArchSpec, params, X):
    """Batched forward pass; returns ``(outputs, cache)``.

    ``cache`` holds the layer views, the pre-activations ``zs`` and the
    post-activations ``acts`` (``acts[0]`` is the input).
    """
    layers = unflatten(arch, params)
    acts, zs = [X], []
    a = X
    for i, (W, b) in enumerate(layers):
        z = a @ W.T + b
        zs.append(z)
        if i < len(layers) - 1:
            a = _act(arch.activation, z)
            acts.append(a)
    return zs[-1], {"layers": layers, "zs": zs, "acts": acts}


def forward(arch: ArchSpec, params, x) -> np.ndarray:
    """Pre-head outputs for one input vector or a batch of rows."""
    X, single = _as_batch(arch, x)
    out, _ = forward_cache(arch, params, X)
    return out[0] if single else out


def backward(arch: ArchSpec, cache, upstream) -> np.ndarray:
    """Gradient of ``sum_b upstream[b] . h(x_b)`` with respect to the parameters."""
    layers, zs, acts = cache["layers"], cache["zs"], cache["acts"]
    grad = np.zeros(arch.n_params)
    slices = arch.layer_slices()
    delta = upstream
    for i in range(len(layers) - 1, -1, -1):
        ws, bs, _ = slices[i]
        grad[ws] = (delta.T @ acts[i]).ravel()
        grad[bs] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0]) * _dact(arch.activation, zs[i - 1])
    return grad


def grad_params(arch: ArchSpec, params, x, upstream) -> np.ndarray:
    """Exact gradient of ``upstream . h_w(x)`` w.r.t. ``w`` (summed over rows for a batch)."""
    X, single = _as_batch(arch, x)
    U = np.asarray(upstream, dtype=np.float64)
    if single:
        U = U[None, :]
    if U.shape != (X.shape[0], arch.output_dim):
        raise InvalidShape(f"upstream shape {np.shape(upstream)} does not match outputs")
    _, cache = forward_cache(arch, params, X)
    return backward(arch, cache, U)


def grad_input(arch: ArchSpec, params, x) -> np.ndarray:
    """Jacobian of the pre-head outputs w.r.t. the input, shape (out, in) or (B, out, in).

    ReLU'(0) is taken as 0.
    """
    X, single = _as_batch(arch, x)
    _, cache = forward_cache(arch, params, X)
    layers, zs = cache["layers"], cache["zs"]
    J = np.broadcast_to(layers[0][0], (X.shape[0],) + layers[0][0].shape)
    for i in range(1, len(layers)):
        J = layers[i][0] @ (_dact(arch.activation, zs[i - 1])[:, :, None] * J)
    J = np.array(J)
    return J[0] if single else J


# input tangents and their reverse ---------------------------------------

def normalize_mask(mask, batch: int, input_dim: int):
    """Turn a mask spec into padded ``(idx, valid)`` arrays of shape (batch, P).

    Accepted forms: ``None``/empty, a 1-D index set shared by all rows, a 1-D
    boolean vector over features, a 2-D boolean (batch, input_dim) matrix, or
    a 2-D integer (batch, P) index matrix.
    """
    if mask is None:
        return np.zeros((batch, 0), dtype=np.intp), np.zeros((batch, 0))
    m = np.asarray(mask)
    if m.size == 0:
        return np.zeros((batch, 0), dtype=np.intp), np.zeros((batch, 0))
    if m.dtype == bool:
        if m.ndim == 1:
            if m.shape[0] != input_dim:
                raise InvalidMask(f"boolean mask length {m.shape[0]} != input dim {input_dim}")
            m = np.flatnonzero(m)
        elif m.ndim == 2:
            if m.shape != (batch, input_dim):
                raise InvalidMask(f"boolean mask shape {m.shape} != {(batch, input_dim)}")
            counts = m.sum(axis=1)
            P = int(counts.max()) if batch else 0
            idx = np.zeros((batch, P), dtype=np.intp)
            valid = np.zeros((batch, P))
            for b in range(batch):
                nz = np.flatnonzero(m[b])
                idx[b, :nz.size] = nz
                valid[b, :nz.size] = 1.0
            return idx, valid
        else:
            raise InvalidMask("mask must be 1-D or 2-D")
    if not np.issubdtype(m.dtype, np.integer):
        raise InvalidMask(f"mask must hold integer indices or booleans, got {m.dtype}")
    if m.size and (m.min() < 0 or m.max() >= input_dim):
        raise InvalidMask(f"mask indices must lie in [0, {input_dim - 1}]")
    if m.ndim == 1:
        m = np.unique(m)
        idx = np.broadcast_to(m, (batch, m.size)).astype(np.intp)
        return idx, np.ones(idx.shape)
    if m.ndim == 2 and m.shape[0] == batch:
        return m.astype(np.intp), np.ones(m.shape)
    raise InvalidMask(f"mask shape {m.shape} incompatible with batch {batch}")


def tangent_forward(arch: ArchSpec, params, X, idx, valid):
    """Forward pass carrying tangents along unit input directions.

    Returns ``(outputs, T, cache)`` with ``T[b, p] = d h(x_b) / d x_b[idx[b, p]]``
    (zeroed where ``valid`` is 0).
    """
    out, cache = forward_cache(arch, params, X)
    layers, zs = cache["layers"], cache["zs"]
    t = layers[0][0].T[idx] * valid[:, :, None]
    tz = [t]
    ta = [None]
    for i in range(1, len(layers)):
        a_t = _dact(arch.activation, zs[i - 1])[:, None, :] * tz[-1]
        ta.append(a_t)
        tz.append(a_t @ layers[i][0].T)
    cache["tz"], cache["ta"], cache["idx"], cache["valid"] = tz, ta, idx, valid
    return out, tz[-1], cache


def tangent_backward(arch: ArchSpec, cache, out_bar, T_bar) -> np.ndarray:
    """Reverse pass through :func:`tangent_forward`.

    ``out_bar`` (B, C) and ``T_bar`` (B, P, C) are adjoints of the outputs
    and of the output tangents; returns the parameter gradient. The second
    derivative of ReLU is taken as 0.
    """
    layers, zs, acts = cache["layers"], cache["zs"], cache["acts"]
    tz, ta, idx, valid = cache["tz"], cache["ta"], cache["idx"], cache["valid"]
    slices = arch.layer_slices()
    grad = np.zeros(arch.n_params)
    zbar, tbar = out_bar, T_bar
    for i in range(len(layers) - 1, -1, -1):
        ws, bs, (n_out, n_in) = slices[i]
        gW = zbar.T @ acts[i]
        if i > 0:
            gW += np.einsum("bpo,bpi->oi", tbar, ta[i])
        else:
            gWT = np.zeros((n_in, n_out))
            np.add.at(gWT, idx.ravel(), (tbar * valid[:, :, None]).reshape(-1, n_out))
            gW += gWT.T
        grad[ws] = gW.ravel()
        grad[bs] = zbar.sum(axis=0)
        if i > 0:
            W = layers[i][0]
            abar = zbar @ W
            tabar = tbar @ W
            z = zs[i - 1]
            d1 = _dact(arch.activation, z)
            zbar = abar * d1
            if arch.activation != "relu":
                zbar = zbar + _ddact(arch.activation, z) * np.einsum("bph,bph->bh", tabar, tz[i - 1])
            tbar = tabar * d1[:, None, :]
    return grad


def grad_params_of_masked_input_grad_norm(arch: ArchSpec, params, x, mask, weights=None):
    """Masked squared input-gradient norm and its parameter gradient.

    Value per row is ``sum_c sum_{j in mask} (d h_c / d x_j)^2`` over the
    pre-head outputs. Returns ``(values, grad)`` where ``grad`` is the
    gradient of ``sum_b weights[b] * values[b]`` (weights default to 1); for a
    single input vector ``values`` is a scalar.
    """
    X, single = _as_batch(arch, x)
    w = _check_params(arch, params)
    idx, valid = normalize_mask(mask, X.shape[0], arch.input_dim)
    if idx.shape[1] == 0:
        values = np.zeros(X.shape[0])
        return (0.0 if single else values), np.zeros(arch.n_params)
    out, T, cache = tangent_forward(arch, w, X, idx, valid)
    values = (T ** 2).sum(axis=(1, 2))
    wts = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    T_bar = 2.0 * T * wts[:, None, None]
    grad = tangent_backward(arch, cache, np.zeros_like(out), T_bar)
    return (float(values[0]) if single else values), grad
