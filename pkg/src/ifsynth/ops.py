"""Differentiable operators.

Each operator computes its forward value with numpy and registers a closure
returning the gradients of its inputs. Outputs keep the dtype of the first
tensor input, so float64 inputs give a float64 graph for gradient checks.
"""

import numpy as np

from . import kernels
from .tensor import DimensionError, ContractError, Tensor, as_tensor, make_result


def _coerce(a, b):
    """Lift scalars/arrays to tensors in the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    return a, b


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _coerce(a, b)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(out, (a, b), backward)


def sub(a, b):
    a, b = _coerce(a, b)
    out = a.data - b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result(out, (a, b), backward)


def mul(a, b):
    a, b = _coerce(a, b)
    out = a.data * b.data
    need_a, need_b = a.requires_grad, b.requires_grad

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if need_a else None
        gb = _unbroadcast(g * a.data, b.shape) if need_b else None
        return ga, gb

    return make_result(out, (a, b), backward)


def square(x):
    out = x.data * x.data

    def backward(g):
        return (2.0 * g * x.data,)

    return make_result(out, (x,), backward)


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy
    out = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    n = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, x.shape).astype(x.dtype),)

    return make_result(out, (x,), backward)


def reshape(x, shape):
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), backward)


def detach(x):
    return Tensor(x.data)


# --------------------------------------------------------------------------
# nonlinearities


def relu(x):
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        return (g * mask,)

    return make_result(out, (x,), backward)


def leaky_relu(x, slope=0.2):
    scale = np.where(x.data > 0, 1.0, slope).astype(x.dtype)
    out = x.data * scale

    def backward(g):
        return (g * scale,)

    return make_result(out, (x,), backward)


def tanh(x):
    out = np.tanh(x.data)

    def backward(g):
        return (g * (1.0 - out * out),)

    return make_result(out, (x,), backward)


def activation(x, kind):
    if kind == "relu":
        return relu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown activation {kind!r}")


# --------------------------------------------------------------------------
# convolutions


def conv2d(x, weight, bias=None, stride=1, pad=0):
    """Zero-padded cross-correlation, NCHW input, OIHW weights."""
    n, cin, h, w = x.shape
    cout, cin_w, kh, kw = weight.shape
    if cin != cin_w:
        raise DimensionError(f"conv2d: input has {cin} channels, weight expects {cin_w}")
    if stride < 1 or kh < 1 or kw < 1:
        raise DimensionError("conv2d: stride and kernel extents must be >= 1")
    if h + 2 * pad < kh or w + 2 * pad < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    ho = kernels.out_size(xp.shape[2], kh, stride)
    wo = kernels.out_size(xp.shape[3], kw, stride)
    cols = kernels.im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(cout, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.data
    y = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    parents = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, cout)
        gx = gw = None
        if need_x:
            gxp = kernels.col2im(gm @ wmat, xp.shape, kh, kw, stride)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        if need_w:
            gw = (gm.T @ cols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, (gm.sum(axis=0) if need_b else None)

    return make_result(y, parents, backward)


def conv_transpose2d(x, weight, bias=None, stride=1, pad=0):
    """Adjoint of :func:`conv2d` w.r.t. its input; weight is ``(Cin, Cout, kh, kw)``."""
    n, cin, h, w = x.shape
    cin_w, cout, kh, kw = weight.shape
    if cin != cin_w:
        raise DimensionError(f"conv_transpose2d: input has {cin} channels, weight expects {cin_w}")
    if stride < 1:
        raise DimensionError("conv_transpose2d: stride must be >= 1")
    hp = (h - 1) * stride + kh
    wp = (w - 1) * stride + kw
    ho, wo = hp - 2 * pad, wp - 2 * pad
    if ho < 1 or wo < 1:
        raise DimensionError("conv_transpose2d: padding removes the whole output")
    xm = x.data.transpose(0, 2, 3, 1).reshape(n * h * w, cin)
    wmat = weight.data.reshape(cin, cout * kh * kw)
    yp = kernels.col2im(xm @ wmat, (n, cout, hp, wp), kh, kw, stride)
    y = yp[:, :, pad:pad + ho, pad:pad + wo]
    if bias is not None:
        y = y + bias.data.reshape(1, -1, 1, 1)
    y = np.ascontiguousarray(y)
    parents = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad
    need_b = bias is not None and bias.requires_grad

    def backward(g):
        gp = np.pad(g, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else g
        gcols = kernels.im2col(gp, kh, kw, stride)
        gx = gw = None
        if need_x:
            gx = np.ascontiguousarray((gcols @ wmat.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2))
        if need_w:
            gw = (xm.T @ gcols).reshape(weight.shape)
        if bias is None:
            return gx, gw
        return gx, gw, (g.sum(axis=(0, 2, 3)) if need_b else None)

    return make_result(y, parents, backward)


def _reflect_index(n, p):
    idx = np.arange(-p, n + p)
    idx = np.abs(idx)
    return np.where(idx > n - 1, 2 * (n - 1) - idx, idx)


def pad_reflect(x, p):
    """Mirror-pad the two spatial axes by ``p`` (edge sample not repeated)."""
    n, c, h, w = x.shape
    if p >= h or p >= w:
        raise DimensionError(f"reflection pad {p} needs spatial extent > {p}, got {h}x{w}")
    out = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
    rows = _reflect_index(h, p)
    cols = _reflect_index(w, p)

    def backward(g):
        tmp = np.zeros((n, c, h + 2 * p, w), dtype=g.dtype)
        np.add.at(tmp, (slice(None), slice(None), slice(None), cols), g)
        gx = np.zeros((n, c, h, w), dtype=g.dtype)
        np.add.at(gx, (slice(None), slice(None), rows), tmp)
        return (gx,)

    return make_result(out, (x,), backward)


# --------------------------------------------------------------------------
# normalisation and reductions


def instance_norm(x, gamma=None, beta=None, eps=1e-5):
    n, c, h, w = x.shape
    if h * w < 2:
        raise DimensionError("instance_norm: statistics over a single position are degenerate")
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(var + eps)
        xhat = centered * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data.reshape(1, -1, 1, 1)
    if beta is not None:
        out = out + beta.data.reshape(1, -1, 1, 1)
    parents = [x] + [t for t in (gamma, beta) if t is not None]

    def backward(g):
        gxhat = g * gamma.data.reshape(1, -1, 1, 1) if gamma is not None else g
        gx = inv * (gxhat - gxhat.mean(axis=(2, 3), keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=(2, 3), keepdims=True))
        res = [gx]
        if gamma is not None:
            res.append((g * xhat).sum(axis=(0, 2, 3)))
        if beta is not None:
            res.append(g.sum(axis=(0, 2, 3)))
        return tuple(res)

    return make_result(np.ascontiguousarray(out, dtype=x.dtype), parents, backward)


def reduce_mean_spatial(x):
    """``(N, C, H, W) -> (N, C)`` mean over the spatial positions."""
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def backward(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None], x.shape).astype(x.dtype),)

    return make_result(out, (x,), backward)


def linear(x, weight, bias=None):
    """``x @ weight.T + bias`` with ``weight`` shaped ``(out, in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight width {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    need_x, need_w = x.requires_grad, weight.requires_grad

    def backward(g):
        gx = g @ weight.data if need_x else None
        gw = g.T @ x.data if need_w else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return make_result(out, parents, backward)


def cross_entropy(logits, labels):
    """Mean negative log-softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, k = logits.shape
    if labels.shape[0] != n:
        raise DimensionError(f"cross_entropy: {n} logit rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    out = np.asarray(-logp[np.arange(n), labels].mean(), dtype=logits.dtype)

    def backward(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make_result(out, (logits,), backward)


def softmax_np(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


__all__ = [
    "add", "sub", "mul", "square", "sum", "mean", "reshape", "detach",
    "relu", "leaky_relu", "tanh", "activation",
    "conv2d", "conv_transpose2d", "pad_reflect", "instance_norm",
    "reduce_mean_spatial", "linear", "cross_entropy", "softmax_np", "as_tensor",
]
