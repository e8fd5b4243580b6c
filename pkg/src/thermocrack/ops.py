"""Layer-level numerics: forward/backward passes and the SGD update.

Every function here is pure and deterministic.  Values are stored as 32-bit
floats; dot products accumulate in 64 bits before the result is cast back,
which keeps drift against naive-loop oracles below 1e-6.  Inputs that are
already float64 stay float64 end to end (the gradient-check tests rely on
this to measure finite differences without storage rounding).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeError

KERNEL = 3  # convolution kernel side; same-padding assumes this is odd
PAD = KERNEL // 2


def _out_dtype(*arrays):
    return np.result_type(np.float32, *(a.dtype for a in arrays))


def glorot_uniform(rng, shape, fan_in, fan_out, dtype=np.float32):
    """Uniform init in +-sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _as_batch(x, ndim, name):
    """Return (array with leading batch axis, had_batch flag)."""
    x = np.asarray(x)
    if x.ndim == ndim:
        return x[None], False
    if x.ndim == ndim + 1:
        return x, True
    raise ShapeError(f"{name}: expected {ndim}-d or {ndim + 1}-d input, got shape {x.shape}")


def _im2col(x):
    """x: (N, C, H, W) -> (N*H*W, C*9) patches under zero same-padding."""
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))  # (N,C,H,W,3,3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * w, c * KERNEL * KERNEL)


def conv2d_forward(x, weights, bias):
    """3x3 convolution, stride 1, zero same-padding.

    x: (C_in, H, W) or (N, C_in, H, W); weights: (C_out, C_in, 3, 3);
    bias: (C_out,).  Returns the same rank as ``x``.
    """
    xb, batched = _as_batch(x, 3, "conv2d")
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 4 or weights.shape[2:] != (KERNEL, KERNEL):
        raise ShapeError(f"conv2d: weights must be (C_out, C_in, 3, 3), got {weights.shape}")
    f, c_in = weights.shape[:2]
    if xb.shape[1] != c_in:
        raise ShapeError(
            f"conv2d: input has {xb.shape[1]} channels but weights expect {c_in}"
        )
    if bias.shape != (f,):
        raise ShapeError(f"conv2d: bias must be ({f},), got {bias.shape}")
    n, _, h, w = xb.shape
    cols = _im2col(xb).astype(np.float64)
    wmat = weights.reshape(f, -1).astype(np.float64)
    y = cols @ wmat.T + bias.astype(np.float64)
    y = y.reshape(n, h, w, f).transpose(0, 3, 1, 2)
    y = y.astype(_out_dtype(xb, weights, bias))
    return y if batched else y[0]


def conv2d_backward(x, weights, upstream):
    """Gradients of a scalar loss through conv2d_forward.

    Returns (d_weights, d_bias, d_input) with shapes mirroring the operands.
    """
    xb, batched = _as_batch(x, 3, "conv2d")
    gb, gbatched = _as_batch(upstream, 3, "conv2d upstream")
    weights = np.asarray(weights)
    if batched != gbatched or gb.shape[0] != xb.shape[0]:
        raise ShapeError("conv2d: upstream batch does not match input batch")
    f, c_in = weights.shape[:2]
    if gb.shape[1] != f or gb.shape[2:] != xb.shape[2:]:
        raise ShapeError(
            f"conv2d: upstream shape {gb.shape[1:]} does not match output "
            f"({f}, {xb.shape[2]}, {xb.shape[3]})"
        )
    n, _, h, w = xb.shape
    dtype = _out_dtype(xb, weights, gb)

    cols = _im2col(xb).astype(np.float64)             # (N*H*W, C_in*9)
    gmat = gb.transpose(0, 2, 3, 1).reshape(n * h * w, f).astype(np.float64)
    d_weights = (gmat.T @ cols).reshape(weights.shape).astype(dtype)
    d_bias = gb.sum(axis=(0, 2, 3), dtype=np.float64).astype(dtype)

    # d_input is the upstream gradient convolved with channel-swapped,
    # spatially flipped kernels (exact for stride 1, zero same-padding).
    w_flip = weights.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1]
    d_input = conv2d_forward(gb, w_flip, np.zeros(c_in, dtype=dtype)).astype(dtype)
    if not batched:
        d_input = d_input[0]
    return d_weights, d_bias, d_input


def _pool_windows(x):
    """x: (N, C, H, W) -> (N, C, H/2, W/2, 4) windows in row-major scan order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2d: H and W must be even, got ({h}, {w})")
    x6 = x.reshape(n, c, h // 2, 2, w // 2, 2)
    return x6.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def maxpool2d_forward(x):
    """2x2 max pooling, stride 2.  x: (C, H, W) or (N, C, H, W), H and W even."""
    xb, batched = _as_batch(x, 3, "maxpool2d")
    y = _pool_windows(xb).max(axis=-1)
    return y if batched else y[0]


def maxpool2d_backward(x, upstream):
    """Routes each upstream gradient to its window's argmax (first in
    row-major scan order on ties)."""
    xb, batched = _as_batch(x, 3, "maxpool2d")
    gb, gbatched = _as_batch(upstream, 3, "maxpool2d upstream")
    win = _pool_windows(xb)
    if batched != gbatched or gb.shape != win.shape[:4]:
        raise ShapeError(
            f"maxpool2d: upstream shape {gb.shape} does not match pooled shape {win.shape[:4]}"
        )
    n, c, h2, w2 = win.shape[:4]
    arg = win.argmax(axis=-1)  # first max wins: row-major tie-break
    dwin = np.zeros_like(win, dtype=_out_dtype(xb, gb))
    idx = np.indices((n, c, h2, w2))
    dwin[idx[0], idx[1], idx[2], idx[3], arg] = gb
    h, w = xb.shape[2], xb.shape[3]
    dx = dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return dx if batched else dx[0]


def dense_forward(x, weights, bias):
    """Fully connected layer: y = W x + b.

    x: (N_in,) or (N, N_in); weights: (N_out, N_in); bias: (N_out,).
    """
    xb, batched = _as_batch(x, 1, "dense")
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 2 or xb.shape[1] != weights.shape[1]:
        raise ShapeError(
            f"dense: input length {xb.shape[1]} does not match weight columns "
            f"{weights.shape[1] if weights.ndim == 2 else weights.shape}"
        )
    if bias.shape != (weights.shape[0],):
        raise ShapeError(f"dense: bias must be ({weights.shape[0]},), got {bias.shape}")
    y = xb.astype(np.float64) @ weights.astype(np.float64).T + bias.astype(np.float64)
    y = y.astype(_out_dtype(xb, weights, bias))
    return y if batched else y[0]


def dense_backward(x, weights, upstream):
    """Gradients through dense_forward: (d_weights, d_bias, d_input)."""
    xb, batched = _as_batch(x, 1, "dense")
    gb, gbatched = _as_batch(upstream, 1, "dense upstream")
    weights = np.asarray(weights)
    if batched != gbatched or gb.shape != (xb.shape[0], weights.shape[0]):
        raise ShapeError(
            f"dense: upstream shape {gb.shape} does not match ({xb.shape[0]}, {weights.shape[0]})"
        )
    dtype = _out_dtype(xb, weights, gb)
    d_weights = (gb.astype(np.float64).T @ xb.astype(np.float64)).astype(dtype)
    d_bias = gb.sum(axis=0, dtype=np.float64).astype(dtype)
    d_input = (gb.astype(np.float64) @ weights.astype(np.float64)).astype(dtype)
    return d_weights, d_bias, (d_input if batched else d_input[0])


def relu_forward(x):
    x = np.asarray(x)
    return np.maximum(x, 0)


def relu_backward(x, upstream):
    """Derivative at exactly 0 is defined as 0."""
    x = np.asarray(x)
    upstream = np.asarray(upstream)
    if x.shape != upstream.shape:
        raise ShapeError(f"relu: upstream shape {upstream.shape} != input shape {x.shape}")
    return np.where(x > 0, upstream, 0).astype(_out_dtype(x, upstream))


def softmax(logits):
    """Numerically stabilized softmax along the last axis."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, true_class):
    """Softmax cross-entropy for one sample.

    Returns (loss, d_logits) where d_logits = softmax(logits) - onehot.
    """
    logits = np.asarray(logits)
    if logits.ndim != 1:
        raise ShapeError(f"softmax_xent: logits must be 1-d, got shape {logits.shape}")
    k = logits.shape[0]
    if not (isinstance(true_class, (int, np.integer)) and 0 <= true_class < k):
        raise DomainError(f"softmax_xent: true_class {true_class!r} not in 0..{k - 1}")
    p = softmax(logits)
    # clamp away from 0 so a fully-confident wrong prediction yields a large
    # finite loss instead of inf (the gradient p - y is unaffected)
    loss = float(-np.log(max(p[true_class], 1e-300)))
    d = p.copy()
    d[true_class] -= 1.0
    return loss, d.astype(_out_dtype(logits))


def softmax_xent_batch(logits, true_classes):
    """Mean softmax cross-entropy over a batch.

    logits: (N, K); true_classes: (N,) ints.  d_logits is already divided
    by N, so backpropagating it yields batch-mean gradients.
    """
    logits = np.asarray(logits)
    classes = np.asarray(true_classes)
    if logits.ndim != 2 or classes.shape != (logits.shape[0],):
        raise ShapeError(
            f"softmax_xent_batch: got logits {logits.shape}, classes {classes.shape}"
        )
    k = logits.shape[1]
    if classes.min(initial=0) < 0 or classes.max(initial=0) >= k:
        raise DomainError("softmax_xent_batch: class index out of range")
    n = logits.shape[0]
    p = softmax(logits)
    # same clamp as softmax_xent: finite loss even at p == 0 underflow
    loss = float(-np.log(np.maximum(p[np.arange(n), classes], 1e-300)).mean())
    d = p
    d[np.arange(n), classes] -= 1.0
    d /= n
    return loss, d.astype(_out_dtype(logits))


def sgd_step(param, grad, learning_rate):
    """One plain SGD update: param - learning_rate * grad (returns new array)."""
    param = np.asarray(param)
    grad = np.asarray(grad)
    if param.shape != grad.shape:
        raise ShapeError(f"sgd_step: param shape {param.shape} != grad shape {grad.shape}")
    if not (np.isfinite(learning_rate) and learning_rate > 0):
        raise DomainError(f"sgd_step: learning rate must be positive, got {learning_rate}")
    out = param.astype(np.float64) - learning_rate * grad.astype(np.float64)
    return out.astype(_out_dtype(param, grad))
