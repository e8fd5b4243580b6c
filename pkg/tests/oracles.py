"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately naive (explicit loops, no shared code with
the package) so that agreement with the fast paths is meaningful.
"""

import numpy as np


def conv2d_naive(x, w, b):
    """Six-nested-loop direct convolution: 3x3, stride 1, zero same-padding."""
    c_in, h, wid = x.shape
    f = w.shape[0]
    out = np.zeros((f, h, wid), dtype=np.float64)
    for fi in range(f):
        for y in range(h):
            for xx in range(wid):
                acc = float(b[fi])
                for c in range(c_in):
                    for dy in range(3):
                        for dx in range(3):
                            yy = y + dy - 1
                            xs = xx + dx - 1
                            if 0 <= yy < h and 0 <= xs < wid:
                                acc += float(x[c, yy, xs]) * float(w[fi, c, dy, dx])
                out[fi, y, xx] = acc
    return out


def maxpool2d_naive(x):
    """Block-scan 2x2 stride-2 max."""
    c, h, w = x.shape
    out = np.zeros((c, h // 2, w // 2), dtype=np.float64)
    for ci in range(c):
        for y in range(0, h, 2):
            for xx in range(0, w, 2):
                out[ci, y // 2, xx // 2] = max(
                    x[ci, y, xx], x[ci, y, xx + 1], x[ci, y + 1, xx], x[ci, y + 1, xx + 1]
                )
    return out


def dense_naive(x, w, b):
    """Double-loop matrix-vector product."""
    n_out, n_in = w.shape
    out = np.zeros(n_out, dtype=np.float64)
    for j in range(n_out):
        acc = float(b[j])
        for i in range(n_in):
            acc += float(w[j, i]) * float(x[i])
        out[j] = acc
    return out


def numeric_gradient(loss_fn, arr, h=1e-6):
    """Central finite differences of loss_fn() w.r.t. every entry of arr.

    Mutates arr in place during evaluation and restores it; arr should be
    float64 so the perturbation is exact.  The step is small enough that a
    perturbation almost never flips a max-pool argmax at a near-tie (the
    analytic subgradient and the finite difference disagree across such a
    flip), while the float64 pipeline keeps roundoff near 1e-10 relative.
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grads_close(analytic, numeric, rel_tol=1e-3, abs_tol=1e-4):
    """Relative tolerance with an absolute floor near zero."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = err <= np.maximum(abs_tol, rel_tol * scale)
    if not ok.all():
        worst = np.unravel_index(np.argmax(err - np.maximum(abs_tol, rel_tol * scale)),
                                 err.shape)
        raise AssertionError(
            f"gradient mismatch at {worst}: analytic={analytic[worst]!r} "
            f"numeric={numeric[worst]!r} ({int((~ok).sum())} of {ok.size} entries failed)"
        )


def metrics_naive(counts):
    """Per-class one-vs-rest TP/FP/FN/TN enumeration from a replayed stream
    of (actual, predicted) pairs, with exact Fraction arithmetic."""
    from fractions import Fraction

    counts = np.asarray(counts)
    pairs = []
    for i in range(3):
        for j in range(3):
            pairs.extend([(i, j)] * int(counts[i, j]))
    total = len(pairs)
    result = {"accuracy": Fraction(sum(1 for a, p in pairs if a == p), total), "per_class": []}
    for k in range(3):
        tp = sum(1 for a, p in pairs if a == k and p == k)
        fp = sum(1 for a, p in pairs if a != k and p == k)
        fn = sum(1 for a, p in pairs if a == k and p != k)
        tn = sum(1 for a, p in pairs if a != k and p != k)
        precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else Fraction(0))
        result["per_class"].append({
            "tp": tp, "fp": fp, "fn": fn, "tn": tn,
            "accuracy": Fraction(tp + tn, total),
            "precision": precision, "recall": recall, "f1": f1,
        })
    return result
