"""Dense tensors with reverse-mode differentiation over a recorded tape.

Every op returns a fresh Tensor holding the forward result and a closure that
maps the output gradient to parent gradients. `backward()` walks the tape in
reverse topological order. Tensors are immutable once produced; parameters
are leaves mutated only by the optimizer.

Single precision is the training default; double precision exists for
gradient verification.
"""

from __future__ import annotations

import numpy as np


class NonFiniteError(ArithmeticError):
    """A forward op produced inf or nan."""


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")
    return arr


class Tensor:
    """A dense array plus the tape edge that produced it."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name})"

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Accumulate gradients into every reachable requires_grad leaf."""
        if seed is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        seed = np.asarray(seed, dtype=self.data.dtype)
        if seed.shape != self.data.shape:
            raise ValueError("seed gradient shape mismatch")

        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))

        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
            if node._backward is None:
                continue
            for parent, contribution in zip(node._parents, node._backward(g)):
                if contribution is None:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + contribution
                else:
                    grads[pid] = contribution


class Parameter(Tensor):
    """Learnable leaf: couples a value with its gradient and momentum slot."""

    __slots__ = ("name", "_momentum", "weight_decay")

    def __init__(self, data, name="", weight_decay=True):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name
        self._momentum = None
        self.weight_decay = weight_decay  # batchnorm affine params opt out

    @property
    def momentum(self) -> np.ndarray:
        if self._momentum is None:
            self._momentum = np.zeros_like(self.data)
        return self._momentum


def _result(data, parents, backward, op):
    out = Tensor(_check_finite(data, op))
    if any(_tracks(p) for p in parents):
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _tracks(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


# ---------------------------------------------------------------------------
# Convolution

def _pad_amounts(k: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    if padding == "same":
        total = k - 1
        return total // 2, total - total // 2
    raise ValueError(f"padding must be 'valid' or 'same', got {padding!r}")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    n, c, h, w = x.shape
    sn, sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(n, c, kh, kw, oh, ow),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return windows.reshape(n, c * kh * kw, oh * ow)


def _col2im(dcols: np.ndarray, x_shape, kh, kw, stride, oh, ow) -> np.ndarray:
    n, c, h, w = x_shape
    dx = np.zeros(x_shape, dtype=dcols.dtype)
    dcols = dcols.reshape(n, c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += dcols[:, :, i, j]
    return dx


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: str = "valid") -> Tensor:
    """Cross-correlation of [N,C,H,W] with [Co,C,kh,kw] kernels, no bias."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n, c, h, w = x.shape
    co, ck, kh, kw = kernel.shape
    if ck != c:
        raise ValueError(f"kernel expects {ck} input channels, input has {c}")
    ph0, ph1 = _pad_amounts(kh, padding)
    pw0, pw1 = _pad_amounts(kw, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph0, ph1), (pw0, pw1))) if ph0 + ph1 + pw0 + pw1 else x.data
    hp, wp = xp.shape[2], xp.shape[3]
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    if oh < 1 or ow < 1:
        raise ValueError(f"conv output collapses to zero for input {h}x{w}")

    cols = _im2col(xp, kh, kw, stride, oh, ow)
    kmat = kernel.data.reshape(co, -1)
    out = (kmat @ cols).reshape(n, co, oh, ow)

    def backward(dout):
        dflat = dout.reshape(n, co, oh * ow)
        dk = np.tensordot(dflat, cols, axes=([0, 2], [0, 2])).reshape(kernel.shape)
        dcols = np.matmul(kmat.T, dflat)
        dxp = _col2im(dcols, xp.shape, kh, kw, stride, oh, ow)
        dx = dxp[:, :, ph0 : hp - ph1, pw0 : wp - pw1] if ph0 + ph1 + pw0 + pw1 else dxp
        return dx, dk

    return _result(out, (x, kernel), backward, "conv2d")


# ---------------------------------------------------------------------------
# Pooling

def max_pool(x: Tensor, window: int, stride: int) -> Tensor:
    """Per-window maximum over full windows; gradient goes to the first
    maximal element of each window in row-major order."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be >= 1")
    n, c, h, w = x.shape
    if window > h or window > w:
        raise ValueError(f"pool window {window} larger than input {h}x{w}")
    oh = (h - window) // stride + 1
    ow = (w - window) // stride + 1

    sn, sc, sh, sw = x.data.strides
    windows = np.lib.stride_tricks.as_strided(
        x.data,
        shape=(n, c, oh, ow, window, window),
        strides=(sn, sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    ).reshape(n, c, oh, ow, window * window)
    flat_arg = windows.argmax(axis=-1)  # argmax takes the first max: the tie rule
    out = np.take_along_axis(windows, flat_arg[..., None], axis=-1)[..., 0]

    def backward(dout):
        dx = np.zeros_like(x.data)
        oi, oj = np.meshgrid(np.arange(oh), np.arange(ow), indexing="ij")
        ih = oi[None, None] * stride + flat_arg // window
        iw = oj[None, None] * stride + flat_arg % window
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        np.add.at(dx, (ni, ci, ih, iw), dout)
        return (dx,)

    return _result(out, (x,), backward, "max_pool")


def spp(x: Tensor, levels) -> Tensor:
    """Spatial pyramid pooling: max over overlapping grid bins at each level,
    concatenated per channel. Output is [N, C * sum(level^2)].

    Bin i of an L-way split spans rows floor(i*H/L) .. ceil((i+1)*H/L) - 1,
    so small inputs are legal (bins then share cells).
    """
    levels = tuple(levels)
    if not levels or min(levels) < 1:
        raise ValueError("levels must be a non-empty list of positive ints")
    n, c, h, w = x.shape
    if h < 1 or w < 1:
        raise ValueError("zero-size input")

    def bounds(size, l, i):
        lo = (i * size) // l
        hi = -((-(i + 1) * size) // l)  # ceil division
        return lo, hi

    outs = []
    argpos = []
    for l in levels:
        for i in range(l):
            rlo, rhi = bounds(h, l, i)
            for j in range(l):
                clo, chi = bounds(w, l, j)
                cell = x.data[:, :, rlo:rhi, clo:chi].reshape(n, c, -1)
                arg = cell.argmax(axis=-1)
                outs.append(np.take_along_axis(cell, arg[..., None], axis=-1)[..., 0])
                bw = chi - clo
                argpos.append((rlo + arg // bw, clo + arg % bw))
    out = np.stack(outs, axis=2).reshape(n, c * len(outs))

    def backward(dout):
        dx = np.zeros_like(x.data)
        d = dout.reshape(n, c, len(argpos))
        ni = np.arange(n)[:, None]
        ci = np.arange(c)[None, :]
        for b, (ri, cj) in enumerate(argpos):
            np.add.at(dx, (ni, ci, ri, cj), d[:, :, b])
        return (dx,)

    return _result(out, (x,), backward, "spp")


# ---------------------------------------------------------------------------
# Normalization and elementwise ops

class BatchNormState:
    """Running statistics owned by one batchnorm layer."""

    def __init__(self, channels, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def update(self, mean, var, momentum):
        self.running_mean = momentum * self.running_mean + (1.0 - momentum) * mean
        self.running_var = momentum * self.running_var + (1.0 - momentum) * var


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState,
               training: bool, epsilon: float = 1e-5, momentum: float = 0.9) -> Tensor:
    """Normalize per channel; train mode uses batch statistics and updates the
    running averages, infer mode uses the running statistics."""
    axes = (0, 2, 3) if x.data.ndim == 4 else (0,)
    shape = (1, -1, 1, 1) if x.data.ndim == 4 else (1, -1)
    count = x.data.size // x.data.shape[1]

    if training:
        if count < 2:
            raise ValueError("train-mode batch norm needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        state.update(mean.astype(state.running_mean.dtype), var.astype(state.running_var.dtype), momentum)
    else:
        mean = state.running_mean.astype(x.data.dtype)
        var = state.running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def backward(dout):
        dgamma = (dout * xhat).sum(axis=axes)
        dbeta = dout.sum(axis=axes)
        dxhat = dout * gamma.data.reshape(shape)
        if training:
            s1 = dxhat.sum(axis=axes).reshape(shape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(shape)
            dx = (inv_std.reshape(shape) / count) * (count * dxhat - s1 - xhat * s2)
        else:
            dx = dxhat * inv_std.reshape(shape)
        return dx, dgamma.reshape(gamma.shape), dbeta.reshape(beta.shape)

    return _result(out, (x, gamma, beta), backward, "batch_norm")


def fully_connected(x: Tensor, weight: Tensor) -> Tensor:
    """[N,F] @ [O,F]^T -> [N,O]; no bias (batchnorm supplies the shift)."""
    out = x.data @ weight.data.T

    def backward(dout):
        return dout @ weight.data, dout.T @ x.data

    return _result(out, (x, weight), backward, "fully_connected")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def backward(dout):
        return (dout * mask,)

    return _result(out, (x,), backward, "relu")


def sigmoid(x: Tensor) -> Tensor:
    out = _stable_sigmoid(x.data)

    def backward(dout):
        return (dout * out * (1.0 - out),)

    return _result(out, (x,), backward, "sigmoid")


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    out = np.empty(z.shape, dtype=z.dtype if z.dtype.kind == "f" else np.float64)
    flat_z = z.reshape(-1)
    flat_o = out.reshape(-1)
    pos = flat_z >= 0
    flat_o[pos] = 1.0 / (1.0 + np.exp(-flat_z[pos]))
    ez = np.exp(flat_z[~pos])
    flat_o[~pos] = ez / (1.0 + ez)
    return out


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: surviving units scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        out = x.data.copy()

        def backward(dout):
            return (dout,)

        return _result(out, (x,), backward, "dropout")

    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.data.dtype)
    out = x.data * keep * scale

    def backward(dout):
        return (dout * keep * scale,)

    return _result(out, (x,), backward, "dropout")


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer targets.

    Uses max-subtraction stabilization; loss is invariant to a constant shift
    of the logits.
    """
    data = logits.data
    squeeze = data.ndim == 1
    if squeeze:
        data = data[None, :]
    n, v = data.shape
    t = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if t.shape != (n,):
        raise ValueError("one target index per row required")
    if t.min() < 0 or t.max() >= v:
        raise IndexError("target index out of range")

    shifted = data - data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = -log_probs[np.arange(n), t].mean()

    probs = exp / denom

    def backward(dout):
        g = probs.copy()
        g[np.arange(n), t] -= 1.0
        g *= dout / n
        return (g[0] if squeeze else g,)

    return _result(np.asarray(loss, dtype=data.dtype), (logits,), backward, "softmax_cross_entropy")


def softmax(logits: np.ndarray) -> np.ndarray:
    """Plain numpy softmax with max-subtraction (no tape)."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Verification harness

class GradCheckReport:
    def __init__(self, max_rel_err: float, per_input: list[float], tolerance: float):
        self.max_rel_err = max_rel_err
        self.per_input = per_input
        self.tolerance = tolerance
        self.ok = max_rel_err < tolerance

    def __repr__(self):
        status = "ok" if self.ok else "FAIL"
        return f"GradCheckReport({status}, max_rel_err={self.max_rel_err:.3e})"


def gradient_check(fn, inputs: list[Tensor], tolerance: float = 1e-5, step: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients of a scalar-valued fn against central
    finite differences. Inputs must be double precision.

    Note: ops with kinks (relu at exactly 0, max-pool ties) are only checked
    away from the nondifferentiable points; callers sample inputs accordingly.
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient_check requires double-precision inputs")
        t.requires_grad = True
        t.zero_grad()

    out = fn(*inputs)
    if out.data.size != 1:
        raise ValueError("fn must reduce to a scalar")
    out.backward()

    per_input = []
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = np.zeros_like(t.data)
        for i in range(t.data.size):
            orig = t.data.flat[i]
            t.data.flat[i] = orig + step
            hi = float(fn(*inputs).data)
            t.data.flat[i] = orig - step
            lo = float(fn(*inputs).data)
            t.data.flat[i] = orig
            numeric.flat[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
        rel = float(np.max(np.abs(analytic - numeric) / denom)) if t.data.size else 0.0
        per_input.append(rel)
        worst = max(worst, rel)

    return GradCheckReport(worst, per_input, tolerance)
