"""Dense float64 tensor engine with tape-based reverse-mode gradients.

Only the kernels the sequence models need are provided: causal dilated 1-D
convolution, residual blocks, additive attention pooling, an LSTM layer,
softmax, cross-entropy, and an Adam step.  Sequence operators accept either
a single sample [C, T] or a batch [B, C, T]; every op keeps strict causality
(output column t never reads input columns > t).

Gradients accumulate into `Tensor.grad` until `adam_step` consumes and
clears them, so calling `Tape.backward` twice doubles parameter gradients.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.special import expit

PROB_FLOOR = 1e-12


class Tensor:
    """A float64 array with an optional gradient buffer of the same shape."""

    __slots__ = ("values", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str = ""):
        self.values = np.asarray(values, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.values)
        self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.values.shape}{tag})"


class _TapeOp:
    __slots__ = ("output", "backward")

    def __init__(self, output: Tensor, backward: Callable[[np.ndarray], None]):
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed ops, replayed in reverse for gradients."""

    def __init__(self):
        self._ops: list[_TapeOp] = []

    def record(self, output: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        self._ops.append(_TapeOp(output, backward))

    def __len__(self) -> int:
        return len(self._ops)

    def backward(self, loss: Tensor) -> None:
        """Reverse-accumulate d(loss)/d(leaf) into every recorded leaf's grad.

        Intermediate node gradients are rebuilt from scratch on each call;
        leaf (parameter/input) gradients accumulate across calls.
        """
        if loss.values.shape != ():
            raise ValueError(f"loss must be scalar, got shape {loss.values.shape}")
        for op in self._ops:
            op.output.grad = None
        loss.grad = np.ones((), dtype=np.float64)
        for op in reversed(self._ops):
            if op.output.grad is not None:
                op.backward(op.output.grad)


def _needs_grad(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _record(tape: Optional[Tape], out: Tensor, backward: Callable[[np.ndarray], None]) -> Tensor:
    if tape is not None and out.requires_grad:
        tape.record(out, backward)
    return out


def _lift(values: np.ndarray) -> tuple[np.ndarray, bool]:
    """View a [C, T] array as [1, C, T]; batched input passes through."""
    if values.ndim == 2:
        return values[None], True
    if values.ndim == 3:
        return values, False
    raise ValueError(f"expected [C, T] or [B, C, T], got shape {values.shape}")


def causal_dilated_conv1d(tape: Optional[Tape], x: Tensor, kernel: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """Left-padded dilated convolution; output length equals input length.

    out[c, t] = bias[c] + sum_{c', j} kernel[c, c', j] * x[c', t - (k-1-j)*dilation]
    with x taken as zero before t = 0, so column t sees only columns <= t.
    """
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    if kernel.values.ndim != 3:
        raise ValueError(f"kernel must be [C_out, C_in, k], got shape {kernel.values.shape}")
    c_out, c_in, k = kernel.values.shape
    xv, lifted = _lift(x.values)
    if xv.shape[1] != c_in:
        raise ValueError(f"input has {xv.shape[1]} channels, kernel expects {c_in}")
    if bias.values.shape != (c_out,):
        raise ValueError(f"bias must have shape ({c_out},), got {bias.values.shape}")
    batch, _, t_len = xv.shape
    pad = (k - 1) * dilation
    xp = np.zeros((c_in, batch, t_len + pad))  # channel-major for contiguous tap slabs
    xp[:, :, pad:] = xv.transpose(1, 0, 2)

    # One GEMM over all taps: rows of the stacked input are (tap, channel).
    x_stack = np.empty((k, c_in, batch * t_len))
    for j in range(k):
        x_stack[j] = xp[:, :, j * dilation : j * dilation + t_len].reshape(c_in, -1)
    x_flat = x_stack.reshape(k * c_in, batch * t_len)
    w_flat = np.ascontiguousarray(kernel.values.transpose(0, 2, 1)).reshape(c_out, k * c_in)
    y = w_flat @ x_flat
    out_v = np.ascontiguousarray(y.reshape(c_out, batch, t_len).transpose(1, 0, 2))
    out_v += bias.values[:, None]

    out = Tensor(out_v[0] if lifted else out_v, requires_grad=_needs_grad(x, kernel, bias))

    def backward(grad: np.ndarray) -> None:
        g = grad[None] if lifted else grad
        g_flat = np.ascontiguousarray(g.transpose(1, 0, 2)).reshape(c_out, -1)
        if bias.requires_grad:
            bias.accumulate_grad(g_flat.sum(axis=1))
        if kernel.requires_grad:
            dw_flat = g_flat @ x_flat.T
            kernel.accumulate_grad(dw_flat.reshape(c_out, k, c_in).transpose(0, 2, 1))
        if x.requires_grad:
            dx_flat = w_flat.T @ g_flat
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, :, j * dilation : j * dilation + t_len] += dx_flat[
                    j * c_in : (j + 1) * c_in
                ].reshape(c_in, batch, t_len)
            dx = dxp[:, :, pad:].transpose(1, 0, 2)
            x.accumulate_grad(dx[0] if lifted else dx)

    return _record(tape, out, backward)


def relu(tape: Optional[Tape], x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.values, 0.0), requires_grad=x.requires_grad)
    mask = x.values > 0.0

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * mask)

    return _record(tape, out, backward)


def dropout(tape: Optional[Tape], x: Tensor, rate: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    """Inverted dropout; identity (and no mask draw) outside training."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs a seeded generator")
    mask = (rng.random(x.values.shape) >= rate) / (1.0 - rate)
    out = Tensor(x.values * mask, requires_grad=x.requires_grad)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(grad * mask)

    return _record(tape, out, backward)


def add(tape: Optional[Tape], a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ValueError(f"shape mismatch: {a.values.shape} vs {b.values.shape}")
    out = Tensor(a.values + b.values, requires_grad=_needs_grad(a, b))

    def backward(grad: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate_grad(grad)
        if b.requires_grad:
            b.accumulate_grad(grad)

    return _record(tape, out, backward)


def last_step(tape: Optional[Tape], x: Tensor) -> Tensor:
    """Select the final time column: [.., C, T] -> [.., C]."""
    out = Tensor(x.values[..., -1].copy(), requires_grad=x.requires_grad)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            dx = np.zeros_like(x.values)
            dx[..., -1] = grad
            x.accumulate_grad(dx)

    return _record(tape, out, backward)


def linear(tape: Optional[Tape], x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map on feature vectors: [.., C] @ weight[K, C].T + bias[K]."""
    k_out, c_in = weight.values.shape
    xv = x.values if x.values.ndim == 2 else x.values[None]
    lifted = x.values.ndim == 1
    if xv.shape[1] != c_in:
        raise ValueError(f"input has {xv.shape[1]} features, weight expects {c_in}")
    out_v = xv @ weight.values.T + bias.values
    out = Tensor(out_v[0] if lifted else out_v, requires_grad=_needs_grad(x, weight, bias))

    def backward(grad: np.ndarray) -> None:
        g = grad[None] if lifted else grad
        if bias.requires_grad:
            bias.accumulate_grad(g.sum(axis=0))
        if weight.requires_grad:
            weight.accumulate_grad(g.T @ xv)
        if x.requires_grad:
            dx = g @ weight.values
            x.accumulate_grad(dx[0] if lifted else dx)

    return _record(tape, out, backward)


def _stable_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(tape: Optional[Tape], logits: Tensor) -> Tensor:
    """Shift-stabilized softmax over the last axis; rows sum to 1."""
    if not np.all(np.isfinite(logits.values)):
        raise ValueError("softmax requires finite logits")
    p = _stable_softmax(logits.values)
    out = Tensor(p, requires_grad=logits.requires_grad)

    def backward(grad: np.ndarray) -> None:
        if logits.requires_grad:
            inner = (grad * p).sum(axis=-1, keepdims=True)
            logits.accumulate_grad(p * (grad - inner))

    return _record(tape, out, backward)


def cross_entropy(tape: Optional[Tape], probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-probability of the true class.

    `targets` is a one-hot [n, K] array.  Probabilities are floored at 1e-12
    inside the log so a (mis)trained model can never produce an infinite loss.
    """
    pv = probs.values if probs.values.ndim == 2 else probs.values[None]
    tv = np.asarray(targets, dtype=np.float64)
    if tv.ndim == 1:
        tv = tv[None]
    if pv.shape != tv.shape:
        raise ValueError(f"shape mismatch: predictions {pv.shape} vs targets {tv.shape}")
    row_sums = tv.sum(axis=-1)
    if not (np.all(row_sums == 1.0) and np.all((tv == 0.0) | (tv == 1.0))):
        raise ValueError("targets must be one-hot rows")
    n = pv.shape[0]
    p_true = (pv * tv).sum(axis=-1)
    p_safe = np.maximum(p_true, PROB_FLOOR)
    out = Tensor(-np.log(p_safe).mean(), requires_grad=probs.requires_grad)

    def backward(grad: np.ndarray) -> None:
        if probs.requires_grad:
            live = (p_true >= PROB_FLOOR).astype(np.float64)  # clamped entries get zero grad
            dp = -(tv * (live / p_safe)[:, None]) * (float(grad) / n)
            probs.accumulate_grad(dp[0] if probs.values.ndim == 1 else dp)

    return _record(tape, out, backward)


def sum_all(tape: Optional[Tape], x: Tensor) -> Tensor:
    out = Tensor(x.values.sum(), requires_grad=x.requires_grad)

    def backward(grad: np.ndarray) -> None:
        if x.requires_grad:
            x.accumulate_grad(np.full_like(x.values, float(grad)))

    return _record(tape, out, backward)


def attention_pool(tape: Optional[Tape], hidden: Tensor, score_weight: Tensor, score_vec: Tensor) -> tuple[Tensor, np.ndarray]:
    """Additive temporal attention: softmax(v . tanh(W h_t)) over columns.

    Returns the pooled context vector and the (detached) attention weights.
    """
    hv, lifted = _lift(hidden.values)
    a_dim, c_in = score_weight.values.shape
    if hv.shape[1] != c_in:
        raise ValueError(f"hidden has {hv.shape[1]} channels, score weight expects {c_in}")
    if score_vec.values.shape != (a_dim,):
        raise ValueError(f"score vector must have shape ({a_dim},), got {score_vec.values.shape}")
    batch, _, t_len = hv.shape
    h_flat = np.ascontiguousarray(hv.transpose(1, 0, 2)).reshape(c_in, batch * t_len)
    u_flat = np.tanh(score_weight.values @ h_flat)                    # [A, B*T]
    e = (score_vec.values @ u_flat).reshape(batch, t_len)
    wts = _stable_softmax(e)
    ctx_v = np.matmul(hv, wts[:, :, None])[..., 0]                    # [B, C]
    out = Tensor(ctx_v[0] if lifted else ctx_v, requires_grad=_needs_grad(hidden, score_weight, score_vec))

    def backward(grad: np.ndarray) -> None:
        g = grad[None] if lifted else grad                            # [B, C]
        dwts = np.matmul(g[:, None, :], hv)[:, 0, :]                  # [B, T]
        de = wts * (dwts - (dwts * wts).sum(axis=-1, keepdims=True))
        de_flat = de.reshape(-1)
        dpre_flat = (score_vec.values[:, None] * de_flat) * (1.0 - u_flat * u_flat)
        if score_vec.requires_grad:
            score_vec.accumulate_grad(u_flat @ de_flat)
        if score_weight.requires_grad:
            score_weight.accumulate_grad(dpre_flat @ h_flat.T)
        if hidden.requires_grad:
            dh = wts[:, None, :] * g[:, :, None]
            dh_flat = score_weight.values.T @ dpre_flat               # [C, B*T]
            dh += dh_flat.reshape(c_in, batch, t_len).transpose(1, 0, 2)
            hidden.accumulate_grad(dh[0] if lifted else dh)

    return _record(tape, out, backward), (wts[0] if lifted else wts)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def lstm_forward(tape: Optional[Tape], x: Tensor, w_input: Tensor, w_hidden: Tensor, bias: Tensor) -> Tensor:
    """Single LSTM layer over [.., C, T] with zero initial state.

    Gate rows of the stacked weights are ordered (input, forget, cell, output).
    Returns the hidden-state sequence [.., H, T].
    """
    xv, lifted = _lift(x.values)
    four_h, c_in = w_input.values.shape
    hidden_size = four_h // 4
    if four_h != 4 * hidden_size or w_hidden.values.shape != (four_h, hidden_size):
        raise ValueError(f"inconsistent LSTM weight shapes {w_input.values.shape} / {w_hidden.values.shape}")
    if xv.shape[1] != c_in:
        raise ValueError(f"input has {xv.shape[1]} channels, weights expect {c_in}")
    if bias.values.shape != (four_h,):
        raise ValueError(f"bias must have shape ({four_h},), got {bias.values.shape}")
    batch, _, t_len = xv.shape
    h_dim = hidden_size

    # Time-major internals: every per-step slice is a contiguous block, and
    # the input/weight products collapse into single GEMMs.
    x_tm = np.ascontiguousarray(xv.transpose(2, 0, 1)).reshape(t_len * batch, c_in)
    xproj = (x_tm @ w_input.values.T).reshape(t_len, batch, four_h)
    gates_i = np.empty((t_len, batch, h_dim))
    gates_f = np.empty((t_len, batch, h_dim))
    gates_g = np.empty((t_len, batch, h_dim))
    gates_o = np.empty((t_len, batch, h_dim))
    cells = np.empty((t_len, batch, h_dim))
    tanh_c = np.empty((t_len, batch, h_dim))
    hstore = np.zeros((t_len + 1, batch, h_dim))  # hstore[0] is the initial state

    wh_t = w_hidden.values.T
    c_prev = np.zeros((batch, h_dim))
    for t in range(t_len):
        pre = xproj[t] + hstore[t] @ wh_t + bias.values
        i_t = _sigmoid(pre[:, :h_dim])
        f_t = _sigmoid(pre[:, h_dim : 2 * h_dim])
        g_t = np.tanh(pre[:, 2 * h_dim : 3 * h_dim])
        o_t = _sigmoid(pre[:, 3 * h_dim :])
        c_t = f_t * c_prev + i_t * g_t
        tc = np.tanh(c_t)
        gates_i[t], gates_f[t], gates_g[t], gates_o[t] = i_t, f_t, g_t, o_t
        cells[t] = c_t
        tanh_c[t] = tc
        hstore[t + 1] = o_t * tc
        c_prev = c_t

    out_v = np.ascontiguousarray(hstore[1:].transpose(1, 2, 0))
    out = Tensor(out_v[0] if lifted else out_v, requires_grad=_needs_grad(x, w_input, w_hidden, bias))

    def backward(grad: np.ndarray) -> None:
        g3 = grad[None] if lifted else grad
        g_seq = np.ascontiguousarray(g3.transpose(2, 0, 1))  # [T, B, H]
        dpre_all = np.empty((t_len, batch, four_h))
        dh_next = np.zeros((batch, h_dim))
        dc_next = np.zeros((batch, h_dim))
        zero_c = np.zeros((batch, h_dim))
        for t in range(t_len - 1, -1, -1):
            i_t, f_t, g_t, o_t = gates_i[t], gates_f[t], gates_g[t], gates_o[t]
            tc = tanh_c[t]
            c_prev_t = cells[t - 1] if t > 0 else zero_c
            dh = g_seq[t] + dh_next
            dc = dh * o_t * (1.0 - tc * tc) + dc_next
            dpre = dpre_all[t]
            dpre[:, :h_dim] = dc * g_t * i_t * (1.0 - i_t)
            dpre[:, h_dim : 2 * h_dim] = dc * c_prev_t * f_t * (1.0 - f_t)
            dpre[:, 2 * h_dim : 3 * h_dim] = dc * i_t * (1.0 - g_t * g_t)
            dpre[:, 3 * h_dim :] = dh * tc * o_t * (1.0 - o_t)
            dc_next = dc * f_t
            dh_next = dpre @ w_hidden.values
        dpre_flat = dpre_all.reshape(t_len * batch, four_h)
        if w_input.requires_grad:
            w_input.accumulate_grad(dpre_flat.T @ x_tm)
        if w_hidden.requires_grad:
            hprev_flat = hstore[:-1].reshape(t_len * batch, h_dim)
            w_hidden.accumulate_grad(dpre_flat.T @ hprev_flat)
        if bias.requires_grad:
            bias.accumulate_grad(dpre_flat.sum(axis=0))
        if x.requires_grad:
            dx_tm = dpre_flat @ w_input.values
            dx = dx_tm.reshape(t_len, batch, c_in).transpose(1, 2, 0)
            x.accumulate_grad(dx[0] if lifted else dx)

    return _record(tape, out, backward)


def residual_block(
    tape: Optional[Tape],
    x: Tensor,
    conv1_w: Tensor,
    conv1_b: Tensor,
    conv2_w: Tensor,
    conv2_b: Tensor,
    dilation: int,
    dropout_rate: float = 0.0,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
    skip_w: Optional[Tensor] = None,
    skip_b: Optional[Tensor] = None,
) -> Tensor:
    """Two dilated causal convs with ReLU/dropout, added to a skip path.

    The skip path is the identity when input and output channel counts
    match; otherwise `skip_w`/`skip_b` must supply a 1x1 convolution.
    """
    c_out = conv1_w.values.shape[0]
    c_in = conv1_w.values.shape[1]
    if skip_w is None and c_in != c_out:
        raise ValueError(f"channel change {c_in} -> {c_out} requires a 1x1 skip convolution")
    f = causal_dilated_conv1d(tape, x, conv1_w, conv1_b, dilation)
    f = relu(tape, f)
    f = dropout(tape, f, dropout_rate, rng, training)
    f = causal_dilated_conv1d(tape, f, conv2_w, conv2_b, dilation)
    f = relu(tape, f)
    f = dropout(tape, f, dropout_rate, rng, training)
    shortcut = x if skip_w is None else causal_dilated_conv1d(tape, x, skip_w, skip_b, 1)
    return relu(tape, add(tape, f, shortcut))


class ParameterSet:
    """Named parameter tensors plus per-parameter Adam moment state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._steps: dict[str, int] = {}

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(values, requires_grad=True, name=name)
        self._params[name] = t
        self._m[name] = np.zeros_like(t.values)
        self._v[name] = np.zeros_like(t.values)
        self._steps[name] = 0
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def clear_grads(self) -> None:
        for t in self._params.values():
            t.grad = None

    def value_dict(self) -> dict[str, np.ndarray]:
        return {name: t.values.copy() for name, t in self._params.items()}

    def load_value_dict(self, values: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in values:
                raise KeyError(f"missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.values.shape:
                raise ValueError(f"shape mismatch for {name!r}: {arr.shape} vs {t.values.shape}")
            t.values = arr.copy()


def adam_step(
    params: ParameterSet,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam update over every parameter; clears gradients."""
    for name, t in params.items():
        if t.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        g = t.grad
        params._steps[name] += 1
        step = params._steps[name]
        m = params._m[name]
        v = params._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**step)
        v_hat = v / (1.0 - beta2**step)
        t.values -= learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        t.grad = None
