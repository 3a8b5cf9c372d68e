from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from scipy import special

from flightmaint.errors import ShapeError
from flightmaint.tensor import Tensor, concat
from flightmaint.utils import ChoiceEnum, FloatArray


class CellKind(ChoiceEnum):
    LSTM = "lstm"
    GRU = "gru"

    @property
    def gate_count(self) -> int:
        return 4 if self is CellKind.LSTM else 3


class RecurrentWeights(NamedTuple):
    """Weights of one recurrent direction; gates are stacked along the last axis."""

    w_ih: Tensor
    w_hh: Tensor
    bias: Tensor


def same_padding(length: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """Output length and (left, right) zero padding for a strided cross-correlation of length ceil(T/s).

    Args:
        length: Input length T.
        kernel: Kernel width K.
        stride: Stride s.

    Returns:
        `(output_length, pad_left, pad_right)`; odd totals put the extra zero on the right.
    """
    out = -(-length // stride)
    total = max((out - 1) * stride + kernel - length, 0)
    return out, total // 2, total - total // 2


def dense(x: Tensor, kernel: Tensor, bias: Tensor) -> Tensor:
    return x @ kernel + bias


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Strided 1D cross-correlation along time with symmetric zero padding.

    Args:
        x: Input of shape B×T×Cin.
        kernel: Weights of shape K×Cin×Cout.
        bias: Optional bias of shape Cout.
        stride: Temporal stride s.

    Returns:
        Output of shape B×ceil(T/s)×Cout.

    Raises:
        ShapeError: If ranks or channel counts disagree.
    """
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[1] or stride < 1:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape} (stride {stride})")
    length = x.shape[1]
    width = kernel.shape[0]
    out_len, left, right = same_padding(length, width, stride)
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    w = kernel.data
    span = stride * (out_len - 1) + 1
    y = sum(xp[:, k : k + span : stride] @ w[k] for k in range(width))
    if bias is not None:
        y = y + bias.data

    def backward(g: FloatArray) -> tuple[FloatArray, ...]:
        grad_w = np.stack([np.tensordot(xp[:, k : k + span : stride], g, axes=([0, 1], [0, 1])) for k in range(width)])
        grad_xp = np.zeros_like(xp)
        for k in range(width):
            grad_xp[:, k : k + span : stride] += g @ w[k].T
        grads = (grad_xp[:, left : left + length], grad_w)
        return grads if bias is None else (*grads, g.sum(axis=(0, 1)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor.from_op(np.asarray(y), parents, backward)


def transposed_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None, stride: int = 1) -> Tensor:
    """Adjoint of `conv1d`: expands B×T×Cin to B×(T·s)×Cout.

    The kernel has the layout of the conv1d it is the adjoint of, K×Cout×Cin, so forward of this
    op equals the input-gradient of that conv1d.

    Args:
        x: Input of shape B×T×Cin.
        kernel: Weights of shape K×Cout×Cin.
        bias: Optional bias of shape Cout.
        stride: Temporal stride s.

    Returns:
        Output of shape B×(T·s)×Cout.

    Raises:
        ShapeError: If ranks or channel counts disagree.
    """
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[2] != kernel.shape[2] or stride < 1:
        raise ShapeError(f"transposed_conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    batch, steps, _ = x.shape
    width, out_channels, _ = kernel.shape
    length = steps * stride
    _, left, right = same_padding(length, width, stride)
    w = kernel.data
    span = stride * (steps - 1) + 1
    yp = np.zeros((batch, length + left + right, out_channels), dtype=x.dtype)
    for k in range(width):
        yp[:, k : k + span : stride] += x.data @ w[k].T
    y = yp[:, left : left + length]
    if bias is not None:
        y = y + bias.data

    def backward(g: FloatArray) -> tuple[FloatArray, ...]:
        gp = np.pad(g, ((0, 0), (left, right), (0, 0)))
        grad_x = sum(gp[:, k : k + span : stride] @ w[k] for k in range(width))
        grad_w = np.stack(
            [np.tensordot(gp[:, k : k + span : stride], x.data, axes=([0, 1], [0, 1])) for k in range(width)]
        )
        grads = (np.asarray(grad_x), grad_w)
        return grads if bias is None else (*grads, g.sum(axis=(0, 1)))

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return Tensor.from_op(np.ascontiguousarray(y), parents, backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = special.softmax(x.data, axis=axis)
    return Tensor.from_op(y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = special.log_softmax(x.data, axis=axis)
    return Tensor.from_op(y, (x,), lambda g: (g - np.exp(y) * g.sum(axis=axis, keepdims=True),))


def layer_norm(x: Tensor, gain: Tensor, shift: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalise each feature vector (last axis) to zero mean and unit variance, then scale and shift."""
    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    x_hat = centred * inv_std
    reduce_axes = tuple(range(x.ndim - 1))

    def backward(g: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        g_hat = g * gain.data
        grad_x = inv_std * (
            g_hat - g_hat.mean(axis=-1, keepdims=True) - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return grad_x, (g * x_hat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return Tensor.from_op(x_hat * gain.data + shift.data, (x, gain, shift), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the time axis of a B×S×D tensor."""
    return x.mean(axis=1)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when `rate` is zero or no training generator is given."""
    if rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / (1.0 - rate)
    return x * mask


def _time_major(x: Tensor, reverse: bool) -> FloatArray:
    return x.data[:, ::-1] if reverse else x.data


def lstm(x: Tensor, weights: RecurrentWeights, *, reverse: bool = False) -> Tensor:
    """Single-direction LSTM over a B×T×C sequence, gates ordered (input, forget, cell, output).

    With `reverse`, the sequence is consumed from the last step backwards and outputs are
    returned aligned with the original time axis.

    Args:
        x: Input sequence.
        weights: `w_ih` C×4U, `w_hh` U×4U, `bias` 4U.
        reverse: Run the recurrence backwards in time.

    Returns:
        Hidden states of shape B×T×U.
    """
    w_ih, w_hh, bias = (weights.w_ih.data, weights.w_hh.data, weights.bias.data)
    xs = _time_major(x, reverse)
    batch, steps, _ = xs.shape
    units = w_hh.shape[0]
    proj = xs @ w_ih + bias
    h = np.zeros((batch, units), dtype=x.dtype)
    c = np.zeros((batch, units), dtype=x.dtype)
    hs = np.empty((batch, steps, units), dtype=x.dtype)
    cs = np.empty((batch, steps, units), dtype=x.dtype)
    gates = np.empty((batch, steps, 4 * units), dtype=x.dtype)
    for t in range(steps):
        z = proj[:, t] + h @ w_hh
        i = special.expit(z[:, :units])
        f = special.expit(z[:, units : 2 * units])
        g = np.tanh(z[:, 2 * units : 3 * units])
        o = special.expit(z[:, 3 * units :])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        cs[:, t] = c
        hs[:, t] = h

    def backward(grad_out: FloatArray) -> tuple[FloatArray, ...]:
        grad_seq = grad_out[:, ::-1] if reverse else grad_out
        dz_all = np.empty_like(gates)
        dh_next = np.zeros((batch, units), dtype=x.dtype)
        dc_next = np.zeros((batch, units), dtype=x.dtype)
        for t in reversed(range(steps)):
            i, f, g, o = np.split(gates[:, t], 4, axis=1)
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(dc_next)
            tanh_c = np.tanh(cs[:, t])
            dh = grad_seq[:, t] + dh_next
            dc = dh * o * (1 - tanh_c * tanh_c) + dc_next
            dz = np.concatenate(
                [dc * g * i * (1 - i), dc * c_prev * f * (1 - f), dc * i * (1 - g * g), dh * tanh_c * o * (1 - o)],
                axis=1,
            )
            dz_all[:, t] = dz
            dc_next = dc * f
            dh_next = dz @ w_hh.T
        h_prev = np.concatenate([np.zeros((batch, 1, units), dtype=x.dtype), hs[:, :-1]], axis=1)
        grad_x = dz_all @ w_ih.T
        return (
            grad_x[:, ::-1] if reverse else grad_x,
            np.tensordot(xs, dz_all, axes=([0, 1], [0, 1])),
            np.tensordot(h_prev, dz_all, axes=([0, 1], [0, 1])),
            dz_all.sum(axis=(0, 1)),
        )

    out = hs[:, ::-1] if reverse else hs
    return Tensor.from_op(np.ascontiguousarray(out), (x, *weights), backward)


def gru(x: Tensor, weights: RecurrentWeights, *, reverse: bool = False) -> Tensor:
    """Single-direction GRU, gates ordered (update, reset, candidate), reset applied before the matmul.

    h_t = z * h_{t-1} + (1 - z) * tanh(W_h x_t + U_h (r * h_{t-1}) + b_h)

    Args:
        x: Input sequence of shape B×T×C.
        weights: `w_ih` C×3U, `w_hh` U×3U, `bias` 3U.
        reverse: Run the recurrence backwards in time.

    Returns:
        Hidden states of shape B×T×U.
    """
    w_ih, w_hh, bias = (weights.w_ih.data, weights.w_hh.data, weights.bias.data)
    xs = _time_major(x, reverse)
    batch, steps, _ = xs.shape
    units = w_hh.shape[0]
    w_zr, w_cand = w_hh[:, : 2 * units], w_hh[:, 2 * units :]
    proj = xs @ w_ih + bias
    h = np.zeros((batch, units), dtype=x.dtype)
    h_prev_all = np.empty((batch, steps, units), dtype=x.dtype)
    zs = np.empty_like(h_prev_all)
    rs = np.empty_like(h_prev_all)
    cands = np.empty_like(h_prev_all)
    hs = np.empty_like(h_prev_all)
    for t in range(steps):
        zr = special.expit(proj[:, t, : 2 * units] + h @ w_zr)
        z, r = zr[:, :units], zr[:, units:]
        cand = np.tanh(proj[:, t, 2 * units :] + (r * h) @ w_cand)
        h_prev_all[:, t] = h
        h = z * h + (1 - z) * cand
        zs[:, t], rs[:, t], cands[:, t], hs[:, t] = z, r, cand, h

    def backward(grad_out: FloatArray) -> tuple[FloatArray, ...]:
        grad_seq = grad_out[:, ::-1] if reverse else grad_out
        da_all = np.empty((batch, steps, 3 * units), dtype=x.dtype)
        dh_next = np.zeros((batch, units), dtype=x.dtype)
        for t in reversed(range(steps)):
            z, r, cand, h_prev = zs[:, t], rs[:, t], cands[:, t], h_prev_all[:, t]
            dh = grad_seq[:, t] + dh_next
            da_cand = dh * (1 - z) * (1 - cand * cand)
            d_rh = da_cand @ w_cand.T
            da_z = dh * (h_prev - cand) * z * (1 - z)
            da_r = d_rh * h_prev * r * (1 - r)
            da_zr = np.concatenate([da_z, da_r], axis=1)
            da_all[:, t] = np.concatenate([da_zr, da_cand], axis=1)
            dh_next = dh * z + d_rh * r + da_zr @ w_zr.T
        grad_hh = np.concatenate(
            [
                np.tensordot(h_prev_all, da_all[..., : 2 * units], axes=([0, 1], [0, 1])),
                np.tensordot(rs * h_prev_all, da_all[..., 2 * units :], axes=([0, 1], [0, 1])),
            ],
            axis=1,
        )
        grad_x = da_all @ w_ih.T
        return (
            grad_x[:, ::-1] if reverse else grad_x,
            np.tensordot(xs, da_all, axes=([0, 1], [0, 1])),
            grad_hh,
            da_all.sum(axis=(0, 1)),
        )

    out = hs[:, ::-1] if reverse else hs
    return Tensor.from_op(np.ascontiguousarray(out), (x, *weights), backward)


def recurrent_layer(x: Tensor, cell: CellKind, directions: Sequence[RecurrentWeights]) -> Tensor:
    """Run a recurrent layer and return the full output sequence.

    One weight set gives a unidirectional layer (B×T×U); two give a bidirectional one whose
    output is `[forward; backward]` per timestep (B×T×2U).

    Args:
        x: Input sequence of shape B×T×C.
        cell: LSTM or GRU.
        directions: Forward weights, then optionally backward weights.

    Returns:
        The output sequence.

    Raises:
        ShapeError: If the input width does not match the weights or more than two directions are given.
    """
    if not 1 <= len(directions) <= 2:
        raise ShapeError(f"recurrent_layer takes one or two directions, got {len(directions)}")
    for weights in directions:
        if x.ndim != 3 or weights.w_ih.shape[0] != x.shape[2]:
            raise ShapeError(f"recurrent_layer: input {x.shape} incompatible with weights {weights.w_ih.shape}")
    run = lstm if cell is CellKind.LSTM else gru
    outputs = [run(x, weights, reverse=index == 1) for index, weights in enumerate(directions)]
    return outputs[0] if len(outputs) == 1 else concat(outputs, axis=-1)
