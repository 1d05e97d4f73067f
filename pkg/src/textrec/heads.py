"""The two supervised branches over the feature sequence.

Context branch: two bidirectional LSTM layers, then a shared per-step linear
map and row softmax, so every output step sees the whole input sequence.
Supervision branch: one linear classifier applied independently at each step
(weights shared across positions), then row softmax.

Sequences are (T, N, F) tensors; both branches return (T, N, A) probability
sequences whose rows sum to 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (
    Tensor,
    add,
    add_bias,
    concat,
    getitem,
    linear,
    matmul,
    mul,
    parameter,
    reshape,
    sigmoid,
    softmax_rows,
    stack,
    tanh,
)

INIT_RANGE = 0.08  # weights drawn uniform in [-0.08, 0.08]


@dataclass(frozen=True)
class BlstmConfig:
    """Recurrent sizing; two bidirectional layers are fixed by the architecture."""

    hidden_size: int = 32
    layers: int = 2

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be positive")
        if self.layers != 2:
            raise ValueError("the context branch is fixed at two BLSTM layers")

    @property
    def output_size(self) -> int:
        """Per-step output width: forward and backward states concatenated."""
        return 2 * self.hidden_size


def _uniform(rng: np.random.Generator, *shape: int) -> Tensor:
    return parameter(rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape))


class LstmDirection:
    """Single-direction LSTM scanned over a (T, N, F) sequence.

    Gate layout along the 4H axis is (input, forget, cell candidate, output).
    The forget-gate bias starts at 1.0; all weight matrices start uniform in
    [-0.08, 0.08], remaining biases at zero.
    """

    def __init__(self, rng, input_size: int, hidden_size: int, reverse: bool):
        h = hidden_size
        self.hidden_size = h
        self.reverse = reverse
        self.w_x = _uniform(rng, input_size, 4 * h)
        self.w_h = _uniform(rng, h, 4 * h)
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0
        self.bias = parameter(bias)

    def forward(self, seq: Tensor) -> list[Tensor]:
        t_len, n, _ = seq.shape
        h_sz = self.hidden_size
        h = Tensor(np.zeros((n, h_sz)))
        c = Tensor(np.zeros((n, h_sz)))
        order = range(t_len - 1, -1, -1) if self.reverse else range(t_len)
        outputs: list[Tensor | None] = [None] * t_len
        for t in order:
            x_t = getitem(seq, t)  # (N, F)
            z = add_bias(add(matmul(x_t, self.w_x), matmul(h, self.w_h)), self.bias)
            gi = sigmoid(getitem(z, (slice(None), slice(0, h_sz))))
            gf = sigmoid(getitem(z, (slice(None), slice(h_sz, 2 * h_sz))))
            gg = tanh(getitem(z, (slice(None), slice(2 * h_sz, 3 * h_sz))))
            go = sigmoid(getitem(z, (slice(None), slice(3 * h_sz, 4 * h_sz))))
            c = add(mul(gf, c), mul(gi, gg))
            h = mul(go, tanh(c))
            outputs[t] = h
        return outputs  # type: ignore[return-value]

    def parameters(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.bias}


class BlstmLayer:
    def __init__(self, rng, input_size: int, hidden_size: int):
        self.fwd = LstmDirection(rng, input_size, hidden_size, reverse=False)
        self.bwd = LstmDirection(rng, input_size, hidden_size, reverse=True)

    def forward(self, seq: Tensor) -> Tensor:
        hf = self.fwd.forward(seq)
        hb = self.bwd.forward(seq)
        steps = [concat([f, b], axis=1) for f, b in zip(hf, hb)]
        return stack(steps, axis=0)  # (T, N, 2H)

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for d, direction in (("fwd", self.fwd), ("bwd", self.bwd)):
            for k, v in direction.parameters().items():
                out[f"{d}.{k}"] = v
        return out


def _check_sequence(seq: Tensor) -> tuple[int, int, int]:
    if seq.ndim != 3:
        raise ShapeError(f"expected a (T, N, F) sequence, got {seq.shape}")
    t_len, n, f = seq.shape
    if t_len < 1:
        raise ShapeError("sequence must contain at least one step")
    return t_len, n, f


def _softmax_steps(logits: Tensor) -> Tensor:
    """Row softmax over the class axis of a (T, N, A) tensor."""
    t_len, n, a = logits.shape
    flat = softmax_rows(reshape(logits, (t_len * n, a)))
    return reshape(flat, (t_len, n, a))


class ContextBranch:
    """Two-layer BLSTM, shared per-step linear map, softmax over the alphabet."""

    def __init__(self, input_size: int, config: BlstmConfig, num_classes: int, rng):
        self.config = config
        self.layer1 = BlstmLayer(rng, input_size, config.hidden_size)
        self.layer2 = BlstmLayer(rng, config.output_size, config.hidden_size)
        self.fc_w = _uniform(rng, config.output_size, num_classes)
        self.fc_b = parameter(np.zeros(num_classes))

    def forward(self, seq: Tensor) -> Tensor:
        t_len, n, _ = _check_sequence(seq)
        h = self.layer2.forward(self.layer1.forward(seq))
        flat = reshape(h, (t_len * n, self.config.output_size))
        logits = linear(flat, self.fc_w, self.fc_b)
        return _softmax_steps(reshape(logits, (t_len, n, self.fc_b.size)))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in (("layer1", self.layer1), ("layer2", self.layer2)):
            for k, v in layer.parameters().items():
                out[f"{name}.{k}"] = v
        out["fc.w"] = self.fc_w
        out["fc.b"] = self.fc_b
        return out


class SupervisionBranch:
    """Position-independent character classifier with weights shared across steps."""

    def __init__(self, input_size: int, num_classes: int, rng):
        self.fc_w = _uniform(rng, input_size, num_classes)
        self.fc_b = parameter(np.zeros(num_classes))

    def forward(self, seq: Tensor) -> Tensor:
        t_len, n, f = _check_sequence(seq)
        logits = linear(reshape(seq, (t_len * n, f)), self.fc_w, self.fc_b)
        return _softmax_steps(reshape(logits, (t_len, n, self.fc_b.size)))

    def parameters(self) -> dict[str, Tensor]:
        return {"fc.w": self.fc_w, "fc.b": self.fc_b}
