"""Independent oracles and the runtime self-check suite.

The brute-force CTC evaluator enumerates every path; the gradient checks use
central finite differences. Neither shares code with the implementations they
verify, so they stay meaningful as oracles. ``run_all`` powers the
``selfcheck`` CLI command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product
from typing import Callable, Iterator

import numpy as np

from .ctc import collapse, ctc_loss, is_feasible
from .gradcheck import check_gradients
from .tensor import (
    Tape,
    Tensor,
    add_bias,
    batch_norm,
    BatchNormState,
    conv2d,
    getitem,
    matmul,
    mul,
    relu,
    scale_channels,
    sigmoid,
    softmax_rows,
    sum_all,
    tanh,
)

# ---------------------------------------------------------------------------
# oracles


def brute_force_ctc_loss(probs: np.ndarray, label) -> float:
    """-ln of the summed probability of every path collapsing to ``label``.

    Exhaustive enumeration over all A**T paths; only usable at tiny sizes.
    """
    probs = np.asarray(probs, dtype=np.float64)
    t_len, num_classes = probs.shape
    target = [int(k) for k in label]
    total = 0.0
    for path in product(range(num_classes), repeat=t_len):
        if collapse(path) == target:
            p = 1.0
            for t, k in enumerate(path):
                p *= probs[t, k]
            total += p
    return math.inf if total == 0.0 else -math.log(total)


def all_feasible_labels(num_classes: int, num_frames: int, max_len: int) -> Iterator[tuple[int, ...]]:
    """Every blank-free label of length <= max_len feasible in ``num_frames``."""
    for length in range(0, max_len + 1):
        for combo in product(range(1, num_classes), repeat=length):
            if is_feasible(combo, num_frames):
                yield combo


def random_row_stochastic(rng: np.random.Generator, t_len: int, num_classes: int) -> np.ndarray:
    m = rng.uniform(0.05, 1.0, size=(t_len, num_classes))
    return m / m.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# check suite


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name}  max_err={self.max_error:.3e}  tol={self.tolerance:.0e}"


def _op_gradient_checks(rng: np.random.Generator) -> list[CheckResult]:
    checks: list[CheckResult] = []

    def check(name: str, build: Callable[[], Tensor], leaves, tol: float = 1e-6) -> None:
        err = check_gradients(build, leaves, max_probe=64, rng=rng)
        checks.append(CheckResult(f"grad/{name}", err, tol))

    x = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
    y = Tensor(rng.uniform(-2, 2, (4, 5)), requires_grad=True)
    check("mul", lambda: sum_all(mul(x, y)), [x, y])
    check("sigmoid", lambda: sum_all(mul(sigmoid(x), y)), [x, y])
    check("tanh", lambda: sum_all(mul(tanh(x), y)), [x, y])
    check("relu", lambda: sum_all(mul(relu(x), y)), [x, y])
    check("softmax_rows", lambda: sum_all(mul(softmax_rows(x), y)), [x, y])

    a = Tensor(rng.uniform(-2, 2, (3, 4)), requires_grad=True)
    b = Tensor(rng.uniform(-2, 2, (4, 6)), requires_grad=True)
    c = Tensor(rng.uniform(-2, 2, (6,)), requires_grad=True)
    w2 = Tensor(rng.uniform(-2, 2, (3, 6)), requires_grad=True)
    check("matmul+bias", lambda: sum_all(mul(add_bias(matmul(a, b), c), w2)), [a, b, c])

    xi = Tensor(rng.uniform(-2, 2, (1, 2, 5, 5)), requires_grad=True)
    ki = Tensor(rng.uniform(-1, 1, (3, 2, 3, 1)), requires_grad=True)
    check("conv2d", lambda: sum_all(conv2d(xi, ki, stride=(1, 1), padding="same")), [xi, ki])
    check(
        "conv2d_strided",
        lambda: sum_all(sigmoid(conv2d(xi, ki, stride=(2, 2), padding="same"))),
        [xi, ki],
    )

    xa = Tensor(rng.uniform(-2, 2, (2, 3, 4, 4)), requires_grad=True)
    ma = Tensor(rng.uniform(0.1, 0.9, (2, 1, 4, 4)), requires_grad=True)
    check("scale_channels", lambda: sum_all(scale_channels(xa, ma)), [xa, ma])

    xb = Tensor(rng.uniform(-2, 2, (3, 4, 2, 5)), requires_grad=True)
    gb = Tensor(rng.uniform(0.5, 1.5, (4,)), requires_grad=True)
    bb = Tensor(rng.uniform(-0.5, 0.5, (4,)), requires_grad=True)
    st = BatchNormState(4)
    check(
        "batch_norm",
        lambda: sum_all(mul(batch_norm(xb, gb, bb, st, training=True), Tensor(np.ones((3, 4, 2, 5)) * 0.5 + 0.1))),
        [xb, gb, bb],
        tol=1e-5,
    )

    logits = Tensor(rng.uniform(-2, 2, (8, 5)), requires_grad=True)
    label = [1, 2, 1]
    check(
        "ctc_through_softmax",
        lambda: ctc_loss(softmax_rows(logits), label),
        [logits],
        tol=1e-6,
    )
    return checks


def _ctc_oracle_check(rng: np.random.Generator, trials: int = 5) -> CheckResult:
    worst = 0.0
    for t_len in range(1, 5):
        for num_classes in (2, 3):
            for _ in range(trials):
                probs = random_row_stochastic(rng, t_len, num_classes)
                for label in all_feasible_labels(num_classes, t_len, max_len=3):
                    got = float(ctc_loss(Tensor(probs), list(label)).data)
                    want = brute_force_ctc_loss(probs, label)
                    worst = max(worst, abs(got - want))
    return CheckResult("ctc/oracle_equivalence", worst, 1e-10)


def _ctc_conservation_check(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for t_len in (1, 2, 3, 4):
        for num_classes in (2, 3):
            probs = random_row_stochastic(rng, t_len, num_classes)
            total = 0.0
            for label in all_feasible_labels(num_classes, t_len, max_len=t_len):
                total += math.exp(-float(ctc_loss(Tensor(probs), list(label)).data))
            worst = max(worst, abs(total - 1.0))
    return CheckResult("ctc/probability_conservation", worst, 1e-9)


def _softmax_rowsum_check(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(20):
        x = Tensor(rng.uniform(-1000, 1000, (6, 7)))
        rows = softmax_rows(x).data.sum(axis=1)
        worst = max(worst, float(np.max(np.abs(rows - 1.0))))
    return CheckResult("softmax/rows_sum_to_one", worst, 1e-12)


def _determinism_check(rng: np.random.Generator) -> CheckResult:
    x = Tensor(rng.uniform(-2, 2, (3, 3)), requires_grad=True)
    w = Tensor(rng.uniform(-2, 2, (3, 3)), requires_grad=True)
    with Tape() as tape:
        root = sum_all(sigmoid(matmul(x, w)))
    tape.backward(root)
    first = (x.grad.copy(), w.grad.copy())
    tape.clear_grads()
    tape.backward(root)
    same = np.array_equal(first[0], x.grad) and np.array_equal(first[1], w.grad)
    return CheckResult("tape/backward_determinism", 0.0 if same else 1.0, 0.0)


def run_all(seed: int = 0) -> list[CheckResult]:
    """Run the whole self-check suite; returns one result per check."""
    rng = np.random.default_rng(seed)
    results = _op_gradient_checks(rng)
    results.append(_ctc_oracle_check(rng))
    results.append(_ctc_conservation_check(rng))
    results.append(_softmax_rowsum_check(rng))
    results.append(_determinism_check(rng))
    results.extend(_pipeline_checks(rng))
    return results


def _pipeline_checks(rng: np.random.Generator) -> list[CheckResult]:
    # imported lazily: backbone/heads sit above this module in the layering
    from .backbone import AttentionModule, Backbone, BackboneConfig, map_to_sequence
    from .heads import BlstmConfig, ContextBranch, SupervisionBranch

    checks: list[CheckResult] = []
    cfg = BackboneConfig(stage_channels=(2, 3, 4, 5))
    backbone = Backbone(cfg, rng)
    attention = AttentionModule(cfg.out_channels, rng)
    image = Tensor(rng.uniform(0, 1, (1, 1, 32, 32)), requires_grad=True)

    def pipeline() -> Tensor:
        feats = backbone.forward(image, training=True)
        mask = attention.forward(feats)
        weighted = scale_channels(feats, mask)
        seq = map_to_sequence(weighted)
        return sum_all(tanh(seq))

    err = check_gradients(pipeline, [image], max_probe=48, rng=rng)
    checks.append(CheckResult("grad/feature_pipeline_32x32", err, 1e-5))

    ctx = ContextBranch(6, BlstmConfig(hidden_size=4), num_classes=4, rng=rng)
    seq_in = Tensor(rng.uniform(-1, 1, (4, 1, 6)), requires_grad=True)
    err = check_gradients(
        lambda: ctc_loss(getitem(ctx.forward(seq_in), (slice(None), 0)), [1, 2]),
        [seq_in],
        max_probe=None,
    )
    checks.append(CheckResult("grad/context_branch", err, 1e-5))

    sup = SupervisionBranch(6, num_classes=4, rng=rng)
    err = check_gradients(
        lambda: ctc_loss(getitem(sup.forward(seq_in), (slice(None), 0)), [1, 2]),
        [seq_in],
        max_probe=None,
    )
    checks.append(CheckResult("grad/supervision_branch", err, 1e-5))
    return checks
