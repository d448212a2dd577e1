"""Dense matrices with a recorded-operation reverse-mode gradient engine.

The engine is deliberately minimal: double precision only, 2-D values only,
and exactly the primitives the attention/decay model needs.  Every operation
appends its backward rule to a :class:`GradientTape`; reversing the tape is a
valid topological order, so :func:`backward` is a single reverse sweep.

Reductions run in a fixed sequential order (see ``kernels``), so identical
inputs produce bit-identical outputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import (
    GradCheckError,
    NumericError,
    ShapeError,
    TapeUsageError,
)


def _check_finite(values: np.ndarray, op: str) -> None:
    if not np.isfinite(values).all():
        raise NumericError(f"{op} produced non-finite entries")


def _as_matrix(values) -> np.ndarray:
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    return arr


class GradientTape:
    """Ordered record of primitive operations, replayable backward once."""

    def __init__(self):
        self._records = []  # backward closures, execution order
        self._bound = []    # (store, name, leaf) for parameter leaves
        self.consumed = False

    def _record(self, backward_fn) -> None:
        if self.consumed:
            raise TapeUsageError("tape already consumed by a backward pass")
        self._records.append(backward_fn)


class DenseMatrix:
    """Row-major float64 matrix, optionally attached to a tape."""

    __slots__ = ("values", "tape", "grad")

    def __init__(self, values, tape: GradientTape | None = None):
        self.values = _as_matrix(values)
        _check_finite(self.values, "matrix construction")
        self.tape = tape
        self.grad: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def __repr__(self):
        return f"DenseMatrix({self.rows}x{self.cols}, taped={self.tape is not None})"


def constant(values) -> DenseMatrix:
    """Wrap values as a gradient-free matrix."""
    return DenseMatrix(values)


def _accum(node: DenseMatrix, g: np.ndarray) -> None:
    if node.tape is None:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.values)
    node.grad += g


def _joint_tape(*nodes: DenseMatrix) -> GradientTape | None:
    tape = None
    for n in nodes:
        if n.tape is None:
            continue
        if tape is None:
            tape = n.tape
        elif tape is not n.tape:
            raise TapeUsageError("operands recorded on different tapes")
    return tape


def _emit(op: str, values: np.ndarray, tape: GradientTape | None, backward_fn) -> DenseMatrix:
    _check_finite(values, op)
    out = DenseMatrix.__new__(DenseMatrix)
    out.values = values
    out.tape = tape
    out.grad = None
    if tape is not None:
        tape._record(backward_fn(out))
    return out


# -- primitives ---------------------------------------------------------------

def matmul(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    vals = a.values @ b.values

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(a, out.grad @ b.values.T)
            _accum(b, a.values.T @ out.grad)
        return run

    return _emit("matmul", vals, _joint_tape(a, b), bw)


def add(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    vals = a.values + b.values

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        return run

    return _emit("add", vals, _joint_tape(a, b), bw)


def affine(x: DenseMatrix, scale: float, shift: float) -> DenseMatrix:
    """Elementwise scale*x + shift with constant scalars."""
    vals = scale * x.values + shift

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, scale * out.grad)
        return run

    return _emit("affine", vals, x.tape, bw)


def cmul(x: DenseMatrix, factors: np.ndarray) -> DenseMatrix:
    """Elementwise multiply by a constant array (broadcastable to x)."""
    factors = np.asarray(factors, dtype=np.float64)
    vals = x.values * factors

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, out.grad * factors)
        return run

    return _emit("cmul", vals, x.tape, bw)


def relu(x: DenseMatrix) -> DenseMatrix:
    # derivative at 0 follows the positive branch (>= 0 -> 1)
    mask = x.values >= 0.0
    vals = np.where(mask, x.values, 0.0)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, np.where(mask, out.grad, 0.0))
        return run

    return _emit("relu", vals, x.tape, bw)


def leaky_relu(x: DenseMatrix, slope: float) -> DenseMatrix:
    if not 0.0 < slope < 1.0:
        raise ShapeError(f"leaky_relu slope must be in (0,1), got {slope}")
    mask = x.values >= 0.0
    vals = np.where(mask, x.values, slope * x.values)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, np.where(mask, out.grad, slope * out.grad))
        return run

    return _emit("leaky_relu", vals, x.tape, bw)


def sigmoid(x: DenseMatrix) -> DenseMatrix:
    v = x.values
    vals = np.empty_like(v)
    pos = v >= 0.0
    vals[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    vals[~pos] = ev / (1.0 + ev)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, out.grad * vals * (1.0 - vals))
        return run

    return _emit("sigmoid", vals, x.tape, bw)


def log(x: DenseMatrix) -> DenseMatrix:
    vals = np.log(x.values)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, out.grad / x.values)
        return run

    return _emit("log", vals, x.tape, bw)


def clamp(x: DenseMatrix, lo: float, hi: float) -> DenseMatrix:
    vals = np.clip(x.values, lo, hi)
    inside = (x.values > lo) & (x.values < hi)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, np.where(inside, out.grad, 0.0))
        return run

    return _emit("clamp", vals, x.tape, bw)


def concat_cols(a: DenseMatrix, b: DenseMatrix) -> DenseMatrix:
    if a.rows != b.rows:
        raise ShapeError(f"concat_cols row mismatch: {a.shape} vs {b.shape}")
    vals = np.hstack([a.values, b.values])
    split = a.cols

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(a, out.grad[:, :split])
            _accum(b, out.grad[:, split:])
        return run

    return _emit("concat_cols", vals, _joint_tape(a, b), bw)


def scale_rows(x: DenseMatrix, factors) -> DenseMatrix:
    """Scale row i of x by factors[i].

    ``factors`` is either a constant 1-D array or an (n, 1) DenseMatrix; in
    the latter case gradients flow into the factors as well.
    """
    if isinstance(factors, DenseMatrix):
        if factors.shape != (x.rows, 1):
            raise ShapeError(f"scale_rows factors {factors.shape} != ({x.rows}, 1)")
        fvals = factors.values
        vals = x.values * fvals

        def bw(out):
            def run():
                if out.grad is None:
                    return
                _accum(x, out.grad * fvals)
                _accum(factors, np.sum(out.grad * x.values, axis=1, keepdims=True))
            return run

        return _emit("scale_rows", vals, _joint_tape(x, factors), bw)

    farr = np.asarray(factors, dtype=np.float64)
    if farr.shape != (x.rows,):
        raise ShapeError(f"scale_rows factors {farr.shape} != ({x.rows},)")
    vals = x.values * farr[:, None]

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, out.grad * farr[:, None])
        return run

    return _emit("scale_rows", vals, x.tape, bw)


def gather_rows(x: DenseMatrix, indices: np.ndarray) -> DenseMatrix:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("gather_rows indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= x.rows):
        raise ShapeError(f"gather_rows index out of range for {x.rows} rows")
    vals = np.ascontiguousarray(x.values[idx])

    def bw(out):
        def run():
            if out.grad is None:
                return
            if x.tape is None:
                return
            if x.grad is None:
                x.grad = np.zeros_like(x.values)
            kernels.scatter_add_rows(x.grad, idx, np.ascontiguousarray(out.grad))
        return run

    return _emit("gather_rows", vals, x.tape, bw)


def segment_sum(x: DenseMatrix, segments: np.ndarray, n_segments: int) -> DenseMatrix:
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (x.rows,):
        raise ShapeError(f"segment ids {seg.shape} != ({x.rows},)")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise ShapeError(f"segment id out of range for {n_segments} segments")
    vals = kernels.segment_sum_rows(x.values, seg, n_segments)

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, out.grad[seg])
        return run

    return _emit("segment_sum", vals, x.tape, bw)


def segment_softmax(scores: DenseMatrix, segments: np.ndarray) -> DenseMatrix:
    """Softmax over groups of rows sharing a segment id.

    ``scores`` is (n, 1).  Within every segment the outputs are positive and
    sum to one; the per-segment maximum is subtracted before exponentiation.
    """
    if scores.cols != 1:
        raise ShapeError(f"segment_softmax expects an (n, 1) column, got {scores.shape}")
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (scores.rows,):
        raise ShapeError(f"segment ids {seg.shape} != ({scores.rows},)")
    if scores.rows == 0:
        return _emit("segment_softmax", scores.values.copy(), scores.tape,
                     lambda out: (lambda: None))
    n_seg = int(seg.max()) + 1
    flat = scores.values[:, 0]
    seg_max = kernels.segment_max_1d(flat, seg, n_seg)
    z = np.exp(flat - seg_max[seg])
    denom = kernels.segment_sum_1d(z, seg, n_seg)
    p = (z / denom[seg])[:, None]

    def bw(out):
        def run():
            if out.grad is None:
                return
            dp = out.grad[:, 0]
            inner = kernels.segment_sum_1d(p[:, 0] * dp, seg, n_seg)
            _accum(scores, (p[:, 0] * (dp - inner[seg]))[:, None])
        return run

    return _emit("segment_softmax", p, scores.tape, bw)


def sum_all(x: DenseMatrix) -> DenseMatrix:
    vals = np.array([[x.values.sum()]])

    def bw(out):
        def run():
            if out.grad is None:
                return
            _accum(x, np.full_like(x.values, out.grad[0, 0]))
        return run

    return _emit("sum_all", vals, x.tape, bw)


# -- tape replay ---------------------------------------------------------------

def backward(tape: GradientTape, loss: DenseMatrix) -> None:
    """Reverse sweep: accumulate dLoss/dParam into every bound ParamStore.

    Parameters not reached by the loss keep a zero gradient contribution.
    """
    if tape.consumed:
        raise TapeUsageError("backward called twice on the same tape")
    if loss.tape is not tape:
        raise TapeUsageError("loss was not produced by this tape")
    if loss.shape != (1, 1):
        raise ShapeError(f"loss must be 1x1, got {loss.shape}")
    tape.consumed = True
    loss.grad = np.ones((1, 1))
    for fn in reversed(tape._records):
        fn()
    for store, name, leaf in tape._bound:
        if leaf.grad is not None:
            store.grads[name] += leaf.grad


# -- parameter store ------------------------------------------------------------

_PARAMS_MAGIC = "fraudgraph-params v1"


class ParamStore:
    """Named parameter matrices with gradient and Adam moment slots."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._adam_m: dict[str, np.ndarray] = {}
        self._adam_v: dict[str, np.ndarray] = {}
        self._adam_t = 0

    def add(self, name: str, values) -> None:
        if name in self.params:
            raise ShapeError(f"duplicate parameter name {name!r}")
        if any(ch.isspace() for ch in name):
            raise ShapeError(f"parameter name may not contain whitespace: {name!r}")
        arr = _as_matrix(values)
        _check_finite(arr, f"parameter {name}")
        self.params[name] = arr.copy()
        self.grads[name] = np.zeros_like(arr)

    def names(self):
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def bind(self, tape: GradientTape) -> dict[str, DenseMatrix]:
        """Create taped leaf nodes for every parameter."""
        leaves = {}
        for name, values in self.params.items():
            leaf = DenseMatrix.__new__(DenseMatrix)
            leaf.values = values
            leaf.tape = tape
            leaf.grad = None
            tape._bound.append((self, name, leaf))
            leaves[name] = leaf
        return leaves

    def parameter_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def copy(self) -> "ParamStore":
        dup = ParamStore(self.seed)
        for name, values in self.params.items():
            dup.add(name, values)
        return dup

    # -- optimizer updates ----------------------------------------------------

    def sgd_step(self, lr: float) -> None:
        for name, p in self.params.items():
            p -= lr * self.grads[name]
            _check_finite(p, f"sgd update of {name}")

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                  eps: float = 1e-8) -> None:
        if not self._adam_m:
            for name, p in self.params.items():
                self._adam_m[name] = np.zeros_like(p)
                self._adam_v[name] = np.zeros_like(p)
        self._adam_t += 1
        t = self._adam_t
        for name, p in self.params.items():
            g = self.grads[name]
            m = self._adam_m[name]
            v = self._adam_v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1 ** t)
            v_hat = v / (1.0 - beta2 ** t)
            p -= lr * m_hat / (np.sqrt(v_hat) + eps)
            _check_finite(p, f"adam update of {name}")

    # -- text serialization -----------------------------------------------------

    def save_text(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def to_text(self) -> str:
        lines = [_PARAMS_MAGIC, f"seed {self.seed}"]
        for name, values in self.params.items():
            lines.append(f"param {name} {values.shape[0]} {values.shape[1]}")
            for row in values:
                lines.append(" ".join(repr(float(v)) for v in row))
        lines.append("end")
        return "\n".join(lines) + "\n"

    @classmethod
    def load_text(cls, path) -> "ParamStore":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())

    @classmethod
    def from_text(cls, text: str) -> "ParamStore":
        lines = text.splitlines()
        if not lines or lines[0] != _PARAMS_MAGIC:
            raise NumericError("not a parameter file (bad magic line)")
        store = cls(seed=int(lines[1].split()[1]))
        i = 2
        while i < len(lines) and lines[i] != "end":
            tag, name, r, c = lines[i].split()
            if tag != "param":
                raise NumericError(f"unexpected line in parameter file: {lines[i]!r}")
            r, c = int(r), int(c)
            rows = [[float(v) for v in lines[i + 1 + j].split()] for j in range(r)]
            arr = np.array(rows, dtype=np.float64).reshape(r, c)
            store.add(name, arr)
            i += 1 + r
        return store


# -- gradient verification --------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str
    worst_index: tuple[int, int]
    tolerance: float
    per_param: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}: max relative error {self.max_rel_error:.3e} "
                f"(tolerance {self.tolerance:.1e}) at {self.worst_param}{self.worst_index}")


def grad_check(forward, params: ParamStore, step: float = 1e-5,
               tolerance: float = 1e-5) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    ``forward(params)`` must run a full forward+backward pass (accumulating
    into ``params.grads``) and return the scalar loss.  Relative error per
    coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    params.zero_grads()
    f1 = float(forward(params))
    analytic = {name: g.copy() for name, g in params.grads.items()}
    params.zero_grads()
    f2 = float(forward(params))
    if f1 != f2:
        raise GradCheckError(f"forward is not deterministic: {f1!r} != {f2!r}")

    max_err = 0.0
    worst = ("", (0, 0))
    per_param = {}
    for name, values in params.params.items():
        worst_here = 0.0
        flat = values.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            params.zero_grads()
            f_plus = float(forward(params))
            flat[k] = orig - step
            params.zero_grads()
            f_minus = float(forward(params))
            flat[k] = orig
            numeric_g = (f_plus - f_minus) / (2.0 * step)
            analytic_g = analytic[name].reshape(-1)[k]
            err = abs(analytic_g - numeric_g) / max(1e-8, abs(analytic_g) + abs(numeric_g))
            if err > worst_here:
                worst_here = err
            if err > max_err:
                max_err = err
                worst = (name, divmod(k, values.shape[1]))
        per_param[name] = worst_here
    params.zero_grads()
    for name in params.grads:
        params.grads[name][...] = analytic[name]
    if not math.isfinite(max_err):
        raise GradCheckError("finite differences produced non-finite values")
    return GradCheckReport(max_rel_error=max_err, worst_param=worst[0],
                           worst_index=worst[1], tolerance=tolerance,
                           per_param=per_param)
