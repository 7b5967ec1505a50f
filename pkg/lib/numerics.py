"""
Minimal differentiable kernel over 2-D float64 tensors.

Every primitive returns a new Tensor that remembers its parents and a
backward rule. `ComputationRecord` orders the graph behind a scalar output
and replays it backward, accumulating gradients into the parameter leaves.

Parameters live in a `ParameterSet` (named tensors, Adam moments, step
counter) which is also the unit of checkpointing.
"""

import hashlib
import json
import logging
import os
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.sparse

from errors import DatasetError, NonFiniteError, ShapeError
from globals import CHECKPOINT_VERSION

logger = logging.getLogger(__name__)

PHASE_EPS = 1e-12
LAYER_NORM_EPS = 1e-5
FFN_HIDDEN = 512

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Tensor:
    """
    2-D float64 value with an optional place in a computation graph
    """

    __slots__ = ("data", "grad", "name", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, parents=(), backward=None):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            data = data.reshape(1, 1)
        elif data.ndim == 1:
            data = data.reshape(1, -1)
        if data.ndim != 2:
            raise ShapeError("tensors are 2-D, got %d dims" % data.ndim)
        self.data = data
        self.name = name
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(data) if requires_grad and not parents else None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def rows(self):
        return self.data.shape[0]

    @property
    def cols(self):
        return self.data.shape[1]

    @property
    def is_leaf(self):
        return not self._parents

    def item(self):
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self):
        return "Tensor(%s, shape=%s)" % (self.name or "-", self.shape)


def constant(values):
    "Tensor that never receives gradients"

    return Tensor(values)


def _node(data, parents, backward):
    tracked = tuple(p for p in parents if p.requires_grad)
    if not tracked:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=tuple(parents), backward=backward)


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    ra, ca = a.shape
    rb, cb = b.shape
    if (ra != rb and 1 not in (ra, rb)) or (ca != cb and 1 not in (ca, cb)):
        raise ShapeError("%s: shapes %s and %s do not broadcast" % (op, a.shape, b.shape))


# primitives {{{


def add(a, b):
    _check_broadcast(a, b, "add")

    def backward(grad):
        return _unbroadcast(grad, a.shape), _unbroadcast(grad, b.shape)

    return _node(a.data + b.data, (a, b), backward)


def sub(a, b):
    _check_broadcast(a, b, "sub")

    def backward(grad):
        return _unbroadcast(grad, a.shape), -_unbroadcast(grad, b.shape)

    return _node(a.data - b.data, (a, b), backward)


def mul(a, b):
    _check_broadcast(a, b, "mul")

    def backward(grad):
        return (
            _unbroadcast(grad * b.data, a.shape),
            _unbroadcast(grad * a.data, b.shape),
        )

    return _node(a.data * b.data, (a, b), backward)


def scale(a, factor):
    factor = float(factor)

    def backward(grad):
        return (grad * factor,)

    return _node(a.data * factor, (a,), backward)


def matmul(a, b):
    if a.cols != b.rows:
        raise ShapeError("matmul: %s x %s" % (a.shape, b.shape))

    def backward(grad):
        return grad @ b.data.T, a.data.T @ grad

    return _node(a.data @ b.data, (a, b), backward)


def const_matmul(matrix, a):
    """
    `matrix` @ a for a constant (dense or scipy.sparse) `matrix`
    """

    if matrix.shape[1] != a.rows:
        raise ShapeError("const_matmul: %s x %s" % (matrix.shape, a.shape))
    if scipy.sparse.issparse(matrix):
        data = np.asarray(matrix @ a.data)
        transposed = matrix.T.tocsr()
    else:
        data = matrix @ a.data
        transposed = matrix.T

    def backward(grad):
        return (np.asarray(transposed @ grad),)

    return _node(data, (a,), backward)


def transpose(a):
    def backward(grad):
        return (grad.T,)

    return _node(a.data.T.copy(), (a,), backward)


def relu(a):
    mask = a.data > 0.0

    def backward(grad):
        return (grad * mask,)

    return _node(np.where(mask, a.data, 0.0), (a,), backward)


def square(a):
    def backward(grad):
        return (2.0 * a.data * grad,)

    return _node(a.data * a.data, (a,), backward)


def cos(a):
    def backward(grad):
        return (-np.sin(a.data) * grad,)

    return _node(np.cos(a.data), (a,), backward)


def sin(a):
    def backward(grad):
        return (np.cos(a.data) * grad,)

    return _node(np.sin(a.data), (a,), backward)


def sum_all(a):
    def backward(grad):
        return (np.full(a.shape, grad.item()),)

    return _node(np.array([[a.data.sum()]]), (a,), backward)


def mean_all(a):
    count = a.data.size

    def backward(grad):
        return (np.full(a.shape, grad.item() / count),)

    return _node(np.array([[a.data.mean()]]), (a,), backward)


def row_mean(a):
    "Mean over rows, 1 x cols"

    def backward(grad):
        return (np.repeat(grad / a.rows, a.rows, axis=0),)

    return _node(a.data.mean(axis=0, keepdims=True), (a,), backward)


def concat_cols(parts):
    rows = {p.rows for p in parts}
    if len(rows) != 1:
        raise ShapeError("concat_cols: row counts differ %s" % sorted(rows))
    edges = np.cumsum([0] + [p.cols for p in parts])

    def backward(grad):
        return tuple(grad[:, edges[k] : edges[k + 1]] for k in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward)


def concat_rows(parts):
    cols = {p.cols for p in parts}
    if len(cols) != 1:
        raise ShapeError("concat_rows: column counts differ %s" % sorted(cols))
    edges = np.cumsum([0] + [p.rows for p in parts])

    def backward(grad):
        return tuple(grad[edges[k] : edges[k + 1]] for k in range(len(parts)))

    return _node(np.concatenate([p.data for p in parts], axis=0), tuple(parts), backward)


def hypot(re, im):
    """
    Amplitude sqrt(re^2 + im^2); its gradient is taken as 0 where the
    amplitude vanishes.
    """

    amplitude = np.hypot(re.data, im.data)
    live = amplitude >= PHASE_EPS
    safe = np.where(live, amplitude, 1.0)

    def backward(grad):
        return (
            np.where(live, re.data / safe, 0.0) * grad,
            np.where(live, im.data / safe, 0.0) * grad,
        )

    return _node(amplitude, (re, im), backward)


def atan2(im, re):
    """
    Phase in (-pi, pi]; 0 where the amplitude is below 1e-12
    """

    amplitude_sq = re.data * re.data + im.data * im.data
    live = amplitude_sq >= PHASE_EPS * PHASE_EPS
    safe = np.where(live, amplitude_sq, 1.0)
    phase = np.where(live, np.arctan2(im.data, re.data), 0.0)
    phase[phase <= -np.pi] = np.pi

    def backward(grad):
        return (
            np.where(live, re.data / safe, 0.0) * grad,
            np.where(live, -im.data / safe, 0.0) * grad,
        )

    return _node(phase, (im, re), backward)


def linear(x, w, b):
    """
    y = x w + b, bias broadcast over rows
    """

    if x.cols != w.rows:
        raise ShapeError("linear: input width %d, weight %s" % (x.cols, w.shape))
    if b.shape != (1, w.cols):
        raise ShapeError("linear: bias %s for weight %s" % (b.shape, w.shape))

    def backward(grad):
        return grad @ w.data.T, x.data.T @ grad, grad.sum(axis=0, keepdims=True)

    return _node(x.data @ w.data + b.data, (x, w, b), backward)


def layer_norm(x, gain, shift, eps=LAYER_NORM_EPS):
    """
    Row-wise normalization to zero mean / unit variance, then gain and shift
    """

    if gain.shape != (1, x.cols) or shift.shape != (1, x.cols):
        raise ShapeError("layer_norm: gain/shift must be 1 x %d" % x.cols)
    width = x.cols
    centered = x.data - x.data.mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward(grad):
        dxhat = grad * gain.data
        dx = (
            inv_std
            / width
            * (
                width * dxhat
                - dxhat.sum(axis=1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
            )
        )
        return (
            dx,
            (grad * xhat).sum(axis=0, keepdims=True),
            grad.sum(axis=0, keepdims=True),
        )

    return _node(xhat * gain.data + shift.data, (x, gain, shift), backward)


def softmax_rows(x):
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    expo = np.exp(shifted)
    probs = expo / expo.sum(axis=1, keepdims=True)

    def backward(grad):
        return (probs * (grad - (grad * probs).sum(axis=1, keepdims=True)),)

    return _node(probs, (x,), backward)


# }}}
# reverse mode {{{


class ComputationRecord:
    """
    Topologically ordered operations behind `output`.
    """

    def __init__(self, output):
        self.output = output
        self.nodes = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                self.nodes.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    def __len__(self):
        return len(self.nodes)

    def backward(self, seed=None, accumulate=True):
        """
        Propagate d(output) back to every leaf.
        Returns {id(leaf): gradient}; with `accumulate` the leaf
        gradients are also added to their `grad` buffers.
        """

        if not self.output.requires_grad:
            return {}
        if seed is None:
            if self.output.shape != (1, 1):
                raise ShapeError("backward needs a scalar output or a seed")
            seed = np.ones((1, 1))
        grads = {id(self.output): np.asarray(seed, dtype=np.float64)}
        leaves = {}
        for node in reversed(self.nodes):
            grad = grads.pop(id(node), None)
            if grad is None:
                continue
            if node.is_leaf:
                leaves[id(node)] = grad
                if accumulate:
                    node.grad += grad
                continue
            for parent, parent_grad in zip(node._parents, node._backward(grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + parent_grad
                else:
                    grads[id(parent)] = parent_grad
        return leaves


def backward(output):
    "Backpropagate the scalar `output` into its parameter leaves"

    record = ComputationRecord(output)
    record.backward()
    return record


# }}}
# parameters {{{


class ParameterSet:
    """
    Named parameters with gradient buffers and Adam state.
    Insertion order is the checkpoint order.
    """

    def __init__(self, name="params"):
        self.name = name
        self.tensors = OrderedDict()
        self.first_moment = {}
        self.second_moment = {}
        self.step = 0

    def add(self, name, values):
        if name in self.tensors:
            raise KeyError("duplicate parameter %s" % name)
        tensor = Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)
        self.tensors[name] = tensor
        self.first_moment[name] = np.zeros_like(tensor.data)
        self.second_moment[name] = np.zeros_like(tensor.data)
        return tensor

    def __getitem__(self, name):
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def names(self, prefix=""):
        return [name for name in self.tensors if name.startswith(prefix)]

    def zero_grad(self):
        for tensor in self.tensors.values():
            tensor.zero_grad()

    def grad_norm(self, prefix=""):
        total = 0.0
        for name in self.names(prefix):
            grad = self.tensors[name].grad
            total += float((grad * grad).sum())
        return float(np.sqrt(total))

    def arrays(self):
        return OrderedDict((name, t.data.copy()) for name, t in self.tensors.items())

    def load_arrays(self, arrays):
        missing = set(self.tensors) - set(arrays)
        if missing:
            raise DatasetError("checkpoint lacks parameters: %s" % ", ".join(sorted(missing)))
        for name, tensor in self.tensors.items():
            values = np.asarray(arrays[name], dtype=np.float64)
            if values.shape != tensor.shape:
                raise DatasetError(
                    "parameter %s has shape %s, checkpoint %s"
                    % (name, tensor.shape, values.shape)
                )
            tensor.data[...] = values


def adam_step(params, lr):
    """
    One Adam update of every parameter in `params`; gradients are
    cleared afterwards.
    """

    for name, tensor in params:
        if not np.all(np.isfinite(tensor.grad)):
            raise NonFiniteError("non-finite gradient in %s" % name, name=name)

    params.step += 1
    correction1 = 1.0 - ADAM_BETA1 ** params.step
    correction2 = 1.0 - ADAM_BETA2 ** params.step
    for name, tensor in params:
        grad = tensor.grad
        first = params.first_moment[name]
        second = params.second_moment[name]
        first *= ADAM_BETA1
        first += (1.0 - ADAM_BETA1) * grad
        second *= ADAM_BETA2
        second += (1.0 - ADAM_BETA2) * grad * grad
        tensor.data -= lr * (first / correction1) / (
            np.sqrt(second / correction2) + ADAM_EPS
        )
        tensor.zero_grad()
    return params


def uniform_init(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class FFNParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @property
    def d_in(self):
        return self.w1.rows

    @property
    def d_out(self):
        return self.w2.cols


def init_ffn(params, prefix, d_in, d_out, rng, hidden=FFN_HIDDEN, zero_output=False):
    """
    Register a two-layer ReLU network under `prefix` in `params`
    """

    w1 = params.add(prefix + ".w1", uniform_init(rng, d_in, (d_in, hidden)))
    b1 = params.add(prefix + ".b1", uniform_init(rng, d_in, (1, hidden)))
    if zero_output:
        w2 = params.add(prefix + ".w2", np.zeros((hidden, d_out)))
        b2 = params.add(prefix + ".b2", np.zeros((1, d_out)))
    else:
        w2 = params.add(prefix + ".w2", uniform_init(rng, hidden, (hidden, d_out)))
        b2 = params.add(prefix + ".b2", uniform_init(rng, hidden, (1, d_out)))
    return FFNParams(w1=w1, b1=b1, w2=w2, b2=b2)


def ffn_view(params, prefix):
    "FFNParams over tensors already registered under `prefix`"

    return FFNParams(
        w1=params[prefix + ".w1"],
        b1=params[prefix + ".b1"],
        w2=params[prefix + ".w2"],
        b2=params[prefix + ".b2"],
    )


def ffn_apply(x, p):
    if x.cols != p.d_in:
        raise ShapeError("ffn: input width %d, expected %d" % (x.cols, p.d_in))
    return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2)


# }}}
# gradient check {{{


@dataclass
class GradCheckReport:
    errors: dict
    tolerance: float

    @property
    def max_error(self):
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def failed(self):
        return sorted(name for name, err in self.errors.items() if err > self.tolerance)

    @property
    def ok(self):
        return not self.failed


def grad_check(fn, params, tolerance=1e-4, step=1e-5, max_entries=None, rng=None, floor=1e-4):
    """
    Compare reverse-mode gradients of the scalar `fn()` with central
    finite differences, per parameter tensor.

    `params` is a ParameterSet or a list of leaf tensors. With
    `max_entries`, only a random subset of each tensor's entries is checked.
    The relative error of an entry is |a - n| / max(|a|, |n|, floor).
    """

    if isinstance(params, ParameterSet):
        tensors = [t for _, t in params]
    else:
        tensors = list(params)
    rng = rng or np.random.default_rng(0)

    for tensor in tensors:
        tensor.zero_grad()
    output = fn()
    leaves = ComputationRecord(output).backward(accumulate=False)

    errors = {}
    for position, tensor in enumerate(tensors):
        analytic = leaves.get(id(tensor), np.zeros_like(tensor.data))
        flat = tensor.data.reshape(-1)
        entries = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        worst = 0.0
        for index in entries:
            original = flat[index]
            flat[index] = original + step
            plus = fn().item()
            flat[index] = original - step
            minus = fn().item()
            flat[index] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = analytic.reshape(-1)[index]
            denom = max(abs(exact), abs(numeric), floor)
            worst = max(worst, abs(exact - numeric) / denom)
        errors[tensor.name or "param%d" % position] = worst
    report = GradCheckReport(errors=errors, tolerance=tolerance)
    if not report.ok:
        logger.warning("gradient check failed for %s", ", ".join(report.failed))
    return report


# }}}
# checkpoints {{{


def params_checksum(params):
    "sha256 over names, shapes and little-endian values"

    digest = hashlib.sha256()
    for name, tensor in params:
        digest.update(name.encode("utf-8"))
        digest.update(("%dx%d" % tensor.shape).encode("utf-8"))
        digest.update(tensor.data.astype("<f8").tobytes())
    return digest.hexdigest()


def _moments_payload(params):
    first = b"".join(params.first_moment[name].astype("<f8").tobytes() for name, _ in params)
    second = b"".join(params.second_moment[name].astype("<f8").tobytes() for name, _ in params)
    return first + second


def save_checkpoint(params, prefix):
    """
    Write `<prefix>.manifest.json`, `<prefix>.bin` and the Adam moments
    in `<prefix>.moments.bin` (first moments, then second moments, both
    in manifest order).
    """

    payload = b"".join(t.data.astype("<f8").tobytes() for _, t in params)
    moments = _moments_payload(params)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "name": params.name,
        "step": params.step,
        "parameters": [
            {"name": name, "shape": list(tensor.shape)} for name, tensor in params
        ],
        "sha256": hashlib.sha256(payload).hexdigest(),
        "moments_sha256": hashlib.sha256(moments).hexdigest(),
    }
    directory = os.path.dirname(prefix)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    with open(prefix + ".bin", "wb") as f_bin:
        f_bin.write(payload)
    with open(prefix + ".moments.bin", "wb") as f_bin:
        f_bin.write(moments)
    with open(prefix + ".manifest.json", "w", encoding="utf-8") as f_manifest:
        json.dump(manifest, f_manifest, indent=1, sort_keys=True)
        f_manifest.write("\n")
    return manifest


def load_checkpoint(prefix):
    """
    Read a checkpoint written by `save_checkpoint`.
    Returns (manifest, OrderedDict name -> array).
    """

    try:
        with open(prefix + ".manifest.json", "r", encoding="utf-8") as f_manifest:
            manifest = json.load(f_manifest)
        with open(prefix + ".bin", "rb") as f_bin:
            payload = f_bin.read()
    except (OSError, ValueError) as exc:
        raise DatasetError("cannot read checkpoint %s: %s" % (prefix, exc)) from exc

    if hashlib.sha256(payload).hexdigest() != manifest.get("sha256"):
        raise DatasetError("checkpoint %s fails its checksum" % prefix)

    values = np.frombuffer(payload, dtype="<f8")
    arrays = OrderedDict()
    offset = 0
    for entry in manifest["parameters"]:
        rows, cols = entry["shape"]
        count = rows * cols
        if offset + count > values.size:
            raise DatasetError("checkpoint %s is truncated" % prefix)
        arrays[entry["name"]] = values[offset : offset + count].reshape(rows, cols).copy()
        offset += count
    if offset != values.size:
        raise DatasetError("checkpoint %s has trailing values" % prefix)
    return manifest, arrays


def _load_moments(params, prefix, manifest):
    try:
        with open(prefix + ".moments.bin", "rb") as f_bin:
            payload = f_bin.read()
    except OSError:
        return False
    if hashlib.sha256(payload).hexdigest() != manifest.get("moments_sha256"):
        raise DatasetError("checkpoint %s: moments fail their checksum" % prefix)
    values = np.frombuffer(payload, dtype="<f8")
    total = sum(tensor.data.size for _, tensor in params)
    if values.size != 2 * total:
        raise DatasetError("checkpoint %s: moments hold %d values, expected %d" % (prefix, values.size, 2 * total))
    offset = 0
    for store in (params.first_moment, params.second_moment):
        for name, tensor in params:
            count = tensor.data.size
            store[name] = values[offset : offset + count].reshape(tensor.shape).copy()
            offset += count
    return True


def restore_checkpoint(params, prefix):
    """
    Load checkpoint `prefix` into the existing `params`, Adam state
    included. Without a moments file the optimizer starts over at step 0.
    """

    manifest, arrays = load_checkpoint(prefix)
    params.load_arrays(arrays)
    if _load_moments(params, prefix, manifest):
        params.step = int(manifest.get("step", 0))
    else:
        logger.warning("checkpoint %s has no optimizer moments, resetting Adam", prefix)
        for name, tensor in params:
            params.first_moment[name] = np.zeros_like(tensor.data)
            params.second_moment[name] = np.zeros_like(tensor.data)
        params.step = 0
    return params


# }}}
