"""Dense tensors with a reverse-mode differentiation tape.

Operations record onto the innermost active Tape only, so inference code
(rollout, evaluation) never pays for saved forward values:

    with Tape() as tape:
        loss = some_scalar_expression(params)
    backward(tape, loss)

Every adjoint returns one gradient per input (None where the input is a
constant). Parameters accumulate into ``Parameter.grad``; every other
intermediate gradient lives only for the duration of ``backward``.
"""
import itertools
import logging
import math
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from wavecast.errors import ConfigConflictError, ContractError, DataError, ShapeError

LN_EPS = 1e-5
GELU_C = math.sqrt(2.0 / math.pi)

_ids = itertools.count()
_TAPES: List['Tape'] = list()
_DEBUG = False


def set_debug(enabled: bool) -> None:
    """Check every forward result for NaN/Inf."""
    global _DEBUG
    _DEBUG = enabled


class Tensor:
    __slots__ = ('data', 'uid')

    def __init__(self, data, dtype=None):
        if dtype is None:
            dtype = getattr(data, 'dtype', None)
            if dtype not in (np.float32, np.float64):
                dtype = np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.uid = next(_ids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f'Tensor(shape={self.shape}, dtype={self.data.dtype})'

    def __add__(self, other):
        return elementwise('add', self, other)

    def __radd__(self, other):
        return elementwise('add', other, self)

    def __sub__(self, other):
        return elementwise('sub', self, other)

    def __rsub__(self, other):
        return elementwise('sub', other, self)

    def __mul__(self, other):
        return elementwise('mul', self, other)

    def __rmul__(self, other):
        return elementwise('mul', other, self)

    def __truediv__(self, other):
        return elementwise('div', self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A named leaf tensor whose gradient accumulates across backward passes
    until ``zero_grad``."""
    __slots__ = ('name', 'grad')

    def __init__(self, name: str, value, dtype=None):
        super().__init__(value, dtype=dtype)
        self.name = name
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self) -> str:
        return f'Parameter({self.name}, shape={self.shape})'


class Node(NamedTuple):
    inputs: Tuple[Tensor, ...]
    output: int
    adjoint: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    def __init__(self):
        self.nodes: List[Node] = list()

    def __enter__(self) -> 'Tape':
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.pop()

    def __len__(self) -> int:
        return len(self.nodes)


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], adjoint) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(out_data)):
        raise DataError(f'Non-finite value produced by forward op '
                        f'(output shape {out_data.shape})')
    out = Tensor(out_data)
    if _TAPES:
        _TAPES[-1].nodes.append(Node(tuple(inputs), out.uid, adjoint))
    return out


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(x, dtype=dtype))


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of trailing-dim broadcasting)."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


_ELEMENTWISE = {
    'add': (np.add,
            lambda g, x, y: (g, g)),
    'sub': (np.subtract,
            lambda g, x, y: (g, -g)),
    'mul': (np.multiply,
            lambda g, x, y: (g * y, g * x)),
    'div': (np.divide,
            lambda g, x, y: (g / y, -g * x / (y * y))),
}


def elementwise(kind: str, a, b) -> Tensor:
    if kind not in _ELEMENTWISE:
        raise ContractError(f'Unknown elementwise op: {kind}')
    if not isinstance(a, Tensor):
        a = _lift(a, like=b if isinstance(b, Tensor) else None)
    b = _lift(b, like=a)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f'Cannot broadcast shapes {a.shape} and {b.shape} '
                         f'for {kind}') from None
    forward, rule = _ELEMENTWISE[kind]
    x, y = a.data, b.data

    def adjoint(g):
        ga, gb = rule(g, x, y)
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return _record(forward(x, y), (a, b), adjoint)


def add(a, b) -> Tensor:
    return elementwise('add', a, b)


def mul(a, b) -> Tensor:
    return elementwise('mul', a, b)


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f'matmul needs rank >= 2 operands, got {a.shape} and {b.shape}')
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f'matmul inner dimension mismatch: {a.shape} and {b.shape}')
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f'matmul batch dimensions do not broadcast: '
                         f'{a.shape} and {b.shape}') from None
    x, y = a.data, b.data

    def adjoint(g):
        ga = g @ np.swapaxes(y, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return unbroadcast(ga, x.shape), unbroadcast(gb, y.shape)

    return _record(x @ y, (a, b), adjoint)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def adjoint(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _record(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), adjoint)


def mean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.shape[axis]
    return elementwise('div', tensor_sum(a, axis, keepdims), float(count))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    orig = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(orig),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return _record(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f'Cannot concatenate shapes {[t.shape for t in tensors]} '
                         f'along axis {axis}') from None
    return _record(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def take_slice(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape

    def adjoint(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _record(a.data[index], (a,), adjoint)


def where_mask(a: Tensor, mask: np.ndarray) -> Tensor:
    """Keep ``a`` where ``mask`` is true, 0 elsewhere. Unselected cells get
    an exactly-zero gradient whatever value they held."""
    mask = np.asarray(mask, dtype=bool)
    zero = np.zeros((), dtype=a.data.dtype)
    return _record(np.where(mask, a.data, zero), (a,),
                   lambda g: (np.where(mask, g, zero),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """Smooth ramp x * Phi(x), tanh approximation of the Gaussian CDF."""
    x = a.data
    inner = GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)

    def adjoint(g):
        dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _record(0.5 * x * (1.0 + t), (a,), adjoint)


def softmax_lastdim(a: Tensor) -> Tensor:
    shifted = a.data - np.max(a.data, axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / np.sum(e, axis=-1, keepdims=True)

    def adjoint(g):
        return (out * (g - np.sum(g * out, axis=-1, keepdims=True)),)

    return _record(out, (a,), adjoint)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    x = a.data
    centered = x - np.mean(x, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean(centered * centered, axis=-1, keepdims=True) + LN_EPS)
    xhat = centered * inv_std
    gamma = gain.data
    reduce_axes = tuple(range(x.ndim - 1))

    def adjoint(g):
        dxhat = g * gamma
        dx = inv_std * (dxhat
                        - np.mean(dxhat, axis=-1, keepdims=True)
                        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True))
        dgain = np.sum(g * xhat, axis=reduce_axes).reshape(gamma.shape)
        dbias = np.sum(g, axis=reduce_axes).reshape(bias.data.shape)
        return dx, dgain, dbias

    return _record(xhat * gamma + bias.data, (a, gain, bias), adjoint)


def pad_periodic(x: np.ndarray) -> np.ndarray:
    """One-cell halo: wrap in longitude (last axis), replicate in latitude."""
    x = np.concatenate([x[..., -1:], x, x[..., :1]], axis=-1)
    return np.concatenate([x[..., :1, :], x, x[..., -1:, :]], axis=-2)


def fold_periodic(gp: np.ndarray) -> np.ndarray:
    """Adjoint of pad_periodic."""
    gw = gp[..., 1:-1, :].copy()
    gw[..., 0, :] += gp[..., 0, :]
    gw[..., -1, :] += gp[..., -1, :]
    gx = gw[..., 1:-1].copy()
    gx[..., 0] += gw[..., -1]
    gx[..., -1] += gw[..., 0]
    return gx


def conv2d(x: Tensor, kernels: Tensor) -> Tensor:
    """3x3 convolution (cross-correlation) of a [C_in,H,W] field with
    [C_out,C_in,3,3] kernels, spatial extent preserved."""
    if x.ndim != 3 or kernels.ndim != 4 or kernels.shape[2:] != (3, 3):
        raise ShapeError(f'conv2d expects [C,H,W] input and [O,C,3,3] kernels, '
                         f'got {x.shape} and {kernels.shape}')
    c_in, height, width = x.shape
    c_out = kernels.shape[0]
    if kernels.shape[1] != c_in:
        raise ShapeError(f'conv2d channel mismatch: input {x.shape}, kernels {kernels.shape}')
    windows = sliding_window_view(pad_periodic(x.data), (3, 3), axis=(1, 2))
    cols = windows.transpose(0, 3, 4, 1, 2).reshape(c_in * 9, height * width)
    kmat = kernels.data.reshape(c_out, c_in * 9)

    def adjoint(g):
        g2 = g.reshape(c_out, height * width)
        dk = (g2 @ cols.T).reshape(kernels.shape)
        dcols = (kmat.T @ g2).reshape(c_in, 3, 3, height, width)
        gp = np.zeros((c_in, height + 2, width + 2), dtype=g.dtype)
        for di in range(3):
            for dj in range(3):
                gp[:, di:di + height, dj:dj + width] += dcols[:, di, dj]
        return fold_periodic(gp), dk

    return _record((kmat @ cols).reshape(c_out, height, width), (x, kernels), adjoint)


def backward(tape: Tape, loss: Tensor) -> None:
    if loss.data.size != 1:
        raise ContractError(f'backward() needs a scalar loss, got shape {loss.shape}')
    grads = {loss.uid: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.output, None)
        if g is None:
            continue
        for inp, ig in zip(node.inputs, node.adjoint(g)):
            if ig is None:
                continue
            if isinstance(inp, Parameter):
                inp.grad += ig
                continue
            prev = grads.get(inp.uid)
            grads[inp.uid] = ig if prev is None else prev + ig


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter], h: float = 1e-5,
               max_coords: Optional[int] = None,
               rng: Optional[np.random.Generator] = None) -> float:
    """Max over checked coordinates of
    |analytic - central difference| / max(1, |central difference|).

    With ``max_coords`` set, at most that many coordinates per parameter are
    sampled with ``rng``; otherwise every coordinate is checked.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    backward(tape, loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        size = p.data.size
        if max_coords is None or size <= max_coords:
            coords = range(size)
        else:
            coords = (rng or make_rng(0)).choice(size, max_coords, replace=False)
        for flat in coords:
            idx = np.unravel_index(int(flat), p.shape)
            orig = p.data[idx]
            p.data[idx] = orig + h
            f_plus = f().item()
            p.data[idx] = orig - h
            f_minus = f().item()
            p.data[idx] = orig
            central = (f_plus - f_minus) / (2.0 * h)
            err = abs(analytic[idx] - central) / max(1.0, abs(central))
            worst = max(worst, err)
    logging.debug(f'grad_check: max relative error {worst:.3e}')
    return worst


class ParamSet:
    """Ordered name -> Parameter table shared by both forecasters."""

    def __init__(self, dtype=np.float64):
        self.dtype = dtype
        self._params = dict()

    def add(self, name: str, value: np.ndarray) -> Parameter:
        if name in self._params:
            raise ContractError(f'Duplicate parameter name: {name}')
        param = Parameter(name, value, dtype=self.dtype)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._params.values())

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> List[str]:
        return list(self._params)

    def count(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state(self, state: dict) -> None:
        if set(state) != set(self._params):
            missing = sorted(set(self._params) - set(state))
            extra = sorted(set(state) - set(self._params))
            raise ConfigConflictError(f'Parameter table mismatch: missing {missing[:5]}, '
                                      f'unexpected {extra[:5]}')
        for name, value in state.items():
            param = self._params[name]
            if value.shape != param.shape:
                raise ConfigConflictError(f'Parameter {name}: checkpoint shape {value.shape} '
                                          f'!= model shape {param.shape}')
            param.data[...] = value


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based 64-bit generator; every stochastic choice of a run
    flows from one of these."""
    return np.random.Generator(np.random.Philox(seed))


def rng_state(rng: np.random.Generator) -> dict:
    state = rng.bit_generator.state

    def plain(value):
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, np.ndarray):
            return [int(v) for v in value]
        return value

    return plain(state)


def set_rng_state(rng: np.random.Generator, state: dict) -> None:
    inner = dict(state['state'])
    inner['counter'] = np.array(inner['counter'], dtype=np.uint64)
    inner['key'] = np.array(inner['key'], dtype=np.uint64)
    restored = dict(state)
    restored['state'] = inner
    restored['buffer'] = np.array(state['buffer'], dtype=np.uint64)
    rng.bit_generator.state = restored


def glorot_uniform(rng: np.random.Generator, shape: Sequence[int],
                   fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=tuple(shape))
