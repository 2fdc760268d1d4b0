"""反向自動微分核心模組

以 numpy 陣列為底層的最小張量實作。運算在作用中的 Tape 上記錄節點，
backward() 依記錄的反向順序逐一走訪一次，把梯度累加到葉節點的 .grad。

座標、形狀等慣例：
- 預設精度為 float32，可用 default_dtype(np.float64) 切換（以 contextvar 儲存，各執行緒獨立）
- 每個運算的輸出都會檢查是否為有限值，否則拋出 NumericError
"""

from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

import einops
import numpy as np
from loguru import logger

from utils.errors import DimensionError, NumericError, UsageError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

ArrayLike = Any

_default_dtype: contextvars.ContextVar[type[np.floating[Any]]] = contextvars.ContextVar(
    "warptrack_default_dtype", default=np.float32
)
_active_tape: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "warptrack_active_tape", default=None
)
_alloc_listener: contextvars.ContextVar[Callable[[str, int], None] | None] = (
    contextvars.ContextVar("warptrack_alloc_listener", default=None)
)

_GELU_C = math.sqrt(2.0 / math.pi)


def get_default_dtype() -> type[np.floating[Any]]:
    return _default_dtype.get()


@contextlib.contextmanager
def default_dtype(dtype: type[np.floating[Any]]) -> Iterator[None]:
    """暫時切換新建張量的預設精度。

    Args:
        dtype: np.float32 或 np.float64
    """
    token = _default_dtype.set(dtype)
    try:
        yield
    finally:
        _default_dtype.reset(token)


@contextlib.contextmanager
def allocation_listener(callback: Callable[[str, int], None]) -> Iterator[None]:
    """在區塊內，每個運算輸出都會以 (op 名稱, 位元組數) 呼叫 callback。"""
    token = _alloc_listener.set(callback)
    try:
        yield
    finally:
        _alloc_listener.reset(token)


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """把廣播後的梯度沿被廣播的軸加總回原本的形狀。"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """Dense tensor with an optional gradient accumulator.

    Attributes:
        data: C-contiguous numpy array
        requires_grad: whether gradients flow into this tensor
        grad: accumulated gradient for leaves, same shape as data
        name: optional label used in error messages
    """

    __array_ufunc__ = None

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        dtype: Any = None,
        name: str | None = None,
    ) -> None:
        array = np.asarray(data, dtype=dtype or get_default_dtype())
        self.data: np.ndarray = array if array.flags.c_contiguous else array.copy(order="C")
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._tape: Tape | None = None

    @classmethod
    def wrap(cls, data: np.ndarray, requires_grad: bool = False, name: str | None = None) -> Tensor:
        """不複製、不轉型地包裝既有陣列（與呼叫端共享記憶體）。"""
        out = cls.__new__(cls)
        out.data = data if data.flags.c_contiguous else data.copy(order="C")
        out.requires_grad = requires_grad
        out.grad = None
        out.name = name
        out._tape = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype[Any]:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> Tensor:
        return Tensor.wrap(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label})"

    # 運算子
    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, key: Any) -> Tensor:
        return getitem(self, key)

    # 方法形式
    def sum(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return tsum(self, axis, keepdims)

    def mean(self, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
        return mean(self, axis, keepdims)

    def reshape(self, *shape: int | tuple[int, ...]) -> Tensor:
        target = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        return reshape(self, target)  # type: ignore[arg-type]

    def transpose(self, *axes: int) -> Tensor:
        return transpose(self, axes or None)

    def exp(self) -> Tensor:
        return exp(self)

    def log(self) -> Tensor:
        return log(self)

    def sqrt(self) -> Tensor:
        return sqrt(self)

    def sigmoid(self) -> Tensor:
        return sigmoid(self)

    def relu(self) -> Tensor:
        return relu(self)


@dataclass(slots=True)
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Records executed ops while active (``with Tape(): ...``)."""

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._token: contextvars.Token[Tape | None] | None = None

    def __enter__(self) -> Tape:
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._token is not None:
            _active_tape.reset(self._token)
            self._token = None

    def __len__(self) -> int:
        return len(self.nodes)


def _lift(value: Any, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)


def _pair(a: Any, b: Any) -> tuple[Tensor, Tensor]:
    left = _lift(a, b if isinstance(b, Tensor) else None)
    return left, _lift(b, left)


def _emit(
    op: str,
    data: np.ndarray,
    inputs: Sequence[Tensor],
    backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
) -> Tensor:
    if not np.all(np.isfinite(data)):
        msg = f"{op} 產生了非有限值"
        raise NumericError(msg)
    listener = _alloc_listener.get()
    if listener is not None:
        listener(op, int(data.nbytes))
    out = Tensor.wrap(np.asarray(data))
    tape = _active_tape.get()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        tape.nodes.append(_Node(op, tuple(inputs), out, backward_fn))
    return out


def backward(loss: Tensor) -> None:
    """對純量 loss 反向傳播，梯度累加到 requires_grad 葉節點的 .grad。

    Args:
        loss: 在作用中 Tape 上產生的純量張量

    Raises:
        UsageError: loss 不是純量，或不是在 Tape 上產生
    """
    if loss.size != 1:
        msg = f"backward() 需要純量 loss，收到形狀 {loss.shape}"
        raise UsageError(msg)
    if loss._tape is None:
        msg = "loss 不是在作用中的 Tape 上產生，無法反向傳播"
        raise UsageError(msg)

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    visited = 0
    for node in reversed(loss._tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        visited += 1
        for tensor, grad in zip(node.inputs, node.backward_fn(g), strict=True):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor._tape is None:
                grad = grad.astype(tensor.dtype, copy=False)
                tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad
            else:
                key = id(tensor)
                grads[key] = grads[key] + grad if key in grads else grad
    logger.trace(f"[AUTODIFF] backward visited {visited}/{len(loss._tape.nodes)} nodes")


# 逐元素運算
def add(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = _pair(a, b)
    return _emit(
        "div",
        a.data / b.data,
        (a, b),
        lambda g: (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


def neg(a: Tensor) -> Tensor:
    return _emit("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _emit("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _emit("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _emit("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _emit("relu", np.where(mask, a.data, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def gelu(a: Tensor) -> Tensor:
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * d_inner),)

    return _emit("gelu", out, (a,), _backward)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """截斷到 [lo, hi]；截斷區域的梯度為 0。"""
    inside = (a.data >= lo) & (a.data <= hi)
    return _emit("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# 歸約
def _normalize_axes(axis: int | tuple[int, ...] | None, ndim: int) -> tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    axes = (axis,) if isinstance(axis, int) else axis
    return tuple(sorted(ax % ndim for ax in axes))


def tsum(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape),)

    return _emit("sum", np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), (a,), _backward)


def mean(a: Tensor, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.ndim)
    count = math.prod(a.shape[ax] for ax in axes)
    return tsum(a, axes, keepdims) * (1.0 / max(count, 1))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit("softmax", out, (a,), _backward)


def vector_norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """歐氏範數；在零向量處梯度定義為 0。"""
    n = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        if not keepdims:
            g = np.expand_dims(g, axis)
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g * a.data / safe, 0.0),)

    out = n if keepdims else np.squeeze(n, axis=axis)
    return _emit("vector_norm", out, (a,), _backward)


# 形狀操作
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    perm = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(perm))
    return _emit("transpose", a.data.transpose(perm), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    perm = list(range(a.ndim))
    perm[axis1], perm[axis2] = perm[axis2], perm[axis1]
    return transpose(a, perm)


def rearrange(a: Tensor, pattern: str, **sizes: int) -> Tensor:
    """einops.rearrange 的可微分版本（僅支援不重複、不歸約的重排）。"""
    out = einops.rearrange(a.data, pattern, **sizes)

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        index = einops.rearrange(np.arange(a.size).reshape(a.shape), pattern, **sizes)
        flat = np.empty(a.size, dtype=g.dtype)
        flat[index.reshape(-1)] = g.reshape(-1)
        return (flat.reshape(a.shape),)

    return _emit("rearrange", out, (a,), _backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not tensors:
        msg = "concat() 需要至少一個張量"
        raise UsageError(msg)
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            msg = f"concat 形狀不相容: {ref.shape} 與 {t.shape}（axis={axis}）"
            raise DimensionError(msg)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _backward(g: np.ndarray) -> list[np.ndarray]:
        return np.split(g, bounds, axis=ax)

    return _emit("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, _backward)


def take(a: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    ax = axis % a.ndim

    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(a.data)
        np.add.at(out, (slice(None),) * ax + (idx,), g)
        return (out,)

    return _emit("take", np.take(a.data, idx, axis=ax), (a,), _backward)


def getitem(a: Tensor, key: Any) -> Tensor:
    def _backward(g: np.ndarray) -> tuple[np.ndarray]:
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)

    return _emit("getitem", np.array(a.data[key]), (a,), _backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    return _emit(
        "broadcast_to",
        np.broadcast_to(a.data, tuple(shape)).copy(),
        (a,),
        lambda g: (unbroadcast(g, a.shape),),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """批次矩陣乘法，最後兩軸為矩陣軸，其餘軸依 numpy 規則廣播。

    Raises:
        DimensionError: 維度少於 2 或內維不一致
    """
    if a.ndim < 2 or b.ndim < 2:
        msg = f"matmul 需要至少二維的輸入，收到 {a.shape} 與 {b.shape}"
        raise DimensionError(msg)
    if a.shape[-1] != b.shape[-2]:
        msg = f"matmul 內維不一致: {a.shape} @ {b.shape}"
        raise DimensionError(msg)

    def _backward(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return unbroadcast(ga, a.shape), unbroadcast(gb, b.shape)

    return _emit("matmul", a.data @ b.data, (a, b), _backward)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(tuple(shape)), requires_grad=requires_grad)


def ones(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.ones(tuple(shape)), requires_grad=requires_grad)
