"""具名參數儲存模組

ParamStore 以名稱（例如 "enc.b1.w"）管理模型所有可訓練張量，
負責初始化、影子副本（批次元素各自累積梯度）、狀態匯出與載入。
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Any

import numpy as np

from utils.autodiff import Tensor
from utils.errors import ConfigError, UsageError

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping


class ParamStore:
    """Named collection of leaf tensors."""

    def __init__(self) -> None:
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            msg = f"參數名稱重複: {name}"
            raise UsageError(msg)
        tensor = Tensor(value, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._params[name]
        except KeyError:
            msg = f"找不到參數: {name}"
            raise UsageError(msg) from None

    def __contains__(self, name: object) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> list[str]:
        return sorted(self._params)

    def items(self) -> list[tuple[str, Tensor]]:
        return [(name, self._params[name]) for name in self.names()]

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def shadow(self) -> ParamStore:
        """返回共享資料、但梯度獨立的副本，供批次元素並行計算。"""
        copy = ParamStore()
        for name, tensor in self._params.items():
            copy._params[name] = Tensor.wrap(tensor.data, requires_grad=True, name=name)
        return copy

    def zero_grad(self) -> None:
        for tensor in self._params.values():
            tensor.zero_grad()

    def grads(self) -> dict[str, np.ndarray]:
        """每個參數的梯度；未被觸及的參數返回全 0。"""
        return {
            name: np.zeros_like(t.data) if t.grad is None else t.grad
            for name, t in self._params.items()
        }

    def state(self) -> dict[str, np.ndarray]:
        return {name: self._params[name].data.copy() for name in self.names()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        """就地載入參數值。

        Raises:
            ConfigError: 名稱集合或形狀與目前模型不一致
        """
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            msg = f"參數名稱不一致: 缺少 {sorted(missing)}，多出 {sorted(extra)}"
            raise ConfigError(msg)
        for name, value in state.items():
            target = self._params[name]
            if tuple(value.shape) != target.shape:
                msg = f"參數 {name} 形狀不一致: 檢查點 {value.shape}，模型 {target.shape}"
                raise ConfigError(msg)
            target.data[...] = value

    def astype(self, dtype: Any) -> ParamStore:
        copy = ParamStore()
        for name, tensor in self._params.items():
            copy._params[name] = Tensor(tensor.data, requires_grad=True, dtype=dtype, name=name)
        return copy


class Initializer:
    """以固定種子產生初始權重。"""

    def __init__(self, rng: np.random.Generator) -> None:
        self.rng = rng

    def conv(self, c_out: int, c_in: int, k: int) -> np.ndarray:
        std = math.sqrt(2.0 / (c_in * k * k))
        return self.rng.normal(0.0, std, (c_out, c_in, k, k))

    def conv_transpose(self, c_in: int, c_out: int, k: int) -> np.ndarray:
        std = math.sqrt(2.0 / c_in)
        return self.rng.normal(0.0, std, (c_in, c_out, k, k))

    def linear(self, fan_in: int, fan_out: int, std: float | None = None) -> np.ndarray:
        scale = std if std is not None else 1.0 / math.sqrt(fan_in)
        return self.rng.normal(0.0, scale, (fan_in, fan_out))

    @staticmethod
    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape)

    @staticmethod
    def ones(*shape: int) -> np.ndarray:
        return np.ones(shape)
