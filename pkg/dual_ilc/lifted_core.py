#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
提升(lifted)表示下的轨迹、块下三角 Toeplitz 算子与两个提升算子

索引约定(全模块统一):
    - 采样序号 n 对外是 1..N，内部数组下标为 n-1
    - 轨迹按采样优先排列: data[(n-1)*O + k] 是第 n 个采样的第 k 个通道
    - 算子只存 N 个块，blocks[n-1] 对应第 n 个 Markov 块
    - 模型向量的第 n 段是第 n 个 O×O 块的按行展开
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import toeplitz

from .errors import DimensionError


def _frozen_array(values, dtype=float):
    """复制为只读的浮点数组"""
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


class _VectorArithmetic:
    """Trajectory 与 ModelVector 共用的向量运算"""

    def _same_kind(self, other):
        if type(other) is not type(self):
            return NotImplemented
        if other.channels != self.channels or other.data.size != self.data.size:
            raise DimensionError(
                f"形状不一致: {self.shape_text()} 与 {other.shape_text()}")
        return other

    def __add__(self, other):
        other = self._same_kind(other)
        if other is NotImplemented:
            return other
        return type(self)(self.data + other.data, self.channels)

    def __sub__(self, other):
        other = self._same_kind(other)
        if other is NotImplemented:
            return other
        return type(self)(self.data - other.data, self.channels)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return type(self)(self.data * float(scalar), self.channels)

    __rmul__ = __mul__

    def __neg__(self):
        return type(self)(-self.data, self.channels)

    def norm(self):
        """欧氏范数"""
        return float(np.linalg.norm(self.data))

    def shape_text(self):
        return f"{type(self).__name__}(O={self.channels}, N={self.samples})"


@dataclass(frozen=True, eq=False)
class Trajectory(_VectorArithmetic):
    """
    O 个通道、N 个采样的堆叠轨迹，输入、输出、参考和误差都使用这一形状

    参数:
        data: 长度 O·N 的实向量，采样优先排列
        channels: 通道数 O
    """

    data: np.ndarray
    channels: int

    def __post_init__(self):
        data = _frozen_array(np.ravel(self.data))
        channels = int(self.channels)
        if channels < 1:
            raise DimensionError(f"通道数必须为正，得到 {channels}")
        if data.size == 0 or data.size % channels:
            raise DimensionError(f"轨迹长度 {data.size} 不是通道数 {channels} 的正整数倍")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", channels)

    @property
    def samples(self):
        return self.data.size // self.channels

    def sample(self, n):
        """返回第 n 个采样(1..N)的 O 维向量"""
        if not 1 <= n <= self.samples:
            raise IndexError(f"采样序号 {n} 超出 1..{self.samples}")
        offset = (n - 1) * self.channels
        return self.data[offset:offset + self.channels]

    def as_samples(self):
        """N×O 视图，第 n-1 行是第 n 个采样"""
        return self.data.reshape(self.samples, self.channels)

    @classmethod
    def from_samples(cls, samples):
        samples = np.atleast_2d(np.asarray(samples, dtype=float))
        return cls(samples.reshape(-1), samples.shape[1])

    @classmethod
    def zeros(cls, channels, samples):
        return cls(np.zeros(channels * samples), channels)


@dataclass(frozen=True, eq=False)
class ModelVector(_VectorArithmetic):
    """
    长度 O²·N 的模型参数向量，第 n 段是第 n 个 O×O Toeplitz 块的按行展开
    """

    data: np.ndarray
    channels: int

    def __post_init__(self):
        data = _frozen_array(np.ravel(self.data))
        channels = int(self.channels)
        if channels < 1:
            raise DimensionError(f"通道数必须为正，得到 {channels}")
        width = channels * channels
        if data.size == 0 or data.size % width:
            raise DimensionError(f"模型向量长度 {data.size} 不是 O²={width} 的正整数倍")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channels", channels)

    @property
    def samples(self):
        return self.data.size // (self.channels * self.channels)

    def block(self, n):
        """第 n 个(1..N)O×O 块"""
        if not 1 <= n <= self.samples:
            raise IndexError(f"块序号 {n} 超出 1..{self.samples}")
        width = self.channels * self.channels
        return self.data[(n - 1) * width:n * width].reshape(self.channels, self.channels)

    @classmethod
    def zeros(cls, channels, samples):
        return cls(np.zeros(channels * channels * samples), channels)


@dataclass(frozen=True, eq=False)
class ToeplitzOperator:
    """
    块下三角 Toeplitz 算子，只保存 N 个 L×M 块

    完整矩阵的块 (r, c) 在 r >= c 时等于 blocks[r-c]，否则为零。
    """

    blocks: np.ndarray

    def __post_init__(self):
        blocks = _frozen_array(self.blocks)
        if blocks.ndim != 3 or 0 in blocks.shape:
            raise DimensionError(f"块数组必须是非空的 (N, L, M)，得到形状 {blocks.shape}")
        object.__setattr__(self, "blocks", blocks)

    @property
    def horizon(self):
        return self.blocks.shape[0]

    @property
    def block_rows(self):
        return self.blocks.shape[1]

    @property
    def block_cols(self):
        return self.blocks.shape[2]

    @property
    def shape(self):
        """完整矩阵的形状"""
        return (self.block_rows * self.horizon, self.block_cols * self.horizon)

    def block(self, n):
        """第 n 个(1..N)块"""
        if not 1 <= n <= self.horizon:
            raise IndexError(f"块序号 {n} 超出 1..{self.horizon}")
        return self.blocks[n - 1]

    def dense(self):
        """按需构造完整的 (L·N)×(M·N) 矩阵"""
        n, rows, cols = self.blocks.shape
        padded = np.concatenate([self.blocks, np.zeros((1, rows, cols))])
        lag = np.subtract.outer(np.arange(n), np.arange(n))
        lag[lag < 0] = n
        return padded[lag].transpose(0, 2, 1, 3).reshape(n * rows, n * cols)

    def _check_same_shape(self, other):
        if self.blocks.shape != other.blocks.shape:
            raise DimensionError(
                f"算子形状不一致: {self.blocks.shape} 与 {other.blocks.shape}")

    def __add__(self, other):
        if not isinstance(other, ToeplitzOperator):
            return NotImplemented
        self._check_same_shape(other)
        return ToeplitzOperator(self.blocks + other.blocks)

    def __sub__(self, other):
        if not isinstance(other, ToeplitzOperator):
            return NotImplemented
        self._check_same_shape(other)
        return ToeplitzOperator(self.blocks - other.blocks)

    def __mul__(self, scalar):
        if not np.isscalar(scalar):
            return NotImplemented
        return ToeplitzOperator(self.blocks * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return ToeplitzOperator(-self.blocks)

    def compose(self, other):
        """
        算子乘积 self·other，结果仍是块下三角 Toeplitz

        第 n 个块为 Σ_{i=1..n} A_i B_{n-i+1}
        """
        if self.horizon != other.horizon or self.block_cols != other.block_rows:
            raise DimensionError(
                f"无法复合 {self.blocks.shape} 与 {other.blocks.shape}")
        out = np.empty((self.horizon, self.block_rows, other.block_cols))
        for k in range(self.horizon):
            out[k] = np.einsum("ilm,imp->lp", self.blocks[:k + 1], other.blocks[k::-1])
        return ToeplitzOperator(out)

    __matmul__ = compose

    @classmethod
    def identity(cls, channels, horizon):
        blocks = np.zeros((horizon, channels, channels))
        blocks[0] = np.eye(channels)
        return cls(blocks)

    @classmethod
    def zeros(cls, rows, cols, horizon):
        return cls(np.zeros((horizon, rows, cols)))


@dataclass(frozen=True, eq=False)
class LiftedInputMatrix(ToeplitzOperator):
    """
    输入提升矩阵 U = L_u(u)，第 n 个块为 I_O ⊗ ū(n)ᵀ，形状 O×O²
    """

    def __post_init__(self):
        super().__post_init__()
        if self.block_cols != self.block_rows ** 2:
            raise DimensionError(
                f"输入提升矩阵的块必须是 O×O²，得到 {self.block_rows}×{self.block_cols}")

    @property
    def channels(self):
        return self.block_rows

    def to_trajectory(self):
        """从块中恢复原输入轨迹"""
        return Trajectory(self.blocks[:, 0, :self.channels].reshape(-1), self.channels)


@dataclass(frozen=True)
class SuperpositionGrid:
    """
    把 L×M 块的算子按输入/输出维度重新分组为 L×M 个标量 Toeplitz 子块

    子块 (k, i) 的第 n 个标量就是原算子第 n 块的元素 [k, i]，下标从 0 开始。
    """

    source: ToeplitzOperator

    @property
    def rows(self):
        return self.source.block_rows

    @property
    def cols(self):
        return self.source.block_cols

    @property
    def horizon(self):
        return self.source.horizon

    def sequence(self, k, i):
        """子块 (k, i) 的标量 Markov 序列"""
        return self.source.blocks[:, k, i]

    def sub_block(self, k, i):
        return ToeplitzOperator(self.source.blocks[:, k:k + 1, i:i + 1])

    def sub_block_dense(self, k, i):
        return toeplitz(self.sequence(k, i), np.zeros(self.horizon))

    def row_stack_dense(self, k):
        """[T̃_{k,0} … T̃_{k,M-1}]，形状 N×(M·N)"""
        return np.hstack([self.sub_block_dense(k, i) for i in range(self.cols)])

    def column_stack_dense(self, i):
        """[T̃_{0,i}; …; T̃_{L-1,i}]，形状 (L·N)×N"""
        return np.vstack([self.sub_block_dense(k, i) for k in range(self.rows)])

    def recompose(self):
        """按子块序列重新组装原算子"""
        blocks = np.empty((self.horizon, self.rows, self.cols))
        for k in range(self.rows):
            for i in range(self.cols):
                blocks[:, k, i] = self.sequence(k, i)
        return ToeplitzOperator(blocks)


def lift_input(u):
    """
    输入提升算子 L_u

    参数:
        u: 输入轨迹
    返回:
        LiftedInputMatrix，满足 A u == L_u(u) L_m(A)
    """
    samples = u.as_samples()
    o = u.channels
    blocks = np.einsum("kl,nm->nklm", np.eye(o), samples).reshape(u.samples, o, o * o)
    return LiftedInputMatrix(blocks)


def lift_model(operator):
    """模型提升算子 L_m: 每个 O×O 块按行展开后依次堆叠"""
    if operator.block_rows != operator.block_cols:
        raise DimensionError(
            f"模型提升要求方块，得到 {operator.block_rows}×{operator.block_cols}")
    return ModelVector(operator.blocks.reshape(-1), operator.block_rows)


def unlift_model(m, samples=None):
    """L_m 的逆，samples 给定时校验长度"""
    if samples is not None and m.samples != samples:
        raise DimensionError(
            f"模型向量长度 {m.data.size} 与 O²·N = {m.channels ** 2 * samples} 不符")
    return ToeplitzOperator(m.data.reshape(m.samples, m.channels, m.channels))


def apply_operator(operator, x):
    """
    块卷积形式的 y = T x，不构造完整矩阵

    参数:
        operator: ToeplitzOperator (含 LiftedInputMatrix)
        x: Trajectory 或 ModelVector，长度须为 M·N
    返回:
        L 个通道的 Trajectory
    """
    n, rows, cols = operator.blocks.shape
    if x.data.size != cols * n:
        raise DimensionError(
            f"算子列维 {cols}·{n} 与向量长度 {x.data.size} 不符")
    xs = x.data.reshape(n, cols)
    ys = np.zeros((n, rows))
    for lag in range(n):
        ys[lag:] += xs[:n - lag] @ operator.blocks[lag].T
    return Trajectory(ys.reshape(-1), rows)


def superposition_blocks(operator):
    """O×O 方块算子的叠加表示"""
    if operator.block_rows != operator.block_cols:
        raise DimensionError("叠加表示要求方块算子")
    return SuperpositionGrid(operator)


def superposition_input_blocks(lifted_input):
    """输入提升矩阵的 O×O² 叠加表示"""
    if not isinstance(lifted_input, LiftedInputMatrix):
        lifted_input = LiftedInputMatrix(lifted_input.blocks)
    return SuperpositionGrid(lifted_input)
