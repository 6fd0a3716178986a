#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
学习增益设计函数(梯度型与范数最优型)以及权重矩阵的自参数化

所有权重矩阵都是对角阵，这里只保存对角线向量。
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, svdvals

from .errors import DimensionError, GainDesignError
from .lifted_core import superposition_blocks, superposition_input_blocks

logger = logging.getLogger(__name__)

DEFAULT_NORM_FLOOR = 1e-8


class DesignKind(str, Enum):
    """设计函数类型"""

    GRADIENT = "gradient"
    NORM_OPTIMAL = "norm_optimal"


class NormKind(str, Enum):
    """子块堆叠矩阵所用的范数"""

    SPECTRAL = "spectral"
    FROBENIUS = "frobenius"


def _diagonal(values, name):
    if values is None:
        return None
    diag = np.array(values, dtype=float, copy=True).reshape(-1)
    if diag.size == 0 or not np.all(np.isfinite(diag)) or np.any(diag <= 0):
        raise DimensionError(f"权重 {name} 必须是非空、有限且严格为正的对角线")
    diag.setflags(write=False)
    return diag


@dataclass(frozen=True, eq=False)
class WeightingSet:
    """
    对角正定权重 W(误差)、Q(范数最优误差)、S(步长惩罚)

    只需要给出所用设计函数会读到的那几个。
    """

    W: Optional[np.ndarray] = None
    Q: Optional[np.ndarray] = None
    S: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("W", "Q", "S"):
            object.__setattr__(self, name, _diagonal(getattr(self, name), name))

    @classmethod
    def identity(cls, error_size, step_size=None):
        """单位权重，仅用于测试和对照"""
        step_size = error_size if step_size is None else step_size
        return cls(W=np.ones(error_size), Q=np.ones(error_size), S=np.ones(step_size))

    def error_weights(self):
        """范数最优设计用的误差权重，缺省时退回 W"""
        weights = self.Q if self.Q is not None else self.W
        if weights is None:
            raise DimensionError("缺少误差权重 Q/W")
        return weights


@dataclass(frozen=True, eq=False)
class LearningGain:
    """
    学习增益矩阵

    step_weights 记录范数最优设计的步长惩罚 S，梯度设计为 None。
    """

    matrix: np.ndarray
    kind: DesignKind = DesignKind.GRADIENT
    step_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=float, copy=True)
        if matrix.ndim != 2:
            raise DimensionError(f"增益必须是二维矩阵，得到形状 {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "kind", DesignKind(self.kind))
        if self.step_weights is not None:
            weights = _diagonal(self.step_weights, "S")
            if weights.size != matrix.shape[0]:
                raise DimensionError("步长权重与增益行数不符")
            object.__setattr__(self, "step_weights", weights)

    @property
    def shape(self):
        return self.matrix.shape

    def apply(self, vector):
        """返回 L·x 的数组，x 可为 Trajectory、ModelVector 或数组"""
        data = getattr(vector, "data", vector)
        data = np.asarray(data, dtype=float).reshape(-1)
        if data.size != self.matrix.shape[1]:
            raise DimensionError(
                f"增益列数 {self.matrix.shape[1]} 与向量长度 {data.size} 不符")
        return self.matrix @ data


def stack_norm(matrix, norm=NormKind.SPECTRAL):
    """子块堆叠矩阵的范数"""
    if not matrix.size:
        return 0.0
    if NormKind(norm) is NormKind.FROBENIUS:
        return float(np.linalg.norm(matrix, "fro"))
    return float(svdvals(matrix)[0])


def _row_norms(grid, norm, floor):
    return np.array([max(stack_norm(grid.row_stack_dense(k), norm), floor)
                     for k in range(grid.rows)])


def _column_norms(grid, norm, floor):
    return np.array([max(stack_norm(grid.column_stack_dense(i), norm), floor)
                     for i in range(grid.cols)])


def _check_square(operator):
    if operator.block_rows != operator.block_cols:
        raise DimensionError(
            f"ILC 设计要求方块模型，得到 {operator.block_rows}×{operator.block_cols}")


def _check_size(weights, size, name):
    if weights is None:
        raise DimensionError(f"缺少权重 {name}")
    if weights.size != size:
        raise DimensionError(f"权重 {name} 长度 {weights.size}，需要 {size}")


def _norm_optimal_solve(dense, error_weights, step_weights):
    """
    计算 (AᵀQA + S)⁻¹AᵀQ，列数多于行数时走等价的推挤(push-through)形式
    S⁻¹Aᵀ(Q⁻¹ + AS⁻¹Aᵀ)⁻¹，两种情况都只做对称正定分解
    """
    rows, cols = dense.shape
    try:
        if cols > rows:
            inv_s = 1.0 / step_weights
            kernel = (dense * inv_s[None, :]) @ dense.T
            kernel[np.diag_indices(rows)] += 1.0 / error_weights
            factor = cho_factor(kernel)
            return cho_solve(factor, dense * inv_s[None, :]).T
        weighted = dense.T * error_weights[None, :]
        kernel = weighted @ dense
        kernel[np.diag_indices(cols)] += step_weights
        factor = cho_factor(kernel)
        return cho_solve(factor, weighted)
    except np.linalg.LinAlgError as exc:
        logger.error("范数最优增益的正定分解失败: %s", exc)
        raise GainDesignError(f"范数最优增益的正定分解失败: {exc}") from exc


def design_gilc(model, weights):
    """梯度 ILC: L = MᵀW"""
    _check_square(model)
    size = model.shape[0]
    _check_size(weights.W, size, "W")
    return LearningGain(model.dense().T * weights.W[None, :], DesignKind.GRADIENT)


def design_noilc(model, weights):
    """范数最优 ILC: L = (MᵀQM + S)⁻¹MᵀQ"""
    _check_square(model)
    size = model.shape[0]
    error_weights = weights.error_weights()
    _check_size(error_weights, size, "Q")
    _check_size(weights.S, size, "S")
    matrix = _norm_optimal_solve(model.dense(), error_weights, weights.S)
    return LearningGain(matrix, DesignKind.NORM_OPTIMAL, weights.S)


def design_giml(lifted_input, weights):
    """梯度 IML: L̂ = UᵀW"""
    _check_size(weights.W, lifted_input.shape[0], "W")
    return LearningGain(lifted_input.dense().T * weights.W[None, :], DesignKind.GRADIENT)


def design_noiml(lifted_input, weights):
    """范数最优 IML: L̂ = (UᵀWU + S)⁻¹UᵀW"""
    rows, cols = lifted_input.shape
    error_weights = weights.error_weights()
    _check_size(error_weights, rows, "Q")
    _check_size(weights.S, cols, "S")
    matrix = _norm_optimal_solve(lifted_input.dense(), error_weights, weights.S)
    return LearningGain(matrix, DesignKind.NORM_OPTIMAL, weights.S)


def self_parametrize_gilc(model, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """
    G-ILC 的自参数化: 输出通道 i 的权重 1/‖[M̃_{i,1} … M̃_{i,O}]‖²，复制到 N 个采样
    """
    grid = superposition_blocks(model)
    rows = _row_norms(grid, norm, floor)
    return WeightingSet(W=np.tile(1.0 / rows ** 2, grid.horizon))


def self_parametrize_giml(lifted_input, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """G-IML 的自参数化，行堆叠取自输入的叠加表示"""
    grid = superposition_input_blocks(lifted_input)
    rows = _row_norms(grid, norm, floor)
    return WeightingSet(W=np.tile(1.0 / rows ** 2, grid.horizon))


def self_parametrize_noilc(model, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """NO-ILC: Q 取行堆叠范数的倒数(一次方)，S 取列堆叠范数"""
    grid = superposition_blocks(model)
    rows = _row_norms(grid, norm, floor)
    cols = _column_norms(grid, norm, floor)
    return WeightingSet(Q=np.tile(1.0 / rows, grid.horizon), S=np.tile(cols, grid.horizon))


def self_parametrize_noiml(lifted_input, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """NO-IML: S 按 O² 个参数通道给出"""
    grid = superposition_input_blocks(lifted_input)
    rows = _row_norms(grid, norm, floor)
    cols = _column_norms(grid, norm, floor)
    return WeightingSet(Q=np.tile(1.0 / rows, grid.horizon), S=np.tile(cols, grid.horizon))


def design_ilc_gain(model, kind, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """自参数化后设计 ILC 增益"""
    if DesignKind(kind) is DesignKind.GRADIENT:
        return design_gilc(model, self_parametrize_gilc(model, floor, norm))
    return design_noilc(model, self_parametrize_noilc(model, floor, norm))


def design_iml_gain(lifted_input, kind, floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """自参数化后设计 IML 增益"""
    if DesignKind(kind) is DesignKind.GRADIENT:
        return design_giml(lifted_input, self_parametrize_giml(lifted_input, floor, norm))
    return design_noiml(lifted_input, self_parametrize_noiml(lifted_input, floor, norm))
