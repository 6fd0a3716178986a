#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
独立的暴力校验(oracle)，只供测试和验收运行使用

这里的实现追求直观而不是速度，刻意不复用生产代码的快速路径。
"""

import logging

import numpy as np
from scipy.linalg import svdvals

from .errors import DenseCapError, DimensionError
from .lifted_core import ModelVector

DEFAULT_DENSE_CAP = 4000
RANK_TOLERANCE = 1e-10

logger = logging.getLogger(__name__)


def _check_cap(rows, cols, cap):
    if rows > cap or cols > cap:
        raise DenseCapError(f"稠密矩阵 {rows}×{cols} 超过上限 {cap}×{cap}")


def densify(operator, cap=DEFAULT_DENSE_CAP):
    """逐块放置，展开块下三角 Toeplitz 结构"""
    n, rows, cols = operator.blocks.shape
    _check_cap(rows * n, cols * n, cap)
    dense = np.zeros((rows * n, cols * n))
    for r in range(n):
        for c in range(r + 1):
            dense[r * rows:(r + 1) * rows, c * cols:(c + 1) * cols] = operator.blocks[r - c]
    return dense


def regularized_ls_oracle(u_dense, W, S, y, m_prev):
    """
    用稠密正规方程求 argmin ‖y − U m‖²_W + ‖m − m_prev‖²_S

    参数:
        u_dense: 稠密的输入提升矩阵 U
        W, S: 对角权重向量
        y: 测量输出(Trajectory 或数组)
        m_prev: 上一个模型向量
    返回:
        ModelVector
    """
    u_dense = np.asarray(u_dense, dtype=float)
    y_data = np.asarray(getattr(y, "data", y), dtype=float).reshape(-1)
    m_data = np.asarray(getattr(m_prev, "data", m_prev), dtype=float).reshape(-1)
    W = np.asarray(W, dtype=float).reshape(-1)
    S = np.asarray(S, dtype=float).reshape(-1)
    if u_dense.shape != (y_data.size, m_data.size) or W.size != y_data.size or S.size != m_data.size:
        raise DimensionError("正规方程各项尺寸不一致")
    normal = u_dense.T @ np.diag(W) @ u_dense + np.diag(S)
    rhs = u_dense.T @ np.diag(W) @ y_data + np.diag(S) @ m_data
    solution = np.linalg.solve(normal, rhs)
    channels = getattr(m_prev, "channels", None) or u_dense.shape[1] // u_dense.shape[0]
    return ModelVector(solution, channels)


def numerical_rank(matrix, rtol=RANK_TOLERANCE):
    values = svdvals(np.atleast_2d(matrix))
    if values.size == 0 or values[0] == 0:
        return 0
    return int(np.sum(values > rtol * values[0]))


def kernel_intersection_check(gains, lifted_inputs, cap=DEFAULT_DENSE_CAP):
    """
    一个激励窗口内各 L̂_i U_i 的零空间之交是否只有零向量

    参数:
        gains: LearningGain 序列
        lifted_inputs: 对应的 LiftedInputMatrix 序列
    返回:
        堆叠矩阵的秩等于 O²·N 时为 True；窗口的初始采样不满秩或某个增益不是列满秩时
        记录原因并返回 False
    """
    if len(gains) != len(lifted_inputs) or not gains:
        raise DimensionError("增益与输入提升矩阵的个数必须相同且非空")
    channels = lifted_inputs[0].channels
    first_samples = np.array([lifted.to_trajectory().sample(1) for lifted in lifted_inputs])
    if len(lifted_inputs) < channels or numerical_rank(first_samples) < channels:
        logger.warning("窗口内 %d 个初始采样不满足激励条件", len(lifted_inputs))
        return False
    for index, gain in enumerate(gains):
        if numerical_rank(gain.matrix) < gain.shape[1]:
            logger.warning("窗口内第 %d 个增益不是列满秩", index)
            return False
    products = []
    for gain, lifted in zip(gains, lifted_inputs):
        dense = densify(lifted, cap)
        products.append(gain.matrix @ dense)
    stacked = np.vstack(products)
    return numerical_rank(stacked) == stacked.shape[1]


def spectral_norm(matrix):
    """最大奇异值"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    if matrix.size == 0:
        return 0.0
    return float(svdvals(matrix)[0])


def power_iteration_norm(matrix, iterations=5000, tol=1e-13, seed=0):
    """对 AᵀA 做幂迭代估计谱范数，用于和 spectral_norm 交叉校验"""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    vector = np.random.default_rng(seed).standard_normal(matrix.shape[1])
    vector /= np.linalg.norm(vector)
    estimate = 0.0
    for _ in range(iterations):
        image = matrix.T @ (matrix @ vector)
        length = np.linalg.norm(image)
        if length == 0:
            return 0.0
        vector = image / length
        previous, estimate = estimate, np.sqrt(length)
        if abs(estimate - previous) <= tol * estimate:
            break
    return float(estimate)
