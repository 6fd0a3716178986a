#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
迭代模型学习(IML)与迭代学习控制(ILC)的更新律、双重学习试验循环以及收敛条件诊断
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.linalg import svdvals

from .design_laws import (
    DEFAULT_NORM_FLOOR,
    DesignKind,
    NormKind,
    design_gilc,
    design_giml,
    design_ilc_gain,
    design_iml_gain,
    design_noilc,
    design_noiml,
)
from .errors import (
    DimensionError,
    GainDesignError,
    PlantError,
    PlantExecutionError,
    RunAbortedError,
)
from .lifted_core import (
    ModelVector,
    Trajectory,
    apply_operator,
    lift_input,
    lift_model,
    superposition_input_blocks,
    unlift_model,
)
from .plants import derive_rng, execute_trial

logger = logging.getLogger(__name__)

RANK_TOLERANCE = 1e-10
CONTRACTION_SLACK = 1e-9
MONOTONE_SLACK = 1e-10
# 超过这个维数时由 ON 维的 U·L̂ 求迭代矩阵范数
DENSE_NORM_LIMIT = 1500

_DESIGN_CODES = {"g": DesignKind.GRADIENT, "no": DesignKind.NORM_OPTIMAL}


@dataclass(frozen=True)
class DesignPair:
    """
    IML 与 ILC 设计函数的组合，命名时 IML 在前、ILC 在后(gg/gno/nog/nono)
    """

    iml: DesignKind = DesignKind.NORM_OPTIMAL
    ilc: DesignKind = DesignKind.NORM_OPTIMAL

    def __post_init__(self):
        object.__setattr__(self, "iml", DesignKind(self.iml))
        object.__setattr__(self, "ilc", DesignKind(self.ilc))

    @classmethod
    def from_string(cls, name):
        text = str(name).strip().lower()
        for iml_code, iml in _DESIGN_CODES.items():
            for ilc_code, ilc in _DESIGN_CODES.items():
                if text == iml_code + ilc_code:
                    return cls(iml, ilc)
        raise ValueError(f"未知的设计组合 '{name}'，可选: gg, gno, nog, nono")

    def to_string(self):
        codes = {kind: code for code, kind in _DESIGN_CODES.items()}
        return codes[self.iml] + codes[self.ilc]

    def __str__(self):
        return self.to_string()


@dataclass(frozen=True)
class IMLState:
    m: ModelVector
    trial: int = 0


@dataclass(frozen=True)
class ILCState:
    u: Trajectory
    r: Trajectory
    trial: int = 0

    def __post_init__(self):
        if self.u.channels != self.r.channels or self.u.samples != self.r.samples:
            raise DimensionError(f"输入 {self.u.shape_text()} 与参考 {self.r.shape_text()} 形状不同")


@dataclass(frozen=True)
class ContractionCheck:
    """‖I − L̂U‖ 及定理条件"""

    norm: float
    within_bound: bool
    full_column_rank: bool


@dataclass(frozen=True, eq=False)
class TrialRecord:
    """
    一次试验的快照

    m 是第 j 次预测所用的模型 m_j，m_next 与 u_next 是本次更新的结果。
    weighted_model_errors 是 (‖p − m_j‖, ‖p − m_{j+1}‖)，在本次 IML 增益的步长度量下计算，
    对象不提供真实算子时为 None。
    """

    trial: int
    u: Trajectory
    y: Trajectory
    e: Trajectory
    m: ModelVector
    m_next: ModelVector
    u_next: Trajectory
    tracking_error_norm: float
    normalized_error_norm: float
    prediction_error_norm: float
    model_error_norm: Optional[float]
    iml_contraction_norm: float
    iml_contraction: bool
    iml_gain_full_rank: bool
    prediction_gamma: float
    pe_rank: int
    dithered: bool = False
    weighted_model_errors: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class LoggedTrial:
    """日志中一行所含的标量字段，诊断只依赖这些字段"""

    trial: int
    tracking_error_norm: float
    normalized_error_norm: float
    prediction_error_norm: float
    model_error_norm: Optional[float]
    iml_contraction_norm: float
    prediction_gamma: float
    pe_rank: int


@dataclass(frozen=True)
class DiagnosticReport:
    trials: int
    channels: int
    contraction_flags: Tuple[bool, ...]
    prediction_flags: Tuple[bool, ...]
    excitation_verdicts: Tuple[Tuple[int, bool], ...]
    threshold_trial: Optional[int]
    violation_count: int
    model_error_monotone: Optional[bool] = None
    notes: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def failed_windows(self):
        return tuple(trial for trial, passed in self.excitation_verdicts if not passed)


def _check_pair(a, b, what):
    if a.channels != b.channels or a.samples != b.samples:
        raise DimensionError(f"{what}: {a.shape_text()} 与 {b.shape_text()} 形状不同")


def prediction_error(m, y, u):
    """ê = y − L_u(u)·m"""
    _check_pair(y, u, "预测误差")
    if m.channels != u.channels or m.samples != u.samples:
        raise DimensionError(f"模型 {m.shape_text()} 与输入 {u.shape_text()} 不符")
    return y - apply_operator(lift_input(u), m)


def tracking_error(r, y):
    """e = r − y"""
    _check_pair(r, y, "跟踪误差")
    return r - y


def _iml_gain(lifted_input, design, weights, floor, norm):
    if weights is None:
        return design_iml_gain(lifted_input, design, floor, norm)
    if DesignKind(design) is DesignKind.GRADIENT:
        return design_giml(lifted_input, weights)
    return design_noiml(lifted_input, weights)


def _ilc_gain(model, design, weights, floor, norm):
    if weights is None:
        return design_ilc_gain(model, design, floor, norm)
    if DesignKind(design) is DesignKind.GRADIENT:
        return design_gilc(model, weights)
    return design_noilc(model, weights)


def iml_step(state, u, y, design=DesignKind.NORM_OPTIMAL, weights=None,
             floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """
    m_{j+1} = m_j + L̂_j ê_j

    参数:
        state: 当前 IMLState
        u, y: 本次试验的输入与测量输出
        design: 梯度或范数最优
        weights: 给定时跳过自参数化
    """
    error = prediction_error(state.m, y, u)
    gain = _iml_gain(lift_input(u), design, weights, floor, norm)
    m_next = ModelVector(state.m.data + gain.apply(error), state.m.channels)
    return IMLState(m_next, state.trial + 1)


def ilc_step(state, e, model, design=DesignKind.NORM_OPTIMAL, weights=None,
             floor=DEFAULT_NORM_FLOOR, norm=NormKind.SPECTRAL):
    """u_{j+1} = u_j + L_j e_j，L_j 由模型 M 设计"""
    _check_pair(state.u, e, "ILC 更新")
    gain = _ilc_gain(model, design, weights, floor, norm)
    u_next = Trajectory(state.u.data + gain.apply(e), state.u.channels)
    return ILCState(u_next, state.r, state.trial + 1)


def check_excitation(vectors, tol=RANK_TOLERANCE):
    """
    判断若干个初始采样向量是否张满 O 维空间

    返回:
        (是否通过, 数值秩)，奇异值大于 tol 乘最大奇异值才计入秩
    """
    stacked = np.atleast_2d(np.asarray(vectors, dtype=float))
    if stacked.size == 0:
        return False, 0
    values = svdvals(stacked)
    rank = int(np.sum(values > tol * values[0])) if values[0] > 0 else 0
    return rank == stacked.shape[1], rank


def _check_gain_shape(gain, lifted_input):
    if gain.shape != (lifted_input.shape[1], lifted_input.shape[0]):
        raise DimensionError(f"增益形状 {gain.shape} 与输入提升矩阵 {lifted_input.shape} 不符")


def _iteration_matrix_norm(gain, dense_input):
    """
    I − L̂U 在增益自身步长度量下的谱范数，梯度增益即欧氏范数

    超过 DENSE_NORM_LIMIT 列时不再构造 O²N 维的迭代矩阵: 四种设计的 L̂U 在该度量下
    对称半正定，非零特征值与 ON 维的 U·L̂ 相同，零特征值(秩亏时)贡献 1。
    """
    size = gain.shape[0]
    if size <= DENSE_NORM_LIMIT:
        product = gain.matrix @ dense_input
        if gain.step_weights is not None:
            left = np.sqrt(gain.step_weights)
            product = left[:, None] * product / left[None, :]
        return float(svdvals(np.eye(size) - product)[0])
    eigenvalues = np.real(np.linalg.eigvals(dense_input @ gain.matrix))
    value = float(np.max(np.abs(1.0 - eigenvalues))) if eigenvalues.size else 1.0
    if size > dense_input.shape[0]:
        value = max(value, 1.0)
    return value


def input_rank(lifted_input, tol=RANK_TOLERANCE):
    """
    U 的数值秩

    U 中不同输出通道的行占用互不相交的参数列，且每个通道的行堆叠相同，
    所以 rank U = O·rank([T(u_1) … T(u_O)])，只需对 N×ON 的矩阵做奇异值分解。
    """
    stack = superposition_input_blocks(lifted_input).row_stack_dense(0)
    values = svdvals(stack)
    if values.size == 0 or values[0] == 0:
        return 0
    return lifted_input.channels * int(np.sum(values > tol * values[0]))


def check_model_contraction(gain, lifted_input, dense_input=None):
    """
    模型收敛条件: ‖I − L̂U‖ <= 1 且 L̂ 列满秩

    范数最优增益在其步长权重 S 的度量下检查，S 为单位阵倍数时与欧氏范数一致。
    L̂ 由四种设计得到时 rank L̂ = rank U，列满秩由 U 的秩判断。

    参数:
        dense_input: 已稠密化的 U，给定时不再重复构造
    """
    _check_gain_shape(gain, lifted_input)
    dense_input = lifted_input.dense() if dense_input is None else dense_input
    value = _iteration_matrix_norm(gain, dense_input)
    if not np.any(gain.matrix):
        full_rank = False
    else:
        full_rank = input_rank(lifted_input) == gain.shape[1]
    return ContractionCheck(value, value <= 1.0 + CONTRACTION_SLACK, full_rank)


def check_prediction_contraction(gain, lifted_input, dense_input=None):
    """γ = ‖I − U L̂‖，返回 (γ, γ < 1)"""
    _check_gain_shape(gain, lifted_input)
    dense_input = lifted_input.dense() if dense_input is None else dense_input
    size = lifted_input.shape[0]
    gamma = float(svdvals(np.eye(size) - dense_input @ gain.matrix)[0])
    return gamma, gamma < 1.0


def model_error_norm(m, p_true, metric=None):
    """‖p − m‖，metric 为对角权重时计算加权范数"""
    if m.data.size != p_true.data.size:
        raise DimensionError(f"模型向量长度 {m.data.size} 与 {p_true.data.size} 不符")
    diff = p_true.data - m.data
    if metric is None:
        return float(np.linalg.norm(diff))
    return float(np.sqrt(np.sum(np.asarray(metric) * diff ** 2)))


def _first_samples(inputs):
    return np.array([u.sample(1) for u in inputs])


def threshold_trial(norms, slack=MONOTONE_SLACK):
    """
    最早的试验 J，使得之后每一步误差范数都不增加(允许 slack)

    序列为空时返回 None，只有一个元素时返回 0。
    """
    values = list(norms)
    if not values:
        return None
    threshold = len(values) - 1
    for j in range(len(values) - 2, -1, -1):
        if values[j + 1] <= values[j] + slack:
            threshold = j
        else:
            break
    return threshold


def _summaries(records):
    for row in records:
        if isinstance(row, TrialRecord):
            yield LoggedTrial(
                trial=row.trial,
                tracking_error_norm=row.tracking_error_norm,
                normalized_error_norm=row.normalized_error_norm,
                prediction_error_norm=row.prediction_error_norm,
                model_error_norm=row.model_error_norm,
                iml_contraction_norm=row.iml_contraction_norm,
                prediction_gamma=row.prediction_gamma,
                pe_rank=row.pe_rank,
            )
        else:
            yield row


def diagnose(records, channels):
    """
    从日志中的标量字段重新评估各试验的条件

    参数:
        records: TrialRecord 或 LoggedTrial 序列
        channels: 通道数 O，决定激励窗口长度
    """
    rows = list(_summaries(records))
    contraction = tuple(row.iml_contraction_norm <= 1.0 + CONTRACTION_SLACK for row in rows)
    prediction = tuple(row.prediction_gamma < 1.0 for row in rows)
    verdicts = tuple((row.trial, row.pe_rank == channels)
                     for row in rows if row.trial >= channels - 1)
    threshold = threshold_trial([row.normalized_error_norm for row in rows])
    model_errors = [row.model_error_norm for row in rows]
    monotone = None
    notes = []
    if rows and all(value is not None for value in model_errors):
        monotone = all(later <= earlier + MONOTONE_SLACK
                       for earlier, later in zip(model_errors, model_errors[1:]))
        if not monotone:
            notes.append("欧氏模型误差出现增加，增益只保证在步长度量下不增")
    violations = contraction.count(False) + sum(1 for _, passed in verdicts if not passed)
    return DiagnosticReport(
        trials=len(rows),
        channels=channels,
        contraction_flags=contraction,
        prediction_flags=prediction,
        excitation_verdicts=verdicts,
        threshold_trial=threshold,
        violation_count=violations,
        model_error_monotone=monotone,
        notes=tuple(notes),
    )


def weighted_model_error_monotone(records, slack=MONOTONE_SLACK):
    """每一步在该步增益度量下的模型误差都不增加"""
    pairs = [record.weighted_model_errors for record in records]
    if any(pair is None for pair in pairs):
        return None
    return all(after <= before + slack for before, after in pairs)


def dilc_run(plant, reference, trials, designs=None, seed=0, input_std=0.01, noise=None,
             norm_floor=DEFAULT_NORM_FLOOR, norm_kind=NormKind.SPECTRAL, dither_std=0.0,
             initial_model=None, initial_input=None, on_trial=None):
    """
    双重迭代学习控制的试验循环

    每次试验的顺序: 施加 u_j 并测量 y_j，用 (u_j, y_j) 更新模型得到 m_{j+1}，
    由 M_{j+1} 设计 L_j，再更新输入得到 u_{j+1}。

    参数:
        plant: 具有 channels、simulate(u)、true_operator(N) 的被控对象
        reference: 参考轨迹 r
        trials: 试验次数 J >= 1
        designs: DesignPair，默认 NONO
        seed: 根种子，u_0 与抖动各自派生随机数流
        input_std: u_0 的标准差
        noise: NoiseModel 或 None
        dither_std: 激励窗口秩亏时叠加到下一个输入的抖动标准差，0 表示关闭
        initial_model: m_0，默认为零向量
        initial_input: u_0，给定时不再随机抽取
        on_trial: 每完成一次试验调用一次，参数为 TrialRecord
    返回:
        TrialRecord 列表，学到的输入是最后一条记录的 u_next
    异常:
        RunAbortedError: 对象仿真或增益设计失败，records 保留已完成的试验
    """
    if trials < 1:
        raise ValueError(f"试验次数必须至少为 1，得到 {trials}")
    designs = designs or DesignPair()
    channels, samples = reference.channels, reference.samples
    if plant.channels != channels:
        raise DimensionError(f"对象有 {plant.channels} 个通道，参考有 {channels} 个")

    if initial_input is None:
        draws = derive_rng(seed, "u0").standard_normal(channels * samples) * input_std
        u = Trajectory(draws, channels)
    else:
        u = initial_input
    m = initial_model if initial_model is not None else ModelVector.zeros(channels, samples)
    truth = plant.true_operator(samples)
    p_true = lift_model(truth) if truth is not None else None
    dither_rng = derive_rng(seed, "dither")

    logger.info("开始 %s 双重学习: O=%d N=%d J=%d", designs, channels, samples, trials)
    records = []
    history = [u]
    first_norm = None
    for j in range(trials):
        try:
            y = execute_trial(plant, u, noise, trial=j)
            e = tracking_error(reference, y)
            error_hat = prediction_error(m, y, u)
            lifted = lift_input(u)
            model_gain = design_iml_gain(lifted, designs.iml, norm_floor, norm_kind)
            m_next = ModelVector(m.data + model_gain.apply(error_hat), channels)
            control_gain = design_ilc_gain(unlift_model(m_next), designs.ilc, norm_floor, norm_kind)
            u_next = Trajectory(u.data + control_gain.apply(e), channels)
        except (PlantError, PlantExecutionError, GainDesignError) as exc:
            logger.error("第 %d 次试验失败: %s", j, exc)
            raise RunAbortedError(f"第 {j} 次试验失败: {exc}", records, j, exc) from exc

        window = history[-channels:]
        _, rank = check_excitation(_first_samples(window))
        dense_input = lifted.dense()
        contraction = check_model_contraction(model_gain, lifted, dense_input)
        gamma, _ = check_prediction_contraction(model_gain, lifted, dense_input)

        dithered = False
        if dither_std > 0:
            upcoming = (history + [u_next])[-channels:]
            _, next_rank = check_excitation(_first_samples(upcoming))
            if next_rank < len(upcoming):
                kick = dither_rng.standard_normal(channels * samples) * dither_std
                u_next = Trajectory(u_next.data + kick, channels)
                dithered = True
                logger.debug("第 %d 次试验后激励窗口秩亏，叠加抖动", j)

        norm = e.norm()
        if first_norm is None:
            first_norm = norm
        normalized = 1.0 if j == 0 else norm / (first_norm if first_norm > 0 else 1.0)

        model_error = None
        weighted = None
        if p_true is not None:
            model_error = model_error_norm(m, p_true)
            metric = model_gain.step_weights
            weighted = (model_error_norm(m, p_true, metric), model_error_norm(m_next, p_true, metric))

        record = TrialRecord(
            trial=j,
            u=u,
            y=y,
            e=e,
            m=m,
            m_next=m_next,
            u_next=u_next,
            tracking_error_norm=norm,
            normalized_error_norm=normalized,
            prediction_error_norm=error_hat.norm(),
            model_error_norm=model_error,
            iml_contraction_norm=contraction.norm,
            iml_contraction=contraction.within_bound,
            iml_gain_full_rank=contraction.full_column_rank,
            prediction_gamma=gamma,
            pe_rank=rank,
            dithered=dithered,
            weighted_model_errors=weighted,
        )
        records.append(record)
        logger.debug("试验 %d: 归一化误差 %.6g, 预测误差 %.6g", j, normalized, record.prediction_error_norm)
        if on_trial is not None:
            on_trial(record)

        u, m = u_next, m_next
        history.append(u)

    logger.info("双重学习结束: 最终归一化误差 %.6g", records[-1].normalized_error_norm)
    return records
