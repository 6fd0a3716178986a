#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
仿真被控对象: 状态空间 LTI 对象、水平两连杆机械臂、测量噪声和参考轨迹库

相对阶固定为 1: 输出的第 n 个采样是施加输入 ū(n) 之后的测量值。
每次试验都从零初始状态开始。
"""

import logging
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import PlantError, PlantExecutionError, UnknownPresetError
from .lifted_core import ToeplitzOperator, Trajectory

logger = logging.getLogger(__name__)

MAX_REDRAWS = 1000


def derive_rng(seed, label, *extra):
    """根种子按标签拆分出独立的随机数流，切换某一用途不会扰动其他用途"""
    key = (zlib.crc32(label.encode("utf-8")),) + tuple(int(v) for v in extra)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def spectral_radius_of(matrix):
    if matrix.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(matrix))))


def _check_finite(values, sample):
    if not np.all(np.isfinite(values)):
        raise PlantExecutionError(f"仿真在第 {sample} 个采样出现非有限状态", sample=sample)


@dataclass(frozen=True, eq=False)
class StateSpacePlant:
    """
    离散时间 LTI 对象 x(k+1) = A x(k) + B ū(k)，ȳ(k) = C x(k)

    构造时拒绝谱半径不小于 1 的 A。
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.atleast_2d(np.array(self.B, dtype=float))
        c = np.atleast_2d(np.array(self.C, dtype=float))
        states = a.shape[0]
        if a.shape != (states, states):
            raise PlantError(f"A 必须是方阵，得到 {a.shape}")
        if b.shape[0] != states or c.shape[1] != states:
            raise PlantError(f"B {b.shape}、C {c.shape} 与状态维 {states} 不符")
        if b.shape[1] != c.shape[0]:
            raise PlantError(f"只支持输入数等于输出数的系统，得到 {b.shape[1]} 入 {c.shape[0]} 出")
        radius = spectral_radius_of(a)
        if not radius < 1.0:
            raise PlantError(f"A 的谱半径 {radius:.6g} 不小于 1")
        for name, value in (("A", a), ("B", b), ("C", c)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def channels(self):
        return self.C.shape[0]

    @property
    def state_dim(self):
        return self.A.shape[0]

    def simulate(self, u):
        """逐步递推，返回 y 的第 n 个采样 = C x(n+1)"""
        inputs = u.as_samples()
        state = np.zeros(self.state_dim)
        outputs = np.empty((u.samples, self.channels))
        for n in range(u.samples):
            state = self.A @ state + self.B @ inputs[n]
            _check_finite(state, n + 1)
            outputs[n] = self.C @ state
        return Trajectory(outputs.reshape(-1), self.channels)

    def true_operator(self, samples):
        return toeplitz_from_state_space(self, samples)


def toeplitz_from_state_space(plant, samples):
    """Markov 参数 P̄_n = C A^{n-1} B 组成的提升算子"""
    radius = spectral_radius_of(plant.A)
    if not radius < 1.0:
        raise PlantError(f"A 的谱半径 {radius:.6g} 不小于 1")
    blocks = np.empty((samples, plant.channels, plant.channels))
    power_b = np.array(plant.B, dtype=float)
    for n in range(samples):
        blocks[n] = plant.C @ power_b
        power_b = plant.A @ power_b
    return ToeplitzOperator(blocks)


def _orthogonal(rng, size):
    q, r = np.linalg.qr(rng.standard_normal((size, size)))
    return q * np.sign(np.diag(r))[None, :]


def random_stable_plant(channels, state_dim, seed, spectral_radius=0.9, well_conditioned=False):
    """
    随机稳定对象生成器，同一个种子得到同一个对象

    参数:
        channels: 输入/输出数 O
        state_dim: 状态维 O_x，须不小于 O
        seed: 根种子
        spectral_radius: A 的谱半径 ρ ∈ [0, 1)
        well_conditioned: 为真时 A 取 ρ 乘正交阵，B、C 取正交列/行，
            并要求 cond(C·B) <= 10
    返回:
        C·B 满秩的 StateSpacePlant
    """
    if state_dim < channels:
        raise PlantError(f"状态维 {state_dim} 小于通道数 {channels}")
    if not 0.0 <= spectral_radius < 1.0:
        raise PlantError(f"谱半径须在 [0, 1) 内，得到 {spectral_radius}")
    rng = derive_rng(seed, "plant")
    for attempt in range(MAX_REDRAWS):
        if well_conditioned:
            a = spectral_radius * _orthogonal(rng, state_dim)
            b = _orthogonal(rng, state_dim)[:, :channels]
            c = _orthogonal(rng, state_dim)[:channels, :]
        else:
            a = rng.standard_normal((state_dim, state_dim))
            radius = spectral_radius_of(a)
            a = a * (spectral_radius / radius) if spectral_radius > 0 else np.zeros_like(a)
            b = rng.standard_normal((state_dim, channels))
            c = rng.standard_normal((channels, state_dim))
        first_block = c @ b
        if np.linalg.matrix_rank(first_block) < channels:
            continue
        if well_conditioned and np.linalg.cond(first_block) > 10.0:
            continue
        try:
            plant = StateSpacePlant(a, b, c)
        except PlantError:
            continue
        if attempt:
            logger.debug("随机对象 seed=%s 重抽 %d 次", seed, attempt)
        return plant
    raise PlantError(f"{MAX_REDRAWS} 次重抽后仍未得到满足条件的对象")


@dataclass(frozen=True)
class TwoLinkArmPlant:
    """
    水平面内两连杆机械臂(无重力)，质点位于连杆末端

    输出为两个关节角。inner_loop 为真时输入是关节角设定值，
    由内环 PD 控制器 τ = kp·(ū − q) − kd·q̇ 换算成力矩，这样对象开环稳定；
    为假时输入直接是关节力矩。控制周期内输入零阶保持，
    用经典四阶 Runge-Kutta 积分 substeps 个子步。
    """

    m1: float = 1.0
    m2: float = 1.0
    l1: float = 0.5
    l2: float = 0.5
    d1: float = 0.1
    d2: float = 0.1
    sample_time: float = 0.02
    substeps: int = 10
    inner_loop: bool = True
    kp: float = 20.0
    kd: float = 7.0

    def __post_init__(self):
        if min(self.m1, self.m2, self.l1, self.l2) <= 0:
            raise PlantError("质量和连杆长度必须为正")
        if min(self.d1, self.d2) < 0:
            raise PlantError("摩擦系数不能为负")
        if self.sample_time <= 0 or self.substeps < 1:
            raise PlantError("采样周期和子步数必须为正")
        if self.inner_loop and (self.kp <= 0 or self.kd <= 0):
            raise PlantError("内环增益必须为正")

    @property
    def channels(self):
        return 2

    def mass_matrix(self, q2):
        c2 = np.cos(q2)
        coupling = self.m2 * self.l1 * self.l2
        m11 = (self.m1 + self.m2) * self.l1 ** 2 + self.m2 * self.l2 ** 2 + 2.0 * coupling * c2
        m12 = self.m2 * self.l2 ** 2 + coupling * c2
        m22 = self.m2 * self.l2 ** 2
        return np.array([[m11, m12], [m12, m22]])

    def coriolis(self, state):
        _, q2, dq1, dq2 = state
        h = self.m2 * self.l1 * self.l2 * np.sin(q2)
        return np.array([-h * (2.0 * dq1 * dq2 + dq2 ** 2), h * dq1 ** 2])

    def applied_torque(self, state, command):
        """输入换算成的关节力矩"""
        if not self.inner_loop:
            return command
        return self.kp * (command - state[:2]) - self.kd * state[2:]

    def derivative(self, state, torque):
        velocity = state[2:]
        friction = np.array([self.d1, self.d2]) * velocity
        rhs = torque - self.coriolis(state) - friction
        acceleration = np.linalg.solve(self.mass_matrix(state[1]), rhs)
        return np.concatenate([velocity, acceleration])

    def closed_loop_derivative(self, state, command):
        return self.derivative(state, self.applied_torque(state, command))

    def rk4_step(self, state, command, h):
        k1 = self.closed_loop_derivative(state, command)
        k2 = self.closed_loop_derivative(state + 0.5 * h * k1, command)
        k3 = self.closed_loop_derivative(state + 0.5 * h * k2, command)
        k4 = self.closed_loop_derivative(state + h * k3, command)
        return state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def kinetic_energy(self, state):
        velocity = np.asarray(state, dtype=float)[2:]
        return 0.5 * float(velocity @ self.mass_matrix(state[1]) @ velocity)

    def simulate_states(self, u, initial_state=None):
        """
        返回 (N+1)×4 的状态序列 (q1, q2, dq1, dq2)，第 0 行为初始状态
        """
        if u.channels != self.channels:
            raise PlantError(f"两连杆机械臂需要 2 个输入，得到 {u.channels}")
        state = np.zeros(4) if initial_state is None else np.array(initial_state, dtype=float)
        h = self.sample_time / self.substeps
        commands = u.as_samples()
        states = np.empty((u.samples + 1, 4))
        states[0] = state
        for n in range(u.samples):
            for _ in range(self.substeps):
                state = self.rk4_step(state, commands[n], h)
            _check_finite(state, n + 1)
            states[n + 1] = state
        return states

    def simulate(self, u):
        states = self.simulate_states(u)
        return Trajectory(states[1:, :2].reshape(-1), self.channels)

    def true_operator(self, samples):
        """非线性对象没有精确的提升算子"""
        return None


@dataclass(frozen=True)
class NoiseModel:
    """
    零均值加性高斯测量噪声，sigma 可以是标量或逐通道数组

    第 j 次试验的噪声只由 (seed, j) 决定。
    """

    sigma: float = 1e-5
    seed: int = 0

    def sample(self, trial, channels, samples):
        sigma = np.broadcast_to(np.asarray(self.sigma, dtype=float), (channels,))
        if np.any(sigma < 0):
            raise PlantError("噪声标准差不能为负")
        rng = derive_rng(self.seed, "noise", trial)
        draws = rng.standard_normal((samples, channels)) * sigma[None, :]
        return Trajectory(draws.reshape(-1), channels)


def execute_trial(plant, u, noise=None, trial=0):
    """
    在零初始状态下施加 u 并测量 y，噪声在仿真之后叠加

    参数:
        plant: 具有 channels 与 simulate(u) 的对象
        u: 输入轨迹
        noise: NoiseModel 或 None
        trial: 试验序号，用于选择噪声流
    """
    if u.channels != plant.channels:
        raise PlantError(f"对象有 {plant.channels} 个通道，输入有 {u.channels} 个")
    y = plant.simulate(u)
    if noise is not None and np.any(np.asarray(noise.sigma) > 0):
        y = y + noise.sample(trial, u.channels, u.samples)
    return y


def _sine(channels, samples, amplitude):
    phase = 2.0 * np.pi * np.arange(samples) / samples
    offsets = np.arange(channels) * np.pi / 2.0
    values = np.sin(phase[:, None] + offsets[None, :]) - np.sin(offsets)[None, :]
    return amplitude * values


def _multisine(channels, samples, amplitude):
    phase = 2.0 * np.pi * np.arange(samples) / samples
    values = np.zeros((samples, channels))
    for harmonic in (1, 2, 3):
        offsets = np.arange(channels) * np.pi / (2.0 * harmonic) + harmonic
        wave = np.sin(harmonic * phase[:, None] + offsets[None, :]) - np.sin(offsets)[None, :]
        values += wave / harmonic
    return amplitude * values


def _smooth(channels, samples, amplitude):
    phase = 2.0 * np.pi * np.arange(samples) / samples
    signs = np.where(np.arange(channels) % 2, -1.0, 1.0)
    harmonics = np.arange(channels) % 2 + 1
    return amplitude * 0.5 * (1.0 - np.cos(phase[:, None] * harmonics[None, :])) * signs[None, :]


def _step(channels, samples, amplitude):
    levels = np.array([0.0, 1.0, -0.5, 0.5])
    segment = np.minimum(np.arange(samples) * 4 // samples, 3)
    if samples > 1:
        segment[1:] = np.maximum(segment[1:], 1)
    signs = np.where(np.arange(channels) % 2, -1.0, 1.0)
    return amplitude * levels[segment][:, None] * signs[None, :]


REFERENCE_PRESETS = {
    "zero": lambda channels, samples, amplitude: np.zeros((samples, channels)),
    "sine": _sine,
    "multisine": _multisine,
    "smooth": _smooth,
    "step": _step,
}


def reference_library(name, channels, samples, amplitude=1.0):
    """
    按名称生成参考轨迹，所有预设在 n = 1 处为零

    参数:
        name: zero / sine / multisine / smooth / step
        channels: 通道数 O
        samples: 采样数 N
        amplitude: 幅值
    """
    try:
        builder = REFERENCE_PRESETS[name]
    except KeyError:
        raise UnknownPresetError(
            f"未知的参考轨迹 '{name}'，可选: {', '.join(sorted(REFERENCE_PRESETS))}") from None
    values = builder(channels, samples, float(amplitude))
    values[0] = 0.0
    return Trajectory.from_samples(values)


PLANT_PRESETS = ("random_lti", "well_conditioned_lti", "two_link_arm")


def make_plant(name, channels, seed, spectral_radius=0.9, state_dim=None,
               well_conditioned=False, sample_time=0.02, inner_loop=True):
    """按名称构造被控对象，配置层使用"""
    if name in ("random_lti", "well_conditioned_lti"):
        return random_stable_plant(
            channels,
            state_dim if state_dim is not None else 2 * channels,
            seed,
            spectral_radius=spectral_radius,
            well_conditioned=well_conditioned or name == "well_conditioned_lti",
        )
    if name == "two_link_arm":
        if channels != 2:
            raise PlantError(f"两连杆机械臂只有 2 个通道，配置为 {channels}")
        return TwoLinkArmPlant(sample_time=sample_time, inner_loop=inner_loop)
    raise UnknownPresetError(
        f"未知的被控对象 '{name}'，可选: {', '.join(PLANT_PRESETS)}")
