#!/usr/bin/env python
# -*- coding: utf-8 -*-

import unittest
import sys
import os
import numpy as np

# 添加项目根目录到Python路径
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from dual_ilc.design_laws import (
    DesignKind,
    LearningGain,
    NormKind,
    WeightingSet,
    design_gilc,
    design_giml,
    design_ilc_gain,
    design_iml_gain,
    design_noilc,
    design_noiml,
    self_parametrize_gilc,
    self_parametrize_giml,
    self_parametrize_noilc,
    self_parametrize_noiml,
)
from dual_ilc.dual_learning import check_model_contraction
from dual_ilc.errors import DimensionError
from dual_ilc.lifted_core import ModelVector, ToeplitzOperator, Trajectory, lift_input
from dual_ilc.verify import densify, regularized_ls_oracle, spectral_norm


def scaled_identity(scale, channels, horizon):
    return ToeplitzOperator.identity(channels, horizon) * scale


def weighted_iteration_norm(gain, dense):
    """I − L·A 在步长权重度量下的谱范数"""
    size = gain.shape[0]
    iteration = np.eye(size) - gain.matrix @ dense
    root = np.sqrt(gain.step_weights)
    return spectral_norm(root[:, None] * iteration / root[None, :])


class TestLearningGainDesign(unittest.TestCase):
    """学习增益设计函数测试类"""

    def setUp(self):
        """测试前的设置"""
        self.rng = np.random.default_rng(42)

    def random_model(self, channels, horizon):
        return ToeplitzOperator(self.rng.standard_normal((horizon, channels, channels)))

    def random_input(self, channels, horizon):
        return Trajectory(self.rng.standard_normal(channels * horizon), channels)

    def test_gilc_identity(self):
        """测试 M = I、W = I 时 L = I"""
        gain = design_gilc(ToeplitzOperator.identity(2, 3), WeightingSet(W=np.ones(6)))
        np.testing.assert_array_equal(gain.matrix, np.eye(6))
        self.assertIs(gain.kind, DesignKind.GRADIENT)
        self.assertIsNone(gain.step_weights)

    def test_gilc_scaling(self):
        """测试 M = 2I 时 L = 2I"""
        gain = design_gilc(scaled_identity(2.0, 2, 3), WeightingSet(W=np.ones(6)))
        np.testing.assert_array_equal(gain.matrix, 2.0 * np.eye(6))

    def test_gilc_dense_oracle(self):
        """测试 G-ILC 增益与稠密公式一致"""
        model = self.random_model(2, 3)
        weights = self_parametrize_gilc(model)
        e = self.rng.standard_normal(6)
        expected = densify(model).T @ np.diag(weights.W) @ e
        np.testing.assert_allclose(design_gilc(model, weights).apply(e), expected, rtol=0, atol=1e-12)

    def test_gilc_size_mismatch(self):
        """测试权重尺寸不符时报错"""
        with self.assertRaises(DimensionError):
            design_gilc(ToeplitzOperator.identity(2, 3), WeightingSet(W=np.ones(5)))

    def test_noilc_identity(self):
        """测试 (I + I)⁻¹ 与 (I + 3I)⁻¹"""
        identity = ToeplitzOperator.identity(2, 2)
        half = design_noilc(identity, WeightingSet(Q=np.ones(4), S=np.ones(4)))
        np.testing.assert_allclose(half.matrix, 0.5 * np.eye(4), atol=1e-15)
        quarter = design_noilc(identity, WeightingSet(Q=np.ones(4), S=3.0 * np.ones(4)))
        np.testing.assert_allclose(quarter.matrix, 0.25 * np.eye(4), atol=1e-15)
        np.testing.assert_array_equal(quarter.step_weights, 3.0 * np.ones(4))

    def test_noilc_falls_back_to_w(self):
        """测试缺少 Q 时使用 W"""
        gain = design_noilc(ToeplitzOperator.identity(1, 2), WeightingSet(W=np.ones(2), S=np.ones(2)))
        np.testing.assert_allclose(gain.matrix, 0.5 * np.eye(2), atol=1e-15)

    def test_noilc_quadratic_oracle(self):
        """测试 NO-ILC 步长等于二次型最小化的解"""
        for channels, horizon in ((1, 4), (2, 3), (3, 5)):
            model = self.random_model(channels, horizon)
            weights = self_parametrize_noilc(model)
            e = self.rng.standard_normal(channels * horizon)
            dense = densify(model)
            hessian = dense.T @ np.diag(weights.Q) @ dense + np.diag(weights.S)
            expected = np.linalg.solve(hessian, dense.T @ np.diag(weights.Q) @ e)
            step = design_noilc(model, weights).apply(e)
            np.testing.assert_allclose(step, expected, rtol=1e-9, atol=1e-12)

    def test_giml_siso_example(self):
        """测试 u = [1, 0] 时 L̂ = Uᵀ = I"""
        lifted = lift_input(Trajectory([1.0, 0.0], 1))
        gain = design_giml(lifted, WeightingSet(W=np.ones(2)))
        np.testing.assert_array_equal(gain.matrix, np.eye(2))

    def test_giml_zero_input(self):
        """测试零激励时增益为零"""
        lifted = lift_input(Trajectory.zeros(2, 3))
        self.assertFalse(np.any(design_giml(lifted, self_parametrize_giml(lifted)).matrix))
        self.assertFalse(np.any(design_iml_gain(lifted, DesignKind.GRADIENT).matrix))

    def test_giml_dense_oracle(self):
        """测试 G-IML 增益与稠密公式一致"""
        lifted = lift_input(self.random_input(3, 4))
        weights = self_parametrize_giml(lifted)
        e = self.rng.standard_normal(12)
        gain = design_giml(lifted, weights)
        self.assertEqual(gain.shape, (36, 12))
        expected = densify(lifted).T @ np.diag(weights.W) @ e
        np.testing.assert_allclose(gain.apply(e), expected, rtol=0, atol=1e-12)

    def test_noiml_scalar(self):
        """测试 u=[1], W=S=1 时 L̂ = 0.5"""
        lifted = lift_input(Trajectory([1.0], 1))
        gain = design_noiml(lifted, WeightingSet(W=[1.0], S=[1.0]))
        np.testing.assert_allclose(gain.matrix, [[0.5]], atol=1e-15)

    def test_noiml_zero_input(self):
        """测试零输入时 NO-IML 增益为零"""
        lifted = lift_input(Trajectory.zeros(2, 2))
        gain = design_noiml(lifted, WeightingSet(W=np.ones(4), S=7.0 * np.ones(8)))
        self.assertFalse(np.any(gain.matrix))

    def test_noiml_push_through_matches_primal(self):
        """测试宽矩阵走推挤形式时与原始公式一致"""
        lifted = lift_input(self.random_input(2, 3))
        weights = self_parametrize_noiml(lifted)
        dense = densify(lifted)
        primal = np.linalg.solve(dense.T @ np.diag(weights.Q) @ dense + np.diag(weights.S),
                                 dense.T @ np.diag(weights.Q))
        np.testing.assert_allclose(design_noiml(lifted, weights).matrix, primal, rtol=1e-9, atol=1e-12)

    def test_noiml_regularized_oracle(self):
        """测试 m_j + L̂ê 等于正则化最小二乘的解"""
        for channels, horizon in ((1, 5), (2, 4), (3, 3)):
            u = self.random_input(channels, horizon)
            lifted = lift_input(u)
            weights = self_parametrize_noiml(lifted)
            m_prev = ModelVector(self.rng.standard_normal(channels ** 2 * horizon), channels)
            y = self.rng.standard_normal(channels * horizon)
            error = y - densify(lifted) @ m_prev.data
            updated = m_prev.data + design_noiml(lifted, weights).apply(error)
            oracle = regularized_ls_oracle(densify(lifted), weights.Q, weights.S, y, m_prev)
            np.testing.assert_allclose(updated, oracle.data, rtol=1e-9, atol=1e-12)

    def test_invalid_weights(self):
        """测试非正权重被拒绝"""
        with self.assertRaises(DimensionError):
            WeightingSet(W=[1.0, 0.0])
        with self.assertRaises(DimensionError):
            WeightingSet(S=[1.0, -2.0])
        with self.assertRaises(DimensionError):
            WeightingSet(Q=[np.inf])

    def test_gain_apply_size(self):
        """测试增益作用在错误长度的向量上时报错"""
        gain = LearningGain(np.eye(3))
        with self.assertRaises(DimensionError):
            gain.apply(np.ones(4))


class TestSelfParametrization(unittest.TestCase):
    """权重自参数化测试类"""

    def setUp(self):
        """测试前的设置"""
        self.rng = np.random.default_rng(7)

    def test_gilc_scaled_identity(self):
        """测试 M = cI 时每个权重为 1/c²"""
        weights = self_parametrize_gilc(scaled_identity(4.0, 2, 5))
        np.testing.assert_allclose(weights.W, np.full(10, 1.0 / 16.0), rtol=1e-14)

    def test_gilc_per_channel(self):
        """测试两通道行范数 2 和 0.5 时权重为 0.25 和 4"""
        blocks = np.zeros((3, 2, 2))
        blocks[0] = np.diag([2.0, 0.5])
        weights = self_parametrize_gilc(ToeplitzOperator(blocks))
        np.testing.assert_allclose(weights.W, [0.25, 4.0] * 3, rtol=1e-14)

    def test_gilc_zero_model_uses_floor(self):
        """测试零模型时范数取下限而不出现除零"""
        weights = self_parametrize_gilc(ToeplitzOperator.zeros(2, 2, 4), floor=1e-8)
        self.assertTrue(np.all(np.isfinite(weights.W)))
        np.testing.assert_allclose(weights.W, np.full(8, 1e16), rtol=1e-14)

    def test_giml_impulse(self):
        """测试单位脉冲输入的行范数为 1"""
        for channel in range(3):
            data = np.zeros(3 * 4)
            data[channel] = 1.0
            weights = self_parametrize_giml(lift_input(Trajectory(data, 3)))
            np.testing.assert_allclose(weights.W.reshape(4, 3)[:, channel], 1.0, rtol=1e-14)

    def test_giml_zero_input(self):
        """测试零输入时取下限"""
        weights = self_parametrize_giml(lift_input(Trajectory.zeros(2, 3)), floor=1e-6)
        np.testing.assert_allclose(weights.W, np.full(6, 1e12), rtol=1e-14)

    def test_giml_scaling_law(self):
        """测试输入乘 α 后权重除以 α²"""
        u = Trajectory(self.rng.standard_normal(2 * 6), 2)
        base = self_parametrize_giml(lift_input(u))
        scaled = self_parametrize_giml(lift_input(3.0 * u))
        np.testing.assert_allclose(scaled.W, base.W / 9.0, rtol=1e-12)

    def test_no_scaled_identity(self):
        """测试 M = cI 时 Q = 1/c、S = c，且 L = I/(2c)"""
        model = scaled_identity(2.5, 2, 3)
        weights = self_parametrize_noilc(model)
        np.testing.assert_allclose(weights.Q, np.full(6, 0.4), rtol=1e-14)
        np.testing.assert_allclose(weights.S, np.full(6, 2.5), rtol=1e-14)
        np.testing.assert_allclose(design_noilc(model, weights).matrix, np.eye(6) / 5.0, atol=1e-14)

    def test_no_zero_model(self):
        """测试零模型时 Q、S 取下限"""
        floor = 1e-8
        ilc = self_parametrize_noilc(ToeplitzOperator.zeros(2, 2, 3), floor=floor)
        np.testing.assert_allclose(ilc.Q, np.full(6, 1.0 / floor), rtol=1e-14)
        np.testing.assert_allclose(ilc.S, np.full(6, floor), rtol=1e-14)
        iml = self_parametrize_noiml(lift_input(Trajectory.zeros(2, 3)), floor=floor)
        self.assertEqual(iml.S.size, 12)
        np.testing.assert_allclose(iml.S, np.full(12, floor), rtol=1e-14)

    def test_noiml_parameter_channels(self):
        """测试 S 按参数通道 (k, l) 取 ‖T(u_l)‖ 并复制 N 次"""
        u = Trajectory(self.rng.standard_normal(2 * 5), 2)
        weights = self_parametrize_noiml(lift_input(u))
        per_channel = weights.S.reshape(5, 4)
        np.testing.assert_allclose(per_channel, np.tile(per_channel[0], (5, 1)), rtol=0)
        samples = u.as_samples()
        for l in range(2):
            toeplitz_l = np.tril(np.array([[samples[r - c, l] if r >= c else 0.0
                                            for c in range(5)] for r in range(5)]))
            expected = np.linalg.norm(toeplitz_l, 2)
            self.assertAlmostEqual(per_channel[0, l], expected, places=12)
            self.assertAlmostEqual(per_channel[0, 2 + l], expected, places=12)

    def test_frobenius_switch(self):
        """测试 Frobenius 范数开关"""
        weights = self_parametrize_gilc(scaled_identity(2.0, 2, 4), norm=NormKind.FROBENIUS)
        np.testing.assert_allclose(weights.W, np.full(8, 1.0 / (4.0 * 4)), rtol=1e-14)
        gain = design_ilc_gain(scaled_identity(2.0, 2, 4), DesignKind.NORM_OPTIMAL, norm="frobenius")
        self.assertEqual(gain.shape, (8, 8))

    def test_diagonal_replication(self):
        """测试权重按通道周期复制"""
        model = ToeplitzOperator(self.rng.standard_normal((4, 3, 3)))
        for weights in (self_parametrize_gilc(model).W, self_parametrize_noilc(model).Q,
                        self_parametrize_noilc(model).S):
            per_sample = weights.reshape(4, 3)
            np.testing.assert_array_equal(per_sample, np.tile(per_sample[0], (4, 1)))

    def test_gilc_scale_invariance(self):
        """测试 ‖MᵀW(M)M‖ 对 M 的正数缩放不变"""
        model = ToeplitzOperator(self.rng.standard_normal((5, 2, 2)))
        reference = None
        for alpha in (0.01, 1.0, 250.0):
            scaled = model * alpha
            dense = densify(scaled)
            value = spectral_norm(dense.T @ np.diag(self_parametrize_gilc(scaled).W) @ dense)
            if reference is None:
                reference = value
            self.assertAlmostEqual(value, reference, places=10)


class TestContractionProperties(unittest.TestCase):
    """范数最优设计的收缩性质测试类"""

    def setUp(self):
        """测试前的设置"""
        self.rng = np.random.default_rng(1234)

    def test_norm_optimal_contraction(self):
        """测试自参数化 NO-ILC 与 NO-IML 在步长度量下 ‖I − LA‖ <= 1"""
        for index in range(50):
            channels = 1 + index % 3
            horizon = 1 + index % 10
            model = ToeplitzOperator(self.rng.standard_normal((horizon, channels, channels)))
            ilc_gain = design_ilc_gain(model, DesignKind.NORM_OPTIMAL)
            self.assertLessEqual(weighted_iteration_norm(ilc_gain, densify(model)), 1.0 + 1e-9)

            u = Trajectory(self.rng.standard_normal(channels * horizon), channels)
            lifted = lift_input(u)
            iml_gain = design_iml_gain(lifted, DesignKind.NORM_OPTIMAL)
            check = check_model_contraction(iml_gain, lifted)
            self.assertTrue(check.within_bound)
            self.assertLessEqual(weighted_iteration_norm(iml_gain, densify(lifted)), 1.0 + 1e-9)

    def test_norm_optimal_contraction_random_weights(self):
        """测试任意正对角 Q、S 下的收缩性质"""
        for _ in range(50):
            channels = int(self.rng.integers(1, 4))
            horizon = int(self.rng.integers(1, 11))
            lifted = lift_input(Trajectory(self.rng.standard_normal(channels * horizon), channels))
            weights = WeightingSet(Q=self.rng.uniform(0.1, 10.0, channels * horizon),
                                   S=self.rng.uniform(0.1, 10.0, channels ** 2 * horizon))
            gain = design_noiml(lifted, weights)
            self.assertLessEqual(weighted_iteration_norm(gain, densify(lifted)), 1.0 + 1e-9)

    def test_gradient_iml_self_parametrized_contraction(self):
        """测试自参数化 G-IML 的欧氏收缩"""
        for _ in range(20):
            channels = int(self.rng.integers(1, 4))
            horizon = int(self.rng.integers(1, 11))
            lifted = lift_input(Trajectory(self.rng.standard_normal(channels * horizon), channels))
            check = check_model_contraction(design_iml_gain(lifted, DesignKind.GRADIENT), lifted)
            self.assertLessEqual(check.norm, 1.0 + 1e-9)

    def test_mimo_norm_floor(self):
        """测试 O >= 2 时 ‖I − L̂U‖ 不小于 1"""
        for index in range(50):
            channels = 2 + index % 2
            horizon = 1 + index % 10
            lifted = lift_input(Trajectory(self.rng.standard_normal(channels * horizon), channels))
            for kind in (DesignKind.NORM_OPTIMAL, DesignKind.GRADIENT):
                check = check_model_contraction(design_iml_gain(lifted, kind), lifted)
                self.assertGreaterEqual(check.norm, 1.0 - 1e-9)


if __name__ == '__main__':
    unittest.main()
