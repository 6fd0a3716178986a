#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""双重迭代学习控制库的异常层次"""


class DILCError(Exception):
    """本库所有异常的基类"""


class DimensionError(DILCError, ValueError):
    """维度(通道数、采样数、块形状)不匹配"""


class GainDesignError(DILCError, ArithmeticError):
    """学习增益设计失败，通常是正定分解失败"""


class PlantError(DILCError, ValueError):
    """被控对象构造参数无效(不稳定、形状错误等)"""


class PlantExecutionError(DILCError, RuntimeError):
    """仿真过程中出现非有限状态"""

    def __init__(self, message, sample=None):
        super().__init__(message)
        self.sample = sample


class DenseCapError(DILCError, MemoryError):
    """稠密化的矩阵超过了允许的尺寸上限"""


class UnknownPresetError(DILCError, KeyError):
    """未知的参考轨迹或被控对象预设名称"""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(DILCError, ValueError):
    """实验配置无效，field_path 指出出错的字段"""

    def __init__(self, field_path, message):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path
        self.message = message


class RunAbortedError(DILCError, RuntimeError):
    """试验循环被中断，records 保留已完成的试验"""

    def __init__(self, message, records, trial, cause=None):
        super().__init__(message)
        self.records = list(records)
        self.trial = trial
        self.cause = cause
