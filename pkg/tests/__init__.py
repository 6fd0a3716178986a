#!/usr/bin/env python
# -*- coding: utf-8 -*-

"""
双重迭代学习控制测试模块

包含提升代数、增益设计、学习循环、被控对象、校验工具和命令行的单元测试。
"""

__version__ = "1.0.0"
