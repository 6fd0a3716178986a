#!/usr/bin/env python
# -*- coding: utf-8 -*-

import logging
import sys

from dual_ilc.harness import main as harness_main


def main():
    """主函数，启动双重迭代学习控制实验命令行"""
    # 日志只在入口处配置一次
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    # 运行命令并返回退出码
    sys.exit(harness_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
