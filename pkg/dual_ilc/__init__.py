# MIMO 双重迭代学习控制模块
