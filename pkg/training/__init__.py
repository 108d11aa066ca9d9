"""
训练模块，包含合成语料、缩减因子调度、Adam优化器、对齐诊断和训练循环
"""
