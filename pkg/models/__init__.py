"""
模型模块，包含网络基础层、注意力块、Glow先验和VAENAR网络
"""
