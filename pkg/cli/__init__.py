"""
命令行模块，包含子命令和数值自检
"""
