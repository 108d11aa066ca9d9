"""
工具模块，包含文件格式读写、运行配置、速度统计、日志和对齐图像工具
"""
