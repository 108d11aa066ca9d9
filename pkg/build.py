"""
VAENAR桌面版命令行工具打包脚本
支持在uv环境或pip环境下运行，产物为带控制台的 onedir 目录和 zip 分发包
"""
import os
import sys
import shutil
import subprocess
import platform
import importlib.util
from typing import List

import config

PROJECT_PATH = os.path.abspath(os.path.dirname(__file__))


def check_environment() -> bool:
    """检查运行环境，确定是使用uv还是pip"""
    print("正在检查Python环境...")
    is_uv_env = os.path.exists(os.path.join(PROJECT_PATH, 'uv.lock'))
    if not is_uv_env:
        try:
            result = subprocess.run(['uv', '--version'], capture_output=True, text=True, check=False)
            is_uv_env = result.returncode == 0
        except FileNotFoundError:
            pass
    print(f"当前使用环境: {'uv' if is_uv_env else 'pip'}")
    return is_uv_env


def check_pyinstaller() -> bool:
    """检查PyInstaller是否已安装（可选依赖组 build）"""
    if importlib.util.find_spec("PyInstaller") is None:
        print("未安装PyInstaller，可使用 pip install .[build] 或 uv sync --extra build 安装")
        return False
    return True


def clean_build_folders():
    """清理旧的构建文件夹"""
    for folder in ('build', 'dist'):
        if os.path.exists(folder):
            print(f"清理文件夹: {folder}")
            shutil.rmtree(folder)


def build_pyinstaller_command(project_path: str = PROJECT_PATH) -> List[str]:
    """
    生成PyInstaller命令
    不使用 --add-data，resources 在构建后复制到应用根目录，避免被放入 _internal

    Args:
        project_path: 项目根目录

    Returns:
        命令参数列表
    """
    return [
        'pyinstaller',
        '--name', config.APP_NAME,
        '--clean',
        '--onedir',
        '--noconfirm',
        '--console',
        os.path.join(project_path, 'main.py'),
    ]


def build_app() -> bool:
    """构建命令行程序"""
    cmd = build_pyinstaller_command()
    print(f"执行命令: {' '.join(cmd)}")
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        print("构建失败，错误信息:")
        print(result.stderr)
        return False
    print("构建成功!")
    return True


def copy_resources(dist_dir: str = os.path.join('dist', config.APP_NAME)) -> bool:
    """复制符号表和预设到应用根目录"""
    dst_resources = os.path.join(dist_dir, 'resources')
    if not os.path.exists('resources'):
        print("错误: 未找到resources目录")
        return False
    if os.path.exists(dst_resources):
        shutil.rmtree(dst_resources)
    shutil.copytree('resources', dst_resources, ignore=shutil.ignore_patterns('__pycache__'))
    if os.path.exists('README.md'):
        shutil.copy2('README.md', os.path.join(dist_dir, 'README.md'))
    print("resources目录已复制到应用根目录")
    return True


def verify_build(dist_dir: str = os.path.join('dist', config.APP_NAME)) -> bool:
    """检查主程序、符号表和预设目录都已就位"""
    exe_name = f"{config.APP_NAME}.exe" if platform.system() == 'Windows' else config.APP_NAME
    required = [
        os.path.join(dist_dir, exe_name),
        os.path.join(dist_dir, 'resources', 'symbols.json'),
        os.path.join(dist_dir, 'resources', 'presets'),
    ]
    missing = [path for path in required if not os.path.exists(path)]
    for path in missing:
        print(f"错误: 未找到 {path}")
    return not missing


def prepare_output(output_dir: str = 'output') -> bool:
    """打包分发版本"""
    os.makedirs(output_dir, exist_ok=True)
    archive_name = os.path.join(output_dir, f'{config.APP_NAME}_v{config.APP_VERSION}')
    try:
        shutil.make_archive(archive_name, 'zip', 'dist', config.APP_NAME)
        print(f"分发版本已创建: {archive_name}.zip")
        return True
    except OSError as e:
        print(f"创建分发版本时出错: {e}")
        return False


def main():
    """主函数"""
    print(f"=== 开始打包 {config.APP_NAME} v{config.APP_VERSION} ===")
    check_environment()
    if not check_pyinstaller():
        sys.exit(1)
    clean_build_folders()
    if not build_app():
        sys.exit(1)
    if not copy_resources():
        print("警告: 资源文件复制失败")
    if not verify_build():
        print("错误: 构建验证失败")
        sys.exit(1)
    if not prepare_output():
        sys.exit(1)
    print(f"=== {config.APP_NAME} v{config.APP_VERSION} 打包成功! ===")


if __name__ == "__main__":
    main()
