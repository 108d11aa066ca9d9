"""
VAENAR桌面版的主程序入口
"""
import sys

from cli.commands import run
from utils.log_utils import setup_logging


def main(argv=None) -> int:
    """主函数"""
    argv = sys.argv[1:] if argv is None else argv
    setup_logging(verbose='-v' in argv or '--verbose' in argv)
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
