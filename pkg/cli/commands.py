"""
命令行入口
gen-corpus / train / synthesize / dump-alignment / selfcheck / experiment
异常按类型映射为退出码：0 成功，1 自检失败，2 用户或输入错误，3 数值中止
"""
import argparse
import logging
import os
from typing import List, Optional, Tuple

import numpy as np

import config
from errors import NumericalError, TrainingHalted, VaenarError
from training.corpus import generate_corpus, text_to_ids
from training.diagnostics import alignment_diagnostics
from training.experiments import (
    causal_mask_ablation, compare_reduction_factors, format_comparison_table, mask_ordering_holds,
    reduction_ordering_holds,
)
from training.trainer import Trainer, load_model
from utils.file_utils import (
    read_corpus, write_alignment_csv, write_corpus, write_spectrogram, write_text_file,
)
from utils.image_utils import save_alignment_image
from utils.run_config import RunConfig, RunConfigManager
from utils.speed_tracker import SpeedTracker

from .selfcheck import CHECKS, run_checks

logger = logging.getLogger(__name__)


def _add_config_args(parser: argparse.ArgumentParser):
    parser.add_argument('--config', help="key = value 配置文件")
    parser.add_argument('--preset', help="基础预设名称（desk、tiny、full_scale、rf5 等）")


def _load_config(args) -> Tuple[RunConfig, str]:
    """先载入预设，再覆盖配置文件；返回 (配置, 需要回写的原始文本)"""
    manager = RunConfigManager()
    base = manager.load_preset(args.preset) if args.preset else RunConfig()
    if args.config:
        return manager.load(args.config, base)
    return base, (f"preset = {args.preset}\n" if args.preset else "")


def cmd_gen_corpus(args) -> int:
    run_cfg, _ = _load_config(args)
    utterances = generate_corpus(run_cfg.corpus_spec())
    ok, message = write_corpus(args.out, utterances)
    if not ok:
        print(f"错误: {message}")
        return config.EXIT_USER_ERROR
    print(f"已生成 {len(utterances)} 条语句: {args.out}")
    return config.EXIT_OK


def cmd_train(args) -> int:
    run_cfg, raw_text = _load_config(args)
    if args.epochs is not None:
        run_cfg = run_cfg.replace(epochs=args.epochs)
    if args.no_progress:
        run_cfg = run_cfg.replace(show_progress=False)
    corpus = read_corpus(args.corpus)
    os.makedirs(args.out, exist_ok=True)
    ok, message = write_text_file(os.path.join(args.out, config.CONFIG_ECHO_FILE), raw_text)
    if not ok:
        print(f"错误: {message}")
        return config.EXIT_USER_ERROR

    trainer = Trainer(run_cfg, corpus, args.out)
    if args.resume:
        trainer.resume(args.resume)
    try:
        result = trainer.run()
    except TrainingHalted as e:
        print(f"训练中止: {e}")
        print(f"最后一个正常的检查点: {e.last_good_checkpoint}")
        return config.EXIT_NUMERICAL_HALT
    last = result.rows[-1] if result.rows else None
    print(f"训练完成，共 {len(result.rows)} 轮，最终检查点: {result.final_checkpoint}")
    if last is not None:
        print(f"最终损失 {last.total:.5f}，对角性 {last.diagonality:.3f}，单调性 {last.monotonicity:.3f}")
    return config.EXIT_OK


def _synthesize(args, runs: int = 1):
    model, run_cfg = load_model(args.checkpoint)
    char_ids = text_to_ids(args.text)
    bias = args.length_bias if args.length_bias is not None else max(0, run_cfg.length_bias_frames)
    tracker = SpeedTracker(window=max(1, runs))
    result = None
    for _ in range(runs):
        rng = np.random.default_rng(args.seed)
        tracker.start()
        result = model.synthesize(char_ids, length_bias_frames=bias, noise_mode=args.noise, rng=rng)
        tracker.stop(result.n_frames)
    return result, tracker


def cmd_synthesize(args) -> int:
    if args.runs < 1:
        print("错误: --runs 必须 >= 1")
        return config.EXIT_USER_ERROR
    result, tracker = _synthesize(args, args.runs)
    ok, message = write_spectrogram(args.out, result.spectrogram)
    if not ok:
        print(f"错误: {message}")
        return config.EXIT_USER_ERROR
    speed, _ = tracker.get_current_speed()
    print(f"预测长度: {result.predicted_length:.2f} 帧")
    print(f"实际长度: {result.n_frames} 帧 (r={result.r})")
    print(f"耗时: {tracker.mean_elapsed():.4f} 秒（{args.runs} 次平均）")
    print(f"速度: {speed:.1f} 帧/秒，实时率: {tracker.real_time_factor():.3e}")
    return config.EXIT_OK


def cmd_dump_alignment(args) -> int:
    result, _ = _synthesize(args)
    os.makedirs(args.out, exist_ok=True)
    for index, weights in enumerate(result.alignments):
        matrix = weights.head_average()
        ok, message = write_alignment_csv(os.path.join(args.out, f"block_{index}.csv"), matrix)
        if not ok:
            print(f"错误: {message}")
            return config.EXIT_USER_ERROR
        if args.png:
            save_alignment_image(matrix, os.path.join(args.out, f"block_{index}.png"))
    diag = alignment_diagnostics(result.alignments[-1])
    summary = f"diagonality={diag.diagonality:.6f} monotonicity={diag.monotonicity:.6f}"
    write_text_file(os.path.join(args.out, 'diagnostics.txt'), summary + '\n')
    print(summary)
    return config.EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_checks(args.only)
    for item in results:
        print(item.line())
    return config.EXIT_OK if all(r.passed for r in results) else config.EXIT_CHECK_FAILED


def cmd_experiment(args) -> int:
    run_cfg, _ = _load_config(args)
    run_cfg = run_cfg.replace(show_progress=False)
    corpus = read_corpus(args.corpus) if args.corpus else generate_corpus(run_cfg.corpus_spec())
    if args.kind == 'reduction':
        outcomes = compare_reduction_factors(run_cfg, corpus, args.out, epochs=args.epochs)
        holds = reduction_ordering_holds(outcomes)
        claim = "RF5 <= RF4 <= RF3 达到对角性阈值所需轮数"
    else:
        outcomes = causal_mask_ablation(run_cfg, corpus, args.out, epochs=args.epochs)
        holds = mask_ordering_holds(outcomes)
        claim = "带掩码模型单调性 >= 不带掩码模型"
    print(format_comparison_table(outcomes))
    print(f"{claim}: {'成立' if holds else '不成立'}")
    return config.EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='vaenar', description="VAENAR 非自回归文本到频谱（桌面规模）")
    parser.add_argument('-v', '--verbose', action='store_true', help="输出调试日志")
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-corpus', help="生成合成语料")
    _add_config_args(p)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser('train', help="训练模型")
    _add_config_args(p)
    p.add_argument('--corpus', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--resume', help="从检查点续训")
    p.add_argument('--epochs', type=int, help="覆盖配置中的总轮数")
    p.add_argument('--no-progress', action='store_true', help="不显示进度条")
    p.set_defaults(func=cmd_train)

    for name, func, help_text in (('synthesize', cmd_synthesize, "合成频谱"),
                                  ('dump-alignment', cmd_dump_alignment, "导出注意力对齐")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--checkpoint', required=True)
        p.add_argument('--text', required=True)
        p.add_argument('--out', required=True)
        p.add_argument('--length-bias', type=int, default=None)
        p.add_argument('--noise', choices=('zeros', 'sample'), default='zeros')
        p.add_argument('--seed', type=int, default=0)
        p.set_defaults(func=func)
        if name == 'synthesize':
            p.add_argument('--runs', type=int, default=1, help="重复合成次数，用于计时")
        else:
            p.add_argument('--png', action='store_true', help="同时输出灰度热力图")

    p = sub.add_parser('selfcheck', help="运行数值自检")
    p.add_argument('--only', action='append', choices=list(CHECKS), help="只运行指定检查（可重复）")
    p.set_defaults(func=cmd_selfcheck)

    p = sub.add_parser('experiment', help="运行缩放实验")
    _add_config_args(p)
    p.add_argument('--kind', choices=('reduction', 'mask'), required=True)
    p.add_argument('--corpus', help="语料目录，默认按配置生成")
    p.add_argument('--out', required=True)
    p.add_argument('--epochs', type=int)
    p.set_defaults(func=cmd_experiment)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """
    解析参数并执行命令

    Args:
        argv: 命令行参数（不含程序名）

    Returns:
        退出码
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return config.EXIT_OK if e.code == 0 else config.EXIT_USER_ERROR
    try:
        return args.func(args)
    except TrainingHalted as e:
        print(f"训练中止: {e}")
        return config.EXIT_NUMERICAL_HALT
    except NumericalError as e:
        print(f"数值错误: {e}")
        return config.EXIT_NUMERICAL_HALT
    except VaenarError as e:
        print(f"错误: {e}")
        return config.EXIT_USER_ERROR
    except OSError as e:
        print(f"错误: {e}")
        return config.EXIT_USER_ERROR
