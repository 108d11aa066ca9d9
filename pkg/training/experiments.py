"""
缩放实验
固定缩减因子的对齐收敛速度比较、因果掩码消融，以及单语句过拟合
"""
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from models.vaenar import VaenarTTS
from utils.run_config import RunConfig

from .corpus import Utterance
from .diagnostics import epochs_to_diagonality, ordering_key
from .optimizer import adam_step, clip_grad_norm, collect_grads
from .trainer import Trainer

logger = logging.getLogger(__name__)

DEFAULT_FACTORS = (5, 4, 3)


@dataclass
class ExperimentOutcome:
    """单次实验运行的摘要"""
    label: str
    epochs_to_target: Optional[int]
    final_diagonality: float
    final_monotonicity: float
    final_recon: float


def _run(label: str, run_cfg: RunConfig, corpus: Sequence[Utterance], out_dir: str,
         epochs: Optional[int]) -> ExperimentOutcome:
    trainer = Trainer(run_cfg, corpus, os.path.join(out_dir, label), show_progress=False)
    result = trainer.run(epochs)
    last = result.rows[-1]
    outcome = ExperimentOutcome(
        label=label,
        epochs_to_target=epochs_to_diagonality(result.rows),
        final_diagonality=last.diagonality,
        final_monotonicity=last.monotonicity,
        final_recon=last.recon,
    )
    logger.info(f"【实验】{label}: 达到对角性阈值轮数 {outcome.epochs_to_target}，"
                f"最终对角性 {last.diagonality:.3f}，单调性 {last.monotonicity:.3f}")
    return outcome


def compare_reduction_factors(base: RunConfig, corpus: Sequence[Utterance], out_dir: str,
                              factors: Sequence[int] = DEFAULT_FACTORS,
                              epochs: Optional[int] = None) -> Dict[int, ExperimentOutcome]:
    """
    以相同种子和预算分别用固定的 r 训练，比较对角性达到阈值所需轮数

    Args:
        base: 基础配置（调度字段会被覆盖）
        corpus: 语料
        out_dir: 输出目录，每个 r 一个子目录
        factors: 参与比较的缩减因子
        epochs: 每次运行的轮数，默认取配置

    Returns:
        r 到实验摘要的映射
    """
    outcomes = {}
    for r in factors:
        cfg = base.replace(rf_initial=r, rf_floor=r, rf_step_every=1)
        outcomes[r] = _run(f"rf{r}", cfg, corpus, out_dir, epochs)
    return outcomes


def causal_mask_ablation(base: RunConfig, corpus: Sequence[Utterance], out_dir: str,
                         epochs: Optional[int] = None) -> Dict[str, ExperimentOutcome]:
    """相同预算下分别训练带因果掩码和不带因果掩码的模型"""
    return {
        'masked': _run('masked', base.replace(causal_mask=True), corpus, out_dir, epochs),
        'unmasked': _run('unmasked', base.replace(causal_mask=False), corpus, out_dir, epochs),
    }


def reduction_ordering_holds(outcomes: Dict[int, ExperimentOutcome]) -> bool:
    """较大的 r 达到阈值所需轮数不多于较小的 r（允许相等）"""
    ordered = sorted(outcomes, reverse=True)
    keys = [ordering_key(outcomes[r].epochs_to_target) for r in ordered]
    return all(a <= b for a, b in zip(keys, keys[1:]))


def mask_ordering_holds(outcomes: Dict[str, ExperimentOutcome]) -> bool:
    return outcomes['masked'].final_monotonicity >= outcomes['unmasked'].final_monotonicity


def format_comparison_table(outcomes: Dict) -> str:
    """实验摘要表"""
    lines = [f"{'run':<10}{'epochs_to_0.5':>15}{'diagonality':>14}{'monotonicity':>14}{'recon':>12}"]
    for key in outcomes:
        o = outcomes[key]
        reached = '-' if o.epochs_to_target is None else str(o.epochs_to_target)
        lines.append(f"{o.label:<10}{reached:>15}{o.final_diagonality:>14.3f}"
                     f"{o.final_monotonicity:>14.3f}{o.final_recon:>12.5f}")
    return '\n'.join(lines)


@dataclass
class OverfitTrace:
    """单语句过拟合每一步的损失"""
    recon: List[float]
    total: List[float]

    def recon_drop(self) -> float:
        """首步与末步重建误差之比"""
        return self.recon[0] / max(self.recon[-1], 1e-300)


def overfit_single_utterance(run_cfg: RunConfig, utt: Utterance, steps: int = 200, r: Optional[int] = None,
                             learning_rate: Optional[float] = None) -> OverfitTrace:
    """
    在一条语句上反复训练，重参数化噪声只采样一次

    Args:
        run_cfg: 运行配置（模型结构、损失权重、种子）
        utt: 训练语句
        steps: 优化步数
        r: 缩减因子，默认取调度下限
        learning_rate: 覆盖配置中的学习率

    Returns:
        OverfitTrace，第 i 项为第 i 次更新前的损失
    """
    if learning_rate is not None:
        run_cfg = run_cfg.replace(learning_rate=learning_rate)
    r = r or run_cfg.rf_floor
    model = VaenarTTS(run_cfg.model_config(), seed=run_cfg.seed)
    model.random_source.reseed([run_cfg.seed, 0, 1])
    model.train()
    params = model.named_parameters()
    state = run_cfg.optimizer_state()
    noise = np.random.default_rng(run_cfg.seed).standard_normal((-(-utt.n_frames // r), model.cfg.d_z))
    trace = OverfitTrace([], [])
    for _ in range(steps):
        model.zero_grad()
        result = model.compute_loss(utt.spectrogram, utt.char_ids, noise, r, run_cfg.alpha, run_cfg.beta)
        result.total.backward()
        trace.recon.append(result.breakdown.recon_mse)
        trace.total.append(result.breakdown.total)
        grads, _ = clip_grad_norm(collect_grads(params), run_cfg.grad_clip)
        adam_step(params, grads, state)
    model.zero_grad()
    logger.info(f"【实验】过拟合 {steps} 步：重建误差 {trace.recon[0]:.5f} -> {trace.recon[-1]:.5f}")
    return trace


def decreases_over_window(values: Sequence[float], window: int, span: int) -> bool:
    """前 span 步内任意起点 t 都满足 values[t+window] < values[t]"""
    last_start = min(span, len(values) - 1 - window)
    if last_start < 0:
        return False
    return all(values[t + window] < values[t] for t in range(last_start + 1))
