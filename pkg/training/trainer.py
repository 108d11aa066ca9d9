"""
训练循环
每轮按调度设置 r，按种子打乱后逐小批量计算损失、反向传播、裁剪并做 Adam 更新；
每轮写指标日志，每 C 轮写检查点，数值发散时中止并保留最后一个正常的检查点
"""
import logging
import math
import os
from collections import OrderedDict
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import config
from engine import no_grad
from errors import ConfigError, NumericalError, TrainingHalted
from models.data_types import LossBreakdown
from models.vaenar import VaenarTTS
from utils.file_utils import CheckpointData, read_checkpoint, read_metrics, write_checkpoint, write_metrics
from utils.run_config import RunConfig, RunConfigManager
from utils.speed_tracker import SpeedTracker

from .corpus import Utterance, mean_frames, split_corpus
from .diagnostics import AlignmentDiagnostics, MetricsRow, alignment_diagnostics, average_diagnostics
from .optimizer import OptimizerState, adam_step, clip_grad_norm, collect_grads
from .schedule import r_at_epoch

logger = logging.getLogger(__name__)

# 验证集为空时用于诊断的训练语句数
FALLBACK_DIAGNOSTIC_SIZE = 4


@dataclass
class TrainingResult:
    """训练结果"""
    rows: List[MetricsRow]
    final_checkpoint: str
    best_checkpoint: Optional[str] = None
    epochs_run: int = 0


def resolve_length_bias(run_cfg: RunConfig, utterances: Sequence[Utterance]) -> RunConfig:
    """length_bias_frames 为 -1 时取语料平均帧数的10%"""
    if run_cfg.length_bias_frames >= 0:
        return run_cfg
    bias = int(round(0.1 * mean_frames(utterances)))
    logger.info(f"【训练】长度偏置自动设为 {bias} 帧")
    return run_cfg.replace(length_bias_frames=bias)


def restore_model(ckpt: CheckpointData) -> Tuple[VaenarTTS, RunConfig]:
    """按检查点中嵌入的配置重建模型并载入参数，模型处于推理模式"""
    run_cfg = RunConfigManager().parse_text(ckpt.config_text)
    model = VaenarTTS(run_cfg.model_config(), seed=run_cfg.seed)
    model.load_state_dict(ckpt.tensors)
    model.eval()
    return model, run_cfg


def load_model(path: str) -> Tuple[VaenarTTS, RunConfig]:
    return restore_model(read_checkpoint(path))


class Trainer:
    """训练器"""

    def __init__(self, run_cfg: RunConfig, corpus: Sequence[Utterance], out_dir: str,
                 show_progress: Optional[bool] = None):
        """
        初始化训练器

        Args:
            run_cfg: 运行配置
            corpus: 全部语句（内部按种子划分）
            out_dir: 输出目录（检查点与指标日志）
            show_progress: 是否显示进度条，默认取配置
        """
        if not corpus:
            raise ConfigError("训练语料为空")
        bins = {u.spectrogram.n_bins for u in corpus}
        if bins != {run_cfg.n_bins}:
            raise ConfigError(f"语料频带数 {sorted(bins)} 与配置 n_bins={run_cfg.n_bins} 不符")
        self.run_cfg = resolve_length_bias(run_cfg, corpus)
        self.out_dir = out_dir
        self.schedule = self.run_cfg.schedule()
        self.split = split_corpus(corpus, self.run_cfg.val_fraction, self.run_cfg.test_fraction, self.run_cfg.seed)
        self.model = VaenarTTS(self.run_cfg.model_config(), seed=self.run_cfg.seed)
        self.params = self.model.named_parameters()
        self.state: OptimizerState = self.run_cfg.optimizer_state()
        self.config_text = RunConfigManager.serialize(self.run_cfg)
        self.rows: List[MetricsRow] = []
        self.start_epoch = 0
        self.best_val = math.inf
        self.last_good_checkpoint: Optional[str] = None
        self.speed = SpeedTracker()
        self.show_progress = self.run_cfg.show_progress if show_progress is None else show_progress
        os.makedirs(out_dir, exist_ok=True)

    @property
    def diagnostic_set(self) -> List[Utterance]:
        return self.split.val or self.split.train[:FALLBACK_DIAGNOSTIC_SIZE]

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.out_dir, config.METRICS_FILE)

    def snapshot(self, epoch: int) -> CheckpointData:
        """当前参数、优化器状态和调度位置的副本"""
        names = [name for name, _ in self.params]
        return CheckpointData(
            tensors=OrderedDict((name, value.copy()) for name, value in self.model.state_dict().items()),
            learning_rate=self.state.learning_rate, beta1=self.state.beta1, beta2=self.state.beta2,
            eps=self.state.eps, step=self.state.step,
            first=OrderedDict((n, self.state.first[n].copy()) for n in names if n in self.state.first),
            second=OrderedDict((n, self.state.second[n].copy()) for n in names if n in self.state.second),
            initial_r=self.schedule.initial_r, step_every=self.schedule.step_every,
            floor_r=self.schedule.floor_r, epoch=epoch, best_val=self.best_val,
            config_text=self.config_text,
        )

    def save(self, name: str, epoch: int) -> str:
        path = os.path.join(self.out_dir, name)
        ok, message = write_checkpoint(path, self.snapshot(epoch))
        if not ok:
            raise OSError(message)
        return path

    def resume(self, checkpoint_path: str):
        """
        从检查点恢复参数、优化器状态和轮次，并截取已有指标日志

        Args:
            checkpoint_path: 检查点路径
        """
        ckpt = read_checkpoint(checkpoint_path)
        saved_cfg = RunConfigManager().parse_text(ckpt.config_text)
        if saved_cfg.model_config() != self.run_cfg.model_config():
            raise ConfigError("检查点的模型结构与当前配置不一致，无法续训")
        if (ckpt.initial_r, ckpt.step_every, ckpt.floor_r) != (
                self.schedule.initial_r, self.schedule.step_every, self.schedule.floor_r):
            raise ConfigError("检查点的缩减因子调度与当前配置不一致")
        self.model.load_state_dict(ckpt.tensors)
        self.state = OptimizerState(ckpt.learning_rate, ckpt.beta1, ckpt.beta2, ckpt.eps, ckpt.step,
                                    dict(ckpt.first), dict(ckpt.second))
        self.start_epoch = ckpt.epoch
        self.best_val = ckpt.best_val
        self.last_good_checkpoint = checkpoint_path
        self.rows = []
        if os.path.isfile(self.metrics_path):
            self.rows = [row for row in read_metrics(self.metrics_path) if row.epoch < self.start_epoch]
        if len(self.rows) != self.start_epoch:
            logger.warning(f"【训练】指标日志只有 {len(self.rows)} 行，检查点位于第 {self.start_epoch} 轮")
        logger.info(f"【训练】从 {checkpoint_path} 续训，已完成 {self.start_epoch} 轮")

    def _noise(self, rng: np.random.Generator, n_frames: int, r: int) -> np.ndarray:
        return rng.standard_normal((-(-n_frames // r), self.model.cfg.d_z))

    def train_epoch(self, epoch: int) -> LossBreakdown:
        """训练一轮，返回训练损失的逐项平均"""
        cfg = self.run_cfg
        r = r_at_epoch(self.schedule, epoch)
        rng = np.random.default_rng([cfg.seed, epoch])
        self.model.random_source.reseed([cfg.seed, epoch, 1])
        self.model.train()
        train = self.split.train
        order = rng.permutation(len(train))
        breakdowns = []
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            self.model.zero_grad()
            for utt in batch:
                noise = self._noise(rng, utt.n_frames, r)
                result = self.model.compute_loss(utt.spectrogram, utt.char_ids, noise, r, cfg.alpha, cfg.beta)
                result.total.backward()
                breakdowns.append(result.breakdown)
            grads = collect_grads(self.params, 1.0 / len(batch))
            grads, _ = clip_grad_norm(grads, cfg.grad_clip)
            adam_step(self.params, grads, self.state)
        self.model.zero_grad()
        return LossBreakdown.average(breakdowns)

    def validate(self, epoch: int) -> Tuple[LossBreakdown, AlignmentDiagnostics]:
        """在固定的验证批上以零噪声计算损失和最后一个解码块的对齐诊断"""
        cfg = self.run_cfg
        r = r_at_epoch(self.schedule, epoch)
        breakdowns, diagnostics = [], []
        with self.model.evaluating(), no_grad():
            for utt in self.diagnostic_set:
                noise = np.zeros((-(-utt.n_frames // r), self.model.cfg.d_z))
                result = self.model.compute_loss(utt.spectrogram, utt.char_ids, noise, r, cfg.alpha, cfg.beta)
                breakdowns.append(result.breakdown)
                last_block = result.decoded.alignments[-1]
                diagnostics.append(alignment_diagnostics(last_block, len(utt.char_ids), noise.shape[0], epoch))
        return LossBreakdown.average(breakdowns), average_diagnostics(diagnostics, epoch)

    def _halt(self, epoch: int, reason: str):
        write_metrics(self.metrics_path, self.rows)
        logger.error(f"【训练】第 {epoch} 轮数值发散，中止：{reason}")
        raise TrainingHalted(f"第 {epoch} 轮数值发散: {reason}", self.last_good_checkpoint, epoch)

    def run(self, epochs: Optional[int] = None) -> TrainingResult:
        """
        执行训练直到指定轮数

        Args:
            epochs: 总轮数（含已完成的轮数），默认取配置

        Returns:
            TrainingResult
        """
        total_epochs = epochs if epochs is not None else self.run_cfg.epochs
        if self.last_good_checkpoint is None:
            self.last_good_checkpoint = self.save(config.LAST_CHECKPOINT_NAME, self.start_epoch)
        best_path = os.path.join(self.out_dir, config.BEST_CHECKPOINT_NAME)
        logger.info(f"【训练】训练集 {len(self.split.train)} 条，验证集 {len(self.split.val)} 条，"
                    f"第 {self.start_epoch} 轮至第 {total_epochs} 轮")

        progress = tqdm(range(self.start_epoch, total_epochs), desc="训练", disable=not self.show_progress)
        for epoch in progress:
            r = r_at_epoch(self.schedule, epoch)
            try:
                self.speed.start()
                train_loss = self.train_epoch(epoch)
                val_loss, diag = self.validate(epoch)
                self.speed.stop(len(self.split.train))
            except NumericalError as e:
                self._halt(epoch, str(e))
            if not all(np.isfinite([train_loss.total, val_loss.total])):
                self._halt(epoch, "损失为 NaN/Inf")

            row = MetricsRow(epoch, r, train_loss.recon_mse, train_loss.kl, train_loss.length_loss,
                             train_loss.total, diag.diagonality, diag.monotonicity)
            self.rows.append(row)
            ok, message = write_metrics(self.metrics_path, self.rows)
            if not ok:
                raise OSError(message)

            completed = epoch + 1
            if val_loss.total < self.best_val:
                self.best_val = val_loss.total
                self.save(config.BEST_CHECKPOINT_NAME, completed)
            if completed % self.run_cfg.checkpoint_every == 0:
                self.last_good_checkpoint = self.save(config.LAST_CHECKPOINT_NAME, completed)

            speed, _ = self.speed.get_current_speed()
            progress.set_postfix(r=r, loss=f"{train_loss.total:.4f}", diag=f"{diag.diagonality:.2f}")
            logger.debug(f"【训练】第 {epoch} 轮 r={r} 总损失 {train_loss.total:.5f} 重建 {train_loss.recon_mse:.5f} "
                         f"KL {train_loss.kl:.3f} 长度 {train_loss.length_loss:.4f} "
                         f"对角性 {diag.diagonality:.3f} 单调性 {diag.monotonicity:.3f} ({speed:.1f} 句/秒)")

        final_path = self.save(config.FINAL_CHECKPOINT_NAME, total_epochs)
        self.last_good_checkpoint = self.save(config.LAST_CHECKPOINT_NAME, total_epochs)
        logger.info(f"【训练】完成，最终检查点 {final_path}")
        return TrainingResult(
            rows=list(self.rows),
            final_checkpoint=final_path,
            best_checkpoint=best_path if os.path.isfile(best_path) else None,
            epochs_run=total_epochs - self.start_epoch,
        )


def train(run_cfg: RunConfig, corpus: Sequence[Utterance], out_dir: str, resume_from: Optional[str] = None,
          show_progress: Optional[bool] = None) -> TrainingResult:
    """构建训练器并运行（可选续训）"""
    trainer = Trainer(run_cfg, corpus, out_dir, show_progress)
    if resume_from:
        trainer.resume(resume_from)
    return trainer.run()
