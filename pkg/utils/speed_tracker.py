"""
速度统计组件
记录合成/训练的耗时与产出帧数，计算帧速率和实时率
"""
import time
from collections import deque
from typing import Optional, Tuple

import config


class SpeedTracker:
    """速度统计器"""

    def __init__(self, window: int = 20):
        """
        初始化速度统计器

        Args:
            window: 最多保存最近多少次记录
        """
        # (耗时秒, 产出数量) 记录队列
        self.records = deque(maxlen=window)
        self.total_items = 0
        self._started: Optional[float] = None

    def start(self):
        self._started = time.perf_counter()

    def stop(self, count: int) -> float:
        """结束一次计时并记录产出数量，返回本次耗时"""
        if self._started is None:
            raise RuntimeError("计时尚未开始")
        elapsed = time.perf_counter() - self._started
        self._started = None
        self.record(elapsed, count)
        return elapsed

    def record(self, elapsed: float, count: int):
        """
        记录一次操作

        Args:
            elapsed: 耗时（秒）
            count: 产出数量（帧数或语句数）
        """
        self.records.append((float(elapsed), int(count)))
        self.total_items += int(count)

    def get_current_speed(self) -> Tuple[float, int]:
        """
        获取当前速度

        Returns:
            tuple: (窗口内每秒产出数, 总产出数)
        """
        elapsed = sum(e for e, _ in self.records)
        items = sum(c for _, c in self.records)
        speed = items / elapsed if elapsed > 0 else 0.0
        return speed, self.total_items

    def mean_elapsed(self) -> float:
        return sum(e for e, _ in self.records) / len(self.records) if self.records else 0.0

    def real_time_factor(self) -> float:
        """实时率：计算耗时 / 生成频谱对应的音频时长（帧时钟 22.05kHz、帧移256）"""
        elapsed = sum(e for e, _ in self.records)
        frames = sum(c for _, c in self.records)
        audio_seconds = frames * config.FRAME_SECONDS
        return elapsed / audio_seconds if audio_seconds > 0 else 0.0

    def reset_statistics(self):
        """重置统计数据"""
        self.records.clear()
        self.total_items = 0
