"""
缩减因子退火调度
r 从较大的初始值开始，每 step_every 个轮次减1，直到下限
"""
from dataclasses import dataclass
from typing import Tuple

import config
from errors import ConfigError


@dataclass(frozen=True)
class RFSchedule:
    """缩减因子调度"""
    initial_r: int = 5
    step_every: int = 20
    floor_r: int = 2

    def __post_init__(self):
        if not self.initial_r >= self.floor_r >= 1:
            raise ConfigError(f"调度需满足 initial_r >= floor_r >= 1: {self.initial_r}, {self.floor_r}")
        if self.step_every < 1:
            raise ConfigError(f"step_every 必须 >= 1，实际为 {self.step_every}")

    @property
    def values(self) -> Tuple[int, ...]:
        """调度中会出现的全部 r（升序）"""
        return tuple(range(self.floor_r, self.initial_r + 1))

    @property
    def is_fixed(self) -> bool:
        return self.initial_r == self.floor_r

    @classmethod
    def full_scale(cls) -> 'RFSchedule':
        preset = config.FULL_SCALE_PRESET
        return cls(preset['rf_initial'], preset['rf_step_every'], preset['rf_floor'])

    @classmethod
    def fixed(cls, r: int) -> 'RFSchedule':
        return cls(initial_r=r, step_every=1, floor_r=r)


def r_at_epoch(sched: RFSchedule, epoch: int) -> int:
    """
    第 epoch 轮使用的缩减因子 max(floor_r, initial_r - epoch // step_every)

    Args:
        sched: 调度
        epoch: 轮次（从0开始）

    Returns:
        缩减因子
    """
    if epoch < 0:
        raise ConfigError(f"轮次必须 >= 0，实际为 {epoch}")
    return max(sched.floor_r, sched.initial_r - epoch // sched.step_every)
