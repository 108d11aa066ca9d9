import pytest

import config
from utils.speed_tracker import SpeedTracker


def test_speed_and_real_time_factor():
    tracker = SpeedTracker(window=3)
    tracker.record(0.5, 100)
    tracker.record(1.5, 300)
    speed, total = tracker.get_current_speed()
    assert speed == 200.0 and total == 400
    assert tracker.mean_elapsed() == 1.0
    assert tracker.real_time_factor() == pytest.approx(2.0 / (400 * config.FRAME_SECONDS))


def test_window_keeps_recent_records_only():
    tracker = SpeedTracker(window=2)
    for elapsed in (10.0, 1.0, 1.0):
        tracker.record(elapsed, 10)
    assert tracker.get_current_speed() == (10.0, 30)


def test_start_stop_and_reset():
    tracker = SpeedTracker()
    with pytest.raises(RuntimeError):
        tracker.stop(1)
    tracker.start()
    assert tracker.stop(5) >= 0.0
    tracker.reset_statistics()
    assert tracker.get_current_speed() == (0.0, 0)
    assert tracker.real_time_factor() == 0.0
