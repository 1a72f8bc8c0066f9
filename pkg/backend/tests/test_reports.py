import numpy as np
import pytest

from app.exceptions import ConfigError, InsufficientData
from app.models import StateTag
from app.services.acquisition import BLOCK_BITS, BLOCK_BYTES, RawBlock
from app.services.reports import STABILITY_COLUMNS, BlockAnalyzer, write_stability_csv

# dois pulsos por bit aceito: 125 kbps e ~2.097 s por bloco a 250 kHz
PULSES_PER_BLOCK = 2 * BLOCK_BITS


def clocked_blocks(rng, count):
    return [
        RawBlock.from_payload(
            i,
            rng.integers(0, 256, BLOCK_BYTES, dtype=np.uint8).tobytes(),
            StateTag.OMEGA,
            start_pulse=i * PULSES_PER_BLOCK,
            end_pulse=(i + 1) * PULSES_PER_BLOCK,
        )
        for i in range(count)
    ]


def test_rows_carry_bitrate_and_simulated_clock(rng, device):
    analyzer = BlockAnalyzer(device).extend(clocked_blocks(rng, 3))
    assert [r["bitrate_bps"] for r in analyzer.rows] == [125_000.0] * 3
    times = [r["start_time_s"] for r in analyzer.rows]
    assert times == pytest.approx([0.0, 2.097152, 4.194304])


def test_csv_has_start_time_column(tmp_path, rng, device):
    path = tmp_path / "analysis.csv"
    BlockAnalyzer(device).extend(clocked_blocks(rng, 2)).write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0].endswith(",bitrate_bps,start_time_s")
    assert lines[1].endswith(",0.000000")
    assert lines[2].endswith(",2.097152")
    assert lines[3].startswith("ALL,") and lines[3].endswith(",")


def test_frames_without_pulse_counts_have_no_clock(rng):
    analyzer = BlockAnalyzer()
    analyzer.add(RawBlock.from_payload(0, bytes(BLOCK_BYTES), StateTag.OMEGA))
    assert analyzer.rows[0]["start_time_s"] is None
    assert analyzer.rows[0]["bitrate_bps"] is None


# ============================================================================
# ESTABILIDADE
# ============================================================================

def test_stability_by_block_count(rng, device):
    windows = BlockAnalyzer(device).extend(clocked_blocks(rng, 10)).stability(window_blocks=4)
    assert [w["blocks"] for w in windows] == [4, 4, 2]
    assert [(w["first_index"], w["last_index"]) for w in windows] == [(0, 3), (4, 7), (8, 9)]
    assert windows[1]["start_time_s"] == pytest.approx(4 * 2.097152)
    for w in windows:
        assert w["mean_bitrate_bps"] == pytest.approx(125_000.0)
        assert w["std_bitrate_bps"] == pytest.approx(0.0)
        assert w["mean_entropy"] > 7.99


def test_stability_by_simulated_time(rng, device):
    windows = BlockAnalyzer(device).extend(clocked_blocks(rng, 10)).stability(window_s=5.0)
    assert [w["window"] for w in windows] == [0, 1, 2, 3]
    assert [w["blocks"] for w in windows] == [3, 2, 3, 2]
    assert sum(w["blocks"] for w in windows) == 10


def test_single_block_window_has_zero_spread(rng, device):
    windows = BlockAnalyzer(device).extend(clocked_blocks(rng, 2)).stability(window_blocks=1)
    assert [w["std_entropy"] for w in windows] == [0.0, 0.0]
    assert windows[0]["std_bitrate_bps"] is None


def test_time_windows_need_a_clock(rng):
    analyzer = BlockAnalyzer().extend(clocked_blocks(rng, 2))
    assert len(analyzer.stability(window_blocks=1)) == 2
    with pytest.raises(InsufficientData):
        analyzer.stability(window_s=60.0)


@pytest.mark.parametrize(
    "kwargs",
    [{}, {"window_blocks": 2, "window_s": 1.0}, {"window_blocks": 0}, {"window_s": 0.0}],
)
def test_stability_rejects_bad_windows(kwargs, device):
    with pytest.raises(ConfigError):
        BlockAnalyzer(device).stability(**kwargs)


def test_stability_csv(tmp_path, rng, device):
    windows = BlockAnalyzer(device).extend(clocked_blocks(rng, 5)).stability(window_blocks=2)
    path = tmp_path / "stability.csv"
    write_stability_csv(path, windows)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(STABILITY_COLUMNS)
    assert len(lines) == 1 + 3
    assert lines[3].startswith("2,4,4,")
