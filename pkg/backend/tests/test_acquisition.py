import numpy as np
import pytest

from app.exceptions import AcquisitionStalled, InsufficientData
from app.models import DeviceConfig, StateTag
from app.services.acquisition import (
    BLOCK_BITS,
    BLOCK_BYTES,
    BlockProducer,
    RawBlock,
    acquire_block,
    effective_bitrate,
    iter_blocks,
    run_acquisition,
)
from app.services.optics_model import PulseOutcome, derive_rng, simulate_pulses
from app.services.reports import BlockAnalyzer

SMALL_CHUNKS = DeviceConfig(acquisition_chunk_pulses=2**16)


def test_zero_phase_without_dark_counts_gives_all_zero_payload():
    cfg = DeviceConfig(dark_count_prob=0.0)
    block = acquire_block(cfg, 0.0, derive_rng(1))
    assert block.payload == bytes(BLOCK_BYTES)
    assert block.early == BLOCK_BITS
    assert block.late == 0


def test_balanced_block_statistics(device):
    block = acquire_block(device, 2.15, derive_rng(2))
    assert len(block.payload) == BLOCK_BYTES
    assert block.early + block.late == BLOCK_BITS
    assert block.early + block.late + block.double + block.empty == block.pulses
    assert block.shannon_entropy >= 7.97
    assert block.state_tag is StateTag.OMEGA


def test_payload_is_accepted_outcomes_in_order():
    cfg = SMALL_CHUNKS
    block = acquire_block(cfg, 2.15, derive_rng(5))

    # referência: mesmos lotes, aceitos em ordem, bit 1 para late
    rng = derive_rng(5)
    accepted = []
    total = 0
    while total < BLOCK_BITS:
        codes = simulate_pulses(cfg, 2.15, cfg.acquisition_chunk_pulses, rng)
        single = codes[(codes == PulseOutcome.EARLY_CLICK) | (codes == PulseOutcome.LATE_CLICK)]
        accepted.append(single)
        total += single.size
    bits = (np.concatenate(accepted)[:BLOCK_BITS] == PulseOutcome.LATE_CLICK).astype(np.uint8)
    assert block.payload == np.packbits(bits).tobytes()


def test_blocks_are_contiguous_and_counts_add_up(device):
    blocks = run_acquisition(device, 2.15, 4, derive_rng(9))
    assert [b.index for b in blocks] == [0, 1, 2, 3]
    assert blocks[0].start_pulse == 0
    for prev, nxt in zip(blocks, blocks[1:]):
        assert prev.end_pulse == nxt.start_pulse
    assert sum(b.pulses for b in blocks) == blocks[-1].end_pulse
    assert sum(sum(b.counts.values()) for b in blocks) == blocks[-1].end_pulse


def test_simulated_clock(device):
    block = acquire_block(device, 2.15, derive_rng(4), start_pulse=250_000)
    assert block.start_time_s(device) == pytest.approx(1.0)
    assert block.end_time_s(device) > 1.0


def test_run_acquisition_requires_a_block(device):
    with pytest.raises(InsufficientData):
        run_acquisition(device, 2.15, 0, derive_rng(1))


def test_watchdog_reports_partial_counts():
    cfg = DeviceConfig(mean_photon_number=0.0, max_pulses_per_block=2**18, acquisition_chunk_pulses=2**16)
    with pytest.raises(AcquisitionStalled) as info:
        acquire_block(cfg, 2.15, derive_rng(1))
    assert info.value.pulses == 2**18
    assert sum(info.value.counts.values()) == 2**18
    assert info.value.counts["early"] + info.value.counts["late"] < BLOCK_BITS


def test_raw_block_rejects_wrong_payload_length():
    with pytest.raises(ValueError):
        RawBlock.from_payload(0, b"\x00" * 10, StateTag.OMEGA)


def test_from_payload_recomputes_statistics():
    payload = b"\xff" * BLOCK_BYTES
    block = RawBlock.from_payload(3, payload, StateTag.PHI)
    assert block.late == BLOCK_BITS
    assert block.early == 0
    assert block.shannon_entropy == 0.0


# ============================================================================
# TAXA
# ============================================================================

def test_effective_bitrate_examples():
    cfg = DeviceConfig()
    block = RawBlock.from_payload(0, bytes(BLOCK_BYTES), StateTag.OMEGA, start_pulse=0, end_pulse=500_000)
    assert effective_bitrate([block], cfg) == pytest.approx(131_072)

    every_pulse = RawBlock.from_payload(0, bytes(BLOCK_BYTES), StateTag.OMEGA, start_pulse=0, end_pulse=BLOCK_BITS)
    assert effective_bitrate([every_pulse], cfg) == pytest.approx(cfg.pulse_rate_hz)


def test_effective_bitrate_needs_blocks(device):
    with pytest.raises(InsufficientData):
        effective_bitrate([], device)


def test_default_bitrate_within_band_of_bench_figure(device):
    blocks = run_acquisition(device, 2.15, 10, derive_rng(13))
    assert effective_bitrate(blocks, device) == pytest.approx(131_800, rel=0.2)


# ============================================================================
# PRODUTOR
# ============================================================================

def test_producer_preserves_order_and_content(device):
    schedule = [(2.15, StateTag.OMEGA)] * 5
    reference = list(iter_blocks(device, schedule, derive_rng(21)))
    with BlockProducer(lambda: iter_blocks(device, schedule, derive_rng(21)), depth=1) as produced:
        streamed = list(produced)
    assert [b.index for b in streamed] == list(range(5))
    assert [b.payload for b in streamed] == [b.payload for b in reference]
    assert [b.end_pulse for b in streamed] == [b.end_pulse for b in reference]


def test_producer_propagates_errors(device):
    def failing():
        yield acquire_block(device, 2.15, derive_rng(1))
        raise AcquisitionStalled("sem luz", counts={}, pulses=0)

    received = []
    with pytest.raises(AcquisitionStalled):
        with BlockProducer(failing, depth=2) as produced:
            for block in produced:
                received.append(block)
    assert len(received) == 1


@pytest.mark.slow
def test_stability_over_500_balanced_blocks(device):
    blocks = run_acquisition(device, 2.15, 500, derive_rng(36))
    entropies = np.array([b.shannon_entropy for b in blocks])
    assert 7.985 <= entropies.mean() <= 8.0
    assert entropies.std(ddof=1) <= 0.01
    assert effective_bitrate(blocks, device) == pytest.approx(131_800, rel=0.2)

    analyzer = BlockAnalyzer(device).extend(blocks)
    overall = analyzer.aggregate()["bitrate_bps"]
    for windows in (analyzer.stability(window_blocks=50), analyzer.stability(window_s=120.0)):
        assert sum(w["blocks"] for w in windows) == 500
        assert len(windows) >= 9
        starts = [w["start_time_s"] for w in windows]
        assert starts == sorted(starts)
        means = np.array([w["mean_entropy"] for w in windows])
        assert means.min() >= 7.99
        assert means.max() - means.min() <= 0.002
        for w in windows:
            assert w["mean_bitrate_bps"] == pytest.approx(overall, rel=0.01)
