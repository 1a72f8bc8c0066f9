import io

import pytest
from hypothesis import given, settings, strategies as st

from app.exceptions import BadMagic, ChecksumFailure, FrameError, LengthMismatch, Truncated, UnsupportedVersion
from app.models import StateTag
from app.services.acquisition import BLOCK_BYTES, RawBlock
from app.services.blockstream import (
    FRAME_SIZE,
    FrameReader,
    FrameWriter,
    decode_frame,
    encode_frame,
    read_frames,
    write_frames,
    write_payloads,
)


def make_block(index: int, fill: int = 0x5A, tag: StateTag = StateTag.OMEGA) -> RawBlock:
    payload = bytes((fill + i) % 256 for i in range(BLOCK_BYTES))
    return RawBlock.from_payload(index, payload, tag)


BLOCK = make_block(7, tag=StateTag.PSI)
FRAME = encode_frame(BLOCK)


def test_frame_length_and_header():
    assert len(FRAME) == 32_790
    assert FRAME_SIZE == 32_790
    assert FRAME[:4] == b"SQRN"
    assert FRAME[4] == 0x01
    assert int.from_bytes(FRAME[5:13], "little") == 7
    assert FRAME[13] == int(StateTag.PSI)
    assert int.from_bytes(FRAME[14:18], "little") == BLOCK_BYTES


def test_decode_rebuilds_block():
    decoded = decode_frame(FRAME)
    assert decoded == BLOCK
    assert decoded.state_tag is StateTag.PSI
    assert decoded.early + decoded.late == 8 * BLOCK_BYTES


def test_bad_magic():
    with pytest.raises(BadMagic):
        decode_frame(b"XQRN" + FRAME[4:])


def test_unsupported_version():
    with pytest.raises(UnsupportedVersion):
        decode_frame(FRAME[:4] + b"\x02" + FRAME[5:])


def test_wrong_payload_length():
    header = bytearray(FRAME[:18])
    header[14:18] = (100).to_bytes(4, "little")
    with pytest.raises(LengthMismatch):
        decode_frame(bytes(header) + FRAME[18:])


@pytest.mark.parametrize("size", [0, 10, 17, 18, 1000, FRAME_SIZE - 1])
def test_truncated_frames(size):
    with pytest.raises(Truncated):
        decode_frame(FRAME[:size])


def test_payload_flip_is_checksum_failure():
    corrupted = bytearray(FRAME)
    corrupted[100] ^= 0x04
    with pytest.raises(ChecksumFailure):
        decode_frame(bytes(corrupted))


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=8 * FRAME_SIZE - 1))
def test_any_single_bit_flip_is_detected(bit):
    corrupted = bytearray(FRAME)
    corrupted[bit // 8] ^= 0x80 >> (bit % 8)
    with pytest.raises(FrameError):
        decode_frame(bytes(corrupted))


# ============================================================================
# STREAM
# ============================================================================

def test_writer_and_reader_keep_order():
    blocks = [make_block(i, fill=i) for i in range(4)]
    sink = io.BytesIO()
    assert FrameWriter(sink).write_all(blocks) == 4
    sink.seek(0)
    received = list(FrameReader(sink, read_size=1000))
    assert [b.index for b in received] == [0, 1, 2, 3]
    assert [b.payload for b in received] == [b.payload for b in blocks]


def test_trailing_garbage_without_resync_raises():
    stream = io.BytesIO(FRAME + b"SQ")
    reader = FrameReader(stream)
    with pytest.raises(Truncated):
        list(reader)


def _corrupted_stream() -> bytes:
    frames = [bytearray(encode_frame(make_block(i, fill=3 * i))) for i in range(3)]
    frames[1][500] ^= 0xFF
    return b"".join(bytes(f) for f in frames)


def test_corrupted_frame_stops_reader_without_resync():
    with pytest.raises(ChecksumFailure):
        list(FrameReader(io.BytesIO(_corrupted_stream())))


def test_resync_skips_corrupted_frame():
    reader = FrameReader(io.BytesIO(_corrupted_stream()), resync=True)
    received = list(reader)
    assert [b.index for b in received] == [0, 2]
    assert len(reader.errors) == 1
    assert isinstance(reader.errors[0], ChecksumFailure)


def test_resync_skips_leading_noise():
    reader = FrameReader(io.BytesIO(b"\x00\x01junk" + FRAME), resync=True)
    assert [b.index for b in reader] == [7]


def test_file_helpers(tmp_path):
    blocks = [make_block(i, fill=i) for i in range(3)]
    frames = tmp_path / "blocks.sqrn"
    raw = tmp_path / "raw.bin"
    assert write_frames(blocks, frames) == 3
    assert frames.stat().st_size == 3 * FRAME_SIZE
    assert [b.payload for b in read_frames(frames)] == [b.payload for b in blocks]
    assert write_payloads(blocks, raw) == 3 * BLOCK_BYTES
    assert raw.read_bytes() == b"".join(b.payload for b in blocks)
