# app/services/blockstream.py

"""
Frames binários para levar RawBlocks do produtor ao consumidor
(o papel do link Ethernet FPGA -> PC).

Layout (little-endian, normativo):

    magic        4 bytes   b"SQRN"
    version      1 byte    0x01
    block_index  8 bytes   uint64
    state_tag    1 byte    0=Omega 1=Psi 2=Phi
    payload_len  4 bytes   uint32 (32768 na v1)
    payload      payload_len bytes
    crc32        4 bytes   CRC-32 IEEE sobre todos os bytes anteriores

Contagens e entropia não vão para o fio: são recalculadas na recepção.
"""

import struct
import zlib
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Union

from app.exceptions import (
    BadMagic,
    ChecksumFailure,
    FrameError,
    LengthMismatch,
    Truncated,
    UnsupportedVersion,
)
from app.logging_config import get_logger
from app.models import StateTag
from app.services.acquisition import BLOCK_BYTES, RawBlock

logger = get_logger("blockstream")

MAGIC = b"SQRN"
VERSION = 0x01
HEADER = struct.Struct("<4sBQBI")
CRC = struct.Struct("<I")
FRAME_SIZE = HEADER.size + BLOCK_BYTES + CRC.size


def encode_frame(block: RawBlock) -> bytes:
    header = HEADER.pack(MAGIC, VERSION, block.index, int(block.state_tag), len(block.payload))
    body = header + block.payload
    return body + CRC.pack(zlib.crc32(body) & 0xFFFFFFFF)


def decode_frame(data: bytes) -> RawBlock:
    """
    Valida magic, versão, tamanho e CRC e reconstrói o bloco.
    Os bytes devem conter exatamente um frame.
    """
    if len(data) < HEADER.size:
        raise Truncated(f"cabeçalho incompleto: {len(data)} de {HEADER.size} bytes")
    magic, version, index, tag, payload_len = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"magic inválido: {magic!r}")
    if version != VERSION:
        raise UnsupportedVersion(f"versão {version} não suportada")
    if payload_len != BLOCK_BYTES:
        raise LengthMismatch(f"payload_len {payload_len} != {BLOCK_BYTES}")
    expected = HEADER.size + payload_len + CRC.size
    if len(data) < expected:
        raise Truncated(f"frame truncado: {len(data)} de {expected} bytes")
    if len(data) > expected:
        raise LengthMismatch(f"{len(data) - expected} bytes sobrando após o frame")

    body = data[: HEADER.size + payload_len]
    (crc_recv,) = CRC.unpack_from(data, HEADER.size + payload_len)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_recv:
        raise ChecksumFailure(f"CRC não confere no bloco {index}")
    try:
        state = StateTag(tag)
    except ValueError:
        raise FrameError(f"state_tag desconhecido: {tag}") from None
    return RawBlock.from_payload(index, body[HEADER.size:], state)


# ============================================================================
# TRANSPORTE
# ============================================================================

class FrameWriter:
    """Escreve frames num objeto binário (arquivo, pipe, stdout.buffer)."""

    def __init__(self, sink: BinaryIO):
        self._sink = sink
        self.frames_written = 0

    def write(self, block: RawBlock) -> None:
        self._sink.write(encode_frame(block))
        self.frames_written += 1

    def write_all(self, blocks: Iterable[RawBlock]) -> int:
        for block in blocks:
            self.write(block)
        self._sink.flush()
        return self.frames_written


class FrameReader:
    """
    Lê frames em sequência de um objeto binário.

    Com resync=True, um frame corrompido é registrado e pulado: o leitor
    procura o próximo magic a partir do byte seguinte ao magic ruim.
    """

    def __init__(self, source: BinaryIO, resync: bool = False, read_size: int = 1 << 16):
        self._source = source
        self._resync = resync
        self._read_size = read_size
        self._buffer = bytearray()
        self._eof = False
        self.errors: list[FrameError] = []

    def _fill(self, size: int) -> bool:
        while len(self._buffer) < size and not self._eof:
            chunk = self._source.read(self._read_size)
            if not chunk:
                self._eof = True
                break
            self._buffer.extend(chunk)
        return len(self._buffer) >= size

    def __iter__(self) -> Iterator[RawBlock]:
        while True:
            if not self._fill(1):
                return
            if self._resync:
                self._skip_to_magic()
                if not self._buffer:
                    return
            if not self._fill(HEADER.size):
                self._fail(Truncated(f"cabeçalho incompleto ({len(self._buffer)} bytes no fim do stream)"))
                return
            payload_len = HEADER.unpack_from(self._buffer)[4]
            size = HEADER.size + payload_len + CRC.size
            if payload_len != BLOCK_BYTES:
                size = min(size, FRAME_SIZE)
            complete = self._fill(size)
            frame = bytes(self._buffer[:size])
            try:
                block = decode_frame(frame)
            except FrameError as exc:
                if not complete:
                    self._fail(exc)
                    return
                self._fail(exc)
                # pula o magic atual e procura o próximo
                del self._buffer[:1]
                continue
            del self._buffer[:size]
            yield block

    def _skip_to_magic(self) -> None:
        while True:
            pos = self._buffer.find(MAGIC)
            if pos >= 0:
                del self._buffer[:pos]
                return
            # guarda os últimos bytes: o magic pode estar dividido entre leituras
            keep = len(MAGIC) - 1
            if len(self._buffer) > keep:
                del self._buffer[: len(self._buffer) - keep]
            if not self._fill(len(self._buffer) + 1):
                self._buffer.clear()
                return

    def _fail(self, exc: FrameError) -> None:
        if not self._resync:
            raise exc
        logger.warning("frame descartado: %s", exc)
        self.errors.append(exc)


def write_frames(blocks: Iterable[RawBlock], path: Union[str, Path]) -> int:
    with open(path, "wb") as fh:
        return FrameWriter(fh).write_all(blocks)


def read_frames(path: Union[str, Path], resync: bool = False) -> list[RawBlock]:
    with open(path, "rb") as fh:
        return list(FrameReader(fh, resync=resync))


def write_payloads(blocks: Iterable[RawBlock], path: Union[str, Path]) -> int:
    """Arquivo .bin só com os payloads concatenados, para suítes externas."""
    written = 0
    with open(path, "wb") as fh:
        for block in blocks:
            fh.write(block.payload)
            written += len(block.payload)
    return written
