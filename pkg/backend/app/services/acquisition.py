# app/services/acquisition.py

"""
Laço de aquisição: dispara pulsos contra o modelo óptico, junta os bits
aceitos em blocos de 32 kB e contabiliza a taxa de bits.

O produtor é serial (a ordem dos pulsos importa). BlockProducer entrega
os blocos prontos a consumidores por uma fila limitada, preservando a ordem.
"""

import queue
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Optional, Sequence

import numpy as np

from app.exceptions import AcquisitionStalled, InsufficientData
from app.logging_config import get_logger
from app.models import DeviceConfig, StateTag
from app.services.metrics import ByteHistogram, shannon_entropy
from app.services.optics_model import PulseOutcome, simulate_pulses

logger = get_logger("acquisition")

BLOCK_BYTES = 32_768
BLOCK_BITS = 8 * BLOCK_BYTES


@dataclass(frozen=True)
class RawBlock:
    """
    Bloco de 32 kB de bits brutos (primeiro bit aceito = MSB do byte 0).

    double/empty e os índices de pulso não vão para o fio; por isso ficam
    fora da comparação. early/late e a entropia são recalculáveis do payload.
    """
    index: int
    payload: bytes
    state_tag: StateTag
    early: int
    late: int
    shannon_entropy: float
    double: int = field(default=0, compare=False)
    empty: int = field(default=0, compare=False)
    start_pulse: int = field(default=0, compare=False)
    end_pulse: int = field(default=0, compare=False)

    def __post_init__(self):
        if len(self.payload) != BLOCK_BYTES:
            raise ValueError(f"payload deve ter {BLOCK_BYTES} bytes, tem {len(self.payload)}")

    @property
    def pulses(self) -> int:
        return self.end_pulse - self.start_pulse

    @property
    def counts(self) -> dict[str, int]:
        return {"early": self.early, "late": self.late, "double": self.double, "empty": self.empty}

    def start_time_s(self, cfg: DeviceConfig) -> float:
        """Relógio simulado: índice de pulso / taxa de repetição."""
        return self.start_pulse / cfg.pulse_rate_hz

    def end_time_s(self, cfg: DeviceConfig) -> float:
        return self.end_pulse / cfg.pulse_rate_hz

    @classmethod
    def from_payload(
        cls,
        index: int,
        payload: bytes,
        state_tag: StateTag,
        **extra,
    ) -> "RawBlock":
        """Monta um bloco derivando early/late/entropia do próprio payload."""
        arr = np.frombuffer(payload, dtype=np.uint8)
        ones = int(np.unpackbits(arr).sum())
        return cls(
            index=index,
            payload=bytes(payload),
            state_tag=StateTag(state_tag),
            early=BLOCK_BITS - ones,
            late=ones,
            shannon_entropy=shannon_entropy(ByteHistogram.from_bytes(arr)),
            **extra,
        )


# ============================================================================
# AQUISIÇÃO
# ============================================================================

def acquire_block(
    cfg: DeviceConfig,
    v: float,
    rng: np.random.Generator,
    index: int = 0,
    start_pulse: int = 0,
    state_tag: StateTag = StateTag.OMEGA,
) -> RawBlock:
    """
    Simula pulsos em lotes de acquisition_chunk_pulses até fechar um bloco.
    O bloco termina exatamente no pulso que entrega o último bit; o resto
    do lote nunca foi "disparado" e não entra nas contagens.
    """
    bit_chunks: list[np.ndarray] = []
    tallies = np.zeros(4, dtype=np.int64)
    filled = 0
    pulses = 0

    while filled < BLOCK_BITS:
        if pulses >= cfg.max_pulses_per_block:
            counts = dict(zip(("empty", "early", "late", "double"), (int(x) for x in tallies)))
            raise AcquisitionStalled(
                f"bloco {index} não encheu em {pulses} pulsos ({filled}/{BLOCK_BITS} bits)",
                counts=counts,
                pulses=pulses,
            )
        chunk = min(cfg.acquisition_chunk_pulses, cfg.max_pulses_per_block - pulses)
        codes = simulate_pulses(cfg, v, chunk, rng)
        accepted = np.flatnonzero(
            (codes == PulseOutcome.EARLY_CLICK) | (codes == PulseOutcome.LATE_CLICK)
        )
        missing = BLOCK_BITS - filled
        if accepted.size >= missing:
            accepted = accepted[:missing]
            codes = codes[: accepted[-1] + 1]
        bit_chunks.append((codes[accepted] == PulseOutcome.LATE_CLICK).astype(np.uint8))
        tallies += np.bincount(codes, minlength=4)
        filled += accepted.size
        pulses += codes.size

    payload = np.packbits(np.concatenate(bit_chunks)).tobytes()
    block = RawBlock(
        index=index,
        payload=payload,
        state_tag=StateTag(state_tag),
        early=int(tallies[PulseOutcome.EARLY_CLICK]),
        late=int(tallies[PulseOutcome.LATE_CLICK]),
        shannon_entropy=shannon_entropy(ByteHistogram.from_bytes(payload)),
        double=int(tallies[PulseOutcome.DOUBLE_CLICK]),
        empty=int(tallies[PulseOutcome.NO_CLICK]),
        start_pulse=start_pulse,
        end_pulse=start_pulse + pulses,
    )
    logger.debug(
        "bloco %d (%s): %d pulsos, H=%.4f", index, block.state_tag.name, pulses, block.shannon_entropy
    )
    return block


def iter_blocks(
    cfg: DeviceConfig,
    schedule: Iterable[tuple[float, StateTag]],
    rng: np.random.Generator,
    start_index: int = 0,
    start_pulse: int = 0,
) -> Iterator[RawBlock]:
    """Um bloco por item do cronograma (tensão, estado); pulsos contíguos."""
    pulse = start_pulse
    for offset, (v, tag) in enumerate(schedule):
        block = acquire_block(cfg, v, rng, index=start_index + offset, start_pulse=pulse, state_tag=tag)
        pulse = block.end_pulse
        yield block


def run_acquisition(
    cfg: DeviceConfig,
    v: float,
    n_blocks: int,
    rng: np.random.Generator,
) -> list[RawBlock]:
    """n_blocks blocos Ω consecutivos na tensão v."""
    if n_blocks < 1:
        raise InsufficientData("n_blocks deve ser >= 1")
    blocks = list(iter_blocks(cfg, ((v, StateTag.OMEGA) for _ in range(n_blocks)), rng))
    logger.info(
        "aquisição: %d blocos em %d pulsos (%.1f kbps)",
        n_blocks,
        blocks[-1].end_pulse - blocks[0].start_pulse,
        effective_bitrate(blocks, cfg) / 1e3,
    )
    return blocks


def effective_bitrate(blocks: Sequence[RawBlock], cfg: DeviceConfig) -> float:
    """Bits aceitos / (pulsos / taxa de repetição)."""
    if not blocks:
        raise InsufficientData("nenhum bloco para calcular a taxa")
    pulses = sum(b.pulses for b in blocks)
    if pulses <= 0:
        raise InsufficientData("blocos sem contagem de pulsos")
    return len(blocks) * BLOCK_BITS * cfg.pulse_rate_hz / pulses


# ============================================================================
# PRODUTOR COM FILA LIMITADA
# ============================================================================

_DONE = object()


class BlockProducer:
    """
    Roda o produtor de blocos numa thread e entrega por uma fila limitada.
    Fila cheia bloqueia o produtor; a ordem dos blocos é preservada.

    Uso:
        with BlockProducer(lambda: iter_blocks(cfg, schedule, rng), depth=8) as blocks:
            for block in blocks:
                ...
    """

    def __init__(self, source: Callable[[], Iterable[RawBlock]], depth: int = 8):
        self._source = source
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._error: Optional[BaseException] = None
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, name="block-producer", daemon=True)

    def _run(self) -> None:
        try:
            for block in self._source():
                while not self._stop.is_set():
                    try:
                        self._queue.put(block, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
        except BaseException as exc:
            self._error = exc
        finally:
            self._put_done()

    def _put_done(self) -> None:
        while not self._stop.is_set():
            try:
                self._queue.put(_DONE, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self) -> Iterator[RawBlock]:
        while True:
            item = self._queue.get()
            if item is _DONE:
                if self._error is not None:
                    raise self._error
                return
            yield item

    def __enter__(self) -> "BlockProducer":
        self._thread.start()
        return self

    def __exit__(self, *exc_info) -> None:
        self._stop.set()
        self._thread.join(timeout=5)
