# app/services/metrics.py

"""
Estimadores de entropia (Shannon e min-entropia sobre símbolos de 8 bits)
e visibilidade. Estimadores plug-in, sem correção de viés.
"""

from dataclasses import dataclass, field

import numpy as np

from app.exceptions import InsufficientData


@dataclass
class ByteHistogram:
    """Contagem dos 256 valores de byte. Histogramas somam (merge)."""
    counts: np.ndarray = field(default_factory=lambda: np.zeros(256, dtype=np.int64))

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (256,):
            raise ValueError(f"esperado 256 contagens, recebido {self.counts.shape}")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_bytes(cls, data) -> "ByteHistogram":
        arr = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
        return cls(np.bincount(arr.astype(np.uint8, copy=False), minlength=256))

    def merge(self, other: "ByteHistogram") -> "ByteHistogram":
        return ByteHistogram(self.counts + other.counts)

    def _probabilities(self) -> np.ndarray:
        total = self.total
        if total <= 0:
            raise InsufficientData("histograma vazio")
        return self.counts / total


def shannon_entropy(h: ByteHistogram) -> float:
    """−Σ p_i log₂ p_i em bits/byte; termos com p_i = 0 contribuem 0."""
    p = h._probabilities()
    p = p[p > 0]
    return float(max(0.0, -(p * np.log2(p)).sum()))


def min_entropy(h: ByteHistogram) -> float:
    """−log₂(max p_i)."""
    p = h._probabilities()
    return float(max(0.0, -np.log2(p.max())))


def visibility(n_early: int, n_late: int) -> float:
    """|n_early − n_late| / (n_early + n_late)."""
    total = n_early + n_late
    if total <= 0:
        raise InsufficientData("visibilidade indefinida: nenhuma contagem")
    return abs(n_early - n_late) / total


# ============================================================================
# HELPERS DE BITS
# ============================================================================

def bits_to_bytes(bits: np.ndarray) -> np.ndarray:
    """Empacota bits MSB-first; bits finais que não fecham um byte são descartados."""
    bits = np.asarray(bits, dtype=np.uint8)
    usable = bits.size - bits.size % 8
    return np.packbits(bits[:usable])


def bytes_to_bits(data) -> np.ndarray:
    arr = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data
    return np.unpackbits(arr.astype(np.uint8, copy=False))


def entropy_of_bits(bits: np.ndarray) -> float:
    """Entropia de Shannon dos bytes formados pelos bits; 0.0 se não há byte completo."""
    packed = bits_to_bytes(bits)
    if packed.size == 0:
        return 0.0
    return shannon_entropy(ByteHistogram.from_bytes(packed))
