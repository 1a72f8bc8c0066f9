# app/services/extractor.py

"""
Extração de aleatoriedade por hashing de Toeplitz sobre GF(2).

Convenção de índices (normativa): a matriz é m x n e

    T[r][c] = seed_bits[r - c + n - 1]

ou seja, seed_bits[0..n-1] é a primeira linha invertida e
seed_bits[n..n+m-2] completa a primeira coluna abaixo de T[0][0].

Duas implementações:
  - extract_dense: oráculo força-bruta (matriz explícita, laço por subsequência)
  - extract: matriz montada com scipy.linalg.toeplitz e multiplicação em lote
    (BLAS em float32, exato porque as somas parciais cabem na mantissa)
"""

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import toeplitz

from app.exceptions import ExtractorError, InsufficientData, InsufficientEntropy
from app.logging_config import get_logger

logger = get_logger("extractor")

DEFAULT_N = 400
DEFAULT_EPSILON_LOG2 = 100.0
# linhas de entrada por multiplicação; limita a memória do lote
BATCH_ROWS = 1 << 15


def derive_output_length(n: int, h_min_per_byte: float, epsilon_log2: float = DEFAULT_EPSILON_LOG2) -> int:
    """
    m = floor(n·H_min/8 − 2·log₂(1/ε)).

    h_min_per_byte é a min-entropia medida em símbolos de 8 bits e é
    escalada por n/8. Para ε = 2^-100 o custo de segurança é 200 bits.
    """
    if not 0 < h_min_per_byte <= 8:
        raise ExtractorError(f"h_min por byte fora de (0, 8]: {h_min_per_byte}")
    if n <= 0 or n % 8:
        raise ExtractorError(f"n deve ser múltiplo positivo de 8: {n}")
    if epsilon_log2 <= 0:
        raise ExtractorError("epsilon_log2 deve ser positivo")
    m = math.floor(n * h_min_per_byte / 8.0 - 2.0 * epsilon_log2)
    if m <= 0:
        raise InsufficientEntropy(
            f"n={n}, H_min={h_min_per_byte:.4f}, ε=2^-{epsilon_log2:g} -> m={m}: sem saída segura"
        )
    return m


@dataclass(frozen=True, eq=False)
class ToeplitzExtractor:
    """Estado imutável do extrator: parâmetros e matriz m x n já montada."""
    n: int
    m: int
    seed_bits: np.ndarray = field(repr=False)
    epsilon_log2: float = DEFAULT_EPSILON_LOG2
    matrix: np.ndarray = field(repr=False, compare=False, default=None)

    @property
    def efficiency(self) -> float:
        return self.m / self.n

    @property
    def seed_digest(self) -> str:
        return hashlib.sha256(np.packbits(self.seed_bits).tobytes()).hexdigest()

    def output_bits_for(self, n_input_bits: int) -> int:
        return (n_input_bits // self.n) * self.m


def _as_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size and arr.max() > 1:
        raise ExtractorError("esperado um vetor de bits (0/1)")
    return arr


def toeplitz_matrix(seed_bits, n: int, m: int) -> np.ndarray:
    """Matriz m x n em uint8 seguindo a convenção de índices do módulo."""
    seed = _as_bits(seed_bits)
    first_col = seed[n - 1 : n + m - 1]
    first_row = seed[:n][::-1]
    return toeplitz(first_col, first_row).astype(np.uint8)


def build(seed_bits, n: int, m: int, epsilon_log2: float = DEFAULT_EPSILON_LOG2) -> ToeplitzExtractor:
    """Fixa a matriz a partir da semente; o extrator é reutilizado para todas as subsequências."""
    seed = _as_bits(seed_bits)
    if not 1 <= m < n:
        raise ExtractorError(f"é preciso 1 <= m < n (n={n}, m={m})")
    if seed.size != n + m - 1:
        raise ExtractorError(f"semente deve ter n+m-1 = {n + m - 1} bits, tem {seed.size}")
    seed = seed.copy()
    seed.setflags(write=False)
    matrix = toeplitz_matrix(seed, n, m)
    matrix.setflags(write=False)
    return ToeplitzExtractor(n=n, m=m, seed_bits=seed, epsilon_log2=epsilon_log2, matrix=matrix)


def seed_from_raw(raw_bits, n: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Consome os primeiros n+m-1 bits brutos como semente; eles não voltam como entrada."""
    raw = _as_bits(raw_bits)
    need = n + m - 1
    if raw.size < need:
        raise InsufficientData(f"semente precisa de {need} bits, há {raw.size}")
    return raw[:need].copy(), raw[need:]


def _subsequences(ext: ToeplitzExtractor, raw_bits) -> np.ndarray:
    raw = _as_bits(raw_bits)
    if raw.size < ext.n:
        raise InsufficientData(f"entrada com {raw.size} bits < n={ext.n}")
    usable = raw.size - raw.size % ext.n
    return raw[:usable].reshape(-1, ext.n)


def _multiply(matrix_t: np.ndarray, rows: np.ndarray) -> np.ndarray:
    products = rows.astype(np.float32) @ matrix_t
    return (products.astype(np.int64) & 1).astype(np.uint8)


def extract(ext: ToeplitzExtractor, raw_bits, workers: int = 1) -> np.ndarray:
    """
    Multiplica cada subsequência de n bits pela matriz e concatena os
    resultados de m bits na ordem de entrada. O resto (< n bits) é descartado.

    Com workers > 1 os lotes rodam em paralelo; o resultado é o mesmo.
    """
    rows = _subsequences(ext, raw_bits)
    matrix_t = ext.matrix.T.astype(np.float32)
    batches = [rows[i : i + BATCH_ROWS] for i in range(0, rows.shape[0], BATCH_ROWS)]
    if workers > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda b: _multiply(matrix_t, b), batches))
    else:
        outputs = [_multiply(matrix_t, b) for b in batches]
    return np.concatenate(outputs).ravel()


def extract_dense(ext: ToeplitzExtractor, raw_bits) -> np.ndarray:
    """Oráculo: reconstrói T elemento a elemento e multiplica em GF(2), subsequência a subsequência."""
    rows = _subsequences(ext, raw_bits)
    n, m, seed = ext.n, ext.m, [int(b) for b in ext.seed_bits]
    dense = [[seed[r - c + n - 1] for c in range(n)] for r in range(m)]
    out = []
    for row in rows.tolist():
        for r in range(m):
            acc = 0
            for c in range(n):
                acc ^= dense[r][c] & row[c]
            out.append(acc)
    return np.asarray(out, dtype=np.uint8)


# ============================================================================
# BENCHMARK
# ============================================================================

@dataclass
class BenchmarkResult:
    n: int
    m: int
    input_bits: int
    fast_seconds: float
    dense_seconds: float

    @property
    def fast_bits_per_second(self) -> float:
        return self.input_bits / self.fast_seconds if self.fast_seconds > 0 else float("inf")

    @property
    def dense_bits_per_second(self) -> float:
        return self.input_bits / self.dense_seconds if self.dense_seconds > 0 else float("inf")

    @property
    def speedup(self) -> float:
        return self.fast_bits_per_second / self.dense_bits_per_second


def benchmark(
    n: int = DEFAULT_N,
    m: int = 187,
    subsequences: int = 64,
    rng: Optional[np.random.Generator] = None,
) -> BenchmarkResult:
    """Compara o caminho rápido com o oráculo na mesma entrada."""
    rng = rng if rng is not None else np.random.default_rng(0)
    ext = build(rng.integers(0, 2, n + m - 1), n, m)
    raw = rng.integers(0, 2, n * subsequences).astype(np.uint8)

    start = time.perf_counter()
    fast = extract(ext, raw)
    fast_seconds = time.perf_counter() - start

    start = time.perf_counter()
    dense = extract_dense(ext, raw)
    dense_seconds = time.perf_counter() - start

    if not np.array_equal(fast, dense):
        raise ExtractorError("caminho rápido diverge do oráculo")
    result = BenchmarkResult(n, m, raw.size, fast_seconds, dense_seconds)
    logger.info(
        "benchmark n=%d m=%d: rápido %.2f Mbit/s, oráculo %.3f Mbit/s (%.0fx)",
        n, m, result.fast_bits_per_second / 1e6, result.dense_bits_per_second / 1e6, result.speedup,
    )
    return result


# ============================================================================
# RELATÓRIO
# ============================================================================

def sidecar_report(ext: ToeplitzExtractor, input_bits: int, h_min: float, master_seed: Optional[int] = None) -> dict:
    """Conteúdo do arquivo lateral (.json) que acompanha a saída extraída."""
    return {
        "n": ext.n,
        "m": ext.m,
        "epsilon_log2": ext.epsilon_log2,
        "h_min_per_byte": h_min,
        "seed_bits": ext.n + ext.m - 1,
        "seed_sha256": ext.seed_digest,
        "efficiency": ext.efficiency,
        "input_bits": input_bits,
        "output_bits": ext.output_bits_for(input_bits),
        "master_seed": master_seed,
    }


class StreamingExtractor:
    """
    Extração incremental sobre blocos que chegam em sequência.
    Bits que não fecham uma subsequência ficam guardados para o próximo
    feed(); a saída é idêntica a extrair a concatenação de uma vez.
    """

    def __init__(self, ext: ToeplitzExtractor, workers: int = 1):
        self.ext = ext
        self.workers = workers
        self._carry = np.zeros(0, dtype=np.uint8)
        self.input_bits = 0
        self.output_bits = 0

    def feed(self, bits) -> np.ndarray:
        bits = np.concatenate([self._carry, _as_bits(bits)])
        usable = bits.size - bits.size % self.ext.n
        self._carry = bits[usable:]
        if usable == 0:
            return np.zeros(0, dtype=np.uint8)
        out = extract(self.ext, bits[:usable], workers=self.workers)
        self.input_bits += usable
        self.output_bits += out.size
        return out

    @property
    def dropped_bits(self) -> int:
        """Resto final (< n bits) que nunca vira saída."""
        return int(self._carry.size)
