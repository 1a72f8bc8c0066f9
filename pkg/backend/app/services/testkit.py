# app/services/testkit.py

"""
Bateria estatística rápida (monobit, runs, qui-quadrado de bytes,
correlação serial lag-1), limites de proporção no estilo NIST, agregação
de p-valores por Kolmogorov-Smirnov e exportadores para as suítes
externas (NIST STS e Dieharder).

As suítes completas rodam nas ferramentas oficiais sobre os arquivos
exportados; a receita está no README.
"""

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import special, stats

from app.exceptions import InsufficientData, QRNGError
from app.logging_config import get_logger
from app.services.metrics import bits_to_bytes

logger = get_logger("testkit")

MIN_BATTERY_BITS = 1_000_000


class Verdict(str, Enum):
    PASS = "Pass"
    WEAK = "Weak"
    FAIL = "Fail"


def verdict_for(p_value: float) -> Verdict:
    """Faixas do Dieharder: Pass em (0.01, 0.99); Weak até 1e-4 / 0.9999; resto Fail."""
    if 0.01 < p_value < 0.99:
        return Verdict.PASS
    if 1e-4 <= p_value <= 0.01 or 0.99 <= p_value <= 0.9999:
        return Verdict.WEAK
    return Verdict.FAIL


@dataclass(frozen=True)
class TestResult:
    name: str
    statistic: float
    p_value: float
    verdict: Verdict

    __test__ = False


@dataclass
class TestReport:
    results: list[TestResult] = field(default_factory=list)
    ks_pvalue: Optional[float] = None

    # não é uma classe de teste do pytest
    __test__ = False

    def by_name(self, name: str) -> TestResult:
        for result in self.results:
            if result.name == name:
                return result
        raise KeyError(name)

    @property
    def all_pass(self) -> bool:
        return all(r.verdict is Verdict.PASS for r in self.results)

    @property
    def any_fail(self) -> bool:
        return any(r.verdict is Verdict.FAIL for r in self.results)

    def to_jsonl(self) -> str:
        lines = [
            json.dumps({**_finite(asdict(r)), "verdict": r.verdict.value}, allow_nan=False)
            for r in self.results
        ]
        if self.ks_pvalue is not None:
            lines.append(json.dumps({"name": "ks_aggregate", "p_value": self.ks_pvalue}))
        return "\n".join(lines) + "\n"


def _finite(record: dict) -> dict:
    """NaN e infinito viram null: JSON estrito não os aceita."""
    return {k: None if isinstance(v, float) and not math.isfinite(v) else v for k, v in record.items()}


# ============================================================================
# LIMITES E AGREGAÇÃO
# ============================================================================

def proportion_confidence_interval(alpha: float, n_streams: int) -> tuple[float, float]:
    """p̂ ± 3·sqrt(α(1−α)/n) com p̂ = 1 − α, limitado a [0, 1]."""
    if not 0 < alpha < 1:
        raise QRNGError(f"alpha fora de (0, 1): {alpha}")
    if n_streams < 1:
        raise QRNGError("n_streams deve ser >= 1")
    p_hat = 1.0 - alpha
    half = 3.0 * math.sqrt(alpha * (1.0 - alpha) / n_streams)
    lo, hi = p_hat - half, p_hat + half
    if lo < 0 or hi > 1:
        logger.warning(
            "intervalo (%.4f, %.4f) sai de [0, 1] para alpha=%g, n=%d; limitando",
            lo, hi, alpha, n_streams,
        )
    return max(0.0, lo), min(1.0, hi)


def ks_statistic(pvalues: Sequence[float]) -> float:
    """D bilateral contra a CDF uniforme em [0, 1]."""
    x = np.sort(np.asarray(pvalues, dtype=float))
    n = x.size
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - x)
    d_minus = np.max(x - (i - 1) / n)
    return float(max(d_plus, d_minus))


def ks_uniformity_pvalue(pvalues: Sequence[float]) -> float:
    """
    p-valor do KS de uniformidade, com a correção de amostra pequena
    (√N + 0.12 + 0.11/√N)·D aplicada à distribuição de Kolmogorov assintótica.
    """
    values = np.asarray(pvalues, dtype=float)
    if values.size < 2:
        raise InsufficientData("KS precisa de pelo menos 2 p-valores")
    if np.any((values < 0) | (values > 1)) or not np.all(np.isfinite(values)):
        raise QRNGError("p-valores devem estar em [0, 1]")
    d = ks_statistic(values)
    root = math.sqrt(values.size)
    return float(special.kolmogorov((root + 0.12 + 0.11 / root) * d))


# ============================================================================
# BATERIA RÁPIDA
# ============================================================================

def _monobit(bits: np.ndarray) -> TestResult:
    n = bits.size
    s = 2 * int(bits.sum()) - n
    s_obs = abs(s) / math.sqrt(n)
    p = math.erfc(s_obs / math.sqrt(2))
    return TestResult("monobit", s_obs, p, verdict_for(p))


def _runs(bits: np.ndarray) -> TestResult:
    n = bits.size
    pi = bits.sum() / n
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        # pré-teste de frequência do NIST: runs não se aplica
        return TestResult("runs", float("nan"), 0.0, Verdict.FAIL)
    v_obs = 1 + int(np.count_nonzero(np.diff(bits)))
    p = math.erfc(abs(v_obs - 2 * n * pi * (1 - pi)) / (2 * math.sqrt(2 * n) * pi * (1 - pi)))
    return TestResult("runs", float(v_obs), p, verdict_for(p))


def _byte_chi_square(bits: np.ndarray) -> TestResult:
    data = bits_to_bytes(bits)
    counts = np.bincount(data, minlength=256)
    expected = data.size / 256
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    p = float(stats.chi2.sf(chi2, 255))
    return TestResult("byte_chi_square", chi2, p, verdict_for(p))


def _serial_correlation(bits: np.ndarray) -> TestResult:
    x = 2.0 * bits.astype(np.float64) - 1.0
    z = float(np.dot(x[:-1], x[1:]) / math.sqrt(x.size - 1))
    p = math.erfc(abs(z) / math.sqrt(2))
    return TestResult("serial_lag1", z, p, verdict_for(p))


BATTERY = (_monobit, _runs, _byte_chi_square, _serial_correlation)


def quick_battery(bits) -> TestReport:
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    if bits.size < MIN_BATTERY_BITS:
        raise InsufficientData(f"bateria precisa de >= {MIN_BATTERY_BITS} bits, recebeu {bits.size}")
    report = TestReport([test(bits) for test in BATTERY])
    for r in report.results:
        logger.info("%-16s p=%.4f %s", r.name, r.p_value, r.verdict.value)
    return report


def stream_battery(bits, n_streams: int, alpha: float = 0.01) -> dict:
    """
    Divide a entrada em n_streams sequências e aplica a bateria em cada uma,
    no formato do NIST: proporção de p >= alpha por teste contra o intervalo
    de confiança, e KS dos p-valores de cada teste.
    """
    bits = np.asarray(bits, dtype=np.uint8).ravel()
    stream_bits = bits.size // n_streams
    if n_streams < 2 or stream_bits < MIN_BATTERY_BITS:
        raise InsufficientData("entrada insuficiente para o número de sequências pedido")
    reports = [quick_battery(bits[i * stream_bits:(i + 1) * stream_bits]) for i in range(n_streams)]
    lo, hi = proportion_confidence_interval(alpha, n_streams)
    summary = {}
    for name in (r.name for r in reports[0].results):
        pvalues = [rep.by_name(name).p_value for rep in reports]
        proportion = float(np.mean([p >= alpha for p in pvalues]))
        summary[name] = {
            "proportion": proportion,
            "interval": (lo, hi),
            "within": lo <= proportion <= hi,
            "ks_pvalue": ks_uniformity_pvalue(pvalues),
        }
    return summary


# ============================================================================
# EXPORTADORES
# ============================================================================

def _check_bits(bits) -> np.ndarray:
    arr = np.asarray(bits, dtype=np.uint8).ravel()
    if arr.size == 0:
        raise InsufficientData("stream de bits vazio")
    return arr


def export_nist(bits, path: Union[str, Path]) -> tuple[Path, Path]:
    """
    Formato ASCII do assess do NIST: um caractere '0'/'1' por bit, sem
    separadores. Também grava <path>.bin com os mesmos bits empacotados
    (MSB primeiro; o último byte é completado com zeros).
    """
    arr = _check_bits(bits)
    path = Path(path)
    path.write_bytes((arr + ord("0")).astype(np.uint8).tobytes())
    companion = path.with_suffix(path.suffix + ".bin")
    companion.write_bytes(np.packbits(arr).tobytes())
    return path, companion


def export_dieharder(bits, path: Union[str, Path]) -> Path:
    """Bytes crus (MSB primeiro) para `dieharder -g 201 -f <arquivo>`."""
    arr = _check_bits(bits)
    path = Path(path)
    path.write_bytes(np.packbits(arr).tobytes())
    return path


def import_bits(path: Union[str, Path], n_bits: Optional[int] = None) -> np.ndarray:
    """Lê um arquivo binário de volta como bits; n_bits corta o preenchimento final."""
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    bits = np.unpackbits(data)
    return bits if n_bits is None else bits[:n_bits]


def import_ascii_bits(path: Union[str, Path]) -> np.ndarray:
    data = np.frombuffer(Path(path).read_bytes(), dtype=np.uint8)
    if np.any((data != ord("0")) & (data != ord("1"))):
        raise QRNGError(f"{path}: esperado apenas '0' e '1'")
    return (data - ord("0")).astype(np.uint8)
