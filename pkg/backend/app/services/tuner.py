# app/services/tuner.py

"""
Varredura de tensão em dois estágios (grossa + fina) e escolha do ponto de
operação que maximiza a entropia bruta. Compensa assimetria estática de
perdas entre os bins early e late.
"""

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy import stats

from app.exceptions import ConfigError
from app.logging_config import get_logger
from app.models import DeviceConfig
from app.services.metrics import entropy_of_bits
from app.services.optics_model import (
    PulseOutcome,
    balance_voltage,
    derive_rng,
    ensure_valid,
    outcome_probabilities,
    simulate_pulses,
)

logger = get_logger("tuner")

MIN_PULSES_PER_POINT = 100_000
DEFAULT_PULSES_PER_POINT = 2**20


@dataclass(frozen=True)
class SweepPoint:
    voltage: float
    entropy: float
    early: int
    late: int
    double: int
    empty: int

    @property
    def pulses(self) -> int:
        return self.early + self.late + self.double + self.empty


@dataclass
class SweepResult:
    points: list[SweepPoint] = field(default_factory=list)

    @property
    def voltages(self) -> np.ndarray:
        return np.array([p.voltage for p in self.points])

    @property
    def entropies(self) -> np.ndarray:
        return np.array([p.entropy for p in self.points])

    def argmax(self) -> SweepPoint:
        """Máximo da grade; empates vão para a menor tensão."""
        return self.points[int(np.argmax(self.entropies))]


def voltage_grid(v_start: float, v_end: float, step: float) -> list[float]:
    """Grade inclusiva nas duas pontas: 0 -> 4.2 em 0.2 dá 22 pontos."""
    if step <= 0:
        raise ConfigError("step deve ser positivo")
    if v_start >= v_end:
        raise ConfigError("v_start deve ser menor que v_end")
    count = int(math.floor((v_end - v_start) / step + 1e-9)) + 1
    return [round(v_start + i * step, 10) for i in range(count)]


def measure_point(cfg: DeviceConfig, v: float, pulses: int, rng: np.random.Generator) -> SweepPoint:
    codes = simulate_pulses(cfg, v, pulses, rng)
    tallies = np.bincount(codes, minlength=4)
    single = codes[(codes == PulseOutcome.EARLY_CLICK) | (codes == PulseOutcome.LATE_CLICK)]
    bits = (single == PulseOutcome.LATE_CLICK).astype(np.uint8)
    return SweepPoint(
        voltage=v,
        entropy=entropy_of_bits(bits),
        early=int(tallies[PulseOutcome.EARLY_CLICK]),
        late=int(tallies[PulseOutcome.LATE_CLICK]),
        double=int(tallies[PulseOutcome.DOUBLE_CLICK]),
        empty=int(tallies[PulseOutcome.NO_CLICK]),
    )


def sweep(
    cfg: DeviceConfig,
    v_start: float,
    v_end: float,
    step: float,
    pulses_per_point: int,
    rng: np.random.Generator,
    workers: int = 1,
) -> SweepResult:
    """
    Mede entropia e contagens em cada tensão da grade.

    Cada ponto usa um stream próprio derivado de (semente do sweep, índice),
    então o resultado não depende de workers.
    """
    ensure_valid(cfg)
    if pulses_per_point < MIN_PULSES_PER_POINT:
        raise ConfigError(f"pulses_per_point deve ser >= {MIN_PULSES_PER_POINT}")
    grid = voltage_grid(v_start, v_end, step)
    sweep_seed = int(rng.integers(0, 2**63))

    def run(item):
        index, v = item
        return measure_point(cfg, v, pulses_per_point, derive_rng(sweep_seed, index))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(run, enumerate(grid)))
    else:
        points = [run(item) for item in enumerate(grid)]
    return SweepResult(points)


def optimize(
    cfg: DeviceConfig,
    rng: np.random.Generator,
    coarse_start: float = 0.0,
    coarse_end: float = 4.2,
    coarse_step: float = 0.2,
    fine_half_width: float = 0.15,
    fine_step: float = 0.02,
    pulses_per_point: int = DEFAULT_PULSES_PER_POINT,
    workers: int = 1,
) -> tuple[float, tuple[SweepResult, SweepResult]]:
    """
    Sweep grosso, depois sweep fino em argmax ± fine_half_width
    (limitado à faixa grossa). Devolve o argmax fino, sem interpolação.
    """
    coarse = sweep(cfg, coarse_start, coarse_end, coarse_step, pulses_per_point, rng, workers)
    center = coarse.argmax().voltage
    fine_start = max(coarse_start, center - fine_half_width)
    fine_end = min(coarse_end, center + fine_half_width)
    fine = sweep(cfg, fine_start, fine_end, fine_step, pulses_per_point, rng, workers)
    best = fine.argmax()
    logger.info(
        "tuner: grosso argmax %.3f V, fino argmax %.3f V (H=%.4f bits/byte)",
        center, best.voltage, best.entropy,
    )
    return best.voltage, (coarse, fine)


# ============================================================================
# AJUSTE DAS CURVAS DE CONTAGEM
# ============================================================================

@dataclass(frozen=True)
class CurveFit:
    chi2_early: float
    chi2_late: float
    dof_early: int
    dof_late: int

    @property
    def p_early(self) -> float:
        return float(stats.chi2.sf(self.chi2_early, self.dof_early))

    @property
    def p_late(self) -> float:
        return float(stats.chi2.sf(self.chi2_late, self.dof_late))


def splitting_fit(result: SweepResult, cfg: DeviceConfig, min_expected: float = 5.0) -> CurveFit:
    """
    χ² das contagens early/late contra o modelo fechado (cos²/sin² com
    detector de limiar). Erros Poissonianos; pontos com contagem esperada
    abaixo de min_expected ficam de fora.
    """
    chi2 = {"early": 0.0, "late": 0.0}
    dof = {"early": 0, "late": 0}
    for point in result.points:
        probs = outcome_probabilities(cfg, point.voltage)
        for name, observed, p in (("early", point.early, probs.early), ("late", point.late, probs.late)):
            expected = p * point.pulses
            if expected < min_expected:
                continue
            chi2[name] += (observed - expected) ** 2 / expected
            dof[name] += 1
    return CurveFit(chi2["early"], chi2["late"], max(dof["early"], 1), max(dof["late"], 1))


def predicted_optimum(cfg: DeviceConfig) -> Optional[float]:
    """Ponto de equilíbrio fechado, ou None se não existe (um caminho morto)."""
    try:
        return balance_voltage(cfg)
    except ConfigError:
        return None


def write_sweeps_csv(path: Union[str, Path], sweeps: dict[str, SweepResult]) -> None:
    """Um CSV com os dois sweeps (dados das curvas de contagem e de entropia)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "voltage", "entropy", "early", "late", "double", "empty"])
        for stage, result in sweeps.items():
            for p in result.points:
                writer.writerow([stage, f"{p.voltage:.4f}", f"{p.entropy:.6f}", p.early, p.late, p.double, p.empty])
