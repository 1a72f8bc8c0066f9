# app/services/selftest.py

"""
Protocolo prepare-and-measure: a cada bloco de 32 kB sorteia o estado
preparado (Ψ, Φ determinísticos ou Ω balanceado), acompanha as
visibilidades e dispara alarme quando a média móvel sai da faixa.

Só blocos Ω seguem para a saída de números aleatórios.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
from scipy import stats

from app.exceptions import AcquisitionStalled, InsufficientData
from app.logging_config import get_logger
from app.models import DeviceConfig, PipelineConfig, StateTag
from app.services.acquisition import RawBlock, acquire_block
from app.services.metrics import visibility

logger = get_logger("selftest")


@dataclass(frozen=True)
class StatePrep:
    tag: StateTag
    voltage: float


@dataclass(frozen=True)
class SelftestOptions:
    """Probabilidades, tensões e limiares do protocolo."""
    p_psi: float = 0.005
    p_phi: float = 0.005
    v_psi: float = 0.0
    v_phi: float = 4.2
    v_omega: float = 2.15
    visibility_min: float = 0.98
    omega_visibility_max: float = 0.02
    window: int = 20
    stop_on_alarm: bool = True

    def __post_init__(self):
        if min(self.p_psi, self.p_phi) < 0 or self.p_psi + self.p_phi > 1:
            raise ValueError("probabilidades de Ψ/Φ inválidas")

    @property
    def p_omega(self) -> float:
        return 1.0 - self.p_psi - self.p_phi

    @classmethod
    def from_pipeline(cls, cfg: PipelineConfig, v_omega: float) -> "SelftestOptions":
        return cls(
            p_psi=cfg.p_psi,
            p_phi=cfg.p_phi,
            v_psi=cfg.v_psi,
            v_phi=cfg.v_phi,
            v_omega=v_omega,
            visibility_min=cfg.visibility_min,
            omega_visibility_max=cfg.omega_visibility_max,
            window=cfg.alarm_window,
            stop_on_alarm=cfg.stop_on_alarm,
        )


@dataclass
class VisibilityReport:
    """Séries (bloco, visibilidade) por estado, com alarme por estado."""
    series: dict[StateTag, list[tuple[int, float]]] = field(
        default_factory=lambda: {tag: [] for tag in StateTag}
    )
    alarms: dict[StateTag, bool] = field(default_factory=lambda: {tag: False for tag in StateTag})
    alarm_block_index: Optional[int] = None
    stalled_blocks: list[int] = field(default_factory=list)
    blocks_run: int = 0
    omega_emitted: int = 0

    @property
    def alarm(self) -> bool:
        return any(self.alarms.values())

    def values(self, tag: StateTag) -> np.ndarray:
        return np.array([v for _, v in self.series[tag]], dtype=float)

    def mean(self, tag: StateTag) -> Optional[float]:
        vals = self.values(tag)
        return float(vals.mean()) if vals.size else None

    def std(self, tag: StateTag) -> Optional[float]:
        vals = self.values(tag)
        return float(vals.std(ddof=1)) if vals.size > 1 else None

    def trend(self, tag: StateTag) -> tuple[float, float]:
        """Inclinação (por bloco) de um ajuste linear e seu erro padrão."""
        samples = self.series[tag]
        if len(samples) < 3:
            raise InsufficientData(f"tendência de {tag.name} precisa de >= 3 amostras")
        x, y = zip(*samples)
        fit = stats.linregress(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        return float(fit.slope), float(fit.stderr)

    def write_csv(self, path: Union[str, Path]) -> None:
        rows = sorted(
            (index, tag.name, value) for tag, samples in self.series.items() for index, value in samples
        )
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block_index", "state", "visibility"])
            for index, name, value in rows:
                writer.writerow([index, name, f"{value:.6f}"])

    def summary(self) -> list[dict]:
        return [
            {
                "state": tag.name,
                "samples": len(self.series[tag]),
                "mean": self.mean(tag),
                "std": self.std(tag),
                "alarm": self.alarms[tag],
            }
            for tag in (StateTag.PSI, StateTag.PHI, StateTag.OMEGA)
        ]


def choose_state(rng: np.random.Generator, options: SelftestOptions = SelftestOptions()) -> StatePrep:
    """Ψ com p_psi, Φ com p_phi, Ω com o restante; um uniforme por sorteio."""
    u = rng.random()
    if u < options.p_psi:
        return StatePrep(StateTag.PSI, options.v_psi)
    if u < options.p_psi + options.p_phi:
        return StatePrep(StateTag.PHI, options.v_phi)
    return StatePrep(StateTag.OMEGA, options.v_omega)


def _window_violates(report: VisibilityReport, tag: StateTag, options: SelftestOptions) -> bool:
    recent = report.values(tag)[-options.window:]
    if recent.size == 0:
        return False
    mean = recent.mean()
    if tag is StateTag.OMEGA:
        return mean > options.omega_visibility_max
    return mean < options.visibility_min


def iter_selftest(
    cfg: DeviceConfig,
    n_blocks: int,
    rng: np.random.Generator,
    options: SelftestOptions,
    report: VisibilityReport,
) -> Iterator[RawBlock]:
    """
    Versão em streaming: produz apenas os blocos Ω e preenche o relatório.

    O cronograma de estados e os pulsos usam streams separados derivados de
    rng, para que o cronograma seja o mesmo independente do consumo de pulsos.
    """
    if n_blocks < 1:
        raise InsufficientData("n_blocks deve ser >= 1")
    schedule_seed, pulse_seed = (int(s) for s in rng.integers(0, 2**63, size=2))
    schedule_rng = np.random.default_rng(schedule_seed)
    pulse_rng = np.random.default_rng(pulse_seed)

    pulse = 0
    for index in range(n_blocks):
        prep = choose_state(schedule_rng, options)
        report.blocks_run += 1
        block: Optional[RawBlock] = None
        try:
            block = acquire_block(cfg, prep.voltage, pulse_rng, index=index, start_pulse=pulse, state_tag=prep.tag)
            pulse = block.end_pulse
            n_early, n_late = block.early, block.late
        except AcquisitionStalled as exc:
            logger.warning("bloco %d (%s) travou: %s", index, prep.tag.name, exc)
            report.stalled_blocks.append(index)
            pulse += exc.pulses
            n_early, n_late = exc.counts["early"], exc.counts["late"]

        nu = visibility(n_early, n_late) if n_early + n_late > 0 else 0.0
        report.series[prep.tag].append((index, nu))

        if _window_violates(report, prep.tag, options) and not report.alarms[prep.tag]:
            report.alarms[prep.tag] = True
            if report.alarm_block_index is None:
                report.alarm_block_index = index
            logger.warning(
                "ALARME %s no bloco %d: média móvel %.4f",
                prep.tag.name, index, report.values(prep.tag)[-options.window:].mean(),
            )

        # após um alarme nada mais é emitido
        if block is not None and prep.tag is StateTag.OMEGA and not report.alarm:
            report.omega_emitted += 1
            yield block

        if report.alarm and options.stop_on_alarm:
            return


def run_selftest(
    cfg: DeviceConfig,
    n_blocks: int,
    rng: np.random.Generator,
    options: SelftestOptions = SelftestOptions(),
) -> tuple[list[RawBlock], VisibilityReport]:
    report = VisibilityReport()
    omega_blocks = list(iter_selftest(cfg, n_blocks, rng, options, report))
    logger.info(
        "self-test: %d blocos, %d Ω emitidos, alarme=%s",
        report.blocks_run, report.omega_emitted, report.alarm,
    )
    for row in report.summary():
        if row["samples"]:
            logger.info(
                "  %s: n=%d ν̄=%.4f", row["state"], row["samples"], row["mean"],
            )
    return omega_blocks, report


def slope_consistent_with_zero(report: VisibilityReport, tag: StateTag, sigmas: float = 3.0) -> bool:
    slope, stderr = report.trend(tag)
    if not math.isfinite(stderr) or stderr == 0:
        return slope == 0
    return abs(slope) <= sigmas * stderr
