# app/services/optics_model.py

"""
Modelo Monte Carlo da cadeia óptica.

Tensão -> fase no modulador, lei de divisão do Sagnac (cos²/sin²),
perdas por caminho, detector de limiar com luz Poissoniana e
classificação de cada pulso em early / late / double / nenhum clique.

Tudo é função pura: o gerador pseudo-aleatório (numpy Generator) é
passado explicitamente e avança a cada chamada.
"""

import math
from enum import IntEnum
from typing import NamedTuple, Optional

import numpy as np

from app.exceptions import ConfigError
from app.logging_config import get_logger
from app.models import DeviceConfig

logger = get_logger("optics")


# ============================================================================
# TIPOS
# ============================================================================

class PulseOutcome(IntEnum):
    """Resultado de um pulso. O valor é o código usado nos arrays vetorizados."""
    NO_CLICK = 0
    EARLY_CLICK = 1
    LATE_CLICK = 2
    DOUBLE_CLICK = 3

    @property
    def bit(self) -> Optional[int]:
        if self is PulseOutcome.EARLY_CLICK:
            return 0
        if self is PulseOutcome.LATE_CLICK:
            return 1
        return None


class OutcomeProbabilities(NamedTuple):
    none: float
    early: float
    late: float
    double: float

    @property
    def single(self) -> float:
        return self.early + self.late

    @property
    def early_fraction(self) -> float:
        """P(early) / (P(early) + P(late)): viés esperado dos bits aceitos."""
        return self.early / self.single if self.single > 0 else float("nan")


# ============================================================================
# GERADOR PSEUDO-ALEATÓRIO
# ============================================================================

def derive_rng(seed: int, *key: int) -> np.random.Generator:
    """
    Stream independente e reprodutível para (seed, key...).
    Usado para dar a cada ponto de sweep / bloco sua própria semente,
    sem depender da ordem de execução.
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


# ============================================================================
# LEI FÍSICA
# ============================================================================

def ensure_valid(cfg: DeviceConfig) -> None:
    """
    Revalida invariantes que o model já garante na construção.
    Configs montadas via model_construct() passam por aqui antes de simular.
    """
    if cfg.dead_time_ns >= cfg.timebin_separation_ns:
        raise ConfigError(
            "dead_time_ns >= timebin_separation_ns: o gate late ficaria "
            "suprimido após um clique early; recusando simular"
        )
    if cfg.v_pi_volts <= 0:
        raise ConfigError("v_pi_volts deve ser positivo")
    if cfg.mean_photon_number < 0:
        raise ConfigError("mean_photon_number deve ser >= 0")
    for name in ("transmittance_early", "transmittance_late", "detector_efficiency", "dark_count_prob"):
        value = getattr(cfg, name)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"{name} fora de [0, 1]: {value}")


def voltage_to_phase(v: float, cfg: DeviceConfig) -> float:
    """φ = π·(v + δV)/V_π, sem wrap."""
    if not math.isfinite(v):
        raise ConfigError(f"tensão não finita: {v}")
    return math.pi * (v + cfg.v_offset_volts) / cfg.v_pi_volts


def splitting_probabilities(phase: float) -> tuple[float, float]:
    """(cos²(φ/2), sin²(φ/2)); o early é o complemento, então a soma é exatamente 1."""
    p_late = math.sin(phase / 2.0) ** 2
    return 1.0 - p_late, p_late


def click_probability(mean_photons_at_gate: float, dark_count_prob: float) -> float:
    """Detector de limiar com luz Poissoniana: 1 − (1 − p_dark)·e^{−μ}."""
    if mean_photons_at_gate < 0:
        raise ValueError(f"média de fótons negativa: {mean_photons_at_gate}")
    return 1.0 - (1.0 - dark_count_prob) * math.exp(-mean_photons_at_gate)


def gate_means(cfg: DeviceConfig, v: float) -> tuple[float, float]:
    """Média de fótons detectáveis em cada gate: μ·T·η·(cos² | sin²)."""
    p_early, p_late = splitting_probabilities(voltage_to_phase(v, cfg))
    base = cfg.mean_photon_number * cfg.detector_efficiency
    return base * cfg.transmittance_early * p_early, base * cfg.transmittance_late * p_late


def click_probabilities(cfg: DeviceConfig, v: float) -> tuple[float, float]:
    mu_e, mu_l = gate_means(cfg, v)
    return (
        click_probability(mu_e, cfg.dark_count_prob),
        click_probability(mu_l, cfg.dark_count_prob),
    )


def outcome_probabilities(cfg: DeviceConfig, v: float) -> OutcomeProbabilities:
    """Probabilidades fechadas das quatro classes de resultado."""
    c_e, c_l = click_probabilities(cfg, v)
    return OutcomeProbabilities(
        none=(1 - c_e) * (1 - c_l),
        early=c_e * (1 - c_l),
        late=(1 - c_e) * c_l,
        double=c_e * c_l,
    )


# ============================================================================
# SIMULAÇÃO
# ============================================================================

def simulate_pulses(cfg: DeviceConfig, v: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """
    Simula n pulsos na tensão v e devolve os códigos de PulseOutcome (uint8).

    Cada pulso consome dois uniformes, early e late nessa ordem. Como o
    tempo morto é menor que a separação dos bins, um clique early nunca
    suprime o gate late e os dois eventos são independentes.
    """
    ensure_valid(cfg)
    if n < 0:
        raise ValueError("n deve ser >= 0")
    c_e, c_l = click_probabilities(cfg, v)
    u = rng.random((n, 2))
    early = u[:, 0] < c_e
    late = u[:, 1] < c_l
    return early.astype(np.uint8) + 2 * late.astype(np.uint8)


def simulate_pulse(cfg: DeviceConfig, v: float, rng: np.random.Generator) -> PulseOutcome:
    """Um único pulso; mesmo consumo do stream que simulate_pulses(n=1)."""
    return PulseOutcome(int(simulate_pulses(cfg, v, 1, rng)[0]))


# ============================================================================
# CALIBRAÇÃO ANALÍTICA
# ============================================================================

def balance_voltage(cfg: DeviceConfig) -> float:
    """
    Tensão em que T_e·cos²(φ/2) = T_l·sin²(φ/2), no primeiro ramo (0 < φ < π).
    Com dark counts iguais nos dois gates, é também onde P(early) = P(late).
    """
    if cfg.transmittance_late <= 0 or cfg.transmittance_early <= 0:
        raise ConfigError("sem ponto de equilíbrio: um dos caminhos tem transmitância 0")
    phase = 2.0 * math.atan(math.sqrt(cfg.transmittance_early / cfg.transmittance_late))
    return phase * cfg.v_pi_volts / math.pi - cfg.v_offset_volts


def calibrate_transmittance(cfg: DeviceConfig, target_single_click: float) -> float:
    """
    Transmitância simétrica T_e = T_l que dá P(exatamente um clique) = alvo
    no ponto balanceado. Com descarte de duplo clique o máximo é 0.5; alvos
    inviáveis (ou que exigiriam T > 1) são limitados a T = 1.
    """
    if target_single_click <= 0:
        raise ValueError("alvo deve ser positivo")
    base = cfg.mean_photon_number * cfg.detector_efficiency
    if base <= 0:
        raise ConfigError("μ·η = 0: nenhuma transmitância atinge o alvo")
    if target_single_click > 0.5:
        logger.warning(
            "P(um clique)=%.4f é inviável com descarte de duplo clique (máx 0.5); usando T=1",
            target_single_click,
        )
        return 1.0
    # 2c(1-c) = alvo, raiz menor (regime linear do detector)
    c = (1.0 - math.sqrt(1.0 - 2.0 * target_single_click)) / 2.0
    if c <= cfg.dark_count_prob:
        return 0.0
    gate_mean = -math.log((1.0 - c) / (1.0 - cfg.dark_count_prob))
    transmittance = 2.0 * gate_mean / base
    if transmittance > 1.0:
        logger.warning("calibração pediria T=%.3f > 1; limitando a 1", transmittance)
        return 1.0
    return transmittance
