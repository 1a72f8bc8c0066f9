# app/models.py

from datetime import datetime
from enum import IntEnum
from typing import Optional

from pydantic import model_validator
from sqlmodel import SQLModel, Field, Relationship


# ============================================================================
# ENUMS
# ============================================================================

class StateTag(IntEnum):
    """Estado preparado durante um bloco. O valor é o byte usado no frame."""
    OMEGA = 0
    PSI = 1
    PHI = 2


# ============================================================================
# DEVICE CONFIG
# ============================================================================

class DeviceConfig(SQLModel):
    """
    Parâmetros físicos e eletrônicos da cadeia simulada.

    Os defaults reproduzem o arranjo de bancada: 250 kHz, ~10 fótons por
    pulso, detector com 10% de eficiência e dark count de 1e-5 por gate.
    Transmitâncias em 1.0: é o máximo fisicamente possível e já coloca a
    taxa bruta em ~119 kbps (veja DESIGN.md).
    """
    pulse_rate_hz: float = Field(default=250_000.0, gt=0)
    pulse_width_ns: float = Field(default=20.0, gt=0)
    mean_photon_number: float = Field(default=10.0, ge=0)
    v_pi_volts: float = Field(default=4.3, gt=0)
    v_offset_volts: float = 0.0
    transmittance_early: float = Field(default=1.0, ge=0, le=1)
    transmittance_late: float = Field(default=1.0, ge=0, le=1)
    detector_efficiency: float = Field(default=0.10, gt=0, le=1)
    dark_count_prob: float = Field(default=1e-5, ge=0, le=1)
    dead_time_ns: float = Field(default=500.0, ge=0)
    timebin_separation_ns: float = Field(default=750.0, gt=0)
    rng_seed: int = Field(default=0, ge=0, le=2**64 - 1)

    # Aquisição em lotes de pulsos; o resultado depende deste valor
    acquisition_chunk_pulses: int = Field(default=2**18, ge=1)
    # Watchdog: blocos que não enchem dentro deste orçamento falham
    max_pulses_per_block: int = Field(default=2**24, ge=1)

    @model_validator(mode="after")
    def _dead_time_before_late_gate(self):
        if self.dead_time_ns >= self.timebin_separation_ns:
            raise ValueError(
                f"dead_time_ns ({self.dead_time_ns}) deve ser menor que "
                f"timebin_separation_ns ({self.timebin_separation_ns}): "
                "um clique no bin early não pode suprimir o gate late"
            )
        return self


# ============================================================================
# PIPELINE CONFIG
# ============================================================================

class PipelineConfig(SQLModel):
    """
    Configuração completa do pipeline: tune -> acquire -> stream -> extract.
    Todas as chaves vivem no mesmo arquivo plano que o DeviceConfig.
    """
    device: DeviceConfig = Field(default_factory=DeviceConfig)
    seed: Optional[int] = Field(default=None, ge=0, le=2**64 - 1)
    n_blocks: int = Field(default=100, ge=1)
    workers: int = Field(default=1, ge=1)

    # Tuner
    coarse_start: float = 0.0
    coarse_end: float = 4.2
    coarse_step: float = Field(default=0.2, gt=0)
    fine_half_width: float = Field(default=0.15, gt=0)
    fine_step: float = Field(default=0.02, gt=0)
    pulses_per_point: int = Field(default=2**20, ge=100_000)

    # Self-test
    p_psi: float = Field(default=0.005, ge=0, le=1)
    p_phi: float = Field(default=0.005, ge=0, le=1)
    v_psi: float = 0.0
    v_phi: float = 4.2
    v_omega: Optional[float] = None
    visibility_min: float = Field(default=0.98, ge=0, le=1)
    omega_visibility_max: float = Field(default=0.02, ge=0, le=1)
    alarm_window: int = Field(default=20, ge=1)
    stop_on_alarm: bool = True

    # Extrator
    extractor_n: int = Field(default=400, ge=8)
    epsilon_log2: float = Field(default=100.0, gt=0)
    calibration_blocks: int = Field(default=64, ge=1)

    # Estabilidade: janelas do relógio simulado (30 min por padrão)
    stability_window_s: float = Field(default=1800.0, gt=0)

    # Saída
    out_dir: str = "runs/out"
    record_run: bool = True

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.p_psi + self.p_phi > 1:
            raise ValueError("p_psi + p_phi não pode exceder 1")
        if self.coarse_start >= self.coarse_end:
            raise ValueError("coarse_start deve ser menor que coarse_end")
        if self.extractor_n % 8:
            raise ValueError("extractor_n deve ser múltiplo de 8")
        return self

    @property
    def master_seed(self) -> int:
        return self.seed if self.seed is not None else self.device.rng_seed


# ============================================================================
# RUN RECORD MODEL
# ============================================================================

class RunRecord(SQLModel, table=True):
    """
    Registro de uma execução do pipeline (`run`).
    Guarda os números de cabeçalho; as séries ficam nas tabelas filhas.
    """
    __tablename__ = "runs"

    id: Optional[int] = Field(default=None, primary_key=True)
    seed: str = Field(max_length=32, index=True)
    n_blocks: int = Field(ge=0)
    v_opt: float
    h_min: float
    m: int = Field(ge=0)
    mean_entropy: float
    bitrate_bps: float
    extracted_bytes: int = Field(default=0, ge=0)
    alarm: bool = Field(default=False)
    output_path: str = Field(max_length=500)
    config_json: str
    created_at: datetime = Field(default_factory=datetime.utcnow)

    sweep_points: list["SweepPointRecord"] = Relationship(back_populates="run")
    visibility_samples: list["VisibilitySampleRecord"] = Relationship(back_populates="run")

    def __repr__(self):
        return f"<Run {self.id} seed={self.seed}>"


class SweepPointRecord(SQLModel, table=True):
    __tablename__ = "sweep_points"

    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[int] = Field(default=None, foreign_key="runs.id", index=True)
    stage: str = Field(max_length=10)  # coarse | fine
    voltage: float
    entropy: float
    early: int
    late: int
    double: int
    empty: int

    run: Optional[RunRecord] = Relationship(back_populates="sweep_points")


class VisibilitySampleRecord(SQLModel, table=True):
    __tablename__ = "visibility_samples"

    id: Optional[int] = Field(default=None, primary_key=True)
    run_id: Optional[int] = Field(default=None, foreign_key="runs.id", index=True)
    block_index: int
    state: str = Field(max_length=5)
    visibility: float

    run: Optional[RunRecord] = Relationship(back_populates="visibility_samples")


# ============================================================================
# SCHEMAS (Request/Response models)
# ============================================================================

class SweepPointResponse(SQLModel):
    voltage: float
    entropy: float
    early: int
    late: int
    double: int
    empty: int


class SweepResponse(SQLModel):
    """Resposta de um sweep avulso"""
    points: list[SweepPointResponse]
    argmax_voltage: float
    max_entropy: float


class OptimizeResponse(SQLModel):
    v_opt: float
    predicted_v_opt: Optional[float]
    coarse: SweepResponse
    fine: SweepResponse


class StateSummary(SQLModel):
    state: str
    samples: int
    mean: Optional[float]
    std: Optional[float]
    alarm: bool


class SelftestResponse(SQLModel):
    """Resumo do self-test (médias, desvios e alarmes por estado)"""
    blocks_run: int
    omega_blocks_emitted: int
    alarm: bool
    alarm_block_index: Optional[int]
    states: list[StateSummary]


class EntropyResponse(SQLModel):
    shannon_entropy: float
    min_entropy: float
    total: int


class RunResponse(SQLModel):
    """Schema de resposta de uma execução"""
    id: int
    seed: str
    n_blocks: int
    v_opt: float
    h_min: float
    m: int
    mean_entropy: float
    bitrate_bps: float
    extracted_bytes: int
    alarm: bool
    output_path: str
    created_at: datetime
