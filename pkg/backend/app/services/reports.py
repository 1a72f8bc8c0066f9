# app/services/reports.py

"""
Análise por bloco (CSV do `analyze`), estabilidade por janela e
persistência das execuções no banco.
"""

import csv
import json
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np
from sqlmodel import Session

from app.exceptions import ConfigError, InsufficientData
from app.logging_config import get_logger
from app.models import (
    DeviceConfig,
    RunRecord,
    StateTag,
    SweepPointRecord,
    VisibilitySampleRecord,
)
from app.services.acquisition import BLOCK_BITS, RawBlock
from app.services.metrics import ByteHistogram, min_entropy, shannon_entropy
from app.services.selftest import VisibilityReport
from app.services.tuner import SweepResult

logger = get_logger("reports")

CSV_COLUMNS = [
    "index", "state", "shannon_entropy", "min_entropy",
    "early", "late", "double", "empty", "pulses", "bitrate_bps", "start_time_s",
]
STABILITY_COLUMNS = [
    "window", "first_index", "last_index", "start_time_s", "blocks",
    "mean_entropy", "std_entropy", "mean_bitrate_bps", "std_bitrate_bps",
]


class BlockAnalyzer:
    """
    Acumula uma linha por bloco e o histograma agregado.
    Blocos lidos de frames não têm contagem de pulsos: a taxa fica vazia.
    """

    def __init__(self, cfg: Optional[DeviceConfig] = None):
        self.cfg = cfg
        self.rows: list[dict] = []
        self.histogram = ByteHistogram()
        self._pulses = 0

    def add(self, block: RawBlock) -> dict:
        hist = ByteHistogram.from_bytes(block.payload)
        self.histogram = self.histogram.merge(hist)
        bitrate = None
        start_time = None
        if self.cfg is not None and block.pulses > 0:
            bitrate = BLOCK_BITS * self.cfg.pulse_rate_hz / block.pulses
            start_time = block.start_time_s(self.cfg)
            self._pulses += block.pulses
        row = {
            "index": block.index,
            "state": StateTag(block.state_tag).name,
            "shannon_entropy": block.shannon_entropy,
            "min_entropy": min_entropy(hist),
            "early": block.early,
            "late": block.late,
            "double": block.double,
            "empty": block.empty,
            "pulses": block.pulses,
            "bitrate_bps": bitrate,
            "start_time_s": start_time,
        }
        self.rows.append(row)
        return row

    def extend(self, blocks: Iterable[RawBlock]) -> "BlockAnalyzer":
        for block in blocks:
            self.add(block)
        return self

    def aggregate(self) -> dict:
        entropies = np.array([r["shannon_entropy"] for r in self.rows], dtype=float)
        bitrate = None
        if self.cfg is not None and self._pulses > 0:
            counted = sum(1 for r in self.rows if r["bitrate_bps"] is not None)
            bitrate = counted * BLOCK_BITS * self.cfg.pulse_rate_hz / self._pulses
        return {
            "blocks": len(self.rows),
            "mean_entropy": float(entropies.mean()) if entropies.size else 0.0,
            "std_entropy": float(entropies.std(ddof=1)) if entropies.size > 1 else 0.0,
            "shannon_entropy": shannon_entropy(self.histogram) if self.histogram.total else 0.0,
            "min_entropy": min_entropy(self.histogram) if self.histogram.total else 0.0,
            "bitrate_bps": bitrate,
        }

    def write_csv(self, path: Union[str, Path]) -> None:
        """Linhas por bloco e uma linha final `ALL` com o agregado."""
        agg = self.aggregate()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                writer.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
            writer.writerow([
                "ALL", "", _fmt(agg["shannon_entropy"]), _fmt(agg["min_entropy"]),
                sum(r["early"] for r in self.rows), sum(r["late"] for r in self.rows),
                sum(r["double"] for r in self.rows), sum(r["empty"] for r in self.rows),
                sum(r["pulses"] for r in self.rows), _fmt(agg["bitrate_bps"]), "",
            ])

    def stability(self, window_blocks: Optional[int] = None, window_s: Optional[float] = None) -> list[dict]:
        """
        Entropia e taxa médias (± desvio) por janela, para acompanhar a
        estabilidade ao longo da execução.

        window_blocks agrupa N blocos consecutivos; window_s agrupa pelo
        relógio simulado (início do bloco) e exige blocos com contagem de
        pulsos. Janelas sem blocos não aparecem.
        """
        if (window_blocks is None) == (window_s is None):
            raise ConfigError("informe exatamente um de window_blocks / window_s")
        if window_blocks is not None and window_blocks < 1:
            raise ConfigError("window_blocks deve ser >= 1")
        if window_s is not None:
            if window_s <= 0:
                raise ConfigError("window_s deve ser positivo")
            if any(r["start_time_s"] is None for r in self.rows):
                raise InsufficientData("janelas de tempo exigem blocos com relógio (contagem de pulsos)")

        groups: dict[int, list[dict]] = {}
        for position, row in enumerate(self.rows):
            if window_blocks is not None:
                key = position // window_blocks
            else:
                key = int(row["start_time_s"] // window_s)
            groups.setdefault(key, []).append(row)

        windows = []
        for key, rows in groups.items():
            entropies = np.array([r["shannon_entropy"] for r in rows], dtype=float)
            bitrates = np.array([r["bitrate_bps"] for r in rows if r["bitrate_bps"] is not None], dtype=float)
            windows.append({
                "window": key,
                "first_index": rows[0]["index"],
                "last_index": rows[-1]["index"],
                "start_time_s": rows[0]["start_time_s"],
                "blocks": len(rows),
                "mean_entropy": float(entropies.mean()),
                "std_entropy": float(entropies.std(ddof=1)) if entropies.size > 1 else 0.0,
                "mean_bitrate_bps": float(bitrates.mean()) if bitrates.size else None,
                "std_bitrate_bps": float(bitrates.std(ddof=1)) if bitrates.size > 1 else None,
            })
        logger.debug("estabilidade: %d janelas", len(windows))
        return windows


def write_stability_csv(path: Union[str, Path], windows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STABILITY_COLUMNS)
        for window in windows:
            writer.writerow([_fmt(window[c]) for c in STABILITY_COLUMNS])


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


# ============================================================================
# PERSISTÊNCIA
# ============================================================================

def save_run(
    session: Session,
    *,
    seed: int,
    n_blocks: int,
    v_opt: float,
    h_min: float,
    m: int,
    aggregate: dict,
    extracted_bytes: int,
    alarm: bool,
    output_path: str,
    config: dict,
    sweeps: dict[str, SweepResult],
    report: VisibilityReport,
) -> RunRecord:
    """Grava a execução com os pontos de sweep e as amostras de visibilidade."""
    run = RunRecord(
        seed=str(seed),
        n_blocks=n_blocks,
        v_opt=v_opt,
        h_min=h_min,
        m=m,
        mean_entropy=aggregate["mean_entropy"],
        bitrate_bps=aggregate["bitrate_bps"] or 0.0,
        extracted_bytes=extracted_bytes,
        alarm=alarm,
        output_path=output_path,
        config_json=json.dumps(config, default=str),
    )
    for stage, result in sweeps.items():
        for p in result.points:
            run.sweep_points.append(SweepPointRecord(
                stage=stage, voltage=p.voltage, entropy=p.entropy,
                early=p.early, late=p.late, double=p.double, empty=p.empty,
            ))
    for tag, samples in report.series.items():
        for index, value in samples:
            run.visibility_samples.append(
                VisibilitySampleRecord(block_index=index, state=tag.name, visibility=value)
            )
    session.add(run)
    session.commit()
    session.refresh(run)
    logger.info("execução %d registrada (%d pontos de sweep)", run.id, len(run.sweep_points))
    return run
