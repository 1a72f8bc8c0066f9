# app/services/pipeline.py

"""
Pipeline completo: tune -> aquisição com self-test -> frames -> calibração
de H_min -> extração -> análise -> relatórios.

Tudo é reprodutível a partir de (config, seed): cada estágio recebe um
stream próprio derivado da semente mestre.
"""

import json
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
from sqlmodel import Session

from app.config import settings
from app.exceptions import ExtractorError, InsufficientData, QRNGError, StageError
from app.logging_config import get_logger
from app.models import PipelineConfig
from app.services.acquisition import BlockProducer, RawBlock
from app.services.blockstream import FrameWriter
from app.services.extractor import (
    StreamingExtractor,
    ToeplitzExtractor,
    build,
    derive_output_length,
    seed_from_raw,
    sidecar_report,
)
from app.services.metrics import ByteHistogram, bytes_to_bits, min_entropy
from app.services.optics_model import derive_rng, ensure_valid
from app.services.reports import BlockAnalyzer, save_run, write_stability_csv
from app.services.selftest import SelftestOptions, VisibilityReport, iter_selftest
from app.services.testkit import MIN_BATTERY_BITS, TestReport, import_bits, quick_battery
from app.services.tuner import SweepResult, optimize, predicted_optimum, write_sweeps_csv

logger = get_logger("pipeline")

# chaves de derivação dos streams por estágio
TUNE_STREAM = 0
ACQUIRE_STREAM = 1

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_ALARM = 3

ARTIFACTS = {
    "frames": "frames.sqrn",
    "raw": "raw.bin",
    "extracted": "extracted.bin",
    "sidecar": "extracted.json",
    "sweeps": "sweeps.csv",
    "visibility": "visibility.csv",
    "analysis": "analysis.csv",
    "stability": "stability.csv",
    "battery": "battery.jsonl",
}


@contextmanager
def stage(name: str):
    """Anexa o nome do estágio a qualquer erro que escape dele."""
    logger.info("estágio: %s", name)
    try:
        yield
    except StageError:
        raise
    except (QRNGError, OSError, ValueError) as exc:
        raise StageError(name, exc) from exc


class _BitSink:
    """Empacota bits em bytes MSB-first; o resto (< 8 bits) espera o próximo write."""

    def __init__(self, fh):
        self._fh = fh
        self._carry = np.zeros(0, dtype=np.uint8)
        self.bytes_written = 0

    def write(self, bits: np.ndarray) -> None:
        bits = np.concatenate([self._carry, bits])
        usable = bits.size - bits.size % 8
        self._carry = bits[usable:]
        if usable:
            data = np.packbits(bits[:usable]).tobytes()
            self._fh.write(data)
            self.bytes_written += len(data)


@dataclass
class PipelineResult:
    seed: int
    v_opt: float
    predicted_v_opt: Optional[float]
    sweeps: dict[str, SweepResult]
    report: VisibilityReport
    h_min: Optional[float] = None
    extractor: Optional[ToeplitzExtractor] = None
    extracted_bytes: int = 0
    battery: Optional[TestReport] = None
    aggregate: dict = field(default_factory=dict)
    stability: list[dict] = field(default_factory=list)
    artifacts: dict[str, Path] = field(default_factory=dict)
    run_id: Optional[int] = None

    @property
    def exit_status(self) -> int:
        if self.report.alarm:
            return EXIT_ALARM
        if self.battery is not None and self.battery.any_fail:
            return EXIT_CHECK_FAILED
        return EXIT_OK


def calibrate(blocks: list[RawBlock], n: int, epsilon_log2: float) -> tuple[float, int]:
    """H_min (bits/byte) sobre o histograma conjunto dos blocos e o m correspondente."""
    if not blocks:
        raise InsufficientData("nenhum bloco Ω para calibrar H_min")
    hist = ByteHistogram()
    for block in blocks:
        hist = hist.merge(ByteHistogram.from_bytes(block.payload))
    h_min = min_entropy(hist)
    m = derive_output_length(n, h_min, epsilon_log2)
    logger.info(
        "calibração: %d blocos, H_min=%.4f bits/byte -> m=%d (eficiência %.2f%%)",
        len(blocks), h_min, m, 100.0 * m / n,
    )
    return h_min, m


def _start_extractor(
    calibration: list[RawBlock], cfg: PipelineConfig, workers: int
) -> tuple[float, StreamingExtractor, np.ndarray]:
    h_min, m = calibrate(calibration, cfg.extractor_n, cfg.epsilon_log2)
    raw = np.concatenate([bytes_to_bits(b.payload) for b in calibration])
    seed, remaining = seed_from_raw(raw, cfg.extractor_n, m)
    streamer = StreamingExtractor(build(seed, cfg.extractor_n, m, cfg.epsilon_log2), workers=workers)
    return h_min, streamer, streamer.feed(remaining)


def run_pipeline(
    cfg: PipelineConfig,
    session: Optional[Session] = None,
    workers: Optional[int] = None,
) -> PipelineResult:
    """
    Executa todos os estágios e grava os artefatos em cfg.out_dir.
    O resultado não depende de workers nem da profundidade da fila.
    """
    workers = workers or cfg.workers
    master = cfg.master_seed
    out_dir = Path(cfg.out_dir)
    artifacts = {key: out_dir / name for key, name in ARTIFACTS.items()}

    with stage("config"):
        ensure_valid(cfg.device)
        out_dir.mkdir(parents=True, exist_ok=True)

    with stage("tune"):
        v_opt, (coarse, fine) = optimize(
            cfg.device,
            derive_rng(master, TUNE_STREAM),
            coarse_start=cfg.coarse_start,
            coarse_end=cfg.coarse_end,
            coarse_step=cfg.coarse_step,
            fine_half_width=cfg.fine_half_width,
            fine_step=cfg.fine_step,
            pulses_per_point=cfg.pulses_per_point,
            workers=workers,
        )
        sweeps = {"coarse": coarse, "fine": fine}
        write_sweeps_csv(artifacts["sweeps"], sweeps)

    result = PipelineResult(
        seed=master,
        v_opt=v_opt,
        predicted_v_opt=predicted_optimum(cfg.device),
        sweeps=sweeps,
        report=VisibilityReport(),
        artifacts=artifacts,
    )
    v_omega = cfg.v_omega if cfg.v_omega is not None else v_opt
    options = SelftestOptions.from_pipeline(cfg, v_omega)
    analyzer = BlockAnalyzer(cfg.device)
    calibration: list[RawBlock] = []
    streamer: Optional[StreamingExtractor] = None

    with stage("acquire"), \
            open(artifacts["frames"], "wb") as frames_fh, \
            open(artifacts["raw"], "wb") as raw_fh, \
            open(artifacts["extracted"], "wb") as out_fh:
        writer = FrameWriter(frames_fh)
        sink = _BitSink(out_fh)
        source = lambda: iter_selftest(  # noqa: E731
            cfg.device, cfg.n_blocks, derive_rng(master, ACQUIRE_STREAM), options, result.report
        )
        with BlockProducer(source, depth=settings.queue_depth) as blocks:
            for block in blocks:
                writer.write(block)
                raw_fh.write(block.payload)
                analyzer.add(block)
                if streamer is None:
                    calibration.append(block)
                    if len(calibration) >= cfg.calibration_blocks:
                        with stage("extract"):
                            result.h_min, streamer, bits = _start_extractor(calibration, cfg, workers)
                            sink.write(bits)
                        calibration = []
                else:
                    with stage("extract"):
                        sink.write(streamer.feed(bytes_to_bits(block.payload)))

        if streamer is None and calibration:
            logger.warning(
                "apenas %d blocos Ω (< %d): calibrando com o que há",
                len(calibration), cfg.calibration_blocks,
            )
            with stage("extract"):
                result.h_min, streamer, bits = _start_extractor(calibration, cfg, workers)
                sink.write(bits)
        frames_fh.flush()
        result.extracted_bytes = sink.bytes_written

    with stage("analyze"):
        result.aggregate = analyzer.aggregate()
        analyzer.write_csv(artifacts["analysis"])
        result.stability = analyzer.stability(window_s=cfg.stability_window_s)
        write_stability_csv(artifacts["stability"], result.stability)
        result.report.write_csv(artifacts["visibility"])
        logger.info(
            "análise: %d blocos Ω, H̄=%.4f bits/byte, taxa %s",
            result.aggregate["blocks"],
            result.aggregate["mean_entropy"],
            "n/d" if result.aggregate["bitrate_bps"] is None else f"{result.aggregate['bitrate_bps'] / 1e3:.1f} kbps",
        )

    if streamer is not None:
        result.extractor = streamer.ext
        with stage("report"):
            sidecar = sidecar_report(streamer.ext, streamer.input_bits, result.h_min, master)
            sidecar.update({
                "v_opt": v_opt,
                "output_bytes": result.extracted_bytes,
                "dropped_bits": streamer.dropped_bits,
                "config": cfg.model_dump(mode="json"),
            })
            artifacts["sidecar"].write_text(json.dumps(sidecar, indent=2))

    with stage("check"):
        out_bits = import_bits(artifacts["extracted"])
        if out_bits.size >= MIN_BATTERY_BITS:
            result.battery = quick_battery(out_bits)
            artifacts["battery"].write_text(result.battery.to_jsonl())
        else:
            logger.warning("saída com %d bits: bateria rápida não executada", out_bits.size)

    if cfg.record_run:
        with stage("record"):
            result.run_id = _record(result, cfg, session)

    if result.report.alarm:
        logger.warning("execução terminou com alarme no bloco %s", result.report.alarm_block_index)
    return result


def _record(result: PipelineResult, cfg: PipelineConfig, session: Optional[Session]) -> int:
    from app.database import create_db_and_tables, get_session_context

    def save(s: Session) -> int:
        run = save_run(
            s,
            seed=result.seed,
            n_blocks=cfg.n_blocks,
            v_opt=result.v_opt,
            h_min=result.h_min or 0.0,
            m=result.extractor.m if result.extractor else 0,
            aggregate=result.aggregate,
            extracted_bytes=result.extracted_bytes,
            alarm=result.report.alarm,
            output_path=str(result.artifacts["extracted"]),
            config=cfg.model_dump(mode="json"),
            sweeps=result.sweeps,
            report=result.report,
        )
        return run.id

    if session is not None:
        return save(session)
    create_db_and_tables()
    with get_session_context() as s:
        return save(s)


# ============================================================================
# EXTRAÇÃO AVULSA (CLI `extract`)
# ============================================================================

def h_min_from(path: Union[str, Path]) -> float:
    """
    H_min de calibração: lido de um sidecar .json (h_min_per_byte) ou
    medido sobre os bytes de um arquivo bruto.
    """
    path = Path(path)
    if path.suffix == ".json":
        try:
            return float(json.loads(path.read_text())["h_min_per_byte"])
        except (KeyError, ValueError) as exc:
            raise ExtractorError(f"{path}: sidecar sem h_min_per_byte válido") from exc
    data = np.frombuffer(path.read_bytes(), dtype=np.uint8)
    if data.size == 0:
        raise InsufficientData(f"{path}: arquivo vazio")
    return min_entropy(ByteHistogram.from_bytes(data))


def extract_file(
    in_path: Union[str, Path],
    out_path: Union[str, Path],
    h_min: float,
    n: int = 400,
    epsilon_log2: float = 100.0,
    workers: int = 1,
    master_seed: Optional[int] = None,
) -> dict:
    """
    Extrai um .bin bruto: os primeiros n+m-1 bits viram a semente, o resto
    é a entrada. Grava <out>.json ao lado. Devolve o sidecar.
    """
    out_path = Path(out_path)
    raw = import_bits(in_path)
    m = derive_output_length(n, h_min, epsilon_log2)
    seed, remaining = seed_from_raw(raw, n, m)
    if remaining.size < n:
        raise InsufficientData(f"{in_path}: nada sobra para extrair após a semente")
    ext = build(seed, n, m, epsilon_log2)
    streamer = StreamingExtractor(ext, workers=workers)
    with open(out_path, "wb") as fh:
        sink = _BitSink(fh)
        sink.write(streamer.feed(remaining))
    sidecar = sidecar_report(ext, streamer.input_bits, h_min, master_seed)
    sidecar.update({"output_bytes": sink.bytes_written, "dropped_bits": streamer.dropped_bits})
    out_path.with_suffix(out_path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))
    logger.info(
        "extração: %d bits de entrada -> %d bytes (m=%d, eficiência %.2f%%)",
        streamer.input_bits, sink.bytes_written, m, 100 * ext.efficiency,
    )
    return sidecar
