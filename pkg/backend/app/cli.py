# app/cli.py

"""
Linha de comando do gêmeo digital.

    python -m app.cli tune     --config bench.conf --out sweeps.csv
    python -m app.cli simulate --n_blocks 10 --out blocks.sqrn
    python -m app.cli selftest --n_blocks 400 --csv visibility.csv
    python -m app.cli serve    --out - | python -m app.cli recv --in - --bin raw.bin
    python -m app.cli extract  --in raw.bin --out out.bin --hmin 7.7451
    python -m app.cli check    --in out.bin
    python -m app.cli export   --in out.bin --nist out.txt --dieharder out.dh
    python -m app.cli analyze  --in blocks.sqrn --csv blocks.csv
    python -m app.cli run      --config bench.conf --seed 42

Toda chave do arquivo de config tem uma flag de mesmo nome (--pulse_rate_hz,
--p_psi, ...); a flag vence o arquivo.

Saída: 0 ok, 1 bateria com Fail, 2 erro de config/entrada, 3 alarme do self-test.
"""

import argparse
import sys
from pathlib import Path
from typing import Optional

from app.config import (
    build_pipeline_config,
    load_kv_file,
    merge_overrides,
    settings,
)
from app.exceptions import ConfigError, FrameError, QRNGError
from app.logging_config import configure_logging, get_logger
from app.models import DeviceConfig, PipelineConfig, StateTag
from app.services.acquisition import BlockProducer, effective_bitrate, iter_blocks
from app.services.blockstream import FrameReader, FrameWriter, write_frames, write_payloads
from app.services.optics_model import derive_rng
from app.services.pipeline import EXIT_ALARM, EXIT_CHECK_FAILED, EXIT_OK, extract_file, h_min_from, run_pipeline
from app.services.reports import BlockAnalyzer, write_stability_csv
from app.services.selftest import SelftestOptions, VisibilityReport, iter_selftest, run_selftest
from app.services.testkit import export_dieharder, export_nist, import_bits, quick_battery, stream_battery
from app.services.tuner import optimize, predicted_optimum, write_sweeps_csv

logger = get_logger("cli")

EXIT_ERROR = 2

DEVICE_KEYS = [k for k in DeviceConfig.model_fields]
PIPELINE_KEYS = [k for k in PipelineConfig.model_fields if k != "device"]


# ============================================================================
# PARSER
# ============================================================================

def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING... (default: Settings.log_level)")
    return parent


def _config_parent() -> argparse.ArgumentParser:
    """--config mais uma flag por chave; valores ficam strings e o model faz a coerção."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=Path, default=None, help="arquivo chave = valor")
    device = parent.add_argument_group("dispositivo")
    for key in DEVICE_KEYS:
        device.add_argument(f"--{key}", default=None, metavar="VALOR")
    pipeline = parent.add_argument_group("pipeline")
    for key in PIPELINE_KEYS:
        pipeline.add_argument(f"--{key}", default=None, metavar="VALOR")
    return parent


def _add_stability_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--stability", type=Path, default=None, help="CSV de estabilidade por janela")
    window = parser.add_mutually_exclusive_group()
    window.add_argument("--window", type=int, default=None, help="blocos por janela (default: 10)")
    window.add_argument("--window-s", type=float, default=None, help="janela no relógio simulado (s)")


def build_parser() -> argparse.ArgumentParser:
    common = _common_parent()
    configured = _config_parent()
    p = argparse.ArgumentParser(prog="qrng", description="Gêmeo digital de QRNG Sagnac")
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("tune", parents=[common, configured], help="sweep grosso + fino, imprime v_opt")
    t.add_argument("--out", type=Path, default=Path("sweeps.csv"), help="CSV dos dois sweeps")

    s = sub.add_parser("simulate", parents=[common, configured], help="blocos Ω numa tensão fixa")
    s.add_argument("--voltage", type=float, default=None, help="default: ponto de equilíbrio previsto")
    s.add_argument("--out", type=Path, default=None, help="arquivo de frames")
    s.add_argument("--bin", type=Path, default=None, help="payloads concatenados (.bin)")
    _add_stability_args(s)

    st = sub.add_parser("selftest", parents=[common, configured], help="protocolo prepare-and-measure")
    st.add_argument("--csv", type=Path, default=None, help="série de visibilidades")

    sv = sub.add_parser("serve", parents=[common, configured], help="produz frames num sink")
    sv.add_argument("--out", required=True, help="arquivo ou '-' para stdout")

    r = sub.add_parser("recv", parents=[common], help="consome frames de uma fonte")
    r.add_argument("--in", dest="source", required=True, help="arquivo ou '-' para stdin")
    r.add_argument("--bin", type=Path, default=None, help="payloads recebidos (.bin)")
    r.add_argument("--resync", action="store_true", help="pula frames corrompidos")

    e = sub.add_parser("extract", parents=[common], help="extração de Toeplitz de um .bin bruto")
    e.add_argument("--in", dest="source", type=Path, required=True)
    e.add_argument("--out", type=Path, required=True)
    e.add_argument("--n", type=int, default=400)
    e.add_argument("--epsilon-log2", type=float, default=100.0)
    group = e.add_mutually_exclusive_group(required=True)
    group.add_argument("--hmin", type=float, help="min-entropia por byte")
    group.add_argument("--hmin-from", type=Path, help="sidecar .json ou arquivo bruto de calibração")
    e.add_argument("--workers", type=int, default=settings.workers)

    c = sub.add_parser("check", parents=[common], help="bateria rápida sobre um .bin")
    c.add_argument("--in", dest="source", type=Path, required=True)
    c.add_argument("--report", type=Path, default=None, help="saída JSON-lines")
    c.add_argument("--streams", type=int, default=1, help="> 1: proporções e KS por teste")

    x = sub.add_parser("export", parents=[common], help="exporta para NIST STS / Dieharder")
    x.add_argument("--in", dest="source", type=Path, required=True)
    x.add_argument("--nist", type=Path, default=None)
    x.add_argument("--dieharder", type=Path, default=None)
    x.add_argument("--bits", type=int, default=None, help="limita a quantidade de bits")

    a = sub.add_parser("analyze", parents=[common], help="CSV por bloco de um arquivo de frames")
    a.add_argument("--in", dest="source", type=Path, required=True)
    a.add_argument("--csv", type=Path, required=True)
    a.add_argument("--resync", action="store_true")
    _add_stability_args(a)

    sub.add_parser("run", parents=[common, configured], help="pipeline completo")
    return p


# ============================================================================
# CONFIG
# ============================================================================

def load_config(args: argparse.Namespace, require_seed: bool = False) -> PipelineConfig:
    values = load_kv_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in DEVICE_KEYS + PIPELINE_KEYS}
    merged = merge_overrides(values, overrides)
    if require_seed and merged.get("seed") is None:
        raise ConfigError("--seed é obrigatório (ou `seed = ...` no arquivo de config)")
    return build_pipeline_config(merged)


def _open_binary(target: str, mode: str):
    if target == "-":
        return sys.stdout.buffer if "w" in mode else sys.stdin.buffer
    return open(target, mode)


# ============================================================================
# SUBCOMANDOS
# ============================================================================

def cmd_tune(args) -> int:
    cfg = load_config(args)
    v_opt, (coarse, fine) = optimize(
        cfg.device,
        derive_rng(cfg.master_seed),
        coarse_start=cfg.coarse_start,
        coarse_end=cfg.coarse_end,
        coarse_step=cfg.coarse_step,
        fine_half_width=cfg.fine_half_width,
        fine_step=cfg.fine_step,
        pulses_per_point=cfg.pulses_per_point,
        workers=cfg.workers,
    )
    write_sweeps_csv(args.out, {"coarse": coarse, "fine": fine})
    predicted = predicted_optimum(cfg.device)
    print(f"v_opt = {v_opt:.4f} V  (H = {fine.argmax().entropy:.4f} bits/byte)")
    if predicted is not None:
        print(f"previsto = {predicted:.4f} V")
    return EXIT_OK


def _write_stability(analyzer: BlockAnalyzer, args) -> None:
    if args.stability is None:
        return
    if args.window_s is not None:
        windows = analyzer.stability(window_s=args.window_s)
    else:
        windows = analyzer.stability(window_blocks=args.window or 10)
    write_stability_csv(args.stability, windows)
    means = [w["mean_entropy"] for w in windows]
    if means:
        print(f"estabilidade: {len(windows)} janelas, H̄ entre {min(means):.4f} e {max(means):.4f}")


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    v = args.voltage if args.voltage is not None else predicted_optimum(cfg.device)
    if v is None:
        raise ConfigError("sem ponto de equilíbrio: informe --voltage")
    schedule = ((v, StateTag.OMEGA) for _ in range(cfg.n_blocks))
    analyzer = BlockAnalyzer(cfg.device)
    blocks = []
    with BlockProducer(lambda: iter_blocks(cfg.device, schedule, derive_rng(cfg.master_seed)),
                       depth=settings.queue_depth) as produced:
        for block in produced:
            analyzer.add(block)
            blocks.append(block)
    if args.out:
        write_frames(blocks, args.out)
    if args.bin:
        write_payloads(blocks, args.bin)
    _write_stability(analyzer, args)
    agg = analyzer.aggregate()
    print(
        f"{agg['blocks']} blocos em {v:.4f} V: H̄ = {agg['mean_entropy']:.4f} ± {agg['std_entropy']:.4f}, "
        f"taxa = {effective_bitrate(blocks, cfg.device) / 1e3:.1f} kbps"
    )
    return EXIT_OK


def _selftest_options(cfg: PipelineConfig) -> SelftestOptions:
    v_omega = cfg.v_omega if cfg.v_omega is not None else predicted_optimum(cfg.device)
    if v_omega is None:
        raise ConfigError("sem ponto de equilíbrio: informe --v_omega")
    return SelftestOptions.from_pipeline(cfg, v_omega)


def cmd_selftest(args) -> int:
    cfg = load_config(args)
    _, report = run_selftest(cfg.device, cfg.n_blocks, derive_rng(cfg.master_seed), _selftest_options(cfg))
    if args.csv:
        report.write_csv(args.csv)
    for row in report.summary():
        mean = "-" if row["mean"] is None else f"{row['mean']:.4f}"
        std = "-" if row["std"] is None else f"{row['std']:.4f}"
        print(f"{row['state']:<6} n={row['samples']:<5} ν̄={mean} σ={std} alarme={row['alarm']}")
    if report.alarm:
        print(f"ALARME no bloco {report.alarm_block_index}", file=sys.stderr)
        return EXIT_ALARM
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = load_config(args)
    options = _selftest_options(cfg)
    report = VisibilityReport()
    sink = _open_binary(args.out, "wb")
    try:
        writer = FrameWriter(sink)
        with BlockProducer(
            lambda: iter_selftest(cfg.device, cfg.n_blocks, derive_rng(cfg.master_seed), options, report),
            depth=settings.queue_depth,
        ) as blocks:
            writer.write_all(blocks)
    finally:
        if sink is not sys.stdout.buffer:
            sink.close()
    logger.info("serve: %d frames enviados", writer.frames_written)
    return EXIT_ALARM if report.alarm else EXIT_OK


def cmd_recv(args) -> int:
    source = _open_binary(args.source, "rb")
    out = open(args.bin, "wb") if args.bin else None
    received = 0
    try:
        reader = FrameReader(source, resync=args.resync)
        for block in reader:
            received += 1
            if out:
                out.write(block.payload)
    finally:
        if out:
            out.close()
        if source is not sys.stdin.buffer:
            source.close()
    print(f"{received} frames recebidos, {len(reader.errors)} descartados")
    return EXIT_OK


def cmd_extract(args) -> int:
    h_min = args.hmin if args.hmin is not None else h_min_from(args.hmin_from)
    sidecar = extract_file(args.source, args.out, h_min, n=args.n, epsilon_log2=args.epsilon_log2, workers=args.workers)
    print(
        f"m = {sidecar['m']}  eficiência = {100 * sidecar['efficiency']:.2f}%  "
        f"saída = {sidecar['output_bytes']} bytes"
    )
    return EXIT_OK


def cmd_check(args) -> int:
    bits = import_bits(args.source)
    if args.streams > 1:
        summary = stream_battery(bits, args.streams)
        failed = False
        for name, row in summary.items():
            lo, hi = row["interval"]
            print(f"{name:<16} proporção={row['proportion']:.4f} [{lo:.4f}, {hi:.4f}] KS p={row['ks_pvalue']:.4f}")
            failed |= not row["within"]
        return EXIT_CHECK_FAILED if failed else EXIT_OK
    report = quick_battery(bits)
    for r in report.results:
        print(f"{r.name:<16} p={r.p_value:.6f} {r.verdict.value}")
    if args.report:
        args.report.write_text(report.to_jsonl())
    return EXIT_CHECK_FAILED if report.any_fail else EXIT_OK


def cmd_export(args) -> int:
    if not args.nist and not args.dieharder:
        raise ConfigError("informe --nist e/ou --dieharder")
    bits = import_bits(args.source, args.bits)
    if args.nist:
        ascii_path, bin_path = export_nist(bits, args.nist)
        print(f"NIST: {ascii_path} ({bits.size} caracteres) + {bin_path}")
    if args.dieharder:
        path = export_dieharder(bits, args.dieharder)
        print(f"Dieharder: {path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    analyzer = BlockAnalyzer()
    with open(args.source, "rb") as fh:
        reader = FrameReader(fh, resync=args.resync)
        analyzer.extend(reader)
    analyzer.write_csv(args.csv)
    _write_stability(analyzer, args)
    agg = analyzer.aggregate()
    print(
        f"{agg['blocks']} blocos: H̄ = {agg['mean_entropy']:.4f} ± {agg['std_entropy']:.4f}, "
        f"H_min (agregado) = {agg['min_entropy']:.4f}"
    )
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args, require_seed=True)
    result = run_pipeline(cfg)
    print(f"v_opt = {result.v_opt:.4f} V  H_min = {result.h_min}  saída = {result.extracted_bytes} bytes")
    print(f"artefatos em {cfg.out_dir}")
    return result.exit_status


COMMANDS = {
    "tune": cmd_tune,
    "simulate": cmd_simulate,
    "selftest": cmd_selftest,
    "serve": cmd_serve,
    "recv": cmd_recv,
    "extract": cmd_extract,
    "check": cmd_check,
    "export": cmd_export,
    "analyze": cmd_analyze,
    "run": cmd_run,
}


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or settings.log_level)
    try:
        return COMMANDS[args.cmd](args)
    except FrameError as exc:
        print(f"erro de frame: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except QRNGError as exc:
        print(f"erro: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"erro de E/S: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
