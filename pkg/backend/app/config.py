# app/config.py

from pathlib import Path
from typing import Any, Union

from pydantic_settings import BaseSettings, SettingsConfigDict
from functools import lru_cache

from app.exceptions import ConfigError


class Settings(BaseSettings):
    """
    Configurações da aplicação.
    Carrega variáveis de ambiente do arquivo .env
    """

    # Aplicação
    app_name: str = "Sagnac QRNG Twin"
    app_version: str = "1.0.0"
    debug: bool = False
    log_level: str = "INFO"

    # Database (relatórios de execução)
    database_url: str = "sqlite:///./qrng_reports.db"

    # Paralelismo: pontos de sweep e blocos de extração
    workers: int = 1
    # Profundidade da fila produtor -> consumidores
    queue_depth: int = 8

    # CORS
    cors_origins: list[str] = [
        "http://localhost:5173",
        "http://localhost:3000",
    ]

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False
    )


@lru_cache
def get_settings() -> Settings:
    """
    Retorna instância única das configurações (singleton).
    O decorator @lru_cache garante que seja criada apenas uma vez.
    """
    return Settings()


# Instância global para facilitar importação
settings = get_settings()


# ============================================================================
# ARQUIVO CHAVE = VALOR
# ============================================================================

def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    """
    Lê o formato plano `chave = valor`, uma entrada por linha.
    `#` inicia comentário; linhas em branco são ignoradas.
    Os valores continuam strings: a coerção fica com o model pydantic.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: esperado 'chave = valor', recebido {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: chave vazia")
        if key in values:
            raise ConfigError(f"{source}:{lineno}: chave duplicada '{key}'")
        values[key] = value
    return values


def load_kv_file(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"não foi possível ler {path}: {exc}") from exc
    return parse_kv_text(text, source=str(path))


def merge_overrides(base: dict[str, Any], overrides: dict[str, Any]) -> dict[str, Any]:
    """Flags da CLI sobrescrevem o arquivo; valores None são ignorados."""
    merged = dict(base)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def build_device_config(values: dict[str, Any]):
    """Monta um DeviceConfig a partir de chaves planas, rejeitando chaves desconhecidas."""
    from pydantic import ValidationError
    from app.models import DeviceConfig

    unknown = set(values) - set(DeviceConfig.model_fields)
    if unknown:
        raise ConfigError(f"chaves desconhecidas: {', '.join(sorted(unknown))}")
    try:
        return DeviceConfig.model_validate(values)
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def build_pipeline_config(values: dict[str, Any]):
    """
    Separa as chaves do dispositivo das chaves do pipeline.
    O mesmo arquivo plano alimenta os dois models.
    """
    from pydantic import ValidationError
    from app.models import DeviceConfig, PipelineConfig

    device_keys = set(DeviceConfig.model_fields)
    pipeline_keys = set(PipelineConfig.model_fields) - {"device"}
    unknown = set(values) - device_keys - pipeline_keys
    if unknown:
        raise ConfigError(f"chaves desconhecidas: {', '.join(sorted(unknown))}")

    device = build_device_config({k: v for k, v in values.items() if k in device_keys})
    try:
        return PipelineConfig.model_validate(
            {"device": device, **{k: v for k, v in values.items() if k in pipeline_keys}}
        )
    except ValidationError as exc:
        raise ConfigError(_format_validation(exc)) from exc


def _format_validation(exc) -> str:
    return "; ".join(
        f"{'->'.join(str(loc) for loc in err['loc']) or 'config'}: {err['msg']}"
        for err in exc.errors()
    )
