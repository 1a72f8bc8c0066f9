# app/logging_config.py

import logging

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"

_configured = False


def configure_logging(level: str = "INFO") -> None:
    """
    Configura o logger raiz uma única vez.
    Chamadas seguintes apenas ajustam o nível.
    """
    global _configured
    root = logging.getLogger()
    if not _configured:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter(LOG_FORMAT))
        root.addHandler(handler)
        _configured = True
    root.setLevel(level.upper())


def get_logger(name: str) -> logging.Logger:
    """Logger com prefixo do pacote (ex: qrng.extractor)."""
    return logging.getLogger(f"qrng.{name}")
