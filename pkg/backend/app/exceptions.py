# app/exceptions.py

from typing import Optional


class QRNGError(Exception):
    """
    Raiz de todos os erros do gerador.
    A API e a CLI tratam qualquer subclasse de forma uniforme.
    """


class ConfigError(QRNGError):
    """Configuração inválida (arquivo, flag ou combinação de parâmetros)."""


class AcquisitionStalled(QRNGError):
    """
    O bloco não encheu dentro de max_pulses_per_block.
    Carrega as contagens parciais para que o self-test ainda possa usá-las.
    """

    def __init__(self, message: str, counts: dict, pulses: int):
        super().__init__(message)
        self.counts = counts
        self.pulses = pulses


# ============================================================================
# FRAMES (blockstream)
# ============================================================================

class FrameError(QRNGError):
    """Falha ao decodificar um frame do stream de blocos."""


class BadMagic(FrameError):
    pass


class UnsupportedVersion(FrameError):
    pass


class LengthMismatch(FrameError):
    pass


class ChecksumFailure(FrameError):
    pass


class Truncated(FrameError):
    pass


# ============================================================================
# EXTRAÇÃO / TESTES
# ============================================================================

class ExtractorError(QRNGError):
    """Parâmetros ou entrada inválidos para o extrator de Toeplitz."""


class InsufficientEntropy(ExtractorError):
    """O dimensionamento pelo leftover hash lemma resultou em m <= 0."""


class InsufficientData(QRNGError):
    """Entrada pequena demais para a operação pedida."""


class StageError(QRNGError):
    """Erro de um estágio do pipeline, com o nome do estágio anexado."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause: Optional[Exception] = cause
