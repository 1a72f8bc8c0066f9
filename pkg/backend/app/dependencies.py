# app/dependencies.py

import math
from typing import Optional
from fastapi import Depends, HTTPException, status, Query, Path, Body
from sqlmodel import Session, select
from app.database import get_session
from app.models import DeviceConfig, RunRecord


# Limites das simulações sob demanda: a API é só um navegador de relatórios
MAX_API_PULSES_PER_POINT = 2**20
MAX_API_BLOCKS = 64
MAX_API_POINTS = 64


# ============================================================================
# DEVICE DEPENDENCIES
# ============================================================================

def get_device_config(
    device: Optional[DeviceConfig] = Body(None, description="Parâmetros do dispositivo (default se omitido)")
) -> DeviceConfig:
    """
    Config do dispositivo vinda do corpo da requisição.
    Sem corpo, usa os defaults calibrados.
    """
    return device if device is not None else DeviceConfig()


# ============================================================================
# QUERY PARAMETERS DEPENDENCIES
# ============================================================================

class PaginationParams:
    """
    Dependency para paginação de resultados.
    """
    def __init__(
        self,
        skip: int = Query(0, ge=0, description="Número de registros a pular"),
        limit: int = Query(100, ge=1, le=100, description="Limite de registros por página")
    ):
        self.skip = skip
        self.limit = limit


class SweepParams:
    """
    Dependency para a grade de um sweep de tensão.
    """
    def __init__(
        self,
        v_start: float = Query(0.0, description="Tensão inicial (V)"),
        v_end: float = Query(4.2, description="Tensão final (V), inclusiva"),
        step: float = Query(0.2, gt=0, description="Passo (V)"),
        pulses_per_point: int = Query(
            100_000, ge=100_000, le=MAX_API_PULSES_PER_POINT, description="Pulsos por ponto"
        ),
        seed: int = Query(0, ge=0, description="Semente do sweep")
    ):
        if v_start >= v_end:
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail="v_start deve ser menor que v_end"
            )
        points = math.floor((v_end - v_start) / step + 1e-9) + 1
        if points > MAX_API_POINTS:
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail=f"grade com {points} pontos excede o limite de {MAX_API_POINTS}"
            )
        self.v_start = v_start
        self.v_end = v_end
        self.step = step
        self.pulses_per_point = pulses_per_point
        self.seed = seed


class SelftestParams:
    """
    Dependency para o self-test sob demanda.
    """
    def __init__(
        self,
        n_blocks: int = Query(8, ge=1, le=MAX_API_BLOCKS, description="Blocos de 32 kB"),
        p_psi: float = Query(0.005, ge=0, le=1, description="Probabilidade de preparar Ψ"),
        p_phi: float = Query(0.005, ge=0, le=1, description="Probabilidade de preparar Φ"),
        v_omega: float = Query(2.15, description="Tensão do estado Ω (V)"),
        seed: int = Query(0, ge=0, description="Semente do self-test")
    ):
        if p_psi + p_phi > 1:
            raise HTTPException(
                status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
                detail="p_psi + p_phi não pode exceder 1"
            )
        self.n_blocks = n_blocks
        self.p_psi = p_psi
        self.p_phi = p_phi
        self.v_omega = v_omega
        self.seed = seed


# ============================================================================
# ENTITY GETTERS (com validação)
# ============================================================================

def get_run_or_404(
    run_id: int = Path(..., description="ID da execução"),
    session: Session = Depends(get_session)
) -> RunRecord:
    """
    Busca uma execução por ID ou retorna 404.
    """
    run = session.exec(select(RunRecord).where(RunRecord.id == run_id)).first()

    if not run:
        raise HTTPException(
            status_code=status.HTTP_404_NOT_FOUND,
            detail=f"Execução com ID {run_id} não encontrada"
        )

    return run


# ============================================================================
# RESPONSE HELPERS
# ============================================================================

def paginated_response(items: list, total: int, skip: int, limit: int) -> dict:
    """
    Cria uma resposta paginada padronizada.
    """
    page = (skip // limit) + 1 if limit > 0 else 1
    pages = (total + limit - 1) // limit if limit > 0 else 1

    return {
        "items": items,
        "total": total,
        "page": page,
        "pages": pages,
        "per_page": limit
    }
