# app/routers/runs.py

from typing import List

from fastapi import APIRouter, Depends
from sqlmodel import Session, func, select

from app.database import get_session
from app.dependencies import PaginationParams, get_run_or_404, paginated_response
from app.models import RunRecord, RunResponse, SweepPointRecord, VisibilitySampleRecord

router = APIRouter(prefix="/runs", tags=["runs"])


@router.get("/", response_model=dict)
def list_runs(
    pagination: PaginationParams = Depends(),
    session: Session = Depends(get_session),
):
    """Lista execuções gravadas pelo `run`, mais recentes primeiro."""
    total = session.exec(select(func.count(RunRecord.id))).one()
    runs = session.exec(
        select(RunRecord)
        .order_by(RunRecord.created_at.desc(), RunRecord.id.desc())
        .offset(pagination.skip)
        .limit(pagination.limit)
    ).all()
    items = [RunResponse.model_validate(run, from_attributes=True) for run in runs]
    return paginated_response(items=items, total=total, skip=pagination.skip, limit=pagination.limit)


@router.get("/{run_id}", response_model=RunResponse)
def get_run(run: RunRecord = Depends(get_run_or_404)):
    return run


@router.get("/{run_id}/sweep", response_model=List[SweepPointRecord])
def get_run_sweep(
    run: RunRecord = Depends(get_run_or_404),
    session: Session = Depends(get_session),
):
    """Pontos dos sweeps grosso e fino, na ordem de gravação."""
    return session.exec(
        select(SweepPointRecord).where(SweepPointRecord.run_id == run.id).order_by(SweepPointRecord.id)
    ).all()


@router.get("/{run_id}/visibility", response_model=List[VisibilitySampleRecord])
def get_run_visibility(
    run: RunRecord = Depends(get_run_or_404),
    session: Session = Depends(get_session),
):
    return session.exec(
        select(VisibilitySampleRecord)
        .where(VisibilitySampleRecord.run_id == run.id)
        .order_by(VisibilitySampleRecord.block_index)
    ).all()
