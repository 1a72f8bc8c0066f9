# app/routers/metrics.py

from fastapi import APIRouter, Request

from app.models import EntropyResponse
from app.services.metrics import ByteHistogram, min_entropy, shannon_entropy

router = APIRouter(prefix="/metrics", tags=["metrics"])


@router.post("/entropy", response_model=EntropyResponse)
async def measure_entropy(request: Request):
    """
    Entropia de Shannon e min-entropia (bits/byte) dos bytes enviados
    no corpo (application/octet-stream). Corpo vazio: 422.
    """
    hist = ByteHistogram.from_bytes(await request.body())
    return EntropyResponse(
        shannon_entropy=shannon_entropy(hist),
        min_entropy=min_entropy(hist),
        total=hist.total,
    )
