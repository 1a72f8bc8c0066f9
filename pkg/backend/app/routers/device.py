# app/routers/device.py

from fastapi import APIRouter, Depends, Query

from app.dependencies import get_device_config
from app.models import DeviceConfig
from app.services.optics_model import outcome_probabilities, voltage_to_phase
from app.services.tuner import predicted_optimum

router = APIRouter(prefix="/device", tags=["device"])


@router.get("/default", response_model=DeviceConfig)
def get_default_device():
    """Config calibrada usada quando nenhum arquivo é informado."""
    return DeviceConfig()


@router.post("/probabilities")
def get_outcome_probabilities(
    v: float = Query(..., description="Tensão aplicada ao modulador (V)"),
    device: DeviceConfig = Depends(get_device_config),
):
    """
    Probabilidades fechadas por pulso na tensão v e a taxa bruta esperada.

    **Retorna:** fase, P(nenhum), P(early), P(late), P(duplo), taxa em bps
    e o ponto de equilíbrio previsto.
    """
    probs = outcome_probabilities(device, v)
    return {
        "voltage": v,
        "phase": voltage_to_phase(v, device),
        "none": probs.none,
        "early": probs.early,
        "late": probs.late,
        "double": probs.double,
        "single": probs.single,
        "expected_bitrate_bps": probs.single * device.pulse_rate_hz,
        "predicted_v_opt": predicted_optimum(device),
    }
