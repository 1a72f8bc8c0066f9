# app/routers/tuner.py

from fastapi import APIRouter, Depends

from app.dependencies import SweepParams, get_device_config
from app.models import DeviceConfig, OptimizeResponse, SweepPointResponse, SweepResponse
from app.services.optics_model import derive_rng
from app.services.tuner import SweepResult, optimize, predicted_optimum, sweep

router = APIRouter(prefix="/tuner", tags=["tuner"])


def _to_response(result: SweepResult) -> SweepResponse:
    best = result.argmax()
    return SweepResponse(
        points=[
            SweepPointResponse(
                voltage=p.voltage, entropy=p.entropy,
                early=p.early, late=p.late, double=p.double, empty=p.empty,
            )
            for p in result.points
        ],
        argmax_voltage=best.voltage,
        max_entropy=best.entropy,
    )


@router.post("/sweep", response_model=SweepResponse)
def run_sweep(
    params: SweepParams = Depends(),
    device: DeviceConfig = Depends(get_device_config),
):
    """
    Sweep único de tensão (curvas de contagem e de entropia).

    **Exemplo:**
```
    POST /api/tuner/sweep?v_start=2.0&v_end=2.3&step=0.02
```
    """
    result = sweep(
        device, params.v_start, params.v_end, params.step,
        params.pulses_per_point, derive_rng(params.seed),
    )
    return _to_response(result)


@router.post("/optimize", response_model=OptimizeResponse)
def run_optimize(
    params: SweepParams = Depends(),
    device: DeviceConfig = Depends(get_device_config),
):
    """Sweep grosso na grade pedida + sweep fino em argmax ± 0.15 V."""
    v_opt, (coarse, fine) = optimize(
        device,
        derive_rng(params.seed),
        coarse_start=params.v_start,
        coarse_end=params.v_end,
        coarse_step=params.step,
        pulses_per_point=params.pulses_per_point,
    )
    predicted = predicted_optimum(device)
    return OptimizeResponse(
        v_opt=v_opt,
        predicted_v_opt=predicted,
        coarse=_to_response(coarse),
        fine=_to_response(fine),
    )
