# app/routers/selftest.py

from fastapi import APIRouter, Depends

from app.dependencies import SelftestParams, get_device_config
from app.models import DeviceConfig, SelftestResponse, StateSummary
from app.services.optics_model import derive_rng
from app.services.selftest import SelftestOptions, run_selftest

router = APIRouter(prefix="/selftest", tags=["selftest"])


@router.post("", response_model=SelftestResponse)
def run_selftest_endpoint(
    params: SelftestParams = Depends(),
    device: DeviceConfig = Depends(get_device_config),
):
    """
    Roda o protocolo prepare-and-measure por n_blocks blocos.
    Os blocos Ω não são devolvidos: só o resumo de visibilidades.
    """
    options = SelftestOptions(p_psi=params.p_psi, p_phi=params.p_phi, v_omega=params.v_omega)
    _, report = run_selftest(device, params.n_blocks, derive_rng(params.seed), options)
    return SelftestResponse(
        blocks_run=report.blocks_run,
        omega_blocks_emitted=report.omega_emitted,
        alarm=report.alarm,
        alarm_block_index=report.alarm_block_index,
        states=[StateSummary(**row) for row in report.summary()],
    )
