import math

import numpy as np
import pytest

from app.exceptions import ConfigError
from app.models import DeviceConfig
from app.services.acquisition import run_acquisition
from app.services.optics_model import derive_rng, outcome_probabilities
from app.services.tuner import (
    optimize,
    predicted_optimum,
    splitting_fit,
    sweep,
    voltage_grid,
    write_sweeps_csv,
)

PULSES = 2**20


def test_voltage_grid_is_inclusive():
    grid = voltage_grid(0.0, 4.2, 0.2)
    assert len(grid) == 22
    assert grid[0] == 0.0
    assert grid[-1] == pytest.approx(4.2)
    assert 2.15 in voltage_grid(2.05, 2.35, 0.02)


@pytest.mark.parametrize("start, end, step", [(1.0, 1.0, 0.1), (2.0, 1.0, 0.1), (0.0, 1.0, 0.0)])
def test_voltage_grid_rejects_bad_ranges(start, end, step):
    with pytest.raises(ConfigError):
        voltage_grid(start, end, step)


def test_too_few_pulses_per_point(device):
    with pytest.raises(ConfigError):
        sweep(device, 0.0, 4.2, 0.2, 99_999, derive_rng(1))


def test_coarse_sweep_shape(device):
    result = sweep(device, 0.0, 4.2, 0.2, PULSES, derive_rng(2))
    assert len(result.points) == 22
    assert all(p.pulses == PULSES for p in result.points)
    assert result.points[0].entropy < 0.05
    assert result.argmax().voltage == pytest.approx(2.2)
    assert result.argmax().entropy >= 7.98


def test_sweep_is_independent_of_workers(device):
    a = sweep(device, 1.0, 3.0, 0.2, 200_000, derive_rng(3), workers=1)
    b = sweep(device, 1.0, 3.0, 0.2, 200_000, derive_rng(3), workers=4)
    assert a.points == b.points


def test_optimum_for_symmetric_losses(device):
    v_opt, (coarse, fine) = optimize(device, derive_rng(4), pulses_per_point=PULSES)
    assert abs(v_opt - 2.15) <= 0.04
    assert fine.argmax().entropy >= 7.98
    assert fine.voltages.min() >= coarse.argmax().voltage - 0.15 - 1e-9
    assert fine.voltages.max() <= coarse.argmax().voltage + 0.15 + 1e-9


def test_optimum_follows_loss_asymmetry(device):
    lossy = device.model_copy(update={"transmittance_early": 0.9})
    predicted = predicted_optimum(lossy)
    assert predicted == pytest.approx(2.0779, abs=1e-3)
    v_opt, _ = optimize(lossy, derive_rng(5), pulses_per_point=PULSES)
    assert abs(v_opt - predicted) <= 0.04


def test_dark_source_tie_goes_to_lowest_voltage():
    dark = DeviceConfig(mean_photon_number=0.0, dark_count_prob=0.0)
    v_opt, (coarse, _) = optimize(dark, derive_rng(6), pulses_per_point=100_000)
    assert np.all(coarse.entropies == 0.0)
    assert v_opt == 0.0


def test_no_predicted_optimum_with_a_dead_path(device):
    assert predicted_optimum(device.model_copy(update={"transmittance_early": 0.0})) is None


# ============================================================================
# CURVAS DE CONTAGEM
# ============================================================================

def test_count_curves_fit_closed_model(device):
    result = sweep(device, 0.0, 4.2, 0.2, PULSES, derive_rng(7))
    fit = splitting_fit(result, device)
    assert fit.dof_early >= 15
    assert fit.dof_late >= 15
    assert fit.p_early > 0.001
    assert fit.p_late > 0.001


def test_accepted_fraction_matches_model_at_every_point(device):
    result = sweep(device, 0.0, 4.2, 0.2, PULSES, derive_rng(8))
    for point in result.points:
        expected = outcome_probabilities(device, point.voltage).single
        observed = (point.early + point.late) / point.pulses
        sigma = math.sqrt(expected * (1 - expected) / point.pulses)
        assert abs(observed - expected) <= 4 * sigma


def test_sweeps_csv(tmp_path, device):
    result = sweep(device, 2.0, 2.2, 0.1, 100_000, derive_rng(9))
    path = tmp_path / "sweeps.csv"
    write_sweeps_csv(path, {"coarse": result, "fine": result})
    lines = path.read_text().splitlines()
    assert lines[0] == "stage,voltage,entropy,early,late,double,empty"
    assert len(lines) == 1 + 2 * 3
    assert lines[1].startswith("coarse,2.0000,")


@pytest.mark.slow
def test_tuning_compensates_loss_asymmetry(device):
    lossy = device.model_copy(update={"transmittance_early": 0.9})
    v_opt, _ = optimize(lossy, derive_rng(10), pulses_per_point=PULSES)

    untuned = run_acquisition(lossy, 2.15, 100, derive_rng(11))
    tuned = run_acquisition(lossy, v_opt, 100, derive_rng(12))
    late_fraction = sum(b.late for b in untuned) / sum(b.early + b.late for b in untuned)
    assert late_fraction == pytest.approx(0.533, abs=0.005)

    untuned_h = np.mean([b.shannon_entropy for b in untuned])
    tuned_h = np.mean([b.shannon_entropy for b in tuned])
    assert tuned_h >= 7.985
    spread = np.hypot(
        np.std([b.shannon_entropy for b in tuned], ddof=1) / 10,
        np.std([b.shannon_entropy for b in untuned], ddof=1) / 10,
    )
    assert tuned_h - untuned_h > 3 * spread
