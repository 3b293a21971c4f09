import math

import numpy as np
import pytest

from src.analysis.scaling import single_scatterer_transmission
from src.dipoles.coupled import Realization, SourceSpec, assemble_sigma, stationary_amplitudes
from src.errors import MeasurementError, PreconditionError, RealizationError, SolverError
from src.transport import transmission
from src.transport.transmission import (DetectorGrid, SimulationConfig, field_at_point, field_on_points,
                                        generate_realization, incident_intensity, realization_stream, scan_curve,
                                        transmission_one)
from src.waveguide.geometry import WaveguideGeometry


def config_for(geom, **overrides):
    params = dict(geom=geom, density=2e-3, detuning=1.0, lengths=(500.0,), realizations_per_l=1)
    params.update(overrides)
    return SimulationConfig(**params)


def solved(real, source):
    return stationary_amplitudes(assemble_sigma(real), source, real)


@pytest.mark.parametrize("a,b,expected", [(4.0, 2.0, 8), (8.0, 8.0, 64)])
def test_atom_count(a, b, expected):
    config = config_for(WaveguideGeometry(a, b))
    real = generate_realization(config, 500.0, realization_stream(0, 0, 0))
    assert config.atom_count(500.0) == expected
    assert real.n_atoms == expected


def test_realizations_are_reproducible(single_mode):
    config = config_for(single_mode)
    first = generate_realization(config, 500.0, realization_stream(42, 1, 7))
    second = generate_realization(config, 500.0, realization_stream(42, 1, 7))
    other = generate_realization(config, 500.0, realization_stream(42, 1, 8))
    assert np.array_equal(first.positions, second.positions)
    assert not np.array_equal(first.positions, other.positions)


def test_positions_respect_bounds_and_separation(multimode):
    config = config_for(multimode, density=0.05, lengths=(20.0,), min_separation=0.5)
    real = generate_realization(config, 20.0, realization_stream(3, 0, 0))
    assert real.n_atoms == 64
    assert real.min_separation() >= 0.5
    assert np.all(real.positions[:, 2] >= 0) and np.all(real.positions[:, 2] <= 20.0)
    assert real.wall_distance() >= 0.25


def test_overcrowded_sample_fails(single_mode):
    config = config_for(single_mode, density=5.0, lengths=(2.0,), min_separation=1.0)
    with pytest.raises(RealizationError):
        generate_realization(config, 2.0, realization_stream(0, 0, 0))


def test_config_invariants(single_mode):
    with pytest.raises(PreconditionError):
        config_for(single_mode, density=0.0)
    with pytest.raises(PreconditionError):
        config_for(single_mode, realizations_per_l=0)
    with pytest.raises(PreconditionError):
        config_for(single_mode, lengths=(600.0, 400.0))
    with pytest.raises(PreconditionError):
        config_for(single_mode, source=SourceSpec([2.0, 1.0, 10.0], [0, 1, 0], 1.0))


def test_detector_grid(single_mode):
    grid = DetectorGrid()
    pts = grid.points(single_mode, 300.0)
    assert pts.shape == (256, 3)
    assert np.all(pts[:, 2] == 400.0)
    assert pts[:, 0].min() == pytest.approx(0.125)
    with pytest.raises(PreconditionError):
        DetectorGrid(nx=4)
    with pytest.raises(PreconditionError):
        DetectorGrid(offset=10.0)


def test_field_without_atoms_is_direct_term(single_mode):
    real = Realization([[2.0, 1.0, 5.0]], single_mode, 10.0)
    source = SourceSpec.on_axis(single_mode)
    r_d = np.array([1.5, 0.8, 110.0])
    empty = Realization(np.empty((0, 3)), single_mode, 10.0)
    np.testing.assert_allclose(field_at_point(np.zeros(3), real, source, r_d),
                               field_at_point(np.zeros(0), empty, source, r_d), rtol=1e-14)


def test_field_superposition(multimode):
    real = Realization([[2.0, 3.0, 1.0], [5.0, 6.0, 4.0]], multimode, 5.0)
    source = SourceSpec.on_axis(multimode)
    rng = np.random.default_rng(0)
    b1 = rng.normal(size=6) + 1j * rng.normal(size=6)
    b2 = rng.normal(size=6) + 1j * rng.normal(size=6)
    r_d = np.array([3.0, 2.0, 105.0])
    direct = field_at_point(np.zeros(6), real, source, r_d)
    total = field_at_point(b1 + b2, real, source, r_d)
    parts = field_at_point(b1, real, source, r_d) + field_at_point(b2, real, source, r_d) - direct
    np.testing.assert_allclose(total, parts, rtol=1e-12, atol=1e-14)


def test_field_point_on_atom_rejected(single_mode):
    real = Realization([[2.0, 1.0, 5.0]], single_mode, 10.0)
    with pytest.raises(PreconditionError):
        field_at_point(np.zeros(3), real, SourceSpec.on_axis(single_mode), [2.0, 1.0, 5.0])


def test_far_field_has_te10_profile(single_mode):
    real = Realization([[1.3, 0.6, 2.0], [2.9, 1.5, 7.0]], single_mode, 10.0)
    source = SourceSpec.on_axis(single_mode)
    pts = DetectorGrid().points(single_mode, real.length)
    fields = field_on_points(solved(real, source), real, source, pts)
    intensity = np.abs(fields[:, 1]) ** 2
    profile = np.sin(np.pi * pts[:, 0] / single_mode.a) ** 2
    np.testing.assert_allclose(intensity / intensity.max(), profile / profile.max(), rtol=1e-2)
    assert np.max(np.abs(fields[:, [0, 2]])) < 1e-6 * np.max(np.abs(fields[:, 1]))


def test_empty_realization_transmits_fully(single_mode):
    real = Realization(np.empty((0, 3)), single_mode, 100.0)
    assert transmission_one(real, SourceSpec.on_axis(single_mode), DetectorGrid()) == 1.0


def test_single_atom_matches_one_dimensional_scatterer(single_mode):
    position = [2.0, 1.0, 5.0]
    real = Realization([position], single_mode, 10.0)
    source = SourceSpec.on_axis(single_mode, detuning=0.0)
    t = transmission_one(real, source, DetectorGrid())
    expected = single_scatterer_transmission(position, single_mode, detuning=0.0)
    assert t == pytest.approx(expected, rel=1e-8)
    assert t < 1.0


def test_far_off_resonance_is_transparent(single_mode):
    config = config_for(single_mode, detuning=1e3)
    real = generate_realization(config, 500.0, realization_stream(1, 0, 0))
    source = SourceSpec.on_axis(single_mode, detuning=1e3)
    assert transmission_one(real, source, DetectorGrid()) == pytest.approx(1.0, abs=0.01)


def test_source_distance_gauge(single_mode):
    real = Realization([[1.2, 0.7, 3.0], [2.5, 1.3, 9.0], [3.1, 0.4, 14.0]], single_mode, 15.0)
    near = SourceSpec.on_axis(single_mode, z=-500.0)
    far = SourceSpec.on_axis(single_mode, z=-1000.0)
    t_near = transmission_one(real, near, DetectorGrid())
    t_far = transmission_one(real, far, DetectorGrid())
    assert abs(t_far - t_near) < 5e-3 * t_near


def test_detector_grid_refinement(multimode):
    real = Realization([[2.1, 3.3, 0.4], [5.2, 4.7, 1.9], [3.9, 6.1, 5.5]], multimode, 6.0)
    source = SourceSpec.on_axis(multimode)
    b = solved(real, source)
    coarse = transmission_one(real, source, DetectorGrid(nx=16, ny=16), b=b)
    fine = transmission_one(real, source, DetectorGrid(nx=32, ny=32), b=b)
    assert abs(fine - coarse) < 5e-3 * coarse


def test_scan_is_deterministic_across_thread_counts(single_mode):
    base = dict(density=0.05, lengths=(10.0, 20.0), realizations_per_l=3, master_seed=99)
    serial = scan_curve(config_for(single_mode, threads=1, **base), progress=False)
    threaded = scan_curve(config_for(single_mode, threads=3, **base), progress=False)
    assert serial.records.equals(threaded.records)
    assert list(serial.records["n_realizations"]) == [3, 3]
    assert not serial.records["failed"].any()
    assert np.all(serial.records["T_geomean"] <= serial.records["T_mean"] + 1e-15)


def test_scan_single_shot_reproducible(single_mode):
    config = config_for(single_mode, density=0.05, lengths=(10.0,), realizations_per_l=1, master_seed=5)
    first = scan_curve(config, progress=False).records
    second = scan_curve(config, progress=False).records
    assert first.equals(second)
    assert first["T_stderr"].iloc[0] == 0.0


def test_scan_counts_failures(single_mode, monkeypatch):
    def flaky(config, l_index, r_index, i0=None):
        if l_index == 1 and r_index < 2:
            raise SolverError("forced", residual=1.0)
        if l_index == 0 and r_index == 0:
            raise SolverError("forced", residual=1.0)
        return 0.5

    monkeypatch.setattr(transmission, "_simulate", flaky)
    config = config_for(single_mode, lengths=(10.0, 20.0), realizations_per_l=10)
    curve = scan_curve(config, progress=False)
    rows = curve.records.set_index("L")
    # one failure in ten is tolerated, two are not
    assert not rows.loc[10.0, "failed"]
    assert rows.loc[10.0, "n_realizations"] == 9
    assert rows.loc[10.0, "T_mean"] == pytest.approx(0.5)
    assert rows.loc[20.0, "failed"]
    assert len(curve.valid()) == 1
    assert curve.metadata["solver_failures"] == 3
    assert [f["realization"] for f in curve.metadata["failures"]] == [0, 0, 1]


def test_geometric_mean_statistics(single_mode, monkeypatch):
    values = {0: 0.25, 1: 1.0}
    monkeypatch.setattr(transmission, "_simulate", lambda config, li, ri, i0=None: values[ri])
    curve = scan_curve(config_for(single_mode, realizations_per_l=2), progress=False)
    row = curve.records.iloc[0]
    assert row["T_mean"] == pytest.approx(0.625)
    assert row["T_geomean"] == pytest.approx(0.5)
    assert row["lnT_stderr"] == pytest.approx(math.log(2))
    assert row["T_stderr"] == pytest.approx(math.sqrt(((0.25 - 0.625) ** 2 + 0.375 ** 2) / 1) / math.sqrt(2))


def test_scan_stops_on_infeasible_density(single_mode):
    config = config_for(single_mode, density=5.0, lengths=(2.0,), min_separation=1.0, realizations_per_l=3)
    with pytest.raises(RealizationError) as info:
        scan_curve(config, progress=False)
    assert info.value.exit_code == 2


def test_realizations_keep_clear_of_walls(single_mode):
    config = config_for(single_mode, density=30.0 / (4.0 * 2.0 * 70.0), lengths=(60.0,))
    for r_index in range(40):
        real = generate_realization(config, 60.0, realization_stream(11, 0, r_index))
        assert real.wall_distance() >= config.min_separation / 2
        assert real.wall_clearance == config.min_separation / 2


def test_realization_rejects_atom_at_wall(single_mode):
    Realization([[1e-3, 1.0, 0.0]], single_mode, 1.0)
    with pytest.raises(PreconditionError):
        Realization([[1e-3, 1.0, 0.0]], single_mode, 1.0, wall_clearance=0.025)
    assert Realization(np.empty((0, 3)), single_mode, 1.0, wall_clearance=0.025).wall_distance() == math.inf


def test_min_separation_must_fit_between_walls(single_mode):
    with pytest.raises(PreconditionError):
        config_for(single_mode, min_separation=2.0)


def test_source_detuning_must_match_medium(single_mode):
    with pytest.raises(PreconditionError):
        config_for(single_mode, source=SourceSpec.on_axis(single_mode, detuning=0.5))
    config = config_for(single_mode, source=SourceSpec.on_axis(single_mode, detuning=1.0))
    assert config.source.detuning == config.detuning


def test_empty_sample_below_cutoff_transmits_fully():
    below = WaveguideGeometry(3.0, 2.0)
    source = SourceSpec.on_axis(below)
    assert transmission_one(Realization(np.empty((0, 3)), below, 10.0), source, DetectorGrid()) == 1.0
    with pytest.raises(MeasurementError):
        transmission_one(Realization([[1.5, 1.0, 5.0]], below, 10.0), source, DetectorGrid())


def test_incident_intensity_is_shared_across_realizations(single_mode, monkeypatch):
    calls = []
    original = transmission.incident_intensity

    def counting(geom, length, *args, **kwargs):
        calls.append(length)
        return original(geom, length, *args, **kwargs)

    monkeypatch.setattr(transmission, "incident_intensity", counting)
    config = config_for(single_mode, density=0.05, lengths=(10.0, 20.0), realizations_per_l=3)
    curve = scan_curve(config, progress=False)
    assert calls == [10.0, 20.0]
    assert not curve.records["failed"].any()


def test_given_incident_intensity_is_used(single_mode):
    real = Realization([[2.0, 1.0, 5.0]], single_mode, 10.0)
    source = SourceSpec.on_axis(single_mode)
    i0 = incident_intensity(single_mode, 10.0, source, DetectorGrid())
    t = transmission_one(real, source, DetectorGrid())
    assert transmission_one(real, source, DetectorGrid(), i0=i0) == t
    assert transmission_one(real, source, DetectorGrid(), i0=2 * i0) == pytest.approx(t / 2, rel=1e-14)


def test_unexpected_worker_error_closes_progress_bar(single_mode, monkeypatch):
    bars = []

    class RecordingBar:
        def __init__(self, *args, **kwargs):
            self.closed = False
            bars.append(self)

        def update(self, n):
            pass

        def close(self):
            self.closed = True

    def broken(config, l_index, r_index, i0=None):
        raise ValueError("not a simulation error")

    monkeypatch.setattr(transmission, "tqdm", RecordingBar)
    monkeypatch.setattr(transmission, "_simulate", broken)
    with pytest.raises(ValueError):
        scan_curve(config_for(single_mode, realizations_per_l=4, threads=2), progress=False)
    assert len(bars) == 1 and bars[0].closed
