import numpy as np
import pytest

from src.dipoles.coupled import (Realization, SourceSpec, assemble_sigma, collective_spectrum, evolve, propagate,
                                 source_column, spectrum_summary, stationary_amplitudes, time_domain_oracle)
from src.errors import PreconditionError, SolverError
from src.waveguide.geometry import WaveguideGeometry
from src.waveguide.green import freespace_dyadic, waveguide_self_decay

# 30.3 x 30.3 keeps every cutoff at least 0.016 away from k = 1
LARGE = WaveguideGeometry(30.3, 30.3)
CENTER = (15.15, 15.15)
# centre-of-guide references from an independent evaluation of the same lattice and mode sums
SELF_DECAY = np.array([0.9705, 0.9705, 1.0603])
SELF_SHIFT = np.array([-0.1091, -0.1091, -0.2957])
PAIR_DECAY_DZ1 = np.array([0.7795, 0.7795, 0.9613])


def random_realization(geom, n, length, seed, clearance=0.25):
    rng = np.random.default_rng(seed)
    lower = np.array([clearance, clearance, 0.0])
    pos = lower + rng.random((n, 3)) * [geom.a - 2 * clearance, geom.b - 2 * clearance, length]
    return Realization(pos, geom, length, wall_clearance=clearance)


@pytest.fixture
def small_multimode(multimode):
    pos = [[2.1, 3.3, 0.4], [5.2, 4.7, 1.9], [3.9, 6.1, 5.5]]
    return Realization(pos, multimode, 6.0)


def test_single_atom_in_wide_guide_approaches_free_space():
    real = Realization([[*CENTER, 0.0]], LARGE, 1.0)
    sigma = assemble_sigma(real).matrix
    np.testing.assert_allclose(np.diag(sigma).imag, -0.5 * SELF_DECAY, atol=2e-4)
    np.testing.assert_allclose(np.diag(sigma).real, -0.5 * SELF_SHIFT, atol=2e-4)
    # mirror symmetry of the centre point
    assert np.max(np.abs(sigma - np.diag(np.diag(sigma)))) < 1e-10
    np.testing.assert_allclose(sigma, -0.5j * np.eye(3), atol=0.16)


def test_two_atoms_rates_against_closed_forms():
    pos = np.array([[*CENTER, 0.0], [*CENTER, 1.0]])
    real = Realization(pos, LARGE, 1.0)
    sigma = assemble_sigma(real)
    rates = sorted(rate for _, rate in collective_spectrum(sigma))
    # symmetric pair on the axis: blocks are diagonal, eigenvalues are self +- pair per axis
    self_block, pair_block = sigma.block(0, 0), sigma.block(0, 1)
    expected = sorted(-2 * (self_block[a, a] + s * pair_block[a, a]).imag for a in range(3) for s in (1, -1))
    np.testing.assert_allclose(rates, expected, rtol=1e-6)
    guide = sorted(SELF_DECAY[a] + s * PAIR_DECAY_DZ1[a] for a in range(3) for s in (1, -1))
    np.testing.assert_allclose(rates, guide, atol=2e-3)
    # the wide guide stays close to the free-space pair
    free = freespace_dyadic((0.0, 0.0, 1.0))
    free_rates = sorted(1 + s * free[a, a].imag for a in range(3) for s in (1, -1))
    np.testing.assert_allclose(rates, free_rates, atol=0.15)


def test_sigma_is_symmetric_and_passive(single_mode):
    real = random_realization(single_mode, 6, 20.0, seed=3)
    sigma = assemble_sigma(real)
    assert sigma.asymmetry() <= 1e-10
    eig = np.linalg.eigvals(sigma.matrix)
    assert np.all(eig.imag <= 1e-8)


def test_trace_identity(multimode):
    real = random_realization(multimode, 8, 30.0, seed=11)
    sigma = assemble_sigma(real)
    total = sum(rate for _, rate in collective_spectrum(sigma))
    single = float(np.sum(-2 * np.diag(sigma.matrix).imag))
    assert total == pytest.approx(single, rel=1e-8)


def test_diagonal_blocks_are_self_terms(single_mode):
    real = Realization([[2.0, 1.0, 3.0], [1.0, 0.5, 40.0]], single_mode, 50.0)
    sigma = assemble_sigma(real)
    np.testing.assert_allclose(-2 * sigma.block(0, 0).imag, waveguide_self_decay([2.0, 1.0, 3.0], single_mode),
                               atol=1e-12)


def test_duplicate_positions_rejected(single_mode):
    real = Realization([[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]], single_mode, 2.0)
    with pytest.raises(PreconditionError):
        assemble_sigma(real)


def test_positions_outside_guide_rejected(single_mode):
    with pytest.raises(PreconditionError):
        Realization([[5.0, 1.0, 1.0]], single_mode, 2.0)


def test_source_orientation_normalized(single_mode):
    source = SourceSpec([2.0, 1.0, -500.0], [0.0, 3.0, 0.0], 1.0)
    np.testing.assert_allclose(source.orientation, [0.0, 1.0, 0.0])
    with pytest.raises(PreconditionError):
        SourceSpec([2.0, 1.0, -500.0], [0.0, 0.0, 0.0], 1.0)


def test_empty_realization_gives_empty_amplitudes(single_mode):
    real = Realization(np.empty((0, 3)), single_mode, 10.0)
    sigma = assemble_sigma(real)
    b = stationary_amplitudes(sigma, SourceSpec.on_axis(single_mode), real)
    assert b.shape == (0,)


def test_stationary_residual(single_mode):
    real = random_realization(single_mode, 3, 15.0, seed=5)
    source = SourceSpec.on_axis(single_mode, detuning=1.0)
    sigma = assemble_sigma(real)
    v = source_column(real, source)
    b = stationary_amplitudes(sigma, source, real, v)
    residual = np.linalg.norm((source.detuning * np.eye(9) - sigma.matrix) @ b - v) / np.linalg.norm(v)
    assert residual <= 1e-10


def test_amplitudes_are_linear_in_drive(small_multimode):
    source = SourceSpec.on_axis(small_multimode.geom)
    sigma = assemble_sigma(small_multimode)
    v = source_column(small_multimode, source)
    c = 0.3 - 2.1j
    b = stationary_amplitudes(sigma, source, small_multimode, v)
    np.testing.assert_allclose(stationary_amplitudes(sigma, source, small_multimode, c * v), c * b, rtol=1e-12)


def test_single_atom_closed_form(single_mode):
    real = Realization([[2.0, 1.0, 0.0]], single_mode, 1.0)
    source = SourceSpec.on_axis(single_mode, detuning=0.0)
    sigma = assemble_sigma(real)
    v = source_column(real, source)
    b = stationary_amplitudes(sigma, source, real, v)
    s_yy = sigma.block(0, 0)[1, 1]
    assert b[1] == pytest.approx(v[1] / (source.detuning - s_yy), rel=1e-12)
    assert abs(b[0]) < 1e-12 * abs(b[1])


def test_time_domain_oracle_single_atom(single_mode):
    real = Realization([[2.0, 1.0, 0.0]], single_mode, 1.0)
    source = SourceSpec.on_axis(single_mode, detuning=0.0)
    sigma = assemble_sigma(real)
    b = stationary_amplitudes(sigma, source, real)
    envelope = time_domain_oracle(sigma, source, real)
    assert np.linalg.norm(envelope - b) <= 1e-6 * np.linalg.norm(b)


def test_time_domain_oracle_matches_resolvent(small_multimode):
    source = SourceSpec.on_axis(small_multimode.geom, detuning=1.0)
    sigma = assemble_sigma(small_multimode)
    b = stationary_amplitudes(sigma, source, small_multimode)
    envelope = time_domain_oracle(sigma, source, small_multimode)
    assert np.linalg.norm(envelope - b) <= 1e-6 * np.linalg.norm(b)


@pytest.mark.slow
def test_time_domain_oracle_on_random_systems(multimode):
    for seed in range(20):
        n = 1 + seed % 5
        real = random_realization(multimode, n, 4.0 * n, seed=100 + seed)
        if real.min_separation() < 0.5:
            continue
        source = SourceSpec.on_axis(multimode, detuning=1.0)
        sigma = assemble_sigma(real)
        b = stationary_amplitudes(sigma, source, real)
        envelope = time_domain_oracle(sigma, source, real)
        assert np.linalg.norm(envelope - b) <= 1e-6 * np.linalg.norm(b)


def test_propagator_matches_integration(small_multimode):
    source = SourceSpec.on_axis(small_multimode.geom, detuning=1.0)
    sigma = assemble_sigma(small_multimode)
    v = source_column(small_multimode, source)
    b0 = np.linspace(0.1, 0.9, 9) * (1 - 0.5j)
    stepped = evolve(sigma, 1.0, np.array([0.0, 5.0]), initial=b0, column=v, gamma_s=0.2)[-1]
    exact = propagate(sigma, 1.0, 5.0, initial=b0, column=v, gamma_s=0.2)
    np.testing.assert_allclose(exact, stepped, rtol=1e-9, atol=1e-11 * np.linalg.norm(stepped))


def test_time_domain_oracle_near_wall(multimode):
    # large positive shift from the mirror image, slow collective decay
    real = Realization([[4.0, 8.0 - 0.068, 0.0], [3.1, 2.7, 1.4]], multimode, 2.0)
    source = SourceSpec.on_axis(multimode, detuning=1.0)
    sigma = assemble_sigma(real)
    assert np.max(np.abs(sigma.matrix.real)) > 100
    b = stationary_amplitudes(sigma, source, real)
    envelope = time_domain_oracle(sigma, source, real)
    assert np.linalg.norm(envelope - b) <= 1e-6 * np.linalg.norm(b)


def test_free_decay_is_monotone(small_multimode):
    sigma = assemble_sigma(small_multimode)
    rng = np.random.default_rng(2)
    b0 = rng.normal(size=9) + 1j * rng.normal(size=9)
    times = np.linspace(0.0, 20.0, 41)
    norms = np.linalg.norm(evolve(sigma, 1.0, times, initial=b0), axis=1)
    assert np.all(np.diff(norms) <= 1e-10)
    assert norms[-1] < norms[0]


def test_oracle_rejects_large_systems(multimode):
    real = random_realization(multimode, 11, 200.0, seed=1)
    sigma = assemble_sigma(real)
    with pytest.raises(PreconditionError):
        time_domain_oracle(sigma, SourceSpec.on_axis(multimode), real)


def test_collective_spectrum_rates_non_negative(multimode):
    real = random_realization(multimode, 10, 40.0, seed=9)
    spectrum = collective_spectrum(assemble_sigma(real))
    assert len(spectrum) == 30
    assert min(rate for _, rate in spectrum) >= -1e-8
    assert [rate for _, rate in spectrum] == sorted(rate for _, rate in spectrum)


def test_spectrum_summary():
    summary = spectrum_summary([(0.0, 0.01), (0.1, 0.5), (-0.2, 2.0), (0.3, 3.0)])
    assert summary["n_modes"] == 4
    assert summary["subradiant_fraction"] == 0.25
    assert summary["superradiant_fraction"] == 0.5
    assert summary["total_rate"] == pytest.approx(5.51)
    assert spectrum_summary([])["n_modes"] == 0


def test_singular_system_reports_residual(single_mode):
    real = Realization([[2.0, 1.0, 0.0]], single_mode, 1.0)
    source = SourceSpec.on_axis(single_mode, detuning=0.0)
    sigma = assemble_sigma(real)
    sigma.matrix[0, :] = 0.0
    sigma.matrix[:, 0] = 0.0
    with pytest.raises(SolverError):
        stationary_amplitudes(sigma, source, real, np.array([1.0, 0.0, 0.0], dtype=complex))
