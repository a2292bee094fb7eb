import json

import numpy as np
import pytest

from superradiant_metrology.dynamics import (
    LindbladModel,
    PhysicalParameters,
    TimeSeries,
    TruncationWarning,
    build_tavis_cummings,
    evolve,
    expectation,
    lindblad_rhs,
    standard_observables,
)
from superradiant_metrology.hilbert import (
    DensityMatrix,
    DickeSpace,
    FockSpace,
    FullAtomSpace,
    SpaceMismatchError,
    dicke_operators,
    dicke_state,
    fock_operators,
    fock_state,
    full_basis_state,
    identity,
    individual_atom_operators,
    min_eigenvalue,
    singlet_dark_ket,
    symmetric_embed,
    tensor_states,
)
from superradiant_metrology.integrators import IntegratorConfig
from superradiant_metrology.superradiance import counting_statistics

TIGHT = dict(rel_tol=1e-10, abs_tol=1e-12)


def random_density(dim, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    rho = X @ X.conj().T
    return rho / np.trace(rho)


def vacuum_start(model, atoms):
    return tensor_states(atoms, fock_state(model.space.factors[1], 0))


def single_atom_decay_model(gamma):
    space = FullAtomSpace(1)
    sm = individual_atom_operators(space, 0)["sigma_minus"]
    return LindbladModel(identity(space) * 0.0, ((sm, gamma),))


class TestBuild:
    def test_jaynes_cummings_elements(self):
        g, n_max = 0.7, 5
        model = build_tavis_cummings(PhysicalParameters(g, 0.0, 0.0, 1), n_max)
        H = model.hamiltonian.toarray()
        dim_f = n_max + 1
        for n in range(1, n_max + 1):
            e_nm1 = 1 * dim_f + (n - 1)  # |e, n-1>
            g_n = 0 * dim_f + n          # |g, n>
            assert H[g_n, e_nm1] == pytest.approx(g * np.sqrt(n), abs=1e-15)
            assert H[e_nm1, g_n] == pytest.approx(g * np.sqrt(n), abs=1e-15)
        assert np.count_nonzero(H) == 2 * n_max

    def test_cavity_loss_matches_commutator_form(self):
        kappa = 0.37
        model = build_tavis_cummings(PhysicalParameters(0.0, kappa, 0.0, 2), 3)
        rho = random_density(model.dim, 1)
        a = model.jumps[0][0].toarray()
        ad = a.conj().T
        # kappa([a rho, a+] + [a, rho a+])
        expected = kappa * ((a @ rho @ ad - ad @ a @ rho) + (a @ rho @ ad - rho @ ad @ a))
        np.testing.assert_allclose(lindblad_rhs(model, rho), expected, atol=1e-14)
        assert model.jumps[0][1] == pytest.approx(2 * kappa)

    def test_atomic_decay_matches_commutator_form(self):
        gamma = 0.21
        model = build_tavis_cummings(PhysicalParameters(0.0, 0.0, gamma, 2), 1, "full")
        rho = random_density(model.dim, 2)
        total = np.zeros_like(rho)
        for op, rate in model.jumps[1:]:
            s = op.toarray()
            sd = s.conj().T
            total += gamma / 2 * ((s @ rho @ sd - sd @ s @ rho) + (s @ rho @ sd - rho @ sd @ s))
            assert rate == gamma
        np.testing.assert_allclose(lindblad_rhs(model, rho), total, atol=1e-14)

    def test_dicke_refuses_individual_gamma(self):
        with pytest.raises(ValueError, match="permutation"):
            build_tavis_cummings(PhysicalParameters(1, 1, 0.1, 3), 2)

    def test_collective_gamma_flag(self):
        model = build_tavis_cummings(PhysicalParameters(1, 1, 0.1, 3), 2, collective_gamma=True)
        assert "approximation" in model.metadata
        assert len(model.jumps) == 2

    @pytest.mark.parametrize("n", [1, 5, 40])
    def test_dicke_gamma_zero_any_n(self, n):
        model = build_tavis_cummings(PhysicalParameters(1, 1, 0.0, n), 2)
        assert model.dim == (n + 1) * 3

    def test_full_cap(self):
        with pytest.raises(ValueError):
            build_tavis_cummings(PhysicalParameters(1, 1, 0, 13), 1, "full")

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            build_tavis_cummings(PhysicalParameters(1, 1, 0, 2), 0)
        with pytest.raises(ValueError):
            PhysicalParameters(-1, 1, 0, 1)
        with pytest.raises(ValueError):
            PhysicalParameters(1, 1, 0, 0)


class TestRhs:
    def test_zero_generator(self):
        space = DickeSpace(2)
        model = LindbladModel(identity(space) * 0.0)
        rho = random_density(3, 3)
        assert np.max(np.abs(lindblad_rhs(model, rho))) == 0

    def test_vacuum_steady(self):
        model = build_tavis_cummings(PhysicalParameters(0.0, 1.3, 0.0, 1), 4)
        rho = vacuum_start(model, dicke_state(DickeSpace(1), -1))
        assert np.max(np.abs(lindblad_rhs(model, rho))) == 0

    def test_hermitian_output_and_superoperator_route(self):
        model = build_tavis_cummings(PhysicalParameters(0.8, 0.4, 0.1, 2), 3, "full")
        rho = random_density(model.dim, 4)
        direct = lindblad_rhs(model, rho)
        np.testing.assert_allclose(direct, direct.conj().T, atol=1e-14)
        assert abs(np.trace(direct)) < 1e-14
        via_super = (model.liouvillian() @ rho.reshape(-1, order="F")).reshape(
            model.dim, model.dim, order="F")
        np.testing.assert_allclose(via_super, direct, atol=1e-13)

    def test_dimension_mismatch(self):
        model = build_tavis_cummings(PhysicalParameters(1, 1, 0, 1), 2)
        with pytest.raises(SpaceMismatchError):
            lindblad_rhs(model, np.eye(3) / 3)

    def test_amplitude_damping_oracle(self):
        gamma = 0.8
        model = single_atom_decay_model(gamma)
        rho0 = full_basis_state(FullAtomSpace(1), [0])
        times = np.array([0.5, 1.0, 2.0]) / gamma
        cfg = IntegratorConfig(t_final=times[-1], record_grid=tuple(times), **TIGHT)
        exc = individual_atom_operators(FullAtomSpace(1), 0)
        proj = exc["sigma_plus"] @ exc["sigma_minus"]
        ts = evolve(model, rho0, cfg, {"ee": proj})
        np.testing.assert_allclose(ts.expectations["ee"], np.exp(-gamma * times), atol=1e-8)


class TestExpectation:
    def test_identity(self):
        rho = DensityMatrix(DickeSpace(3), random_density(4, 5))
        assert expectation(rho, identity(DickeSpace(3))) == pytest.approx(1.0, abs=1e-14)

    def test_number_on_fock_three(self):
        space = FockSpace(5)
        assert expectation(fock_state(space, 3), fock_operators(space)["number"]) == pytest.approx(3)

    @pytest.mark.parametrize("n", [1, 4, 11])
    def test_jpjm_fully_excited(self, n):
        space = DickeSpace(n)
        ops = dicke_operators(space)
        assert expectation(dicke_state(space, n), ops["J_plus"] @ ops["J_minus"]) == pytest.approx(n)

    def test_non_hermitian_returns_complex(self):
        space = DickeSpace(1)
        rho = DensityMatrix.from_ket(space, [1, 1])
        val = expectation(rho, dicke_operators(space)["J_minus"])
        assert isinstance(val, complex)
        assert val == pytest.approx(0.5)

    def test_mismatch(self):
        with pytest.raises(SpaceMismatchError):
            expectation(fock_state(FockSpace(2), 0), identity(DickeSpace(2)))


class TestEvolve:
    def test_t_final_zero(self):
        model = build_tavis_cummings(PhysicalParameters(1, 1, 0, 2), 3)
        rho0 = vacuum_start(model, dicke_state(DickeSpace(2), 2))
        obs = standard_observables(model)
        ts = evolve(model, rho0, IntegratorConfig(t_final=0.0, record_grid=(0.0,)), obs)
        assert len(ts.times) == 1
        assert ts.expectations["atomic_excitation"][0] == pytest.approx(2.0)
        assert ts.expectations["photon_number"][0] == 0

    def test_dark_state_emits_nothing(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.5, 0.0, 2), 4, "full")
        atoms = DensityMatrix.from_ket(FullAtomSpace(2), singlet_dark_ket(FullAtomSpace(2)))
        ts = evolve(model, vacuum_start(model, atoms), IntegratorConfig.uniform(20.0, 41),
                    standard_observables(model))
        assert np.max(np.abs(ts.expectations["photon_number"])) <= 1e-10
        assert np.max(np.abs(ts.expectations["photon_flux"])) <= 1e-10

    def test_dark_state_dicke_singlet_ladder(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.5, 0.0, 2), 4, two_j=0)
        ts = evolve(model, vacuum_start(model, dicke_state(DickeSpace(2, 0), 0)),
                    IntegratorConfig.uniform(10.0, 11), standard_observables(model))
        assert np.max(np.abs(ts.expectations["photon_number"])) == 0

    def test_bad_cavity_emits_two_photons(self):
        g, kappa, n = 1.0, 10.0, 2
        model = build_tavis_cummings(PhysicalParameters(g, kappa, 0.0, n), 3)
        rho0 = vacuum_start(model, dicke_state(DickeSpace(n), n))
        t_end = 20 * kappa / (2 * g * g * n)
        stats = counting_statistics(model, rho0, IntegratorConfig.uniform(t_end, 5))
        assert stats.mean_count[-1] == pytest.approx(2.0, rel=0.01)

    def test_excitation_conserved_closed(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.0, 0.0, 3), 6)
        rho0 = vacuum_start(model, dicke_state(DickeSpace(3), 1))
        ts = evolve(model, rho0, IntegratorConfig.uniform(10.0, 51, **TIGHT),
                    standard_observables(model))
        exc = ts.expectations["excitation_number"]
        assert np.max(np.abs(exc - exc[0])) <= 1e-8

    @pytest.mark.parametrize("n", [2, 3])
    def test_dicke_matches_full(self, n):
        p = PhysicalParameters(1.0, 0.6, 0.0, n)
        dicke = build_tavis_cummings(p, 5)
        full = build_tavis_cummings(p, 5, "full")
        atoms = DensityMatrix(DickeSpace(n), random_density(n + 1, n))
        cfg = IntegratorConfig.uniform(8.0, 41, **TIGHT)
        a = evolve(dicke, vacuum_start(dicke, atoms), cfg, standard_observables(dicke))
        b = evolve(full, vacuum_start(full, symmetric_embed(atoms, FullAtomSpace(n))), cfg,
                   standard_observables(full))
        diff = np.abs(a.expectations["photon_number"] - b.expectations["photon_number"])
        assert diff.max() <= 1e-7

    def test_rk4_fourth_order(self):
        gamma = 1.0
        model = single_atom_decay_model(gamma)
        rho0 = full_basis_state(FullAtomSpace(1), [0])
        ops = individual_atom_operators(FullAtomSpace(1), 0)
        proj = ops["sigma_plus"] @ ops["sigma_minus"]
        t_end = 2.0 / gamma
        hs = np.array([0.1, 0.05, 0.025]) / gamma
        errs = []
        for h in hs:
            cfg = IntegratorConfig(t_final=t_end, method="rk4", max_step=h)
            ts = evolve(model, rho0, cfg, {"ee": proj})
            errs.append(abs(ts.expectations["ee"][-1] - np.exp(-gamma * t_end)))
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert slope == pytest.approx(4.0, abs=0.2)

    def test_truncation_flag(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.05, 0.0, 4), 1)
        rho0 = vacuum_start(model, dicke_state(DickeSpace(4), 4))
        with pytest.warns(TruncationWarning):
            ts = evolve(model, rho0, IntegratorConfig.uniform(3.0, 11))
        assert "truncation_leakage" in ts.flags

    def test_physicality_diagnostics(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.5, 0.1, 2), 6, "full")
        rho0 = vacuum_start(model, full_basis_state(FullAtomSpace(2), [0, 1]))
        ts = evolve(model, rho0, IntegratorConfig.uniform(10.0, 21, **TIGHT))
        assert ts.diagnostics["trace_deviation"].max() <= 1e-9
        assert ts.diagnostics["hermiticity"].max() <= 1e-9
        assert ts.diagnostics["min_eigenvalue"].min() >= -1e-7
        assert ts.flags == []

    def test_deterministic(self):
        model = build_tavis_cummings(PhysicalParameters(1.0, 0.5, 0.0, 3), 4)
        rho0 = vacuum_start(model, dicke_state(DickeSpace(3), 3))
        cfg = IntegratorConfig.uniform(5.0, 11)
        a = evolve(model, rho0, cfg, standard_observables(model)).to_csv()
        b = evolve(model, rho0, cfg, standard_observables(model)).to_csv()
        assert a == b

    def test_space_mismatch(self):
        model = build_tavis_cummings(PhysicalParameters(1, 1, 0, 2), 2)
        with pytest.raises(SpaceMismatchError):
            evolve(model, dicke_state(DickeSpace(2), 0), IntegratorConfig(t_final=1.0))


def test_lanczos_min_eigenvalue_branch():
    rho = random_density(250, 9)
    rho = 0.9 * rho + 0.1 * np.eye(250) / 250
    assert min_eigenvalue(rho) == pytest.approx(np.linalg.eigvalsh(rho)[0], abs=1e-10)


class TestTimeSeriesIO:
    def make(self):
        return TimeSeries(
            np.array([0.0, 0.5]),
            {"n": np.array([0.0, 0.25]), "c": np.array([1 + 0j, 0.5 - 0.5j])},
            {"trace_deviation": np.array([0.0, 1e-16])},
            ["x"],
            {"note": "hi"},
        )

    def test_csv_columns(self):
        text = self.make().to_csv()
        header = text.splitlines()[0].split(",")
        assert header == ["t", "n", "c_re", "c_im", "trace_deviation"]
        assert len(text.splitlines()) == 3

    def test_json_roundtrip(self):
        ts = self.make()
        back = TimeSeries.from_dict(json.loads(ts.to_json()))
        np.testing.assert_array_equal(back.times, ts.times)
        np.testing.assert_array_equal(back.expectations["c"], ts.expectations["c"])
        assert back.flags == ["x"]

    def test_length_check(self):
        with pytest.raises(ValueError):
            TimeSeries(np.array([0.0, 1.0]), {"n": np.array([1.0])})
