import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jsqps.core import (
    ArrivalRateProfile,
    Hyperparameters,
    JoinProbabilities,
    NumericalError,
    ParameterError,
    SystemConfig,
    make_time_grid,
)
from jsqps.sojourn import (
    DEFAULT_REGIME_MAP,
    ConditionalTailMatrix,
    MethodId,
    RegimeMap,
    RegimeRule,
    arrival_profile,
    assemble_W,
    best_method,
    build_defective_generator,
    compute_method,
    h_table,
    poisson_terms_needed,
    poisson_weights,
    w_matrix_exponential,
    w_uniformization,
)


def eig_tails(D: np.ndarray, t: np.ndarray) -> np.ndarray:
    """exp(D t) 1 by eigendecomposition."""
    vals, vecs = np.linalg.eig(D)
    coef = np.linalg.solve(vecs, np.ones(len(D)))
    return np.real(vecs @ (coef[:, None] * np.exp(np.outer(vals, t))))


class TestDefectiveGenerator:
    def test_bands(self):
        lam = ArrivalRateProfile([0.9, 0.5, 0.2, 0.1, 0.05], "x")
        D = build_defective_generator(lam, 1.0, 5).toarray()
        expected = np.array(
            [
                [-1.9, 0.9, 0, 0],
                [0.5, -1.5, 0.5, 0],
                [0, 2 / 3, -1.2, 0.2],
                [0, 0, 0.75, -1.1],
            ]
        )
        np.testing.assert_allclose(D[:4, :4], expected)
        # the last row loses its upward rate but keeps its diagonal
        assert D[4, 4] == pytest.approx(-1.05)
        assert D[3, 4] == pytest.approx(0.1)

    def test_row_sums(self):
        lam = ArrivalRateProfile(np.linspace(2.0, 0.1, 12), "x")
        D = build_defective_generator(lam, 1.5, 12).toarray()
        n = np.arange(11)
        np.testing.assert_allclose(D.sum(axis=1)[:-1], -1.5 / (n + 1))

    def test_short_profile(self):
        with pytest.raises(ParameterError):
            build_defective_generator(ArrivalRateProfile([1.0, 1.0], "x"), 1.0, 3)


class TestConditionalTails:
    def test_two_state_oracle(self):
        grid = make_time_grid(10.0, 0.05)
        lam = ArrivalRateProfile([0.8, 0.3], "x")
        D = np.array([[-1.8, 0.8], [0.5, -1.3]])
        ref = eig_tails(D, grid.points)
        np.testing.assert_allclose(w_matrix_exponential(build_defective_generator(lam, 1.0, 2), grid).w, ref, atol=1e-12)
        np.testing.assert_allclose(w_uniformization(lam, 1.0, grid, 2).w, ref, atol=1e-11)

    def test_lone_customer(self):
        # with no arrivals a customer alone completes at rate mu
        grid = make_time_grid(5.0, 0.1)
        w = w_uniformization(ArrivalRateProfile([0.0, 0.0], "x"), 2.0, grid, 2).w
        np.testing.assert_allclose(w[0], np.exp(-2.0 * grid.points), atol=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(0.0, 3.0), min_size=2, max_size=12), st.floats(0.2, 3.0))
    def test_routes_agree(self, rates, mu):
        grid = make_time_grid(8.0, 0.1)
        lam = ArrivalRateProfile(rates, "x")
        L2 = len(rates)
        a = w_matrix_exponential(build_defective_generator(lam, mu, L2), grid).w
        b = w_uniformization(lam, mu, grid, L2).w
        np.testing.assert_allclose(a, b, atol=1e-9)
        np.testing.assert_allclose(a[:, 0], 1.0)
        assert np.all(np.diff(a, axis=1) <= 1e-12)

    def test_rows_ordered_for_decreasing_rates(self):
        config = SystemConfig.from_load(3, 0.7)
        hyper = Hyperparameters.default_for(3)
        grid = make_time_grid(30.0, 0.05)
        lam = arrival_profile("mc", config, hyper)
        w = w_uniformization(lam, config.mu, grid, hyper.L2).w
        assert np.all(np.diff(w, axis=1) <= 1e-12)
        assert np.all(np.diff(w, axis=0) >= -1e-12)

    def test_capped_terms_lose_mass(self):
        grid = make_time_grid(50.0, 0.5)
        lam = ArrivalRateProfile(np.full(20, 0.5), "x")
        full = w_uniformization(lam, 1.0, grid, 20).w
        capped = w_uniformization(lam, 1.0, grid, 20, n_terms=10).w
        assert np.all(capped <= full + 1e-12)
        assert (full - capped).max() > 1e-3

    def test_h_table_detects_small_theta(self):
        with pytest.raises(NumericalError):
            h_table(ArrivalRateProfile([5.0, 5.0, 5.0], "x"), 1.0, 3, 1.0, 5)

    def test_poisson_weights(self):
        w = poisson_weights(np.array([0.0, 2.0, 30.0]), poisson_terms_needed(30.0))
        np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)
        assert w[0, 0] == 1.0
        assert w[3, 1] == pytest.approx(np.exp(-2) * 8 / 6)


class TestAssembly:
    def test_mixture(self):
        grid = make_time_grid(1.0, 0.5)
        w = ConditionalTailMatrix(grid, np.array([[1.0, 0.5, 0.2], [1.0, 0.8, 0.6]]), "x")
        cdf = assemble_W(JoinProbabilities([0.25, 0.75], "x"), w)
        np.testing.assert_allclose(cdf.values, [0, 1 - 0.725, 1 - 0.5])

    def test_length_mismatch(self):
        grid = make_time_grid(1.0, 0.5)
        w = ConditionalTailMatrix(grid, np.ones((2, 3)), "x")
        with pytest.raises(ParameterError):
            assemble_W(JoinProbabilities([1.0], "x"), w)

    def test_nonzero_origin(self):
        grid = make_time_grid(1.0, 0.5)
        w = ConditionalTailMatrix(grid, np.array([[0.5, 0.4, 0.3]]), "x")
        with pytest.raises(NumericalError):
            assemble_W(JoinProbabilities([1.0], "x"), w)


class TestMethods:
    def test_recipes(self):
        assert MethodId.A.recipe == ("mc", "mc", "expm")
        assert MethodId.C.recipe == ("closed-form", "birth-death", "expm")
        assert MethodId.F.recipe == ("closed-form", "birth-death", "uniformization")

    def test_single_server_mean(self, default_grid):
        # M/M/1-PS mean sojourn 1 / (mu - Lambda) = 2
        cdf = compute_method("D", SystemConfig(1, 0.5, 1.0), Hyperparameters.default_for(1), default_grid)
        assert cdf.mean() == pytest.approx(2.0, rel=0.03)

    @pytest.mark.parametrize("pair", [("A", "D"), ("B", "E"), ("C", "F")])
    def test_paired_methods_agree(self, pair, default_grid):
        config = SystemConfig.from_load(2, 0.5)
        hyper = Hyperparameters.default_for(2)
        a, b = (compute_method(m, config, hyper, default_grid) for m in pair)
        assert np.abs(a.values - b.values).max() < 1e-6

    def test_unstable(self, default_grid):
        with pytest.raises(ParameterError):
            compute_method("A", SystemConfig(2, 2.0, 1.0), Hyperparameters.default_for(2), default_grid)

    def test_unknown_method(self, default_grid):
        with pytest.raises(ValueError):
            compute_method("Z", SystemConfig(2, 1.0, 1.0), Hyperparameters.default_for(2), default_grid)


class TestRegimeMap:
    @pytest.mark.parametrize(
        "R, rho, method",
        [(5, 0.5, "D"), (5, 0.59, "D"), (5, 0.6, "C"), (3, 0.85, "C"), (10, 0.97, "E"), (2, 0.99, "E"), (1, 0.85, "D"), (1, 0.98, "E")],
    )
    def test_default_lookup(self, R, rho, method):
        assert best_method(SystemConfig.from_load(R, rho)) == MethodId(method)

    def test_nearest_R(self):
        assert best_method(SystemConfig.from_load(14, 0.7)) == MethodId.C

    def test_text_round_trip(self):
        text = DEFAULT_REGIME_MAP.to_text()
        again = RegimeMap.from_text(text)
        assert again.to_text() == text

    def test_override(self, tmp_path):
        path = tmp_path / "map.txt"
        path.write_text("# single rule\n5 0 1 b\n")
        override = RegimeMap.load(path)
        assert best_method(SystemConfig.from_load(5, 0.3), override) == MethodId.B
        assert best_method(SystemConfig.from_load(1, 0.3), override) == MethodId.B

    @pytest.mark.parametrize("text", ["5 0 0.5 A\n", "5 0 0.5 A\n5 0.6 1 C\n", "5 0 1\n", "5 0 1 Q\n", "# nothing\n"])
    def test_rejects_bad_maps(self, text):
        with pytest.raises(ParameterError):
            RegimeMap.from_text(text)

    def test_rule_sequence(self):
        rules = [RegimeRule(2, 0.0, 0.5, MethodId.A), RegimeRule(2, 0.5, 1.0, MethodId.F)]
        assert RegimeMap(rules).lookup(2, 0.75) == MethodId.F
