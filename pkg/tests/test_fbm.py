"""Covariância, grade diádica e amostragem exata de fBm."""

import numpy as np
import pytest
from scipy import linalg

from roughmdp.errors import DomainError, NumericalError, ValidationError
from roughmdp.fbm import (
    FbmBatch,
    HurstParam,
    TimeGrid,
    default_alpha,
    depth_for_alpha,
    fbm_covariance,
    increment_covariance,
    path_substream,
    sample_fbm,
)


class TestHurstAndGrid:
    @pytest.mark.parametrize("H", [0.25, 0.2, 0.51, 1.0, float("nan")])
    def test_rejects_out_of_range(self, H):
        with pytest.raises(ValidationError) as info:
            HurstParam(H)
        assert info.value.field == "H"

    @pytest.mark.parametrize("H", [0.26, 1 / 3, 0.45, 0.5])
    def test_accepts_admissible(self, H):
        assert float(HurstParam(H)) == H

    def test_grid_nodes(self):
        grid = TimeGrid(3)
        assert grid.n_steps == 8
        assert grid.n_nodes == 9
        assert grid.mesh == 0.125
        assert grid.nodes[0] == 0.0 and grid.nodes[-1] == 1.0
        assert np.all(np.diff(grid.nodes) > 0)

    def test_from_nodes_rejects_non_uniform(self):
        assert TimeGrid.from_nodes(np.linspace(0, 1, 17)) == TimeGrid(4)
        with pytest.raises(ValidationError):
            TimeGrid.from_nodes([0.0, 0.3, 1.0])
        with pytest.raises(ValidationError):
            TimeGrid.from_nodes(np.linspace(0, 1, 7))

    @pytest.mark.parametrize("H,depth", [(0.5, 2), (0.4, 2), (0.34, 2), (1 / 3, 3), (0.3, 3), (0.26, 3)])
    def test_default_alpha_depth(self, H, depth):
        alpha = default_alpha(H)
        assert alpha < H
        assert depth_for_alpha(alpha) == depth


class TestCovariance:
    def test_examples(self):
        assert fbm_covariance(0.5, 1.0, 0.5) == pytest.approx(0.5)
        assert fbm_covariance(0.0, 0.7, 0.3) == 0.0
        assert fbm_covariance(0.5, 0.5, 0.26) == pytest.approx(0.5 ** 0.52)

    def test_symmetric_exactly(self):
        s, t = 0.3, 0.85
        for H in (0.3, 0.4, 0.5):
            assert fbm_covariance(s, t, H) == fbm_covariance(t, s, H)

    def test_domain(self):
        with pytest.raises(DomainError):
            fbm_covariance(-0.1, 0.5, 0.4)
        with pytest.raises(DomainError):
            fbm_covariance(0.5, 1.5, 0.4)

    def test_brownian_increments_diagonal(self):
        G = increment_covariance(TimeGrid(4), 0.5)
        np.testing.assert_allclose(G, np.eye(16) / 16, atol=1e-15)

    @pytest.mark.parametrize("H", [0.26, 0.3, 0.45])
    def test_diagonal_and_four_term_formula(self, H):
        grid = TimeGrid(3)
        G = increment_covariance(grid, H)
        np.testing.assert_allclose(np.diag(G), grid.mesh ** (2 * H), rtol=1e-12)
        t = grid.nodes
        i, j = 2, 5
        four = (
            fbm_covariance(t[i + 1], t[j + 1], H)
            - fbm_covariance(t[i + 1], t[j], H)
            - fbm_covariance(t[i], t[j + 1], H)
            + fbm_covariance(t[i], t[j], H)
        )
        assert G[i, j] == pytest.approx(four, abs=1e-14)

    def test_quarter_off_diagonal(self):
        # H = 1/4 fica fora de HurstParam; o valor é o limite do caso H -> 1/4
        G = increment_covariance(TimeGrid(1), 0.25 + 1e-12)
        assert G[0, 1] == pytest.approx(0.5 * (1 - 2 * 0.5 ** 0.5), abs=1e-9)

    @pytest.mark.parametrize("H", [0.26, 0.35, 0.5])
    def test_psd(self, H):
        eig = linalg.eigvalsh(increment_covariance(TimeGrid(6), H))
        assert eig.min() >= -1e-10 * eig.max()


class TestSampling:
    def test_paths_start_at_zero_and_shape(self):
        batch = sample_fbm(TimeGrid(5), 0.4, 2, 7, seed=3)
        assert isinstance(batch, FbmBatch)
        assert batch.values.shape == (7, 33, 2)
        assert np.all(batch.values[:, 0, :] == 0.0)
        assert batch.method == "circulant"

    def test_same_seed_bit_identical(self):
        a = sample_fbm(TimeGrid(6), 0.3, 2, 20, seed=99)
        b = sample_fbm(TimeGrid(6), 0.3, 2, 20, seed=99)
        assert np.array_equal(a.values, b.values)
        c = sample_fbm(TimeGrid(6), 0.3, 2, 20, seed=100)
        assert not np.array_equal(a.values, c.values)

    @pytest.mark.parametrize("method", ["circulant", "cholesky"])
    def test_chunks_match_full_batch(self, method):
        grid = TimeGrid(5)
        full = sample_fbm(grid, 0.35, 2, 10, seed=5, method=method)
        head = sample_fbm(grid, 0.35, 2, 4, seed=5, method=method)
        tail = sample_fbm(grid, 0.35, 2, 6, seed=5, first_path=4, method=method)
        assert np.array_equal(full.values, np.concatenate([head.values, tail.values]))

    def test_substreams_independent_of_order(self):
        x = path_substream(1, 2, 0).standard_normal(4)
        y = path_substream(1, 2, 1).standard_normal(4)
        assert not np.array_equal(x, y)
        assert np.array_equal(x, path_substream(1, 2, 0).standard_normal(4))

    @pytest.mark.parametrize("H,method", [(0.5, "auto"), (0.3, "auto"), (0.3, "cholesky")])
    def test_terminal_variance(self, H, method):
        n = 100_000
        batch = sample_fbm(TimeGrid(4), H, 1, n, seed=2024, method=method)
        var = batch.values[:, -1, 0].var()
        # SE de uma variância gaussiana: sqrt(2/n) ~ 0.0045
        assert abs(var - 1.0) < 0.02

    def test_brownian_disjoint_increments_uncorrelated(self):
        batch = sample_fbm(TimeGrid(3), 0.5, 1, 20_000, seed=17)
        inc = batch.increments[:, :, 0]
        corr = np.corrcoef(inc[:, 1], inc[:, 5])[0, 1]
        assert abs(corr) < 0.03

    def test_empirical_covariance_matches_R(self):
        grid = TimeGrid(3)
        H = 0.35
        n = 100_000
        w = sample_fbm(grid, H, 1, n, seed=8).values[:, 1:, 0]
        emp = w.T @ w / n
        t = grid.nodes[1:]
        R = fbm_covariance(t[:, None], t[None, :], H)
        se = np.sqrt((R**2 + np.outer(np.diag(R), np.diag(R))) / n)
        assert np.all(np.abs(emp - R) <= 5 * se)

    def test_coordinates_independent(self):
        batch = sample_fbm(TimeGrid(3), 0.4, 2, 20_000, seed=4)
        end = batch.values[:, -1, :]
        assert abs(np.corrcoef(end[:, 0], end[:, 1])[0, 1]) < 0.03

    def test_validation(self):
        grid = TimeGrid(3)
        with pytest.raises(ValidationError):
            sample_fbm(grid, 0.4, 1, 0, seed=1)
        with pytest.raises(ValidationError):
            sample_fbm(grid, 0.4, 1, 1, seed=-1)
        with pytest.raises(ValidationError):
            sample_fbm(grid, 0.4, 1, 1, seed=1, method="fft")

    def test_size_overflow(self):
        with pytest.raises(NumericalError):
            sample_fbm(TimeGrid(24), 0.4, 3, 1000, seed=1)

    def test_dense_cholesky_too_large_is_numerical_error(self):
        with pytest.raises(NumericalError) as info:
            sample_fbm(TimeGrid(15), 0.37, 1, 1, seed=1, method="cholesky")
        assert info.value.stage == "sample_fbm"

    def test_csv_columns(self, tmp_path):
        batch = sample_fbm(TimeGrid(2), 0.5, 2, 2, seed=1)
        path = batch.to_csv(tmp_path / "paths.csv")
        header = path.read_text().splitlines()[0]
        assert header == "t,p0_x0,p0_x1,p1_x0,p1_x1"
        assert len(path.read_text().splitlines()) == 1 + 5
