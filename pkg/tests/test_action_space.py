import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from action_space import (
    ActionSet, Label, MarketInterval, UpDownLabeling, WeightGrid, WeightVector, action_evaluation,
    extract_action_set, load_action_set, reference_series, sample_vectors, save_action_set,
    score_vectors, updown_intervals, updown_points, weight_grid_vectors,
)
from conftest import build_return_panel
from errors import ArtifactFormatError, GridTooFine, NoIntervalsFound


class TestUpdownPoints:
    def test_constant_rise(self):
        labeling = updown_points(np.full(100, 0.002), k=20, alpha=0.001)
        assert labeling.labels[:19] == (None,) * 19
        assert set(labeling.labels[19:]) == {Label.UP}

    def test_zero_returns(self):
        labeling = updown_points(np.zeros(50), k=20, alpha=0.001)
        assert set(labeling.labels[19:]) == {Label.NEUTRAL}

    def test_step_series_matches_rolling_mean(self):
        series = np.concatenate([np.full(60, 0.003), np.full(60, -0.003)])
        labeling = updown_points(series, k=20, alpha=0.001)
        for t in range(19, 120):
            mean = series[t - 19:t + 1].mean()
            expected = Label.UP if mean >= 0.001 else Label.DOWN if mean <= -0.001 else Label.NEUTRAL
            assert labeling.labels[t] == expected
        assert labeling.labels[59] == Label.UP
        assert labeling.labels[119] == Label.DOWN
        band = [t for t in range(60, 120) if labeling.labels[t] != Label.DOWN]
        assert len(band) <= 20


class TestUpdownIntervals:
    def test_single_run(self):
        labeling = UpDownLabeling(labels=(None,) * 19 + (Label.UP,) * 81, k_window=20, alpha=0.001)
        intervals = updown_intervals(labeling, min_len=10)
        assert intervals == [MarketInterval(19, 99, Label.UP)]

    def test_alternating_days(self):
        labels = tuple(Label.UP if i % 2 else Label.DOWN for i in range(100))
        with pytest.raises(NoIntervalsFound):
            updown_intervals(UpDownLabeling(labels, 1, 0.001), min_len=5)

    def test_planted_runs(self):
        labels = (Label.UP,) * 30 + (Label.NEUTRAL,) * 5 + (Label.DOWN,) * 25 + (Label.UP,) * 3 \
            + (Label.UP,) * 0 + (Label.NEUTRAL,) * 2 + (Label.UP,) * 40
        intervals = updown_intervals(UpDownLabeling(labels, 1, 0.001), min_len=20)
        assert intervals == [
            MarketInterval(0, 29, Label.UP),
            MarketInterval(35, 59, Label.DOWN),
            MarketInterval(65, 104, Label.UP),
        ]


class TestWeightGrid:
    def test_two_assets_half_step(self):
        grid = weight_grid_vectors(5000, 2)
        assert grid.size == 3
        assert [v.basis_points for v in grid] == [(0, 10000), (5000, 5000), (10000, 0)]

    def test_three_assets_half_step(self):
        vectors = {v.basis_points for v in weight_grid_vectors(5000, 3)}
        assert vectors == {
            (10000, 0, 0), (0, 10000, 0), (0, 0, 10000),
            (5000, 5000, 0), (5000, 0, 5000), (0, 5000, 5000),
        }

    def test_thirteen_assets(self):
        assert weight_grid_vectors(1000, 13).size == math.comb(22, 12) == 646_646

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("units", [1, 2, 5, 10, 20])
    def test_count_matches_enumeration(self, n, units):
        grid = WeightGrid(10000 // units, n)
        brute = {c for c in itertools.product(range(units + 1), repeat=n) if sum(c) == units}
        assert grid.size == math.comb(units + n - 1, n - 1) == len(brute)
        listed = [tuple(w // grid.grid_step for w in v.basis_points) for v in grid]
        assert listed == sorted(brute)

    @settings(max_examples=50, deadline=None)
    @given(rank=st.integers(min_value=0, max_value=646_645))
    def test_rank_inverts_unrank(self, rank):
        grid = WeightGrid(1000, 13)
        vector = grid.unrank(rank)
        assert sum(vector.basis_points) == 10000
        assert grid.rank(vector) == rank

    def test_too_fine(self):
        with pytest.raises(GridTooFine):
            WeightGrid(1, 40)

    def test_step_must_divide(self):
        with pytest.raises(ValueError):
            WeightGrid(3000, 2)


class TestSampleVectors:
    def test_small_set_returned_whole(self):
        sample = sample_vectors(WeightGrid(5000, 2), fraction=0.0001, floor=1000, seed=0)
        assert len(sample) == 3

    def test_floor_binds(self):
        sample = sample_vectors(WeightGrid(1000, 13), fraction=0.0001, floor=1000, seed=3)
        assert len(sample) == 1000
        assert len({v for _, v in sample}) == 1000

    def test_same_seed_same_sample(self):
        grid = WeightGrid(1000, 13)
        assert sample_vectors(grid, 0.0001, 1000, 5) == sample_vectors(grid, 0.0001, 1000, 5)


class TestActionEvaluation:
    def test_formula(self):
        assert action_evaluation(0.08, 0.05, 1) == pytest.approx(0.03)
        assert action_evaluation(0.08, 0.05, 0) == 0.08
        assert action_evaluation(0.0, 0.2, 2) == pytest.approx(-0.4)


class TestExtractActionSet:
    def test_dominant_asset(self):
        returns = np.column_stack([np.full(40, 0.002), np.full(40, -0.002)])
        rp = build_return_panel(returns)
        actions = extract_action_set([MarketInterval(0, 39, Label.UP)], rp, grid_step=5000, top_i=1)
        assert [a.basis_points for a in actions.actions] == [(10000, 0)]

    def test_duplicates_removed(self):
        returns = np.column_stack([np.full(80, 0.002), np.full(80, -0.002)])
        rp = build_return_panel(returns)
        intervals = [MarketInterval(0, 39, Label.UP), MarketInterval(40, 79, Label.UP)]
        actions = extract_action_set(intervals, rp, grid_step=5000, top_i=1)
        assert len(actions) == 1

    def test_matches_exhaustive_scoring(self, random_return_panel):
        grid = WeightGrid(500, 3)
        interval = MarketInterval(100, 180, Label.UP)
        actions = extract_action_set([interval], random_return_panel, grid_step=500, fraction=0.0001,
                                     floor=100, k_control=1.0, top_i=3, seed=11)
        sample = sample_vectors(grid, 0.0001, 100, 11, 0)
        window = random_return_panel.returns[100:181]
        scored = []
        for rank, vector in sample:
            pr = window @ vector.weights
            score = pr.mean() * 252 - pr.std(ddof=1) * math.sqrt(252)
            scored.append((-score, rank, vector))
        expected = [v for _, _, v in sorted(scored)[:3]]
        assert list(actions.actions) == expected

    def test_constant_shift_keeps_selection(self, random_return_panel):
        interval = MarketInterval(50, 150, Label.DOWN)
        base = extract_action_set([interval], random_return_panel, grid_step=1000, top_i=3, seed=2)
        shifted = build_return_panel(random_return_panel.returns + 0.0007)
        moved = extract_action_set([interval], shifted, grid_step=1000, top_i=3, seed=2)
        assert set(base.actions) == set(moved.actions)

    def test_vectors_are_exact_simplex_members(self, random_return_panel):
        actions = extract_action_set([MarketInterval(0, 99, Label.UP)], random_return_panel, grid_step=1000)
        for a in actions.actions:
            assert sum(a.basis_points) == 10000
            assert all(w % 1000 == 0 and w >= 0 for w in a.basis_points)

    def test_no_intervals(self, random_return_panel):
        with pytest.raises(NoIntervalsFound):
            extract_action_set([], random_return_panel)


def test_sample_statistics_track_full_grid():
    rng = np.random.default_rng(21)
    returns = rng.normal(0.0004, 0.01, size=(60, 5))
    grid = WeightGrid(250, 5)
    assert grid.size >= 100_000
    full = score_vectors(returns, np.array([v.weights for v in grid]), 1.0)
    sample = sample_vectors(grid, 0.0001, 1000, 9)
    partial = score_vectors(returns, np.array([v.weights for _, v in sample]), 1.0)
    assert abs(partial.mean() - full.mean()) <= 0.1 * abs(full.mean()) + 0.1 * full.std()
    assert partial.std() == pytest.approx(full.std(), rel=0.1)


def test_reference_series(random_return_panel):
    np.testing.assert_allclose(reference_series(random_return_panel), random_return_panel.returns.mean(axis=1))
    np.testing.assert_array_equal(reference_series(random_return_panel, "GLD"), random_return_panel.returns[:, 2])
    with pytest.raises(ValueError):
        reference_series(random_return_panel, "XYZ")


class TestArtifact:
    def test_save_load(self, tmp_path):
        actions = ActionSet(
            actions=(WeightVector((10000, 0)), WeightVector((5000, 5000))),
            provenance=((MarketInterval(3, 40, Label.UP), 0.25), (MarketInterval(50, 90, Label.DOWN), -0.1)),
        )
        path = tmp_path / "actions.txt"
        save_action_set(actions, str(path))
        loaded = load_action_set(str(path))
        assert loaded == actions

    def test_corrupt(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("action-set v1 n=2\n6000 5000\n", encoding="utf-8")
        with pytest.raises(ArtifactFormatError):
            load_action_set(str(path))
