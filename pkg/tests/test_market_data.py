import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import build_return_panel
from errors import (
    DataFileNotFound, InsufficientHistory, MalformedFile, NonPositivePrice, TooFewAssets,
    TooShortHistory, ZeroVarianceAsset,
)
from market_data import (
    AssetPanel, daily_returns, load_price_panel, return_matrix, rolling_correlation,
)


def _random_prices(rows: int, n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return 100.0 * np.cumprod(1.0 + rng.normal(0.0002, 0.01, size=(rows, n)), axis=0)


class TestLoadPricePanel:
    def test_complete_file(self, price_file_factory):
        path = price_file_factory(_random_prices(500, 3))
        panel = load_price_panel(path)
        assert len(panel) == 500
        assert panel.n_assets == 3
        assert panel.asset_ids == ("A0", "A1", "A2")

    def test_missing_dates_dropped_for_all_assets(self, price_file_factory, tmp_path):
        path = price_file_factory(_random_prices(300, 2))
        lines = open(path, encoding="utf-8").read().splitlines()
        for i in range(10, 20):
            date_part, a, _ = lines[i].split(",")
            lines[i] = f"{date_part},{a},"
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
        panel = load_price_panel(path)
        assert len(panel) == 290
        assert panel.prices.shape == (290, 2)

    def test_zero_price(self, price_file_factory):
        prices = _random_prices(200, 2)
        prices[50, 1] = 0.0
        with pytest.raises(NonPositivePrice):
            load_price_panel(price_file_factory(prices))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFileNotFound, match="nao_existe.csv"):
            load_price_panel(str(tmp_path / "nao_existe.csv"))

    def test_single_asset(self, price_file_factory):
        with pytest.raises(TooFewAssets):
            load_price_panel(price_file_factory(_random_prices(200, 1)))

    def test_short_history(self, price_file_factory):
        with pytest.raises(TooShortHistory):
            load_price_panel(price_file_factory(_random_prices(100, 2)))

    def test_non_numeric_price(self, price_file_factory):
        path = price_file_factory(_random_prices(200, 2))
        text = open(path, encoding="utf-8").read().splitlines()
        date_part, a, _ = text[5].split(",")
        text[5] = f"{date_part},{a},abc"
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(text) + "\n")
        with pytest.raises(MalformedFile):
            load_price_panel(path)

    def test_semicolon_delimiter_and_column_subset(self, price_file_factory):
        path = price_file_factory(_random_prices(200, 3), delimiter=";")
        panel = load_price_panel(path, price_columns=["A2", "A0"], delimiter=";")
        assert panel.asset_ids == ("A2", "A0")


class TestDailyReturns:
    def _panel(self, prices):
        prices = np.asarray(prices, dtype=float)
        dates = tuple(range(len(prices)))
        return AssetPanel(dates=dates, asset_ids=("A", "B"), prices=np.column_stack([prices, prices]))

    def test_up(self):
        assert daily_returns(self._panel([100, 101])).returns[0, 0] == pytest.approx(0.01)

    def test_constant(self):
        np.testing.assert_array_equal(daily_returns(self._panel([50, 50, 50])).returns[:, 0], [0.0, 0.0])

    def test_down(self):
        assert daily_returns(self._panel([100, 90])).returns[0, 0] == pytest.approx(-0.10)

    def test_prices_reconstructed_from_returns(self):
        prices = _random_prices(250, 2, seed=3)
        panel = AssetPanel(dates=tuple(range(250)), asset_ids=("A", "B"), prices=prices)
        rebuilt = prices[0] * np.vstack([np.ones(2), np.cumprod(1.0 + daily_returns(panel).returns, axis=0)])
        np.testing.assert_allclose(rebuilt, prices, rtol=1e-10)


class TestRollingCorrelation:
    def test_identical_assets(self):
        r = np.random.default_rng(0).normal(0, 0.01, 80)
        corr = rolling_correlation(build_return_panel(np.column_stack([r, r])), 79)
        assert corr.values[0, 1] == pytest.approx(1.0)

    def test_mirrored_assets(self):
        r = np.random.default_rng(1).normal(0, 0.01, 80)
        corr = rolling_correlation(build_return_panel(np.column_stack([r, -r])), 79)
        assert corr.values[0, 1] == pytest.approx(-1.0)

    def test_textbook_pearson(self, random_return_panel):
        t = 150
        window = random_return_panel.returns[t - 59:t + 1]
        corr = rolling_correlation(random_return_panel, t).values
        for i in range(3):
            for j in range(3):
                x, y = window[:, i], window[:, j]
                dx, dy = x - x.mean(), y - y.mean()
                expected = np.sum(dx * dy) / np.sqrt(np.sum(dx ** 2) * np.sum(dy ** 2))
                assert corr[i, j] == pytest.approx(expected, abs=1e-12)

    def test_constant_asset(self):
        r = np.random.default_rng(2).normal(0, 0.01, 80)
        with pytest.raises(ZeroVarianceAsset) as info:
            rolling_correlation(build_return_panel(np.column_stack([r, np.full(80, 0.001)])), 70)
        assert info.value.anchor_time == 70
        assert info.value.asset == 1

    def test_anchor_before_window(self, random_return_panel):
        with pytest.raises(InsufficientHistory):
            rolling_correlation(random_return_panel, 58)

    @settings(max_examples=25, deadline=None)
    @given(
        scale=st.floats(min_value=0.1, max_value=50.0),
        shift=st.floats(min_value=-0.05, max_value=0.05),
        seed=st.integers(min_value=0, max_value=10_000),
    )
    def test_affine_invariance(self, scale, shift, seed):
        returns = np.random.default_rng(seed).normal(0, 0.01, size=(60, 3))
        base = rolling_correlation(build_return_panel(returns), 59).values
        moved = returns.copy()
        moved[:, 1] = scale * moved[:, 1] + shift
        np.testing.assert_allclose(rolling_correlation(build_return_panel(moved), 59).values, base, atol=1e-9)


class TestReturnMatrix:
    def test_first_valid_anchor(self, random_return_panel):
        m = return_matrix(random_return_panel, 59)
        np.testing.assert_array_equal(m.values, random_return_panel.returns[0:60].T)

    def test_row_is_asset_window(self, random_return_panel):
        m = return_matrix(random_return_panel, 100)
        np.testing.assert_array_equal(m.values[0], random_return_panel.returns[41:101, 0])

    def test_too_early(self, random_return_panel):
        with pytest.raises(InsufficientHistory):
            return_matrix(random_return_panel, 58)

    def test_consecutive_windows_overlap(self, random_return_panel):
        a = return_matrix(random_return_panel, 200).values
        b = return_matrix(random_return_panel, 201).values
        np.testing.assert_array_equal(a[:, 1:], b[:, :-1])
