"""
Fixtures compartilhadas: painéis sintéticos de retornos e de preços.
"""
import numpy as np
import pandas as pd
import pytest

from market_data import ReturnPanel, write_price_panel


def _dates(n: int, start: str = "2005-01-03"):
    return tuple(d.date() for d in pd.bdate_range(start=start, periods=n))


def build_return_panel(returns, start: str = "2005-01-03", asset_ids=None) -> ReturnPanel:
    returns = np.asarray(returns, dtype=float)
    if returns.ndim == 1:
        returns = returns[:, None]
    ids = tuple(asset_ids or [f"A{i}" for i in range(returns.shape[1])])
    return ReturnPanel(dates=_dates(returns.shape[0], start), asset_ids=ids, returns=returns)


def correlated_returns(n_days: int, corr: float, seed: int, vol: float = 0.01) -> np.ndarray:
    rng = np.random.default_rng(seed)
    cov = vol ** 2 * np.array([[1.0, corr], [corr, 1.0]])
    return rng.multivariate_normal([0.0004, 0.0002], cov, size=n_days)


@pytest.fixture
def return_panel_factory():
    return build_return_panel


@pytest.fixture
def planted_regime_panel() -> ReturnPanel:
    """Dois ativos: rho = 0.8 por 500 dias, depois rho = -0.2 por 500 dias."""
    first = correlated_returns(500, 0.8, seed=1)
    second = correlated_returns(500, -0.2, seed=2)
    return build_return_panel(np.vstack([first, second]))


@pytest.fixture
def random_return_panel() -> ReturnPanel:
    rng = np.random.default_rng(7)
    return build_return_panel(rng.normal(0.0003, 0.01, size=(400, 3)), asset_ids=["SPY", "IEF", "GLD"])


@pytest.fixture
def price_file_factory(tmp_path):
    """Grava uma matriz de preços no formato de entrada e devolve o caminho."""
    def write(prices, name: str = "prices.csv", asset_ids=None, start: str = "2005-01-03",
              delimiter: str = ","):
        prices = np.asarray(prices, dtype=float)
        ids = asset_ids or [f"A{i}" for i in range(prices.shape[1])]
        path = tmp_path / name
        write_price_panel(str(path), _dates(prices.shape[0], start), ids, prices, delimiter=delimiter)
        return str(path)
    return write


@pytest.fixture
def synthetic_prices() -> np.ndarray:
    """Painel de 1500 dias com dois regimes de correlação entre três ativos."""
    rng = np.random.default_rng(11)
    blocks = []
    for corr, mean in ((0.7, 0.0006), (-0.3, -0.0004), (0.2, 0.0005)):
        cov = 0.01 ** 2 * (np.full((3, 3), corr) + (1 - corr) * np.eye(3))
        blocks.append(rng.multivariate_normal([mean, mean / 2, -mean / 3], cov, size=500))
    returns = np.vstack(blocks)
    prices = 100.0 * np.cumprod(1.0 + returns, axis=0)
    return np.vstack([np.full(3, 100.0), prices])
