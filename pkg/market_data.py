"""
Módulo responsável pelos dados de mercado: carregamento e alinhamento de
painéis de preços, retornos diários, matrizes de correlação móveis e
matrizes de retornos históricos (observações do agente).
"""
import logging
import os
from dataclasses import dataclass
from datetime import date
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import (
    DataFileNotFound, InsufficientHistory, MalformedFile, NonPositivePrice,
    TooFewAssets, TooShortHistory, ZeroVarianceAsset,
)

logger = logging.getLogger(__name__)

MIN_HISTORY = 121
OBS_WINDOW = 60
DEFAULT_CORR_WINDOW = 60


@dataclass(frozen=True)
class AssetPanel:
    """Preços de fechamento alinhados: T datas x n ativos."""
    dates: tuple
    asset_ids: tuple
    prices: np.ndarray

    @property
    def n_assets(self) -> int:
        return len(self.asset_ids)

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class ReturnPanel:
    """Retornos simples diários: linha t = preço[t+1]/preço[t] - 1."""
    dates: tuple
    asset_ids: tuple
    returns: np.ndarray

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    def __len__(self) -> int:
        return self.returns.shape[0]

    def index_on_or_after(self, day: date) -> int:
        """Primeiro índice de retorno cuja data é >= day (len se nenhum)."""
        stamps = pd.DatetimeIndex(self.dates)
        return int(stamps.searchsorted(pd.Timestamp(day), side="left"))


@dataclass(frozen=True)
class ReturnMatrix:
    """Matriz n x window de retornos passados terminando em t."""
    values: np.ndarray
    t: int
    window: int = OBS_WINDOW


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    window: int
    anchor_time: int

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


def load_price_panel(path: str, date_column: str = "date",
                     price_columns: Optional[Sequence[str]] = None,
                     delimiter: str = ",",
                     min_history: int = MIN_HISTORY) -> AssetPanel:
    """
    Carrega um arquivo delimitado de preços e alinha por junção interna.

    Args:
        path: Caminho do arquivo (cabeçalho, coluna de data ISO, um preço por ativo)
        date_column: Nome da coluna de datas
        price_columns: Colunas de preço (None = todas exceto a data)
        delimiter: Separador de campos
        min_history: Número mínimo de datas após o alinhamento

    Returns:
        AssetPanel com datas crescentes e sem células faltantes
    """
    if not os.path.exists(path):
        raise DataFileNotFound(f"Arquivo de dados não encontrado: {path}")

    try:
        frame = pd.read_csv(path, sep=delimiter, dtype=str, skipinitialspace=True)
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise MalformedFile(f"Não foi possível ler {path}: {e}")

    if date_column not in frame.columns:
        raise MalformedFile(f"Coluna de data '{date_column}' ausente em {path}")
    columns = list(price_columns) if price_columns else [c for c in frame.columns if c != date_column]
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise MalformedFile(f"Colunas ausentes em {path}: {', '.join(missing)}")
    if len(columns) < 2:
        raise TooFewAssets(f"São necessários ao menos 2 ativos; {path} tem {len(columns)}")

    try:
        stamps = pd.to_datetime(frame[date_column].str.strip(), format="%Y-%m-%d")
    except (ValueError, TypeError) as e:
        raise MalformedFile(f"Data inválida em {path}: {e}")

    prices = frame[columns].apply(lambda s: s.str.strip()).replace("", np.nan)
    try:
        prices = prices.apply(pd.to_numeric, errors="raise")
    except (ValueError, TypeError) as e:
        raise MalformedFile(f"Preço não numérico em {path}: {e}")
    prices.index = stamps

    if prices.index.duplicated().any():
        dup = prices.index[prices.index.duplicated()][0].date()
        raise MalformedFile(f"Data duplicada em {path}: {dup}")

    # Junção interna: só ficam as datas com preço para todos os ativos
    aligned = prices.dropna(how="any").sort_index()
    dropped = len(prices) - len(aligned)
    if dropped:
        logger.info("%d datas incompletas descartadas de %s", dropped, path)

    if (aligned.values <= 0).any():
        row, col = np.argwhere(aligned.values <= 0)[0]
        raise NonPositivePrice(
            f"Preço não positivo em {path}: {columns[col]} em {aligned.index[row].date()}"
        )
    if len(aligned) < min_history:
        raise TooShortHistory(
            f"Histórico curto em {path}: {len(aligned)} datas (mínimo {min_history})"
        )

    return AssetPanel(
        dates=tuple(d.date() for d in aligned.index),
        asset_ids=tuple(columns),
        prices=_freeze(aligned.values),
    )


def write_price_panel(path: str, dates: Sequence[date], asset_ids: Sequence[str],
                      prices: np.ndarray, delimiter: str = ",") -> None:
    """Grava um painel no mesmo formato aceito por load_price_panel."""
    frame = pd.DataFrame(np.asarray(prices), columns=list(asset_ids))
    frame.insert(0, "date", [d.isoformat() for d in dates])
    frame.to_csv(path, sep=delimiter, index=False, float_format="%.10g", lineterminator="\n")


def daily_returns(panel: AssetPanel) -> ReturnPanel:
    """
    Calcula os retornos simples diários do painel.

    Returns:
        ReturnPanel de comprimento T-1; a data da linha t é a do preço t+1
    """
    prices = panel.prices
    returns = prices[1:] / prices[:-1] - 1.0
    return ReturnPanel(
        dates=tuple(panel.dates[1:]),
        asset_ids=tuple(panel.asset_ids),
        returns=_freeze(returns),
    )


def returns_from_prices(prices: np.ndarray) -> np.ndarray:
    """Retornos simples de uma matriz de preços (sem validação de painel)."""
    prices = np.asarray(prices, dtype=float)
    return prices[1:] / prices[:-1] - 1.0


def pearson_correlation(window_returns: np.ndarray, anchor_time: int = -1) -> np.ndarray:
    """
    Correlação de Pearson entre colunas, com diagonal exatamente 1.

    Raises:
        ZeroVarianceAsset: se algum ativo tem retornos constantes na janela
    """
    constant = np.all(window_returns == window_returns[0], axis=0)
    if constant.any():
        asset = int(np.flatnonzero(constant)[0])
        raise ZeroVarianceAsset(
            f"Ativo {asset} tem retornos constantes na janela terminando em t={anchor_time}",
            anchor_time=anchor_time, asset=asset,
        )
    corr = np.corrcoef(window_returns, rowvar=False)
    corr = 0.5 * (corr + corr.T)
    np.clip(corr, -1.0, 1.0, out=corr)
    np.fill_diagonal(corr, 1.0)
    return corr


def rolling_correlation(rp: ReturnPanel, t: int, window: int = DEFAULT_CORR_WINDOW) -> CorrelationMatrix:
    """
    Correlação de Pearson dos `window` retornos que terminam em t.

    Args:
        rp: Painel de retornos
        t: Índice âncora (inclusivo)
        window: Tamanho da janela em dias

    Returns:
        CorrelationMatrix simétrica com diagonal unitária
    """
    if window < 2:
        raise InsufficientHistory(f"Janela de correlação deve ser >= 2 (recebido {window})")
    if t < window - 1 or t >= len(rp):
        raise InsufficientHistory(
            f"t={t} fora do intervalo [{window - 1}, {len(rp) - 1}] para janela {window}"
        )
    values = pearson_correlation(rp.returns[t - window + 1:t + 1], anchor_time=t)
    return CorrelationMatrix(values=_freeze(values), window=window, anchor_time=t)


def return_matrix(rp: ReturnPanel, t: int, window: int = OBS_WINDOW) -> ReturnMatrix:
    """
    Matriz de retornos históricos (observação): linha i = (r_{t-59}, ..., r_t) do ativo i.
    """
    if t < window - 1 or t >= len(rp):
        raise InsufficientHistory(
            f"Observação em t={t} exige {window} retornos (t >= {window - 1})"
        )
    values = rp.returns[t - window + 1:t + 1].T
    return ReturnMatrix(values=_freeze(values), t=t, window=window)


def select_assets(panel: AssetPanel, assets: List[str]) -> AssetPanel:
    """Restringe o painel a um universo de ativos."""
    missing = [a for a in assets if a not in panel.asset_ids]
    if missing:
        raise MalformedFile(f"Ativos fora do painel: {', '.join(missing)}")
    if len(assets) < 2:
        raise TooFewAssets("Um universo precisa de ao menos 2 ativos")
    idx = [panel.asset_ids.index(a) for a in assets]
    return AssetPanel(dates=panel.dates, asset_ids=tuple(assets), prices=_freeze(panel.prices[:, idx]))
