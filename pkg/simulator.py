"""
Módulo responsável pela simulação Monte Carlo de preços por movimento
browniano geométrico correlacionado (discretização exata de Black-Scholes-Merton),
gerando um conjunto de dados de treino por matriz representativa.
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import pandas as pd

from config import TRADING_DAYS
from errors import InsufficientSamples, NotFactorizable, ZeroVolatility
from market_data import CorrelationMatrix, ReturnPanel, write_price_panel
from rcme import RepresentativeSet
from utils.rng import standard_normals, stream

logger = logging.getLogger(__name__)

MIN_SAMPLES = 30
S0 = 100.0
JITTER_STEPS = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


@dataclass(frozen=True)
class GbmParams:
    mu: np.ndarray
    sigma: np.ndarray
    s0: np.ndarray
    dt: float = 1.0 / TRADING_DAYS

    def __post_init__(self):
        if not (len(self.mu) == len(self.sigma) == len(self.s0)):
            raise ValueError("mu, sigma e s0 devem ter o mesmo comprimento")
        if np.any(np.asarray(self.sigma) <= 0):
            raise ValueError("sigma deve ser > 0 para todos os ativos")
        if np.any(np.asarray(self.s0) <= 0):
            raise ValueError("s0 deve ser > 0")
        if self.dt <= 0:
            raise ValueError("dt deve ser > 0")

    @property
    def n(self) -> int:
        return len(self.mu)


@dataclass(frozen=True)
class CorrelationRoot:
    lower: np.ndarray
    jitter_used: float = 0.0


@dataclass(frozen=True)
class SimulatedPanel:
    prices: np.ndarray
    seed: int
    source_representative: int = -1

    def __len__(self) -> int:
        return self.prices.shape[0]


def estimate_gbm_params(rp: ReturnPanel, member_times: Sequence[int], window: int = 60,
                        dt: float = 1.0 / TRADING_DAYS) -> GbmParams:
    """
    Estima drift e volatilidade anualizados sobre a união das janelas dos membros.

    Args:
        rp: Painel de retornos históricos
        member_times: Âncoras do grupo (cada uma cobre [t-window+1, t])
        window: Janela usada na extração das correlações
        dt: Passo de tempo da simulação em anos

    Returns:
        GbmParams com s0 = 100 para todos os ativos
    """
    rows = set()
    for t in member_times:
        if t < 0 or t >= len(rp):
            raise InsufficientSamples(f"Âncora {t} fora do painel de {len(rp)} retornos")
        rows.update(range(max(0, t - window + 1), t + 1))
    if len(rows) < MIN_SAMPLES:
        raise InsufficientSamples(
            f"Apenas {len(rows)} retornos diários na união das janelas (mínimo {MIN_SAMPLES})"
        )

    sample = rp.returns[sorted(rows)]
    mu = sample.mean(axis=0) * TRADING_DAYS
    sigma = sample.std(axis=0, ddof=1) * np.sqrt(TRADING_DAYS)
    flat = np.flatnonzero(np.ptp(sample, axis=0) == 0)
    if flat.size:
        raise ZeroVolatility(
            f"Volatilidade nula para o ativo {int(flat[0])} (mu anualizado = {mu[flat[0]]:.6g})"
        )
    return GbmParams(mu=mu, sigma=sigma, s0=np.full(rp.n_assets, S0), dt=dt)


def correlation_root(target: CorrelationMatrix) -> CorrelationRoot:
    """
    Fator de Cholesky da correlação alvo, com jitter crescente se necessário.

    Raises:
        NotFactorizable: se ainda falhar com jitter 1e-4
    """
    values = np.asarray(target.values, dtype=float)
    try:
        return CorrelationRoot(lower=np.linalg.cholesky(values), jitter_used=0.0)
    except np.linalg.LinAlgError:
        pass

    identity = np.eye(values.shape[0])
    for eps in JITTER_STEPS:
        jittered = values + eps * identity
        scale = 1.0 / np.sqrt(np.diag(jittered))
        jittered = jittered * np.outer(scale, scale)
        try:
            lower = np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError:
            continue
        logger.warning("Correlação fatorada com jitter %.0e", eps)
        return CorrelationRoot(lower=lower, jitter_used=eps)
    raise NotFactorizable(f"Matriz não fatorável mesmo com jitter {JITTER_STEPS[-1]:.0e}")


def gbm_step(prices: np.ndarray, params: GbmParams, shock: np.ndarray) -> np.ndarray:
    """Um passo exato: S_{t+dt} = S_t exp[(mu - sigma^2/2) dt + sigma eps sqrt(dt)]."""
    drift = (params.mu - 0.5 * params.sigma ** 2) * params.dt
    return prices * np.exp(drift + params.sigma * shock * np.sqrt(params.dt))


def gbm_closed_form(params: GbmParams, brownian: np.ndarray, t: float) -> np.ndarray:
    """Forma fechada: S_t = S_0 exp[(mu - sigma^2/2) t + sigma W_t]."""
    return params.s0 * np.exp((params.mu - 0.5 * params.sigma ** 2) * t + params.sigma * brownian)


def correlated_shocks(root: CorrelationRoot, horizon: int, seed: int) -> np.ndarray:
    """Choques correlacionados eps_t = L z_t, linha t = passo t."""
    z = standard_normals(stream(seed), (horizon, root.lower.shape[0]))
    return z @ root.lower.T


def simulate_paths(params: GbmParams, root: CorrelationRoot, horizon: int, seed: int,
                   source_representative: int = -1) -> SimulatedPanel:
    """
    Gera um caminho de preços correlacionado de `horizon` passos.

    Args:
        params: Parâmetros do GBM
        root: Fator de Cholesky da correlação alvo
        horizon: Número de passos H
        seed: Semente do fluxo (determina o painel por completo)

    Returns:
        SimulatedPanel com (H+1) linhas; a linha 0 é s0
    """
    if horizon < 1:
        raise ValueError("horizon deve ser >= 1")
    if root.lower.shape[0] != params.n:
        raise ValueError("Dimensão do fator de correlação difere de params")

    shocks = correlated_shocks(root, horizon, seed)
    increments = (params.mu - 0.5 * params.sigma ** 2) * params.dt \
        + params.sigma * shocks * np.sqrt(params.dt)
    log_paths = np.vstack([np.zeros(params.n), np.cumsum(increments, axis=0)])
    prices = params.s0 * np.exp(log_paths)
    prices.setflags(write=False)
    return SimulatedPanel(prices=prices, seed=seed, source_representative=source_representative)


def generate_dataset(rs_entry: int, rs: RepresentativeSet, rp: ReturnPanel, n_paths: int = 64,
                     horizon: int = 756, base_seed: int = 0, dt: float = 1.0 / TRADING_DAYS,
                     jobs: int = 1) -> List[SimulatedPanel]:
    """
    Gera n_paths caminhos para a representativa `rs_entry`.

    As sementes são base_seed..base_seed+n_paths-1; a geração concorrente
    produz exatamente o mesmo resultado da sequencial.
    """
    if not 0 <= rs_entry < rs.k:
        raise IndexError(f"Representativa {rs_entry} fora de [0, {rs.k})")
    params = estimate_gbm_params(rp, rs.member_times[rs_entry], window=rs.window, dt=dt)
    root = correlation_root(rs.matrices[rs_entry])

    seeds = [base_seed + i for i in range(n_paths)]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        panels = list(pool.map(
            lambda s: simulate_paths(params, root, horizon, s, source_representative=rs_entry),
            seeds,
        ))
    logger.info("Representativa %d: %d caminhos de %d passos (jitter %.0e)",
                rs_entry, n_paths, horizon, root.jitter_used)
    return panels


def dump_dataset(panels: Sequence[SimulatedPanel], out_dir: str, asset_ids: Sequence[str],
                 delimiter: str = ",", start: str = "2000-01-03") -> List[str]:
    """
    Grava cada caminho como sim_<rep>_<seed>.csv no formato de entrada de preços.

    Returns:
        Caminhos dos arquivos gravados
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for panel in panels:
        dates = [d.date() for d in pd.bdate_range(start=start, periods=len(panel))]
        path = os.path.join(out_dir, f"sim_{panel.source_representative}_{panel.seed}.csv")
        write_price_panel(path, dates, asset_ids, panel.prices, delimiter=delimiter)
        paths.append(path)
    return paths
