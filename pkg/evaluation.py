"""
Módulo responsável pela avaliação: métricas de desempenho, backtest em
períodos fixos, backtest com inícios diários ("daily rolling") e relatórios
em tabela de texto e CSV.
"""
import logging
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from action_space import ActionSet
from agent import ModelPool, infer
from benchmarks import equal_weights, estimate_moments
from config import STRATEGY_IDS, TRADING_DAYS
from errors import DegenerateVolatility, EmptySeries, InsufficientHistory, PortfolioEngineError, TooShort
from market_data import CorrelationMatrix, ReturnPanel, rolling_correlation
from portfolio_env import EnvConfig, PortfolioEnv
from utils.cache_manager import CacheManager

logger = logging.getLogger(__name__)

STRATEGY_NAMES = {
    "markowitz": "Markowitz",
    "risk_budgeting": "Risk Budgeting",
    "equal_weight": "Equal Weight",
    "model": "Model",
}
METRICS = ("annualized_return", "annualized_volatility", "mdd", "sharpe", "cumulative_return")


def annualized_return(daily) -> float:
    r = np.asarray(daily, dtype=float)
    if r.size == 0:
        raise EmptySeries("Série de retornos vazia")
    return float(r.mean() * TRADING_DAYS)


def annualized_volatility(daily) -> float:
    """Desvio padrão amostral (n-1) anualizado por sqrt(252)."""
    r = np.asarray(daily, dtype=float)
    if r.size < 2:
        raise TooShort("Volatilidade exige ao menos 2 retornos")
    if np.ptp(r) == 0:
        return 0.0
    return float(r.std(ddof=1) * math.sqrt(TRADING_DAYS))


def sharpe(daily) -> float:
    vol = annualized_volatility(daily)
    if vol == 0:
        raise DegenerateVolatility("Volatilidade nula: Sharpe indefinido")
    return annualized_return(daily) / vol


def max_drawdown(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0 or np.any(v <= 0):
        raise ValueError("Caminho de valores deve ser não vazio e positivo")
    return float(np.min(v / np.maximum.accumulate(v) - 1.0))


def cumulative_return(values) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("Caminho de valores vazio")
    return float(v[-1] / v[0] - 1.0)


def equity_curve(daily) -> np.ndarray:
    """Valores da carteira a partir de 1.0 (len = len(daily) + 1)."""
    return np.concatenate([[1.0], np.cumprod(1.0 + np.asarray(daily, dtype=float))])


@dataclass(frozen=True)
class PerformanceReport:
    annualized_return: float
    annualized_volatility: float
    sharpe: float
    mdd: float
    cumulative_return: float
    n_days: int

    @classmethod
    def from_returns(cls, daily) -> "PerformanceReport":
        """Métricas de uma série diária; Sharpe indefinido vira NaN."""
        r = np.asarray(daily, dtype=float)
        values = equity_curve(r)
        vol = annualized_volatility(r) if r.size >= 2 else float("nan")
        try:
            ratio = sharpe(r)
        except (DegenerateVolatility, TooShort):
            ratio = float("nan")
        return cls(
            annualized_return=annualized_return(r),
            annualized_volatility=vol,
            sharpe=ratio,
            mdd=max_drawdown(values),
            cumulative_return=cumulative_return(values),
            n_days=int(r.size),
        )

    @classmethod
    def mean_of(cls, reports: Sequence["PerformanceReport"]) -> "PerformanceReport":
        """Média aritmética coluna a coluna (NaN ignorado)."""
        if not reports:
            nan = float("nan")
            return cls(nan, nan, nan, nan, nan, 0)
        table = np.array([[getattr(r, m) for m in METRICS] for r in reports], dtype=float)
        with np.errstate(all="ignore"):
            means = [float(np.nanmean(col)) if np.any(~np.isnan(col)) else float("nan")
                     for col in table.T]
        return cls(
            annualized_return=means[0], annualized_volatility=means[1], mdd=means[2],
            sharpe=means[3], cumulative_return=means[4],
            n_days=int(round(np.mean([r.n_days for r in reports]))),
        )

    def as_dict(self) -> Dict[str, float]:
        return {m: getattr(self, m) for m in METRICS} | {"n_days": self.n_days}


@dataclass(frozen=True)
class ExperimentSpec:
    periods: Tuple[Tuple[date, date], ...]
    management_horizon: int = 504
    rolling: bool = False
    strategies: Tuple[str, ...] = STRATEGY_IDS

    def __post_init__(self):
        if not self.periods:
            raise ValueError("Lista de períodos vazia")
        if self.management_horizon < 1:
            raise ValueError("management_horizon deve ser >= 1")
        for start, end in self.periods:
            if end < start:
                raise ValueError(f"Período invertido: {start} > {end}")


class Strategy:
    """Interface de estratégia: retornos diários de uma janela de gestão."""
    strategy_id = ""

    def __init__(self, cache: Optional[CacheManager] = None):
        self.cache = cache or CacheManager()
        self._panel = None
        self._bind_lock = threading.Lock()

    def _bind(self, rp: ReturnPanel) -> None:
        # o cache vale para um único painel
        with self._bind_lock:
            if self._panel is not rp:
                self.cache.clear()
                self._panel = rp

    def run(self, rp: ReturnPanel, anchor: int, horizon: int) -> np.ndarray:
        """
        Gere a carteira a partir do fechamento do dia `anchor`.

        Returns:
            Retornos diários da carteira nos dias anchor+1 .. anchor+horizon
            (truncado no fim do painel)
        """
        raise NotImplementedError


class AllocatorStrategy(Strategy):
    def __init__(self, strategy_id: str, allocator: Callable, moment_window: int = 252,
                 decision_stride: int = 1, cost_bps: float = 0.0, cache: Optional[CacheManager] = None):
        """
        Estratégia de alocador clássico rebalanceada no mesmo passo do agente.

        Args:
            strategy_id: markowitz, risk_budgeting ou equal_weight
            allocator: MomentEstimates -> AllocatorWeights
            moment_window: Janela dos momentos em dias
            decision_stride: Dias entre rebalanceamentos
            cost_bps: Custo por unidade de giro
            cache: Cache dos pesos-alvo por (estratégia, t, janela)
        """
        super().__init__(cache)
        self.strategy_id = strategy_id
        self.allocator = allocator
        self.moment_window = moment_window
        self.decision_stride = decision_stride
        self.cost_bps = cost_bps

    def target(self, rp: ReturnPanel, t: int) -> np.ndarray:
        if self.strategy_id == "equal_weight":
            return equal_weights(rp.n_assets).weights
        weights = self.cache.get_or_compute(
            (self.strategy_id, t, self.moment_window),
            lambda: self.allocator(estimate_moments(rp, t, self.moment_window)).weights,
        )
        return weights.copy()

    def run(self, rp: ReturnPanel, anchor: int, horizon: int) -> np.ndarray:
        self._bind(rp)
        n = rp.n_assets
        w = np.full(n, 1.0 / n)
        out = []
        t = anchor
        for step in range(horizon):
            if t + 1 >= len(rp):
                break
            cost = 0.0
            if step % self.decision_stride == 0:
                target = self.target(rp, t)
                cost = self.cost_bps / 10000.0 * float(np.abs(target - w).sum())
                w = target
            r = rp.returns[t + 1]
            gross = float(w @ r)
            out.append(gross - cost)
            w = w * (1.0 + r) / (1.0 + gross)
            t += 1
        return np.asarray(out)


class ModelPoolStrategy(Strategy):
    strategy_id = "model"

    def __init__(self, pool: ModelPool, action_set: ActionSet, env_cfg: EnvConfig = EnvConfig(),
                 corr_window: int = 60, mode: str = "deterministic", cache: Optional[CacheManager] = None,
                 trace_dir: Optional[str] = None):
        """
        Estratégia do pool de modelos: a cada decisão escolhe o sub-pool da
        representativa mais próxima da correlação corrente.

        Args:
            pool: ModelPool treinado
            action_set: Conjunto de ações usado no treino
            env_cfg: Configuração do ambiente (horizonte é sobrescrito por janela)
            corr_window: Janela da correlação corrente
            mode: deterministic ou stochastic
            cache: Cache de correlações por (t, janela)
            trace_dir: Diretório opcional para rastros passo a passo
        """
        super().__init__(cache)
        self.pool = pool
        self.action_set = action_set
        self.env_cfg = env_cfg
        self.corr_window = corr_window
        self.mode = mode
        self.trace_dir = trace_dir

    def correlation(self, rp: ReturnPanel, t: int) -> CorrelationMatrix:
        return self.cache.get_or_compute(
            (t, self.corr_window), lambda: rolling_correlation(rp, t, self.corr_window)
        )

    def run(self, rp: ReturnPanel, anchor: int, horizon: int) -> np.ndarray:
        self._bind(rp)
        cfg = replace(self.env_cfg, episode_horizon=horizon)
        trace = None
        if self.trace_dir:
            os.makedirs(self.trace_dir, exist_ok=True)
            trace = os.path.join(self.trace_dir, f"trace_{anchor}.csv")
        env = PortfolioEnv(self.action_set, cfg, trace_path=trace)
        out = env.reset(rp.returns, anchor)
        action = 0
        while not out.done:
            t = env.state.t
            if env.state.steps % cfg.decision_stride == 0:
                action = infer(self.pool, self.correlation(rp, t), out.observation, out.state,
                               mode=self.mode, seed=t)
            out = env.step(action)
        return env.episode_returns()


@dataclass
class PeriodResult:
    start: date
    end: date
    report: Optional[PerformanceReport] = None
    error: str = ""
    windows: int = 0

    @property
    def failed(self) -> bool:
        return self.report is None


@dataclass
class BacktestTable:
    strategy: str
    rolling: bool
    periods: List[PeriodResult] = field(default_factory=list)

    @property
    def mean(self) -> PerformanceReport:
        return PerformanceReport.mean_of([p.report for p in self.periods if not p.failed])


def _anchor(rp: ReturnPanel, index: int) -> int:
    # decisão no fechamento anterior ao primeiro dia de gestão
    return index - 1


def _dump_equity(equity_dir: Optional[str], strategy: str, rp: ReturnPanel, anchor: int,
                 daily: np.ndarray) -> None:
    if not equity_dir:
        return
    os.makedirs(equity_dir, exist_ok=True)
    days = [rp.dates[anchor + i].isoformat() if anchor + i >= 0 else "" for i in range(len(daily) + 1)]
    frame = pd.DataFrame({"date": days, "value": equity_curve(daily)})
    frame.to_csv(os.path.join(equity_dir, f"equity_{strategy}_{anchor + 1}.csv"),
                 index=False, lineterminator="\n", float_format="%.12g")


def _run_window(strategy: Strategy, rp: ReturnPanel, index: int, horizon: int,
                equity_dir: Optional[str] = None) -> PerformanceReport:
    anchor = _anchor(rp, index)
    if anchor < 0 or index >= len(rp):
        raise InsufficientHistory(f"Início de gestão no índice {index} fora do painel")
    daily = strategy.run(rp, anchor, horizon)
    if len(daily) < horizon:
        logger.warning("%s: janela a partir do índice %d truncada em %d dias",
                       strategy.strategy_id, index, len(daily))
    _dump_equity(equity_dir, strategy.strategy_id, rp, anchor, daily)
    return PerformanceReport.from_returns(daily)


def run_backtest(strategy: Strategy, rp: ReturnPanel, spec: ExperimentSpec,
                 equity_dir: Optional[str] = None) -> BacktestTable:
    """
    Backtest em períodos fixos: uma janela de gestão a partir do início de cada período.

    Falhas da estratégia marcam o período como falho sem abortar a tabela.
    """
    table = BacktestTable(strategy=strategy.strategy_id, rolling=False)
    for start, end in spec.periods:
        result = PeriodResult(start=start, end=end)
        try:
            result.report = _run_window(strategy, rp, rp.index_on_or_after(start),
                                        spec.management_horizon, equity_dir)
            result.windows = 1
        except PortfolioEngineError as e:
            logger.error("%s, período %s: %s", strategy.strategy_id, start, e)
            result.error = str(e)
        table.periods.append(result)
    return table


def rolling_starts(rp: ReturnPanel, start: date, end: date, horizon: int) -> List[int]:
    """
    Índices dos dias de negociação do período cujas janelas cabem no painel.
    """
    first = rp.index_on_or_after(start)
    last = rp.index_on_or_after(end)
    if last < len(rp) and rp.dates[last] == end:
        last += 1
    candidates = list(range(first, last))
    fitting = [i for i in candidates if i >= 1 and i - 1 + horizon < len(rp)]
    if len(fitting) < len(candidates):
        logger.warning("Período %s..%s: %d de %d inícios ignorados (horizonte além do painel)",
                       start, end, len(candidates) - len(fitting), len(candidates))
    return fitting


def run_daily_rolling(strategy: Strategy, rp: ReturnPanel, spec: ExperimentSpec,
                      jobs: int = 1, equity_dir: Optional[str] = None) -> BacktestTable:
    """
    Uma janela de gestão por dia de negociação de cada período; as métricas
    do período são médias aritméticas sobre as janelas.
    """
    table = BacktestTable(strategy=strategy.strategy_id, rolling=True)
    for start, end in spec.periods:
        result = PeriodResult(start=start, end=end)
        starts = rolling_starts(rp, start, end, spec.management_horizon)
        try:
            if not starts:
                raise InsufficientHistory(f"Nenhuma janela de {spec.management_horizon} dias cabe no período")
            with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
                reports = list(pool.map(
                    lambda i: _run_window(strategy, rp, i, spec.management_horizon, equity_dir),
                    starts,
                ))
            result.report = PerformanceReport.mean_of(reports)
            result.windows = len(reports)
        except PortfolioEngineError as e:
            logger.error("%s, período %s (rolling): %s", strategy.strategy_id, start, e)
            result.error = str(e)
        table.periods.append(result)
    return table


def _pct(value: float) -> str:
    return "-" if math.isnan(value) else f"{value * 100:.2f}"


def _num(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.3f}"


def format_table(tables: Sequence[BacktestTable], title: str = "") -> str:
    """
    Tabela de texto alinhada: um grupo de colunas (R, Sigma, MDD, Sharpe, Cum)
    por estratégia, uma linha por período e a linha Mean.
    """
    ordered = sorted(tables, key=lambda t: STRATEGY_IDS.index(t.strategy))
    cols = ("R", "Sigma", "MDD", "Sharpe", "Cum")
    width = 8
    group = width * len(cols)
    label_width = 26
    lines = []
    if title:
        lines.append(title)
    lines.append(" " * label_width + "".join(
        f"|{STRATEGY_NAMES[t.strategy]:^{group}}" for t in ordered))
    lines.append(f"{'Period':<{label_width}}" + "".join(
        "|" + "".join(f"{c:>{width}}" for c in cols) for _ in ordered))
    lines.append("-" * len(lines[-1]))

    def cells(report: Optional[PerformanceReport]) -> str:
        if report is None:
            return "|" + f"{'failed':>{group}}"
        values = (_pct(report.annualized_return), _pct(report.annualized_volatility),
                  _pct(report.mdd), _num(report.sharpe), _pct(report.cumulative_return))
        return "|" + "".join(f"{v:>{width}}" for v in values)

    n_periods = max((len(t.periods) for t in ordered), default=0)
    for i in range(n_periods):
        p = ordered[0].periods[i]
        label = f"({i + 1}) {p.start.isoformat()}~{p.end.isoformat()}"
        lines.append(f"{label:<{label_width}}" + "".join(cells(t.periods[i].report) for t in ordered))
    lines.append(f"{'Mean':<{label_width}}" + "".join(cells(t.mean) for t in ordered))
    return "\n".join(lines) + "\n"


def tables_to_frame(tables: Sequence[BacktestTable]) -> pd.DataFrame:
    """Formato longo: uma linha por (estratégia, período), mais a linha Mean."""
    rows = []
    for t in sorted(tables, key=lambda t: STRATEGY_IDS.index(t.strategy)):
        for p in t.periods:
            base = {"strategy": t.strategy, "rolling": t.rolling, "period_start": p.start.isoformat(),
                    "period_end": p.end.isoformat(), "windows": p.windows,
                    "status": "failed" if p.failed else "ok", "error": p.error}
            metrics = p.report.as_dict() if p.report else {m: float("nan") for m in METRICS}
            rows.append(base | metrics)
        rows.append({"strategy": t.strategy, "rolling": t.rolling, "period_start": "Mean",
                     "period_end": "", "windows": sum(p.windows for p in t.periods),
                     "status": "ok", "error": ""} | t.mean.as_dict())
    return pd.DataFrame(rows)


def write_reports(tables: Sequence[BacktestTable], base_path: str, title: str = "",
                  delimiter: str = ",") -> Tuple[str, str]:
    """Grava <base>.txt (tabela) e <base>.csv (formato longo)."""
    txt, csv = base_path + ".txt", base_path + ".csv"
    with open(txt, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_table(tables, title))
    tables_to_frame(tables).to_csv(csv, sep=delimiter, index=False, lineterminator="\n",
                                   float_format="%.10g")
    return txt, csv
