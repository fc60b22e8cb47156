"""
Módulo responsável pelo ambiente de aprendizado por reforço da carteira.

A cada passo o ambiente avança um dia do painel, aplica o vetor de pesos
escolhido e emite observação (matriz n x 60 de retornos dos ativos), estado
(últimos 120 retornos da carteira) e recompensa (índice de Sharpe).
"""
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Union

import numpy as np
import pandas as pd

from action_space import ActionSet
from config import TRADING_DAYS
from errors import DegenerateVolatility, EpisodeFinished, InsufficientHistory, InvalidActionIndex
from market_data import AssetPanel, ReturnPanel, returns_from_prices
from simulator import SimulatedPanel

logger = logging.getLogger(__name__)

PanelLike = Union[AssetPanel, SimulatedPanel, ReturnPanel, np.ndarray]


@dataclass(frozen=True)
class EnvConfig:
    obs_window: int = 60
    state_window: int = 120
    decision_stride: int = 1
    episode_horizon: int = 252
    reward_mode: str = "trailing"
    cost_bps: float = 0.0

    def __post_init__(self):
        if self.decision_stride < 1:
            raise ValueError("decision_stride deve ser >= 1")
        if self.reward_mode not in ("trailing", "terminal"):
            raise ValueError(f"reward_mode desconhecido: {self.reward_mode}")
        if self.episode_horizon < 1:
            raise ValueError("episode_horizon deve ser >= 1")


@dataclass
class EnvState:
    t: int
    weights: np.ndarray
    # últimos state_window retornos da carteira (anel) e os do episódio inteiro
    pr_history: Deque[float] = field(default_factory=deque)
    episode_pr: List[float] = field(default_factory=list)
    portfolio_value: float = 1.0
    done: bool = False
    steps: int = 0


@dataclass(frozen=True)
class StepOutput:
    observation: np.ndarray
    state: np.ndarray
    reward: float
    done: bool


def panel_returns(panel: PanelLike) -> np.ndarray:
    """Matriz de retornos diários (linhas = dias) de qualquer tipo de painel."""
    if isinstance(panel, ReturnPanel):
        return panel.returns
    if isinstance(panel, (AssetPanel, SimulatedPanel)):
        return returns_from_prices(panel.prices)
    return np.asarray(panel, dtype=float)


def trailing_sharpe(pr_window) -> float:
    """
    Sharpe anualizado (média*252)/(desvio amostral*sqrt(252)), sem taxa livre de risco.

    Raises:
        DegenerateVolatility: se a janela é constante
    """
    pr = np.asarray(pr_window, dtype=float)
    if len(pr) < 2:
        raise ValueError("Janela de Sharpe exige ao menos 2 retornos")
    if np.ptp(pr) == 0:
        raise DegenerateVolatility("Volatilidade nula na janela de Sharpe")
    return float(pr.mean() * TRADING_DAYS / (pr.std(ddof=1) * math.sqrt(TRADING_DAYS)))


class PortfolioEnv:
    def __init__(self, action_set: ActionSet, cfg: EnvConfig = EnvConfig(),
                 trace_path: Optional[str] = None):
        """
        Inicializa o ambiente.

        Args:
            action_set: Conjunto discreto de vetores de pesos
            cfg: Configuração do ambiente
            trace_path: Arquivo opcional para o rastro passo a passo
        """
        self.action_set = action_set
        self.cfg = cfg
        self._weights = action_set.weight_matrix()
        self.trace_path = trace_path
        self._trace: List[dict] = []
        self.degenerate_rewards = 0
        self.returns: Optional[np.ndarray] = None
        self.state: Optional[EnvState] = None
        self._start = 0

    @property
    def n_actions(self) -> int:
        return len(self.action_set)

    def reset(self, panel: PanelLike, start: int) -> StepOutput:
        """
        Inicia um episódio em `start` (índice de retorno do painel).

        A carteira começa em pesos iguais, valor 1 e histórico de retornos zerado.
        """
        returns = panel_returns(panel)
        if returns.shape[1] != self.action_set.n_assets:
            raise ValueError(
                f"Painel com {returns.shape[1]} ativos para ações de {self.action_set.n_assets}"
            )
        if start < self.cfg.obs_window - 1 or start >= returns.shape[0]:
            raise InsufficientHistory(
                f"Início {start} exige {self.cfg.obs_window} retornos anteriores "
                f"(t >= {self.cfg.obs_window - 1}) em painel de {returns.shape[0]}"
            )
        n = returns.shape[1]
        self.returns = returns
        self._start = start
        self.state = EnvState(
            t=start,
            weights=np.full(n, 1.0 / n),
            pr_history=deque([0.0] * self.cfg.state_window, maxlen=self.cfg.state_window),
            done=start >= returns.shape[0] - 1,
        )
        self._trace = []
        return StepOutput(self._observation(), self._state_vector(), 0.0, self.state.done)

    def _observation(self) -> np.ndarray:
        t, w = self.state.t, self.cfg.obs_window
        return self.returns[t - w + 1:t + 1].T.copy()

    def _state_vector(self) -> np.ndarray:
        return np.fromiter(self.state.pr_history, dtype=float, count=self.cfg.state_window)

    def episode_returns(self) -> np.ndarray:
        """Retornos diários realizados no episódio corrente (sem o prefixo zerado)."""
        return np.asarray(self.state.episode_pr, dtype=float)

    def _reward(self, done: bool) -> float:
        if self.cfg.reward_mode == "trailing":
            window = self._state_vector()
        elif done and self.state.steps >= 2:
            window = self.episode_returns()
        else:
            return 0.0
        try:
            return trailing_sharpe(window)
        except DegenerateVolatility:
            self.degenerate_rewards += 1
            return 0.0

    def step(self, action: int) -> StepOutput:
        """
        Aplica a ação, avança um dia e devolve observação, estado e recompensa.

        Raises:
            EpisodeFinished: episódio já encerrado
            InvalidActionIndex: ação fora do conjunto
        """
        if self.state is None or self.state.done:
            raise EpisodeFinished("Episódio encerrado; chame reset()")
        if not 0 <= action < self.n_actions:
            raise InvalidActionIndex(f"Ação {action} fora de [0, {self.n_actions})")

        s = self.state
        cost = 0.0
        if s.steps % self.cfg.decision_stride == 0:
            target = self._weights[action]
            if len(target) == 1:
                target = np.ones(1)
            turnover = float(np.abs(target - s.weights).sum())
            cost = self.cfg.cost_bps / 10000.0 * turnover
            s.weights = target.copy()

        s.t += 1
        asset_r = self.returns[s.t]
        gross = float(s.weights @ asset_r)
        pr = gross - cost
        s.portfolio_value *= 1.0 + pr
        s.pr_history.append(pr)
        s.episode_pr.append(pr)
        s.steps += 1
        # deriva dos pesos até a próxima fronteira de decisão
        s.weights = s.weights * (1.0 + asset_r) / (1.0 + gross)

        s.done = s.steps >= self.cfg.episode_horizon or s.t >= self.returns.shape[0] - 1
        reward = self._reward(s.done)

        if self.trace_path:
            self._trace.append({
                "t": s.t, "action": action,
                "weights": " ".join(f"{w:.6f}" for w in s.weights),
                "pr": pr, "value": s.portfolio_value, "reward": reward,
            })
            if s.done:
                self.flush_trace()

        return StepOutput(self._observation(), self._state_vector(), reward, s.done)

    def flush_trace(self) -> None:
        """Grava o rastro do episódio (t, ação, pesos, pr, valor, recompensa)."""
        if not self.trace_path or not self._trace:
            return
        pd.DataFrame(self._trace).to_csv(self.trace_path, index=False, lineterminator="\n")
        logger.debug("Rastro de %d passos gravado em %s", len(self._trace), self.trace_path)
