"""
Módulo responsável pela extração do conjunto de ações do agente: pontos e
intervalos de alta/baixa, grade de vetores de pesos, amostragem, medida de
avaliação de ações e seleção dos melhores vetores por intervalo.

Pesos são mantidos em pontos-base inteiros, de modo que a soma 1 é exata.

Formato do artefato ActionSet (texto, um vetor por linha):

    action-set v1 n=<n>
    <w_1> <w_2> ... <w_n>  # interval=<start>-<end>:<U|D> score=<repr>
"""
import logging
import math
from bisect import bisect_right
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import TRADING_DAYS
from errors import ArtifactFormatError, GridTooFine, InsufficientHistory, NoIntervalsFound
from market_data import ReturnPanel
from utils.rng import stream

logger = logging.getLogger(__name__)

BASIS = 10000
ARTIFACT_HEADER = "action-set v1"


class Label(Enum):
    UP = "U"
    DOWN = "D"
    NEUTRAL = "N"


@dataclass(frozen=True)
class UpDownLabeling:
    labels: Tuple[Optional[Label], ...]
    k_window: int
    alpha: float


@dataclass(frozen=True)
class MarketInterval:
    start: int
    end: int
    direction: Label

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class WeightVector:
    basis_points: Tuple[int, ...]

    def __post_init__(self):
        if sum(self.basis_points) != BASIS or min(self.basis_points) < 0:
            raise ValueError(f"Vetor fora do simplex: {self.basis_points}")

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.basis_points, dtype=float) / BASIS


@dataclass(frozen=True)
class ActionSet:
    actions: Tuple[WeightVector, ...]
    provenance: Tuple[Tuple[Optional[MarketInterval], float], ...] = ()

    def __post_init__(self):
        if not self.actions:
            raise ValueError("ActionSet vazio")
        if len(set(self.actions)) != len(self.actions):
            raise ValueError("ActionSet com vetores duplicados")

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def n_assets(self) -> int:
        return len(self.actions[0].basis_points)

    def weight_matrix(self) -> np.ndarray:
        """Matriz |A| x n de pesos em fração."""
        return np.array([a.weights for a in self.actions])


def updown_points(ref_returns: Sequence[float], k: int = 20, alpha: float = 0.001) -> UpDownLabeling:
    """
    Rotula cada instante pela média dos últimos k retornos.

    Up se a média >= alpha, Down se <= -alpha, Neutral caso contrário; os
    primeiros k-1 instantes ficam sem rótulo (None).
    """
    r = np.asarray(ref_returns, dtype=float)
    if k < 1 or len(r) < k:
        raise InsufficientHistory(f"Série de {len(r)} retornos é menor que k={k}")
    csum = np.concatenate([[0.0], np.cumsum(r)])
    means = (csum[k:] - csum[:-k]) / k
    labels: List[Optional[Label]] = [None] * (k - 1)
    for m in means:
        if m >= alpha:
            labels.append(Label.UP)
        elif m <= -alpha:
            labels.append(Label.DOWN)
        else:
            labels.append(Label.NEUTRAL)
    return UpDownLabeling(labels=tuple(labels), k_window=k, alpha=alpha)


def updown_intervals(labeling: UpDownLabeling, min_len: int = 20) -> List[MarketInterval]:
    """
    Sequências máximas de rótulos iguais (não neutros) com comprimento >= min_len.

    Raises:
        NoIntervalsFound: nenhuma sequência atinge min_len
    """
    intervals = []
    labels = labeling.labels
    start = None
    for t in range(len(labels) + 1):
        current = labels[t] if t < len(labels) else None
        if start is not None and current != labels[start]:
            if t - start >= min_len:
                intervals.append(MarketInterval(start=start, end=t - 1, direction=labels[start]))
            start = None
        if start is None and current in (Label.UP, Label.DOWN):
            start = t
    if not intervals:
        raise NoIntervalsFound(
            f"Nenhum intervalo de alta/baixa com >= {min_len} dias (alpha={labeling.alpha}); "
            "reduza alpha ou min_len"
        )
    return intervals


class WeightGrid:
    """
    Conjunto implícito dos vetores da grade com soma 10000 bp.

    A enumeração é lexicográfica crescente em (w_1, ..., w_n), com acesso por
    posto sem materializar o conjunto.
    """

    def __init__(self, grid_step: int, n: int):
        """
        Args:
            grid_step: Passo da grade em pontos-base (divide 10000)
            n: Número de ativos
        """
        if grid_step < 1 or BASIS % grid_step:
            raise ValueError(f"grid_step {grid_step} não divide {BASIS}")
        if n < 1:
            raise ValueError("n deve ser >= 1")
        self.grid_step = grid_step
        self.n = n
        self.units = BASIS // grid_step
        self.size = math.comb(self.units + n - 1, n - 1)
        if self.size >= 2 ** 63:
            raise GridTooFine(f"Grade com {self.size} vetores excede 2^63")

    def __len__(self) -> int:
        return self.size

    @staticmethod
    def _count(total: int, parts: int) -> int:
        # composições de `total` em `parts` partes não negativas
        if parts == 0:
            return 1 if total == 0 else 0
        return math.comb(total + parts - 1, parts - 1)

    def unrank(self, rank: int) -> WeightVector:
        """Vetor de posto `rank` na enumeração lexicográfica."""
        if not 0 <= rank < self.size:
            raise IndexError(f"Posto {rank} fora de [0, {self.size})")
        remaining = self.units
        units = []
        for i in range(self.n - 1):
            parts = self.n - i
            # posto acumulado antes do primeiro valor v: C(R+p-1,p-1) - C(R-v+p-1,p-1)
            full = self._count(remaining, parts)
            lo, hi = 0, remaining
            while lo < hi:
                mid = (lo + hi + 1) // 2
                before = full - self._count(remaining - mid, parts)
                if before <= rank:
                    lo = mid
                else:
                    hi = mid - 1
            v = lo
            rank -= full - self._count(remaining - v, parts)
            units.append(v)
            remaining -= v
        units.append(remaining)
        return WeightVector(tuple(u * self.grid_step for u in units))

    def rank(self, vector: WeightVector) -> int:
        """Inverso de unrank."""
        remaining = self.units
        rank = 0
        for i, w in enumerate(vector.basis_points[:-1]):
            v = w // self.grid_step
            parts = self.n - i
            rank += self._count(remaining, parts) - self._count(remaining - v, parts)
            remaining -= v
        return rank

    def __iter__(self):
        for r in range(self.size):
            yield self.unrank(r)


def weight_grid_vectors(grid_step: int, n: int) -> WeightGrid:
    """Descritor do conjunto de vetores da grade (tamanho e acesso por posto)."""
    return WeightGrid(grid_step, n)


def sample_vectors(grid: WeightGrid, fraction: float = 0.0001, floor: int = 1000,
                   seed: int = 0, *stream_keys: int) -> List[Tuple[int, WeightVector]]:
    """
    Amostra uniforme sem reposição por posto.

    Tamanho = min(|grade|, max(floor, ceil(fraction * |grade|))).

    Returns:
        Pares (posto, vetor) em ordem crescente de posto
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction deve estar em (0, 1]")
    size = min(grid.size, max(floor, math.ceil(fraction * grid.size)))
    if size == grid.size:
        ranks = list(range(grid.size))
    else:
        rng = stream(seed, *stream_keys)
        ranks = sorted(int(r) for r in rng.choice(grid.size, size=size, replace=False))
    return [(r, grid.unrank(r)) for r in ranks]


def action_evaluation(mu: float, sigma: float, k: float) -> float:
    """Medida de avaliação de ações f(mu, sigma, k) = mu - k * sigma."""
    if sigma < 0:
        raise ValueError("sigma deve ser >= 0")
    return mu - k * sigma


def score_vectors(interval_returns: np.ndarray, weights: np.ndarray, k_control: float) -> np.ndarray:
    """
    Avalia vetores sobre os retornos de um intervalo.

    Usa a carteira de mistura fixa (rebalanceada diariamente, como o ambiente
    com passo de decisão 1) e anualiza média e volatilidade amostral.

    Args:
        interval_returns: Matriz L x n de retornos dos ativos
        weights: Matriz S x n de pesos (frações)
        k_control: Termo de controle da medida

    Returns:
        Vetor de S pontuações
    """
    portfolio = interval_returns @ weights.T
    mu = portfolio.mean(axis=0) * TRADING_DAYS
    sigma = portfolio.std(axis=0, ddof=1) * math.sqrt(TRADING_DAYS)
    # variância numérica residual de séries constantes
    sigma = np.where(sigma < 1e-15, 0.0, sigma)
    return mu - k_control * sigma


def _top_for_interval(idx: int, interval: MarketInterval, rp: ReturnPanel, grid: WeightGrid,
                      fraction: float, floor: int, k_control: float, top_i: int, seed: int):
    sample = sample_vectors(grid, fraction, floor, seed, idx)
    ranks = np.array([r for r, _ in sample])
    weights = np.array([v.weights for _, v in sample])
    scores = score_vectors(rp.returns[interval.start:interval.end + 1], weights, k_control)
    # maior pontuação primeiro; empate pelo menor posto
    order = np.lexsort((ranks, -scores))[:top_i]
    return [(sample[j][1], interval, float(scores[j])) for j in order]


def extract_action_set(intervals: Sequence[MarketInterval], rp: ReturnPanel, grid_step: int = 1000,
                       fraction: float = 0.0001, floor: int = 1000, k_control: float = 1.0,
                       top_i: int = 3, seed: int = 0, jobs: int = 1) -> ActionSet:
    """
    Seleciona os top_i vetores de cada intervalo e une sem duplicatas.

    A união preserva a ordem dos intervalos e, dentro de cada um, a ordem de
    pontuação.
    """
    if not intervals:
        raise NoIntervalsFound("Nenhum intervalo fornecido para a extração de ações")
    grid = WeightGrid(grid_step, rp.n_assets)
    for interval in intervals:
        if interval.end - interval.start + 1 < 2:
            raise InsufficientHistory(f"Intervalo {interval} curto demais para volatilidade")

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        per_interval = list(pool.map(
            lambda item: _top_for_interval(item[0], item[1], rp, grid, fraction, floor,
                                           k_control, top_i, seed),
            enumerate(intervals),
        ))

    seen = set()
    actions, provenance = [], []
    for picks in per_interval:
        for vector, interval, score in picks:
            if vector in seen:
                continue
            seen.add(vector)
            actions.append(vector)
            provenance.append((interval, score))
    logger.info("Conjunto de ações: %d vetores de %d intervalos", len(actions), len(intervals))
    return ActionSet(actions=tuple(actions), provenance=tuple(provenance))


def reference_series(rp: ReturnPanel, reference: str = "market") -> np.ndarray:
    """Série de referência: média igual dos ativos ('market') ou um ativo pelo id."""
    if reference == "market":
        return rp.returns.mean(axis=1)
    if reference not in rp.asset_ids:
        raise ValueError(f"Ativo de referência desconhecido: {reference}")
    return rp.returns[:, list(rp.asset_ids).index(reference)]


def save_action_set(action_set: ActionSet, path: str) -> None:
    """Grava o ActionSet em texto (pontos-base + proveniência como comentário)."""
    lines = [f"{ARTIFACT_HEADER} n={action_set.n_assets}"]
    provenance = action_set.provenance or ((None, float("nan")),) * len(action_set)
    for vector, (interval, score) in zip(action_set.actions, provenance):
        body = " ".join(str(w) for w in vector.basis_points)
        if interval is not None:
            body += (f"  # interval={interval.start}-{interval.end}:{interval.direction.value}"
                     f" score={score!r}")
        lines.append(body)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_action_set(path: str) -> ActionSet:
    """Lê o artefato gravado por save_action_set."""
    try:
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f if line.strip()]
        head, n_field = lines[0].rsplit(" ", 1)
        if head != ARTIFACT_HEADER or not n_field.startswith("n="):
            raise ValueError("cabeçalho inválido")
        n = int(n_field[2:])
        actions, provenance = [], []
        for line in lines[1:]:
            body, _, comment = line.partition("#")
            vector = WeightVector(tuple(int(w) for w in body.split()))
            if len(vector.basis_points) != n:
                raise ValueError(f"vetor com {len(vector.basis_points)} pesos, esperado {n}")
            interval, score = None, float("nan")
            if comment.strip():
                fields = dict(item.split("=", 1) for item in comment.split())
                span, direction = fields["interval"].split(":")
                start, end = span.split("-")
                interval = MarketInterval(int(start), int(end), Label(direction))
                score = float(fields["score"])
            actions.append(vector)
            provenance.append((interval, score))
        return ActionSet(actions=tuple(actions), provenance=tuple(provenance))
    except (OSError, ValueError, KeyError, IndexError) as e:
        raise ArtifactFormatError(f"Artefato de ações inválido ({path}): {e}")
