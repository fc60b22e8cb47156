"""
Módulo responsável pela extração de matrizes de correlação representativas
(RCME): conjunto de matrizes móveis, matriz de distâncias de Frobenius,
agrupamento hierárquico e média por grupo. Também resolve, na inferência,
a representativa mais próxima da correlação corrente.

Formato do artefato RepresentativeSet (texto, UTF-8, uma entrada por linha):

    representative-set v1
    n=<n> K=<K> window=<w> stride=<s> linkage=<método>
    assets=<id1>,<id2>,...
    matrix <i> members=<m>
    <n linhas com n floats em repr, separados por espaço>
    times <m âncoras separadas por espaço>
    ... (repetido para i = 0..K-1)
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage as scipy_linkage
from scipy.spatial.distance import squareform

from errors import ArtifactFormatError, DimensionMismatch, EmptyCluster, InsufficientHistory, InvalidK
from market_data import CorrelationMatrix, ReturnPanel, rolling_correlation

logger = logging.getLogger(__name__)

ARTIFACT_HEADER = "representative-set v1"
LINKAGE_METHODS = ("single", "complete", "average")


@dataclass(frozen=True)
class CorrelationMatrixSet:
    entries: Tuple[CorrelationMatrix, ...]
    anchor_times: Tuple[int, ...]
    window: int
    stride: int = 1

    def __len__(self) -> int:
        return len(self.entries)

    def stacked(self) -> np.ndarray:
        """Matrizes empilhadas (m, n, n)."""
        return np.stack([c.values for c in self.entries])


@dataclass(frozen=True)
class CorrelationDistanceMatrix:
    values: np.ndarray


@dataclass(frozen=True)
class ClusterAssignment:
    labels: Tuple[int, ...]
    k: int
    member_times: Tuple[Tuple[int, ...], ...]
    merge_heights: Tuple[float, ...] = ()


@dataclass(frozen=True)
class RepresentativeSet:
    matrices: Tuple[CorrelationMatrix, ...]
    member_times: Tuple[Tuple[int, ...], ...]
    window: int
    stride: int = 1
    linkage: str = "average"
    asset_ids: Tuple[str, ...] = ()

    @property
    def k(self) -> int:
        return len(self.matrices)

    @property
    def n(self) -> int:
        return self.matrices[0].n


def build_cms(rp: ReturnPanel, window: int = 60, stride: int = 1) -> CorrelationMatrixSet:
    """
    Cria o conjunto de matrizes de correlação (uma por âncora válida).

    Args:
        rp: Painel de retornos
        window: Janela de estimação
        stride: Passo entre âncoras

    Returns:
        CorrelationMatrixSet com âncoras window-1, window-1+stride, ..., <= len(rp)-1
    """
    if len(rp) < window:
        raise InsufficientHistory(f"Painel com {len(rp)} retornos é menor que a janela {window}")
    if stride < 1:
        raise ValueError("stride deve ser >= 1")
    anchors = tuple(range(window - 1, len(rp), stride))
    # rolling_correlation propaga ZeroVarianceAsset com a âncora
    entries = tuple(rolling_correlation(rp, t, window) for t in anchors)
    logger.debug("CMS com %d matrizes (janela %d, passo %d)", len(entries), window, stride)
    return CorrelationMatrixSet(entries=entries, anchor_times=anchors, window=window, stride=stride)


def correlation_distance(a: CorrelationMatrix, b: CorrelationMatrix) -> float:
    """Norma de Frobenius da diferença entre duas matrizes de correlação."""
    if a.values.shape != b.values.shape:
        raise DimensionMismatch(f"Dimensões diferentes: {a.values.shape} x {b.values.shape}")
    return float(np.sqrt(np.sum(np.abs(a.values - b.values) ** 2)))


def build_cmdm(cms: CorrelationMatrixSet, jobs: int = 1) -> CorrelationDistanceMatrix:
    """
    Matriz de distâncias par a par do CMS (triângulo superior espelhado).

    Args:
        cms: Conjunto de matrizes
        jobs: Linhas calculadas em paralelo (resultado idêntico ao sequencial)
    """
    if len(cms) < 2:
        raise InsufficientHistory("CMDM exige ao menos 2 matrizes no CMS")
    stack = cms.stacked()
    m = stack.shape[0]
    flat = stack.reshape(m, -1)

    def row(i: int) -> np.ndarray:
        diff = flat[i + 1:] - flat[i]
        return np.sqrt(np.sum(np.abs(diff) ** 2, axis=1))

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(row, range(m)))

    values = np.zeros((m, m))
    for i, r in enumerate(rows):
        values[i, i + 1:] = r
        values[i + 1:, i] = r
    return CorrelationDistanceMatrix(values=values)


def _linkage(cmdm: CorrelationDistanceMatrix, method: str) -> np.ndarray:
    if method not in LINKAGE_METHODS:
        raise ValueError(f"Método de ligação desconhecido: {method}")
    condensed = squareform(cmdm.values, checks=False)
    return scipy_linkage(condensed, method=method)


def dendrogram_heights(cmdm: CorrelationDistanceMatrix, method: str = "average") -> np.ndarray:
    """Alturas de fusão do dendrograma completo, em ordem crescente."""
    if cmdm.values.shape[0] < 2:
        return np.zeros(0)
    return _linkage(cmdm, method)[:, 2].copy()


def cluster(cmdm: CorrelationDistanceMatrix, k: int, method: str = "average",
            anchor_times: Optional[Sequence[int]] = None) -> ClusterAssignment:
    """
    Agrupamento aglomerativo sobre a matriz de distâncias, cortado em k grupos.

    Os rótulos são numerados pela ordem da primeira ocorrência, de modo que
    partições iguais produzem rótulos iguais.

    Args:
        cmdm: Matriz de distâncias pré-calculada
        k: Número de grupos (1 <= k <= m)
        method: single, complete ou average
        anchor_times: Âncoras de cada entrada (padrão: 0..m-1)
    """
    m = cmdm.values.shape[0]
    if not 1 <= k <= m:
        raise InvalidK(f"k={k} fora de [1, {m}]")
    times = tuple(anchor_times) if anchor_times is not None else tuple(range(m))

    if m == 1:
        raw = np.zeros(1, dtype=int)
        heights = ()
    else:
        z = _linkage(cmdm, method)
        raw = cut_tree(z, n_clusters=k).ravel()
        heights = tuple(float(h) for h in z[:, 2])

    relabel = {}
    labels = []
    for r in raw:
        relabel.setdefault(int(r), len(relabel))
        labels.append(relabel[int(r)])

    members = [[] for _ in range(k)]
    for label, t in zip(labels, times):
        members[label].append(t)
    return ClusterAssignment(
        labels=tuple(labels), k=k,
        member_times=tuple(tuple(m_) for m_ in members),
        merge_heights=heights,
    )


def representative_matrices(ca: ClusterAssignment, cms: CorrelationMatrixSet,
                            linkage: str = "average") -> RepresentativeSet:
    """
    Média elemento a elemento das matrizes de cada grupo (diagonal refixada em 1).
    """
    if len(ca.labels) != len(cms):
        raise DimensionMismatch(f"{len(ca.labels)} rótulos para {len(cms)} matrizes")
    stack = cms.stacked()
    labels = np.asarray(ca.labels)
    matrices = []
    for i in range(ca.k):
        mask = labels == i
        member_count = int(mask.sum())
        if member_count == 0:
            raise EmptyCluster(f"Grupo {i} sem membros")
        mean = stack[mask].sum(axis=0) / member_count
        mean = 0.5 * (mean + mean.T)
        np.fill_diagonal(mean, 1.0)
        anchor = int(np.asarray(cms.anchor_times)[mask][-1])
        mean.setflags(write=False)
        matrices.append(CorrelationMatrix(values=mean, window=cms.window, anchor_time=anchor))
    member_times = tuple(
        tuple(int(t) for t in np.asarray(cms.anchor_times)[labels == i]) for i in range(ca.k)
    )
    return RepresentativeSet(
        matrices=tuple(matrices), member_times=member_times,
        window=cms.window, stride=cms.stride, linkage=linkage,
    )


def nearest_representative(current: CorrelationMatrix, rs: RepresentativeSet) -> int:
    """Índice da representativa com menor distância de Frobenius (empate: menor índice)."""
    distances = [correlation_distance(current, rep) for rep in rs.matrices]
    return int(np.argmin(distances))


def extract_representatives(rp: ReturnPanel, window: int = 60, stride: int = 1,
                            k: int = 5, method: str = "average",
                            jobs: int = 1) -> Tuple[RepresentativeSet, ClusterAssignment]:
    """Executa o processo RCME completo sobre um painel de retornos."""
    cms = build_cms(rp, window, stride)
    cmdm = build_cmdm(cms, jobs=jobs) if len(cms) > 1 else CorrelationDistanceMatrix(np.zeros((1, 1)))
    ca = cluster(cmdm, k, method, anchor_times=cms.anchor_times)
    rs = representative_matrices(ca, cms, linkage=method)
    rs = RepresentativeSet(
        matrices=rs.matrices, member_times=rs.member_times, window=rs.window,
        stride=rs.stride, linkage=rs.linkage, asset_ids=tuple(rp.asset_ids),
    )
    logger.info("RCME: %d matrizes agrupadas em %d regimes", len(cms), k)
    return rs, ca


def save_representative_set(rs: RepresentativeSet, path: str) -> None:
    """Grava o RepresentativeSet no formato de texto versionado."""
    lines = [
        ARTIFACT_HEADER,
        f"n={rs.n} K={rs.k} window={rs.window} stride={rs.stride} linkage={rs.linkage}",
        "assets=" + ",".join(rs.asset_ids),
    ]
    for i, (matrix, times) in enumerate(zip(rs.matrices, rs.member_times)):
        lines.append(f"matrix {i} members={len(times)}")
        for row in matrix.values:
            lines.append(" ".join(repr(float(v)) for v in row))
        lines.append("times " + " ".join(str(t) for t in times))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_representative_set(path: str) -> RepresentativeSet:
    """
    Lê o artefato gravado por save_representative_set.

    Raises:
        ArtifactFormatError: cabeçalho, contagens ou valores inválidos
    """
    try:
        with open(path, encoding="utf-8") as f:
            lines = [line.rstrip("\n") for line in f]
    except OSError as e:
        raise ArtifactFormatError(f"Não foi possível ler {path}: {e}")

    try:
        if not lines or lines[0] != ARTIFACT_HEADER:
            raise ValueError("cabeçalho ausente ou versão desconhecida")
        header = dict(item.split("=", 1) for item in lines[1].split())
        n, k = int(header["n"]), int(header["K"])
        window, stride, method = int(header["window"]), int(header["stride"]), header["linkage"]
        if not lines[2].startswith("assets="):
            raise ValueError("linha assets ausente")
        assets = tuple(a for a in lines[2][len("assets="):].split(",") if a)

        pos = 3
        matrices, member_times = [], []
        for i in range(k):
            tag, idx, members = lines[pos].split()
            if tag != "matrix" or int(idx) != i:
                raise ValueError(f"bloco de matriz {i} esperado na linha {pos + 1}")
            count = int(members.split("=", 1)[1])
            rows = [[float(v) for v in lines[pos + 1 + r].split()] for r in range(n)]
            values = np.array(rows)
            if values.shape != (n, n):
                raise ValueError(f"matriz {i} não é {n}x{n}")
            if not np.allclose(values, values.T, atol=1e-12) or not np.all(np.diag(values) == 1.0):
                raise ValueError(f"matriz {i} não é simétrica com diagonal unitária")
            times_line = lines[pos + 1 + n].split()
            if times_line[0] != "times" or len(times_line) - 1 != count:
                raise ValueError(f"lista de âncoras do bloco {i} inválida")
            times = tuple(int(t) for t in times_line[1:])
            values.setflags(write=False)
            matrices.append(CorrelationMatrix(values=values, window=window,
                                              anchor_time=times[-1] if times else -1))
            member_times.append(times)
            pos += n + 2
    except (ValueError, KeyError, IndexError) as e:
        raise ArtifactFormatError(f"Artefato de representativas inválido ({path}): {e}")

    if k < 1:
        raise ArtifactFormatError(f"Artefato sem representativas: {path}")
    return RepresentativeSet(
        matrices=tuple(matrices), member_times=tuple(member_times), window=window,
        stride=stride, linkage=method, asset_ids=assets,
    )
