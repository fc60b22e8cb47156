"""
Módulo responsável pelos alocadores de comparação: Markowitz (Sharpe máximo,
somente compra), paridade de risco e pesos iguais.

Cada alocador recebe momentos anualizados estimados sobre uma janela móvel
e devolve um vetor de pesos contínuo no simplex.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from config import TRADING_DAYS
from errors import InsufficientHistory, NoConvergence, SingularCovariance
from market_data import ReturnPanel
from utils.rng import stream

logger = logging.getLogger(__name__)

RIDGE = 1e-10
N_STARTS = 16
GRADIENT_TOL = 1e-8
MAX_ASCENT_ITERATIONS = 20_000
RISK_PARITY_TOL = 1e-8
MAX_SWEEPS = 10_000


@dataclass(frozen=True)
class MomentEstimates:
    mu_hat: np.ndarray
    cov_hat: np.ndarray
    window: int

    def __post_init__(self):
        cov = np.asarray(self.cov_hat, dtype=float)
        if cov.shape != (len(self.mu_hat), len(self.mu_hat)):
            raise ValueError(f"Covariância {cov.shape} incompatível com {len(self.mu_hat)} médias")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("Covariância não simétrica")
        if np.linalg.eigvalsh(cov).min() < -RIDGE * max(1.0, np.abs(cov).max()):
            raise ValueError("Covariância não é semidefinida positiva")

    @property
    def n(self) -> int:
        return len(self.mu_hat)


@dataclass(frozen=True)
class AllocatorWeights:
    weights: np.ndarray
    allocator: str
    diagnostics: Dict = field(default_factory=dict)


def estimate_moments(rp: ReturnPanel, t: int, window: int = 252) -> MomentEstimates:
    """
    Média e covariância anualizadas dos `window` retornos que terminam em t.
    """
    if window < 2 or t < window - 1 or t >= len(rp):
        raise InsufficientHistory(
            f"Momentos em t={t} exigem {window} retornos anteriores (painel de {len(rp)})"
        )
    sample = rp.returns[t - window + 1:t + 1]
    cov = np.cov(sample, rowvar=False, ddof=1).reshape(rp.n_assets, rp.n_assets) * TRADING_DAYS
    # ativos constantes: linha e coluna exatamente nulas
    flat = np.ptp(sample, axis=0) == 0
    cov[flat, :] = 0.0
    cov[:, flat] = 0.0
    return MomentEstimates(
        mu_hat=sample.mean(axis=0) * TRADING_DAYS,
        cov_hat=0.5 * (cov + cov.T),
        window=window,
    )


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Projeção euclidiana sobre {w >= 0, soma(w) = 1} (ordenação de Duchi et al.)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    w = np.maximum(v - css[rho] / (rho + 1.0), 0.0)
    return w / w.sum()


def equal_weights(n: int) -> AllocatorWeights:
    if n < 1:
        raise ValueError("n deve ser >= 1")
    weights = np.full(n, 1.0 / n)
    weights[-1] = 1.0 - weights[:-1].sum()
    return AllocatorWeights(weights=weights, allocator="equal_weight")


def _factorizable(cov: np.ndarray) -> np.ndarray:
    ridged = cov + RIDGE * np.eye(cov.shape[0])
    try:
        np.linalg.cholesky(ridged)
    except np.linalg.LinAlgError:
        raise SingularCovariance("Covariância não fatorável mesmo com ridge 1e-10")
    return ridged


def _ascend(objective, gradient, w0: np.ndarray):
    """
    Subida de gradiente projetada com divisão do passo; para quando
    ||w - proj(w + g)|| <= GRADIENT_TOL.
    """
    w, value, step = w0, objective(w0), 1.0
    for iteration in range(1, MAX_ASCENT_ITERATIONS + 1):
        g = gradient(w)
        residual = float(np.linalg.norm(w - project_to_simplex(w + g)))
        if residual <= GRADIENT_TOL:
            return w, value, iteration, residual
        while True:
            candidate = project_to_simplex(w + step * g)
            cand_value = objective(candidate)
            if cand_value >= value or step < 1e-16:
                break
            step *= 0.5
        if np.array_equal(candidate, w):
            return w, value, iteration, residual
        w, value = candidate, cand_value
        step = min(step * 2.0, 1e6)
    return w, value, MAX_ASCENT_ITERATIONS, residual


def _starting_points(n: int, seed: int = 0) -> List[np.ndarray]:
    starts = [np.full(n, 1.0 / n)]
    starts += [np.eye(n)[i] for i in range(min(n, N_STARTS - 1))]
    rng = stream(seed, 0x3A4C0)
    while len(starts) < N_STARTS:
        starts.append(rng.dirichlet(np.ones(n)))
    return starts


def markowitz_weights(m: MomentEstimates, seed: int = 0) -> AllocatorWeights:
    """
    Carteira tangente somente compra (Sharpe máximo, taxa livre de risco 0).

    Se todas as médias são <= 0, devolve a variância mínima no simplex e
    marca `min_variance_fallback` nos diagnósticos.

    Raises:
        SingularCovariance: se a covariância com ridge não é fatorável
    """
    if m.n == 1:
        return AllocatorWeights(np.ones(1), "markowitz", {"iterations": 0, "residual": 0.0})
    cov = _factorizable(np.asarray(m.cov_hat, dtype=float))
    mu = np.asarray(m.mu_hat, dtype=float)
    fallback = bool(np.all(mu <= 0))

    if fallback:
        def objective(w):
            return -float(w @ cov @ w)

        def gradient(w):
            return -2.0 * (cov @ w)
    else:
        def objective(w):
            return float(w @ mu) / np.sqrt(float(w @ cov @ w))

        def gradient(w):
            cw = cov @ w
            vol = np.sqrt(float(w @ cw))
            return mu / vol - float(w @ mu) * cw / vol ** 3

    best = None
    for w0 in _starting_points(m.n, seed):
        w, value, iterations, residual = _ascend(objective, gradient, w0)
        if best is None or value > best[1] + 1e-15:
            best = (w, value, iterations, residual)
    w, value, iterations, residual = best
    if residual > GRADIENT_TOL:
        logger.debug("Markowitz parou com resíduo %.2e após %d iterações", residual, iterations)
    return AllocatorWeights(
        weights=w / w.sum(),
        allocator="markowitz",
        diagnostics={
            "iterations": iterations,
            "residual": residual,
            "ridge": RIDGE,
            "min_variance_fallback": fallback,
            "objective": value,
        },
    )


def risk_contributions(w: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """RC_i = w_i (Sigma w)_i / (w' Sigma w)."""
    cw = cov @ w
    return w * cw / float(w @ cw)


def risk_parity_weights(m: MomentEstimates) -> AllocatorWeights:
    """
    Contribuições de risco iguais por descida coordenada cíclica a partir de
    pesos iguais.

    Raises:
        NoConvergence: se max |RC_i - 1/n| > 1e-8 após 10000 varreduras
    """
    cov = np.asarray(m.cov_hat, dtype=float)
    n = m.n
    diag = np.diag(cov)
    if np.any(diag <= 0):
        raise SingularCovariance("Diagonal da covariância deve ser estritamente positiva")
    budget = 1.0 / n
    y = np.full(n, 1.0 / n)
    residual = np.inf
    for sweep in range(1, MAX_SWEEPS + 1):
        for i in range(n):
            c = float(cov[i] @ y) - diag[i] * y[i]
            y[i] = (-c + np.sqrt(c * c + 4.0 * diag[i] * budget)) / (2.0 * diag[i])
        w = y / y.sum()
        residual = float(np.max(np.abs(risk_contributions(w, cov) - budget)))
        if residual <= RISK_PARITY_TOL:
            return AllocatorWeights(
                weights=w, allocator="risk_budgeting",
                diagnostics={"iterations": sweep, "residual": residual},
            )
    raise NoConvergence(
        f"Paridade de risco não convergiu em {MAX_SWEEPS} varreduras (resíduo {residual:.3e})",
        residual=residual,
    )


ALLOCATORS = {
    "markowitz": lambda m: markowitz_weights(m),
    "risk_budgeting": risk_parity_weights,
    "equal_weight": lambda m: equal_weights(m.n),
}
