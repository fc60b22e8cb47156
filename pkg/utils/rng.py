"""
Fluxos de números aleatórios reprodutíveis.

Cada fluxo é um gerador Philox (baseado em contador) chaveado por
SeedSequence([seed, *chaves]), de modo que caminhos, workers e intervalos
recebem fluxos independentes e estáveis entre plataformas.
"""
import numpy as np
from scipy.special import ndtri

# Menor uniforme aceito antes da inversa da normal
_U_FLOOR = 2.0 ** -60


def stream(seed: int, *keys: int) -> np.random.Generator:
    """
    Cria um gerador numpy para o fluxo (seed, *keys).

    Args:
        seed: Semente base do experimento
        keys: Índices que separam o fluxo (caminho, worker, intervalo...)

    Returns:
        np.random.Generator sobre Philox
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Normais padrão pela transformação inversa da CDF sobre uniformes."""
    u = rng.random(shape)
    np.clip(u, _U_FLOOR, 1.0 - _U_FLOOR, out=u)
    return ndtri(u)
