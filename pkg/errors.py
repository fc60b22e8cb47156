"""
Módulo com a hierarquia de exceções do motor de alocação.

Erros de entrada (arquivos, configuração, artefatos) saem da CLI com código 2;
erros de execução (estratégia, treino, numérica) com código 1.
"""


class PortfolioEngineError(Exception):
    """Erro base de execução."""
    exit_code = 1


class InputError(PortfolioEngineError):
    """Erro de validação ou de E/S."""
    exit_code = 2


# Dados de mercado
class DataFileNotFound(InputError):
    pass


class MalformedFile(InputError):
    pass


class NonPositivePrice(InputError):
    pass


class TooFewAssets(InputError):
    pass


class TooShortHistory(InputError):
    pass


class InsufficientHistory(PortfolioEngineError):
    pass


class ZeroVarianceAsset(PortfolioEngineError):
    def __init__(self, message: str, anchor_time: int = None, asset: int = None):
        super().__init__(message)
        self.anchor_time = anchor_time
        self.asset = asset


# RCME
class DimensionMismatch(PortfolioEngineError):
    pass


class InvalidK(InputError):
    pass


class EmptyCluster(PortfolioEngineError):
    pass


# Simulador
class InsufficientSamples(PortfolioEngineError):
    pass


class ZeroVolatility(PortfolioEngineError):
    pass


class NotFactorizable(PortfolioEngineError):
    pass


# Espaço de ações
class NoIntervalsFound(PortfolioEngineError):
    pass


class GridTooFine(InputError):
    pass


# Ambiente
class EpisodeFinished(PortfolioEngineError):
    pass


class InvalidActionIndex(PortfolioEngineError):
    pass


class DegenerateVolatility(PortfolioEngineError):
    pass


# Agente
class ShapeMismatch(PortfolioEngineError):
    pass


class NonFiniteActivation(PortfolioEngineError):
    pass


class NonFiniteLoss(PortfolioEngineError):
    pass


class DivergedTraining(PortfolioEngineError):
    pass


class EmptySubPool(PortfolioEngineError):
    pass


# Benchmarks
class SingularCovariance(PortfolioEngineError):
    pass


class NoConvergence(PortfolioEngineError):
    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


# Avaliação
class EmptySeries(PortfolioEngineError):
    pass


class TooShort(PortfolioEngineError):
    pass


# Configuração e artefatos
class ConfigError(InputError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ArtifactFormatError(InputError):
    pass
