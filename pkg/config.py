"""
Módulo de configuração do sistema.
Contém as constantes globais carregadas do arquivo .env e o carregamento,
com validação, do arquivo de configuração de experimento (INI).
"""
import configparser
import os
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv

from errors import ConfigError, DataFileNotFound

# Carrega as variáveis de ambiente do arquivo .env
load_dotenv()

# Configurações gerais
LOG_LEVEL = os.getenv('PORTFOLIO_LOG_LEVEL', 'INFO')
LOG_FILE = os.getenv('PORTFOLIO_LOG_FILE') or None
DEFAULT_JOBS = int(os.getenv('PORTFOLIO_JOBS', '1'))

# Dias úteis por ano usados em toda anualização
TRADING_DAYS = int(os.getenv('PORTFOLIO_TRADING_DAYS', '252'))

# Cache de matrizes de correlação
MAX_CACHE_ITEMS = int(os.getenv('PORTFOLIO_CACHE_ITEMS', '4096'))

# Histórico de treino (SQLite), relativo ao diretório de saída
HISTORY_DB = os.getenv('PORTFOLIO_HISTORY_DB', 'training_history.db')

# Períodos da tabela de resultados (início:fim), cada um gerido por 2 anos
DEFAULT_PERIODS = (
    "2008-02-18:2010-02-18, 2010-02-18:2012-02-20, 2012-02-20:2014-02-18, "
    "2014-02-18:2016-02-18, 2016-02-18:2018-02-19, 2018-02-19:2019-09-12, "
    "2019-09-12:2021-09-13"
)

STRATEGY_IDS = ("markowitz", "risk_budgeting", "equal_weight", "model")


@dataclass(frozen=True)
class DataConfig:
    path: str
    date_column: str = "date"
    price_columns: Tuple[str, ...] = ()
    delimiter: str = ","
    universe: str = ""
    universes: Dict[str, Tuple[str, ...]] = field(default_factory=dict)

    def selected_assets(self) -> Optional[List[str]]:
        """Colunas do universo escolhido (None = todas)."""
        if self.universe:
            return list(self.universes[self.universe])
        return list(self.price_columns) or None


@dataclass(frozen=True)
class RcmeConfig:
    window: int = 60
    stride: int = 1
    linkage: str = "average"
    n_clusters: int = 5


@dataclass(frozen=True)
class SimulatorConfig:
    n_paths: int = 64
    horizon: int = 756
    dt: float = 1.0 / 252
    base_seed: int = 0


@dataclass(frozen=True)
class ActionSpaceConfig:
    k_window: int = 20
    alpha: float = 0.001
    min_len: int = 20
    grid_step: int = 1000
    fraction: float = 0.0001
    floor: int = 1000
    k_control: float = 1.0
    top_i: int = 3
    reference: str = "market"
    seed: int = 0


@dataclass(frozen=True)
class EnvSettings:
    obs_window: int = 60
    state_window: int = 120
    decision_stride: int = 1
    episode_horizon: int = 252
    reward_mode: str = "trailing"
    cost_bps: float = 0.0


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    learning_rate: float = 3e-4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    rollout_length: int = 20
    workers: int = 4
    total_steps: int = 200_000
    grad_clip: float = 0.5
    seed: int = 0
    models_per_rep: int = 4
    mode: str = "synchronous"


@dataclass(frozen=True)
class BenchmarkConfig:
    moment_window: int = 252


@dataclass(frozen=True)
class EvaluationConfig:
    periods: Tuple[Tuple[date, date], ...] = ()
    horizon: int = 504
    rolling: bool = True
    strategies: Tuple[str, ...] = STRATEGY_IDS
    dump_equity: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig
    rcme: RcmeConfig = RcmeConfig()
    simulator: SimulatorConfig = SimulatorConfig()
    action_space: ActionSpaceConfig = ActionSpaceConfig()
    env: EnvSettings = EnvSettings()
    train: TrainConfig = TrainConfig()
    benchmarks: BenchmarkConfig = BenchmarkConfig()
    evaluation: EvaluationConfig = EvaluationConfig()
    output_dir: str = "out"


# Tipos aceitos em cada seção: nome -> conversor
_SECTIONS = {
    "rcme": RcmeConfig,
    "simulator": SimulatorConfig,
    "action_space": ActionSpaceConfig,
    "env": EnvSettings,
    "train": TrainConfig,
    "benchmarks": BenchmarkConfig,
}


def _convert(section: str, key: str, raw: str, kind):
    path = f"{section}.{key}"
    try:
        if kind is bool:
            lowered = raw.strip().lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return lowered in ("true", "1", "yes")
        if kind is int:
            return int(raw.replace("_", ""))
        if kind is float:
            if "/" in raw:
                num, den = raw.split("/", 1)
                return float(num) / float(den)
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(path, f"valor inválido '{raw}'")


def _parse_section(parser: configparser.ConfigParser, section: str, cls):
    if not parser.has_section(section):
        return cls()
    values = {}
    known = cls.__dataclass_fields__
    for key, raw in parser.items(section):
        if key not in known:
            raise ConfigError(f"{section}.{key}", "chave desconhecida")
        values[key] = _convert(section, key, raw, known[key].type)
    return cls(**values)


def _parse_periods(raw: str) -> Tuple[Tuple[date, date], ...]:
    periods = []
    for chunk in [c.strip() for c in raw.split(",") if c.strip()]:
        try:
            if ":" in chunk:
                start, end = chunk.split(":", 1)
                periods.append((date.fromisoformat(start.strip()), date.fromisoformat(end.strip())))
            else:
                day = date.fromisoformat(chunk)
                periods.append((day, day))
        except ValueError:
            raise ConfigError("evaluation.periods", f"período inválido '{chunk}'")
    return tuple(periods)


def _check(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


def validate_config(cfg: ExperimentConfig) -> None:
    """
    Valida cada campo contra as pré-condições dos módulos.

    Raises:
        ConfigError: com o caminho do campo inválido
    """
    _check(bool(cfg.data.path), "data.path", "caminho obrigatório")
    _check(len(cfg.data.delimiter) == 1, "data.delimiter", "deve ter um caractere")
    if cfg.data.universe:
        _check(cfg.data.universe in cfg.data.universes, "data.universe",
               f"universo '{cfg.data.universe}' não definido em [universes]")
    for name, cols in cfg.data.universes.items():
        _check(len(cols) >= 2, f"universes.{name}", "exige ao menos 2 ativos")

    r = cfg.rcme
    _check(r.window >= 2, "rcme.window", "deve ser >= 2")
    _check(r.stride >= 1, "rcme.stride", "deve ser >= 1")
    _check(r.linkage in ("single", "complete", "average"), "rcme.linkage",
           "deve ser single, complete ou average")
    _check(r.n_clusters >= 1, "rcme.n_clusters", "deve ser >= 1")

    s = cfg.simulator
    _check(s.n_paths >= 1, "simulator.n_paths", "deve ser >= 1")
    _check(s.horizon >= 1, "simulator.horizon", "deve ser >= 1")
    _check(s.dt > 0, "simulator.dt", "deve ser > 0")
    _check(s.base_seed >= 0, "simulator.base_seed", "deve ser >= 0")

    a = cfg.action_space
    _check(a.k_window >= 1, "action_space.k_window", "deve ser >= 1")
    _check(a.alpha >= 0, "action_space.alpha", "deve ser >= 0")
    _check(a.min_len >= 2, "action_space.min_len", "deve ser >= 2")
    _check(1 <= a.grid_step <= 10000 and 10000 % a.grid_step == 0,
           "action_space.grid_step", "deve dividir 10000")
    _check(0 < a.fraction <= 1, "action_space.fraction", "deve estar em (0, 1]")
    _check(a.floor >= 1, "action_space.floor", "deve ser >= 1")
    _check(a.top_i >= 1, "action_space.top_i", "deve ser >= 1")

    e = cfg.env
    _check(e.obs_window >= 16, "env.obs_window", "deve ser >= 16")
    _check(e.state_window >= 16, "env.state_window", "deve ser >= 16")
    _check(e.decision_stride >= 1, "env.decision_stride", "deve ser >= 1")
    _check(e.episode_horizon >= 1, "env.episode_horizon", "deve ser >= 1")
    _check(e.reward_mode in ("trailing", "terminal"), "env.reward_mode",
           "deve ser trailing ou terminal")
    _check(e.cost_bps >= 0, "env.cost_bps", "deve ser >= 0")

    t = cfg.train
    _check(0 < t.gamma <= 1, "train.gamma", "deve estar em (0, 1]")
    _check(t.learning_rate > 0, "train.learning_rate", "deve ser > 0")
    _check(t.entropy_coef >= 0, "train.entropy_coef", "deve ser >= 0")
    _check(t.value_coef > 0, "train.value_coef", "deve ser > 0")
    _check(t.rollout_length >= 1, "train.rollout_length", "deve ser >= 1")
    _check(t.workers >= 1, "train.workers", "deve ser >= 1")
    _check(t.total_steps >= 0, "train.total_steps", "deve ser >= 0")
    _check(t.grad_clip > 0, "train.grad_clip", "deve ser > 0")
    _check(t.models_per_rep >= 1, "train.models_per_rep", "deve ser >= 1")
    _check(t.mode in ("synchronous", "asynchronous"), "train.mode",
           "deve ser synchronous ou asynchronous")
    _check(t.models_per_rep <= s.n_paths, "train.models_per_rep",
           "não pode exceder simulator.n_paths (subconjuntos disjuntos)")

    _check(cfg.benchmarks.moment_window >= 2, "benchmarks.moment_window", "deve ser >= 2")

    ev = cfg.evaluation
    _check(len(ev.periods) >= 1, "evaluation.periods", "lista de períodos vazia")
    for start, end in ev.periods:
        _check(start <= end, "evaluation.periods", f"início {start} após o fim {end}")
    _check(ev.horizon >= 2, "evaluation.horizon", "deve ser >= 2")
    _check(len(ev.strategies) >= 1, "evaluation.strategies", "nenhuma estratégia")
    for sid in ev.strategies:
        _check(sid in STRATEGY_IDS, "evaluation.strategies", f"estratégia desconhecida '{sid}'")


def load_experiment_config(path: str, seed: Optional[int] = None,
                           out_dir: Optional[str] = None) -> ExperimentConfig:
    """
    Lê e valida o arquivo de configuração de experimento.

    Args:
        path: Caminho do arquivo INI
        seed: Semente que substitui todas as sementes do arquivo (--seed)
        out_dir: Diretório de saída que substitui [output] directory (--out)

    Returns:
        ExperimentConfig validado
    """
    if not os.path.exists(path):
        raise DataFileNotFound(f"Arquivo de configuração não encontrado: {path}")

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError("<arquivo>", f"erro de sintaxe em {path}: {e}")

    allowed = set(_SECTIONS) | {"data", "universes", "evaluation", "output"}
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(section, "seção desconhecida")

    if not parser.has_section("data"):
        raise ConfigError("data", "seção obrigatória ausente")
    d = dict(parser.items("data"))
    for key in d:
        if key not in DataConfig.__dataclass_fields__ or key == "universes":
            raise ConfigError(f"data.{key}", "chave desconhecida")
    universes = {}
    if parser.has_section("universes"):
        for name, cols in parser.items("universes"):
            universes[name] = tuple(c.strip() for c in cols.split(",") if c.strip())
    data = DataConfig(
        path=d.get("path", "").strip(),
        date_column=d.get("date_column", "date").strip(),
        price_columns=tuple(c.strip() for c in d.get("price_columns", "").split(",") if c.strip()),
        delimiter=d.get("delimiter", ","),
        universe=d.get("universe", "").strip(),
        universes=universes,
    )

    sections = {name: _parse_section(parser, name, cls) for name, cls in _SECTIONS.items()}

    ev = dict(parser.items("evaluation")) if parser.has_section("evaluation") else {}
    for key in ev:
        if key not in EvaluationConfig.__dataclass_fields__:
            raise ConfigError(f"evaluation.{key}", "chave desconhecida")
    evaluation = EvaluationConfig(
        periods=_parse_periods(ev.get("periods", DEFAULT_PERIODS)),
        horizon=_convert("evaluation", "horizon", ev.get("horizon", "504"), int),
        rolling=_convert("evaluation", "rolling", ev.get("rolling", "true"), bool),
        strategies=tuple(s.strip() for s in ev.get("strategies", ",".join(STRATEGY_IDS)).split(",")
                         if s.strip()),
        dump_equity=_convert("evaluation", "dump_equity", ev.get("dump_equity", "false"), bool),
    )

    output_dir = "out"
    if parser.has_section("output"):
        for key in dict(parser.items("output")):
            if key != "directory":
                raise ConfigError(f"output.{key}", "chave desconhecida")
        output_dir = parser.get("output", "directory", fallback="out").strip()

    cfg = ExperimentConfig(
        data=data,
        evaluation=evaluation,
        output_dir=out_dir or output_dir,
        **sections,
    )
    if seed is not None:
        cfg = with_seed(cfg, seed)
    validate_config(cfg)
    return cfg


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Substitui todas as sementes do experimento por `seed`."""
    return replace(
        cfg,
        simulator=replace(cfg.simulator, base_seed=seed),
        action_space=replace(cfg.action_space, seed=seed),
        train=replace(cfg.train, seed=seed),
    )
