"""
Módulo responsável pelo agente ator-crítico convolucional: rede de política e
valor, perda/gradientes de vantagem n-passos, treino A3C (síncrono ou
assíncrono), construção do pool de modelos por matriz representativa e
inferência pelo sub-pool da representativa mais próxima.

Formato do artefato ModelPool (binário) + metadados (JSON ao lado):

    b"model-pool v1\\n"
    <cabeçalho JSON em uma linha: arch_hash, architecture, n, n_actions, K, M, param_count>\\n
    <parâmetros float64 little-endian, modelo a modelo, sub-pool a sub-pool>
"""
import hashlib
import json
import logging
import math
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from action_space import ActionSet
from config import TRADING_DAYS, TrainConfig
from errors import (
    ArtifactFormatError, DivergedTraining, EmptySubPool, NonFiniteActivation, NonFiniteLoss,
    PortfolioEngineError, ShapeMismatch,
)
from market_data import CorrelationMatrix, ReturnPanel
from portfolio_env import EnvConfig, PortfolioEnv, StepOutput, panel_returns
from rcme import RepresentativeSet, nearest_representative
from simulator import SimulatedPanel, generate_dataset
from utils.rng import stream

logger = logging.getLogger(__name__)

ARTIFACT_MAGIC = b"model-pool v1\n"
DTYPE = torch.float64


@dataclass(frozen=True)
class NetArchitecture:
    """Dois ramos convolucionais (observação e estado) + camada FC + cabeças."""
    n_assets: int
    n_actions: int
    obs_window: int = 60
    state_window: int = 120
    obs_filters: Tuple[int, int] = (8, 16)
    obs_kernels: Tuple[int, int] = (8, 4)
    state_filters: Tuple[int, int] = (8, 16)
    state_kernels: Tuple[int, int] = (8, 4)
    conv_stride: int = 2
    hidden: int = 128
    # retornos entram na rede em pontos percentuais
    input_scale: float = 100.0

    def _conv_len(self, width: int, kernels: Tuple[int, int]) -> int:
        for k in kernels:
            width = (width - k) // self.conv_stride + 1
        return width

    @property
    def obs_features(self) -> int:
        return self.obs_filters[1] * self.n_assets * self._conv_len(self.obs_window, self.obs_kernels)

    @property
    def state_features(self) -> int:
        return self.state_filters[1] * self._conv_len(self.state_window, self.state_kernels)

    def validate(self) -> None:
        if self._conv_len(self.obs_window, self.obs_kernels) < 1 or \
                self._conv_len(self.state_window, self.state_kernels) < 1:
            raise ShapeMismatch(f"Janelas curtas demais para os kernels: {self}")
        if self.n_assets < 1 or self.n_actions < 1:
            raise ShapeMismatch("n_assets e n_actions devem ser >= 1")

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["obs_filters"] = list(self.obs_filters)
        data["obs_kernels"] = list(self.obs_kernels)
        data["state_filters"] = list(self.state_filters)
        data["state_kernels"] = list(self.state_kernels)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "NetArchitecture":
        data = dict(data)
        for key in ("obs_filters", "obs_kernels", "state_filters", "state_kernels"):
            data[key] = tuple(data[key])
        return cls(**data)

    def digest(self) -> str:
        """Hash estável da arquitetura (registrado nos artefatos)."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


class PolicyValueNet(nn.Module):
    def __init__(self, arch: NetArchitecture):
        super().__init__()
        arch.validate()
        self.arch = arch
        s = arch.conv_stride
        self.obs_branch = nn.Sequential(
            nn.Conv2d(1, arch.obs_filters[0], (1, arch.obs_kernels[0]), stride=(1, s)),
            nn.ReLU(),
            nn.Conv2d(arch.obs_filters[0], arch.obs_filters[1], (1, arch.obs_kernels[1]), stride=(1, s)),
            nn.ReLU(),
        )
        self.state_branch = nn.Sequential(
            nn.Conv1d(1, arch.state_filters[0], arch.state_kernels[0], stride=s),
            nn.ReLU(),
            nn.Conv1d(arch.state_filters[0], arch.state_filters[1], arch.state_kernels[1], stride=s),
            nn.ReLU(),
        )
        self.fc = nn.Linear(arch.obs_features + arch.state_features, arch.hidden)
        self.policy_head = nn.Linear(arch.hidden, arch.n_actions)
        self.value_head = nn.Linear(arch.hidden, 1)
        self.to(DTYPE)

    def forward(self, observation: torch.Tensor, state: torch.Tensor):
        """
        Args:
            observation: (B, n, obs_window)
            state: (B, state_window)

        Returns:
            (logits (B, |A|), valor (B,))
        """
        scale = self.arch.input_scale
        o = self.obs_branch(observation.unsqueeze(1) * scale).flatten(1)
        s = self.state_branch(state.unsqueeze(1) * scale).flatten(1)
        h = F.relu(self.fc(torch.cat([o, s], dim=1)))
        return self.policy_head(h), self.value_head(h).squeeze(-1)


@dataclass(frozen=True)
class PolicyValueParams:
    architecture: NetArchitecture
    flat: np.ndarray
    shapes: Tuple[Tuple[str, Tuple[int, ...]], ...]
    init_seed: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.flat)):
            raise NonFiniteActivation("Parâmetros não finitos")
        expected = sum(int(np.prod(shape)) for _, shape in self.shapes)
        if expected != self.flat.size:
            raise ShapeMismatch(f"Tabela de formas soma {expected}, vetor tem {self.flat.size}")

    def network(self) -> PolicyValueNet:
        """Rede construída com estes parâmetros (memorizada, somente leitura)."""
        net = self.__dict__.get("_net")
        if net is None:
            net = build_network(self)
            net.eval()
            object.__setattr__(self, "_net", net)
        return net

    def with_flat(self, flat: np.ndarray) -> "PolicyValueParams":
        return PolicyValueParams(self.architecture, np.asarray(flat, dtype=float).copy(),
                                 self.shapes, self.init_seed)


def _shape_table(net: nn.Module) -> Tuple[Tuple[str, Tuple[int, ...]], ...]:
    return tuple((name, tuple(p.shape)) for name, p in net.named_parameters())


def _flatten(net: nn.Module) -> np.ndarray:
    return torch.nn.utils.parameters_to_vector(net.parameters()).detach().numpy().copy()


def build_network(params: PolicyValueParams) -> PolicyValueNet:
    """Instancia a rede e carrega o vetor de parâmetros."""
    net = PolicyValueNet(params.architecture)
    if _shape_table(net) != params.shapes:
        raise ShapeMismatch("Tabela de formas não corresponde à arquitetura")
    torch.nn.utils.vector_to_parameters(torch.as_tensor(params.flat, dtype=DTYPE), net.parameters())
    return net


def init_params(arch: NetArchitecture, seed: int = 0) -> PolicyValueParams:
    """
    Inicialização uniforme escalada pelo fan-in; camadas finais zeradas para
    que a política inicial seja exatamente uniforme.
    """
    net = PolicyValueNet(arch)
    rng = stream(seed, 0xC0FFEE)
    with torch.no_grad():
        for module in net.modules():
            if not isinstance(module, (nn.Conv1d, nn.Conv2d, nn.Linear)):
                continue
            if module is net.policy_head or module is net.value_head:
                module.weight.zero_()
                module.bias.zero_()
                continue
            fan_in = module.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            module.weight.copy_(torch.as_tensor(rng.uniform(-bound, bound, module.weight.shape)))
            module.bias.copy_(torch.as_tensor(rng.uniform(-bound, bound, module.bias.shape)))
    return PolicyValueParams(arch, _flatten(net), _shape_table(net), init_seed=seed)


def _as_batch(net: PolicyValueNet, observation, state):
    arch = net.arch
    obs = torch.as_tensor(np.asarray(observation, dtype=float), dtype=DTYPE)
    st = torch.as_tensor(np.asarray(state, dtype=float), dtype=DTYPE)
    if obs.dim() == 2:
        obs, st = obs.unsqueeze(0), st.unsqueeze(0)
    if tuple(obs.shape[1:]) != (arch.n_assets, arch.obs_window) or tuple(st.shape[1:]) != (arch.state_window,):
        raise ShapeMismatch(
            f"Entradas {tuple(obs.shape)} / {tuple(st.shape)} incompatíveis com "
            f"({arch.n_assets}, {arch.obs_window}) / ({arch.state_window},)"
        )
    return obs, st


def _policy_value(net: PolicyValueNet, observation, state) -> Tuple[np.ndarray, float]:
    obs, st = _as_batch(net, observation, state)
    with torch.no_grad():
        logits, value = net(obs, st)
        probs = torch.softmax(logits, dim=-1)[0].numpy()
    v = float(value[0])
    if not np.all(np.isfinite(probs)) or not math.isfinite(v):
        raise NonFiniteActivation("Saída não finita da rede")
    return probs, v


def forward(params: PolicyValueParams, observation, state) -> Tuple[np.ndarray, float]:
    """
    Política (vetor de probabilidades) e valor para uma observação e um estado.
    """
    return _policy_value(params.network(), observation, state)


@dataclass
class Rollout:
    observations: List[np.ndarray] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    dones: List[bool] = field(default_factory=list)
    bootstrap_observation: Optional[np.ndarray] = None
    bootstrap_state: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.actions)


def _targets(net: PolicyValueNet, trajectory: Rollout, cfg: TrainConfig) -> np.ndarray:
    # retorno n-passos com bootstrap no último estado quando o episódio continua
    if trajectory.dones[-1] or trajectory.bootstrap_observation is None:
        running = 0.0
    else:
        b_obs, b_st = _as_batch(net, trajectory.bootstrap_observation, trajectory.bootstrap_state)
        with torch.no_grad():
            running = float(net(b_obs, b_st)[1][0])
    targets = np.zeros(len(trajectory))
    for i in reversed(range(len(trajectory))):
        if trajectory.dones[i] and i != len(trajectory) - 1:
            running = 0.0
        running = trajectory.rewards[i] + cfg.gamma * running
        targets[i] = running
    return targets


def _loss(net: PolicyValueNet, trajectory: Rollout, cfg: TrainConfig,
          fixed_advantage: Optional[np.ndarray] = None) -> torch.Tensor:
    if len(trajectory) == 0:
        raise ValueError("Trajetória vazia")
    obs, st = _as_batch(net, np.stack(trajectory.observations), np.stack(trajectory.states))
    logits, values = net(obs, st)
    returns = torch.as_tensor(_targets(net, trajectory, cfg), dtype=DTYPE)

    log_probs = F.log_softmax(logits, dim=-1)
    actions = torch.as_tensor(trajectory.actions, dtype=torch.long)
    chosen = log_probs.gather(1, actions.unsqueeze(1)).squeeze(1)
    advantage = returns - values

    if fixed_advantage is None:
        weight = advantage.detach()
    else:
        weight = torch.as_tensor(fixed_advantage, dtype=DTYPE)
    policy_loss = -(chosen * weight).mean()
    value_loss = advantage.pow(2).mean()
    entropy = -(log_probs.exp() * log_probs).sum(dim=1).mean()
    return policy_loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy


def loss_and_gradients(params: PolicyValueParams, trajectory: Rollout,
                       cfg: TrainConfig) -> Tuple[float, np.ndarray]:
    """
    Perda total (política + c_v * valor - c_e * entropia) e seu gradiente.

    Returns:
        (perda, gradiente achatado na ordem de params.flat)
    """
    net = build_network(params)
    loss = _loss(net, trajectory, cfg)
    if not torch.isfinite(loss):
        raise NonFiniteLoss(f"Perda não finita: {loss.item()}")
    net.zero_grad()
    loss.backward()
    grad = torch.cat([p.grad.reshape(-1) for p in net.parameters()]).numpy().copy()
    return loss.item(), grad


def advantages(params: PolicyValueParams, trajectory: Rollout, cfg: TrainConfig) -> np.ndarray:
    """Vantagens n-passos (retorno alvo - valor) nos parâmetros dados."""
    net = build_network(params)
    with torch.no_grad():
        obs, st = _as_batch(net, np.stack(trajectory.observations), np.stack(trajectory.states))
        values = net(obs, st)[1].numpy()
    return _targets(net, trajectory, cfg) - values


def loss_value(params: PolicyValueParams, trajectory: Rollout, cfg: TrainConfig,
               fixed_advantage: Optional[np.ndarray] = None) -> float:
    """
    Valor da perda; com `fixed_advantage` o peso do termo de política é
    constante, e o gradiente de loss_and_gradients é o gradiente exato desta função.
    """
    with torch.no_grad():
        return float(_loss(build_network(params), trajectory, cfg, fixed_advantage))


EnvFactory = Callable[[int, int], Tuple[PortfolioEnv, StepOutput]]


class DatasetEnvFactory:
    """Fonte de ambientes sobre um conjunto de caminhos simulados."""

    def __init__(self, panels: Sequence, action_set: ActionSet, env_cfg: EnvConfig, seed: int = 0):
        if not panels:
            raise ValueError("Conjunto de dados vazio")
        self.returns = [panel_returns(p) for p in panels]
        self.action_set = action_set
        self.env_cfg = env_cfg
        self.seed = seed

    def __call__(self, worker_id: int, episode: int) -> Tuple[PortfolioEnv, StepOutput]:
        rng = stream(self.seed, worker_id, episode)
        returns = self.returns[int(rng.integers(len(self.returns)))]
        first = self.env_cfg.obs_window - 1
        last = max(first, returns.shape[0] - 1 - self.env_cfg.episode_horizon)
        start = int(rng.integers(first, last + 1))
        env = PortfolioEnv(self.action_set, self.env_cfg)
        return env, env.reset(returns, start)


class _Worker:
    def __init__(self, worker_id: int, factory: EnvFactory, seed: int):
        self.worker_id = worker_id
        self.factory = factory
        self.episode = 0
        self.rng = stream(seed, 0xA3C, worker_id)
        self.env, self.last = factory(worker_id, self.episode)
        self.episode_sharpes: List[float] = []

    def _next_episode(self) -> None:
        pr = self.env.episode_returns()
        if len(pr) >= 2 and np.ptp(pr) > 0:
            self.episode_sharpes.append(float(pr.mean() / pr.std(ddof=1) * math.sqrt(TRADING_DAYS)))
        self.episode += 1
        self.env, self.last = self.factory(self.worker_id, self.episode)

    def collect(self, net: PolicyValueNet, length: int) -> Rollout:
        """Coleta até `length` passos, parando no fim do episódio."""
        rollout = Rollout()
        if self.last.done:
            self._next_episode()
        for _ in range(length):
            probs, _ = _policy_value(net, self.last.observation, self.last.state)
            action = int(self.rng.choice(len(probs), p=probs / probs.sum()))
            out = self.env.step(action)
            rollout.observations.append(self.last.observation)
            rollout.states.append(self.last.state)
            rollout.actions.append(action)
            rollout.rewards.append(out.reward)
            rollout.dones.append(out.done)
            self.last = out
            if out.done:
                break
        if not self.last.done:
            rollout.bootstrap_observation = self.last.observation
            rollout.bootstrap_state = self.last.state
        return rollout


class Trainer:
    def __init__(self, env_factory: EnvFactory, action_set: ActionSet, cfg: TrainConfig,
                 arch: Optional[NetArchitecture] = None, init: Optional[PolicyValueParams] = None,
                 jobs: Optional[int] = None):
        """
        Inicializa o treino A3C.

        Args:
            env_factory: Fonte de ambientes semeados (worker, episódio)
            action_set: Conjunto de ações
            cfg: Hiperparâmetros de treino
            arch: Arquitetura (padrão: referência para o env da fábrica)
            init: Parâmetros iniciais (padrão: init_params com cfg.seed)
            jobs: Máximo de threads no modo assíncrono (padrão: um por worker)
        """
        self.env_factory = env_factory
        self.action_set = action_set
        self.cfg = cfg
        self.jobs = jobs
        if init is None:
            if arch is None:
                sample_env, _ = env_factory(0, 0)
                arch = NetArchitecture(
                    n_assets=action_set.n_assets, n_actions=len(action_set),
                    obs_window=sample_env.cfg.obs_window, state_window=sample_env.cfg.state_window,
                )
            init = init_params(arch, cfg.seed)
        self.init = init
        self.curve: List[Dict] = []
        self.episode_sharpes: List[float] = []
        self.env_steps = 0
        self._lock = threading.Lock()

    def _apply(self, net: PolicyValueNet, optimizer: torch.optim.Optimizer, loss: torch.Tensor) -> None:
        if not torch.isfinite(loss):
            raise DivergedTraining(f"Perda não finita após {self.env_steps} passos")
        optimizer.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(net.parameters(), self.cfg.grad_clip)
        optimizer.step()

    def _record(self, rollout: Rollout, loss: float) -> None:
        self.curve.append({
            "update_index": len(self.curve),
            "env_steps": self.env_steps,
            "mean_reward": float(np.mean(rollout.rewards)),
            "loss": loss,
        })

    def run(self) -> PolicyValueParams:
        """Treina até consumir cfg.total_steps passos de ambiente."""
        if self.cfg.total_steps <= 0:
            return self.init
        net = build_network(self.init)
        net.train()
        optimizer = torch.optim.Adam(net.parameters(), lr=self.cfg.learning_rate,
                                     betas=(0.9, 0.999), eps=1e-8)
        workers = [_Worker(w, self.env_factory, self.cfg.seed) for w in range(self.cfg.workers)]
        if self.cfg.mode == "asynchronous" and self.cfg.workers > 1:
            self._run_async(net, optimizer, workers)
        else:
            self._run_sync(net, optimizer, workers)
        for w in workers:
            self.episode_sharpes.extend(w.episode_sharpes)
        logger.info("Treino concluído: %d passos, %d atualizações", self.env_steps, len(self.curve))
        return self.init.with_flat(_flatten(net))

    def _run_sync(self, net, optimizer, workers: List[_Worker]) -> None:
        # workers em lockstep; atualizações aplicadas na ordem dos workers
        while self.env_steps < self.cfg.total_steps:
            for worker in workers:
                length = min(self.cfg.rollout_length, self.cfg.total_steps - self.env_steps)
                rollout = worker.collect(net, length)
                self.env_steps += len(rollout)
                loss = _loss(net, rollout, self.cfg)
                self._apply(net, optimizer, loss)
                self._record(rollout, loss.item())
                if self.env_steps >= self.cfg.total_steps:
                    break

    def _run_async(self, net, optimizer, workers: List[_Worker]) -> None:
        # no máximo `jobs` threads; os workers circulam por uma fila
        shared_params = list(net.parameters())
        idle: "queue.Queue[_Worker]" = queue.Queue()
        for worker in workers:
            idle.put(worker)

        def loop() -> None:
            local = PolicyValueNet(net.arch)
            while True:
                with self._lock:
                    if self.env_steps >= self.cfg.total_steps:
                        return
                    local.load_state_dict(net.state_dict())
                worker = idle.get()
                try:
                    rollout = worker.collect(local, self.cfg.rollout_length)
                finally:
                    idle.put(worker)
                loss = _loss(local, rollout, self.cfg)
                if not torch.isfinite(loss):
                    raise DivergedTraining("Perda não finita em worker assíncrono")
                local.zero_grad()
                loss.backward()
                with self._lock:
                    for shared, own in zip(shared_params, local.parameters()):
                        shared.grad = own.grad.clone()
                    torch.nn.utils.clip_grad_norm_(shared_params, self.cfg.grad_clip)
                    optimizer.step()
                    self.env_steps += len(rollout)
                    self._record(rollout, loss.item())

        threads = min(len(workers), self.jobs) if self.jobs else len(workers)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for future in [pool.submit(loop) for _ in range(threads)]:
                future.result()


def train(env_factory: EnvFactory, action_set: ActionSet, cfg: TrainConfig,
          arch: Optional[NetArchitecture] = None) -> PolicyValueParams:
    """Treina um modelo A3C e devolve os parâmetros finais."""
    return Trainer(env_factory, action_set, cfg, arch).run()


@dataclass(frozen=True)
class PoolMember:
    params: PolicyValueParams
    representative: int
    seed: int
    path_seeds: Tuple[int, ...]
    final_training_sharpe: float
    env_steps: int


@dataclass(frozen=True)
class ModelPool:
    sub_pools: Tuple[Tuple[PoolMember, ...], ...]
    architecture: NetArchitecture
    representatives: RepresentativeSet

    def __post_init__(self):
        for k, sub in enumerate(self.sub_pools):
            if not sub:
                raise EmptySubPool(f"Representativa {k} sem modelos treinados")
        if len(self.sub_pools) != self.representatives.k:
            raise ShapeMismatch(
                f"{len(self.sub_pools)} sub-pools para {self.representatives.k} representativas"
            )


def build_model_pool(rs: RepresentativeSet, rp: ReturnPanel, action_set: ActionSet,
                     models_per_rep: int, train_cfg: TrainConfig, env_cfg: EnvConfig,
                     n_paths: int = 64, horizon: int = 756, base_seed: int = 0,
                     dt: float = 1.0 / TRADING_DAYS, jobs: int = 1, history=None) -> ModelPool:
    """
    Treina M modelos por representativa, cada um sobre um subconjunto disjunto
    dos caminhos simulados e com semente própria.

    Falhas numa representativa são registradas e as demais continuam; só falha
    se alguma representativa termina sem modelos.
    """
    arch = NetArchitecture(
        n_assets=action_set.n_assets, n_actions=len(action_set),
        obs_window=env_cfg.obs_window, state_window=env_cfg.state_window,
    )
    sub_pools: List[Tuple[PoolMember, ...]] = []
    for k in range(rs.k):
        members: List[PoolMember] = []
        try:
            panels: List[SimulatedPanel] = generate_dataset(
                k, rs, rp, n_paths=n_paths, horizon=horizon,
                base_seed=base_seed + k * n_paths, dt=dt, jobs=jobs,
            )
        except PortfolioEngineError as e:
            logger.error("Representativa %d: simulação falhou: %s", k, e)
            sub_pools.append(())
            continue

        for m, subset in enumerate(np.array_split(np.arange(n_paths), models_per_rep)):
            seed = train_cfg.seed + k * models_per_rep + m
            cfg = replace(train_cfg, seed=seed)
            factory = DatasetEnvFactory([panels[i] for i in subset], action_set, env_cfg, seed=seed)
            trainer = Trainer(factory, action_set, cfg, arch, jobs=jobs)
            try:
                params = trainer.run()
            except PortfolioEngineError as e:
                logger.error("Representativa %d, modelo %d: treino falhou: %s", k, m, e)
                continue
            recent = trainer.episode_sharpes[-10:]
            members.append(PoolMember(
                params=params, representative=k, seed=seed,
                path_seeds=tuple(panels[i].seed for i in subset),
                final_training_sharpe=float(np.mean(recent)) if recent else float("nan"),
                env_steps=trainer.env_steps,
            ))
            if history is not None:
                history.clear_model(k, seed)
                history.add_training_points(k, seed, trainer.curve)
        logger.info("Representativa %d: sub-pool com %d modelos", k, len(members))
        sub_pools.append(tuple(members))

    empty = [k for k, sub in enumerate(sub_pools) if not sub]
    if empty:
        raise EmptySubPool(f"Representativas sem modelos: {empty}")
    return ModelPool(sub_pools=tuple(sub_pools), architecture=arch, representatives=rs)


def ensemble_policy(pool: ModelPool, representative: int, observation, state) -> np.ndarray:
    """Média dos vetores de política do sub-pool."""
    probs = [forward(member.params, observation, state)[0] for member in pool.sub_pools[representative]]
    return np.mean(probs, axis=0)


def infer(pool: ModelPool, current_corr: CorrelationMatrix, observation, state,
          mode: str = "deterministic", seed: int = 0) -> int:
    """
    Escolhe a ação com o sub-pool da representativa mais próxima.

    Args:
        mode: deterministic (argmax, empate no menor índice) ou stochastic
        seed: Semente da amostragem estocástica

    Returns:
        Índice da ação
    """
    k = nearest_representative(current_corr, pool.representatives)
    probs = ensemble_policy(pool, k, observation, state)
    if mode == "deterministic":
        return int(np.argmax(probs))
    if mode == "stochastic":
        return int(stream(seed).choice(len(probs), p=probs / probs.sum()))
    raise ValueError(f"Modo de inferência desconhecido: {mode}")


def save_model_pool(pool: ModelPool, path: str) -> None:
    """Grava o pool (binário) e os metadados (path + '.json')."""
    arch = pool.architecture
    param_count = pool.sub_pools[0][0].params.flat.size
    header = {
        "arch_hash": arch.digest(),
        "architecture": arch.to_dict(),
        "n": arch.n_assets,
        "n_actions": arch.n_actions,
        "K": len(pool.sub_pools),
        "M": [len(sub) for sub in pool.sub_pools],
        "param_count": param_count,
    }
    with open(path, "wb") as f:
        f.write(ARTIFACT_MAGIC)
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for sub in pool.sub_pools:
            for member in sub:
                f.write(np.asarray(member.params.flat, dtype="<f8").tobytes())

    metadata = {
        "arch_hash": arch.digest(),
        "models": [
            {
                "representative": m.representative,
                "seed": m.seed,
                "init_seed": m.params.init_seed,
                "path_seeds": list(m.path_seeds),
                "final_training_sharpe": m.final_training_sharpe,
                "env_steps": m.env_steps,
            }
            for sub in pool.sub_pools for m in sub
        ],
    }
    with open(path + ".json", "w", encoding="utf-8", newline="\n") as f:
        json.dump(metadata, f, sort_keys=True, indent=2)
        f.write("\n")


def load_model_pool(path: str, representatives: RepresentativeSet,
                    expected: Optional[NetArchitecture] = None) -> ModelPool:
    """
    Lê o pool gravado por save_model_pool, verificando o hash da arquitetura.
    """
    try:
        with open(path, "rb") as f:
            if f.readline() != ARTIFACT_MAGIC:
                raise ValueError("assinatura ausente ou versão desconhecida")
            header = json.loads(f.readline())
            blob = f.read()
        with open(path + ".json", encoding="utf-8") as f:
            metadata = json.load(f)
        arch = NetArchitecture.from_dict(header["architecture"])
        if arch.digest() != header["arch_hash"] or metadata["arch_hash"] != header["arch_hash"]:
            raise ValueError("hash de arquitetura não confere")
        if expected is not None and expected.digest() != header["arch_hash"]:
            raise ValueError("arquitetura diferente da esperada")
        counts, size = header["M"], header["param_count"]
        if len(blob) != 8 * size * sum(counts) or len(metadata["models"]) != sum(counts):
            raise ValueError("tamanho do conteúdo não confere com o cabeçalho")
        flat = np.frombuffer(blob, dtype="<f8").astype(float)
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ArtifactFormatError(f"Artefato de pool inválido ({path}): {e}")

    template = init_params(arch, 0)
    sub_pools, cursor = [], 0
    for k, count in enumerate(counts):
        members = []
        for _ in range(count):
            meta = metadata["models"][cursor]
            vector = flat[cursor * size:(cursor + 1) * size].copy()
            params = PolicyValueParams(arch, vector, template.shapes, init_seed=meta["init_seed"])
            members.append(PoolMember(
                params=params, representative=meta["representative"], seed=meta["seed"],
                path_seeds=tuple(meta["path_seeds"]),
                final_training_sharpe=float(meta["final_training_sharpe"]),
                env_steps=meta["env_steps"],
            ))
            cursor += 1
        sub_pools.append(tuple(members))
    return ModelPool(sub_pools=tuple(sub_pools), architecture=arch, representatives=representatives)


def pool_digest(path: str) -> str:
    """Hash do arquivo binário do pool (comparação entre execuções)."""
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
