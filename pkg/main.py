"""
Módulo principal que orquestra o pipeline: análise de regimes, simulação,
treino do pool de modelos, backtest e relatório.

Uso:
    python main.py analyze  --config experimento.ini
    python main.py simulate --config experimento.ini
    python main.py train    --config experimento.ini --jobs 4
    python main.py backtest --config experimento.ini
    python main.py report   --config experimento.ini
"""
import argparse
import logging
import os
import sys
from dataclasses import asdict
from typing import List, Optional

from action_space import (
    extract_action_set, load_action_set, reference_series, save_action_set,
    updown_intervals, updown_points,
)
from agent import build_model_pool, load_model_pool, save_model_pool
from benchmarks import ALLOCATORS
from config import DEFAULT_JOBS, HISTORY_DB, ExperimentConfig, load_experiment_config
from errors import ArtifactFormatError, DataFileNotFound, PortfolioEngineError
from evaluation import (
    AllocatorStrategy, ExperimentSpec, ModelPoolStrategy, run_backtest, run_daily_rolling,
    write_reports,
)
from market_data import ReturnPanel, daily_returns, load_price_panel
from portfolio_env import EnvConfig
from rcme import extract_representatives, load_representative_set, save_representative_set
from simulator import dump_dataset, generate_dataset
from utils.cache_manager import CacheManager
from utils.logger import setup_logging
from utils.run_history import RunHistory

logger = logging.getLogger(__name__)

REPRESENTATIVES_FILE = "representatives.txt"
ACTION_SET_FILE = "action_set.txt"
POOL_FILE = "model_pool.bin"


class PipelineRunner:
    def __init__(self, cfg: ExperimentConfig, jobs: int = 1):
        """
        Inicializa o executor do pipeline.

        Args:
            cfg: Configuração de experimento validada
            jobs: Limite de workers concorrentes em todos os módulos
        """
        self.cfg = cfg
        self.jobs = max(1, jobs)
        self.out = cfg.output_dir
        os.makedirs(self.out, exist_ok=True)
        self.env_cfg = EnvConfig(**asdict(cfg.env))

    def _path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def _history(self) -> RunHistory:
        return RunHistory(self._path(HISTORY_DB))

    def load_returns(self) -> ReturnPanel:
        d = self.cfg.data
        panel = load_price_panel(d.path, date_column=d.date_column,
                                 price_columns=d.selected_assets(), delimiter=d.delimiter)
        logger.info("Painel carregado: %d datas, %d ativos", len(panel), panel.n_assets)
        return daily_returns(panel)

    def _require(self, name: str, hint: str) -> str:
        path = self._path(name)
        if not os.path.exists(path):
            raise DataFileNotFound(f"Artefato ausente: {path} (execute '{hint}' antes)")
        return path

    def cmd_analyze(self) -> int:
        """Extrai as matrizes representativas e imprime o relatório de regimes."""
        rp = self.load_returns()
        rc = self.cfg.rcme
        rs, ca = extract_representatives(rp, window=rc.window, stride=rc.stride, k=rc.n_clusters,
                                         method=rc.linkage, jobs=self.jobs)
        path = self._path(REPRESENTATIVES_FILE)
        save_representative_set(rs, path)

        print(f"Regimes: {rs.k} (ligação {rc.linkage}, janela {rc.window}, passo {rc.stride})")
        for k, members in enumerate(rs.member_times):
            first, last = rp.dates[members[0]], rp.dates[members[-1]]
            print(f"  regime {k}: {len(members)} matrizes ({first} .. {last})")
        heights = sorted(ca.merge_heights, reverse=True)[:10]
        if heights:
            print("Maiores alturas do dendrograma: " + ", ".join(f"{h:.4f}" for h in heights))
        print(f"Representativas gravadas em {path}")
        return 0

    def cmd_simulate(self) -> int:
        """Gera e grava os conjuntos simulados de cada representativa."""
        rs = load_representative_set(self._require(REPRESENTATIVES_FILE, "analyze"))
        rp = self.load_returns()
        sim = self.cfg.simulator
        out_dir = self._path("datasets")
        total = 0
        for k in range(rs.k):
            panels = generate_dataset(k, rs, rp, n_paths=sim.n_paths, horizon=sim.horizon,
                                      base_seed=sim.base_seed + k * sim.n_paths, dt=sim.dt,
                                      jobs=self.jobs)
            total += len(dump_dataset(panels, out_dir, rp.asset_ids, delimiter=self.cfg.data.delimiter))
        print(f"{total} caminhos simulados gravados em {out_dir}")
        return 0

    def cmd_train(self) -> int:
        """Extrai o conjunto de ações e treina o pool de modelos."""
        rs = load_representative_set(self._require(REPRESENTATIVES_FILE, "analyze"))
        rp = self.load_returns()
        if tuple(rs.asset_ids) and tuple(rs.asset_ids) != tuple(rp.asset_ids):
            raise ArtifactFormatError("Representativas foram extraídas de outro universo de ativos")

        a = self.cfg.action_space
        labeling = updown_points(reference_series(rp, a.reference), k=a.k_window, alpha=a.alpha)
        intervals = updown_intervals(labeling, min_len=a.min_len)
        action_set = extract_action_set(intervals, rp, grid_step=a.grid_step, fraction=a.fraction,
                                        floor=a.floor, k_control=a.k_control, top_i=a.top_i,
                                        seed=a.seed, jobs=self.jobs)
        save_action_set(action_set, self._path(ACTION_SET_FILE))

        sim, tr = self.cfg.simulator, self.cfg.train
        history = self._history()
        pool = build_model_pool(rs, rp, action_set, models_per_rep=tr.models_per_rep, train_cfg=tr,
                                env_cfg=self.env_cfg, n_paths=sim.n_paths, horizon=sim.horizon,
                                base_seed=sim.base_seed, dt=sim.dt, jobs=self.jobs, history=history)
        path = self._path(POOL_FILE)
        save_model_pool(pool, path)
        print(f"Pool com {sum(len(s) for s in pool.sub_pools)} modelos "
              f"({len(action_set)} ações) gravado em {path}")
        return 0

    def _strategies(self, ev_strategies: List[str]) -> list:
        strategies = []
        for sid in ev_strategies:
            if sid == "model":
                rs = load_representative_set(self._require(REPRESENTATIVES_FILE, "analyze"))
                action_set = load_action_set(self._require(ACTION_SET_FILE, "train"))
                pool = load_model_pool(self._require(POOL_FILE, "train"), rs)
                trace_dir = self._path("traces") if self.cfg.evaluation.dump_equity else None
                strategies.append(ModelPoolStrategy(
                    pool, action_set, self.env_cfg, corr_window=rs.window,
                    cache=CacheManager(), trace_dir=trace_dir,
                ))
            else:
                strategies.append(AllocatorStrategy(
                    sid, ALLOCATORS[sid], moment_window=self.cfg.benchmarks.moment_window,
                    decision_stride=self.env_cfg.decision_stride, cost_bps=self.env_cfg.cost_bps,
                ))
        return strategies

    def cmd_backtest(self) -> int:
        """Executa os backtests fixo e (opcionalmente) diário e grava os relatórios."""
        ev = self.cfg.evaluation
        rp = self.load_returns()
        spec = ExperimentSpec(periods=ev.periods, management_horizon=ev.horizon,
                              rolling=ev.rolling, strategies=ev.strategies)
        strategies = self._strategies(list(ev.strategies))
        equity_dir = self._path("equity") if ev.dump_equity else None
        history = self._history()

        fixed = [run_backtest(s, rp, spec, equity_dir=equity_dir) for s in strategies]
        txt, _ = write_reports(fixed, self._path("report_fixed"), "Experiment Result, Not Rolling",
                               delimiter=self.cfg.data.delimiter)
        for table in fixed:
            history.add_backtest(table.strategy, False, table.mean.as_dict())
        with open(txt, encoding="utf-8") as f:
            print(f.read())

        failed = any(p.failed for t in fixed for p in t.periods)
        if ev.rolling:
            rolling = [run_daily_rolling(s, rp, spec, jobs=self.jobs) for s in strategies]
            txt, _ = write_reports(rolling, self._path("report_rolling"), "Experiment Result, Daily Rolling",
                                   delimiter=self.cfg.data.delimiter)
            for table in rolling:
                history.add_backtest(table.strategy, True, table.mean.as_dict())
            with open(txt, encoding="utf-8") as f:
                print(f.read())
            failed = failed or any(p.failed for t in rolling for p in t.periods)
        return 1 if failed else 0

    def cmd_report(self) -> int:
        """Imprime o resumo das curvas de treino e dos últimos backtests."""
        history = self._history()
        rows = history.summarize_training()
        if not rows:
            print("Nenhuma curva de treino registrada.")
        else:
            print("Treino (representativa, semente, atualizações, passos, última recompensa):")
            for row in rows:
                print(f"  {row['representative']:>3} {row['model_seed']:>6} {row['updates']:>8} "
                      f"{row['env_steps']:>10} {row['last_reward']:>10.4f}")
        for run in history.get_recent_backtests():
            mode = "rolling" if run["rolling"] else "fixed"
            summary = run["summary"] or {}
            print(f"  [{run['timestamp']}] {run['strategy']} ({mode}): "
                  f"R={summary.get('annualized_return', float('nan')):.4f} "
                  f"Sharpe={summary.get('sharpe', float('nan')):.3f}")
        return 0


COMMANDS = ("analyze", "simulate", "train", "backtest", "report")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Arquivo INI do experimento")
    common.add_argument("--jobs", type=int, default=DEFAULT_JOBS, help="Máximo de workers concorrentes")
    common.add_argument("--seed", type=int, default=None, help="Substitui todas as sementes do arquivo")
    common.add_argument("--out", default=None, help="Diretório de saída (substitui [output])")

    parser = argparse.ArgumentParser(description="Motor de alocação por reforço com regimes de correlação")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Função principal: devolve o código de saída (0, 1 ou 2)."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code else 0
    setup_logging()
    try:
        cfg = load_experiment_config(args.config, seed=args.seed, out_dir=args.out)
        runner = PipelineRunner(cfg, jobs=args.jobs)
        return getattr(runner, f"cmd_{args.command}")()
    except PortfolioEngineError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code
    except OSError as e:
        logger.error("Erro de E/S: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
