"""
Módulo responsável pelo histórico de treinos e backtests (SQLite).

É um log de diagnóstico: não participa das garantias de reprodutibilidade
byte a byte dos artefatos.
"""
import json
import sqlite3
from typing import Dict, List, Optional


class RunHistory:
    def __init__(self, db_path: str = "training_history.db"):
        """
        Inicializa o gerenciador de histórico.

        Args:
            db_path: Caminho para o banco de dados SQLite
        """
        self.db_path = db_path
        self._init_db()

    def _init_db(self):
        """Inicializa o banco de dados com as tabelas necessárias."""
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()

            # Curvas de treino: uma linha por atualização registrada
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS training_curves (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
                    representative INTEGER NOT NULL,
                    model_seed INTEGER NOT NULL,
                    update_index INTEGER NOT NULL,
                    env_steps INTEGER NOT NULL,
                    mean_reward REAL,
                    loss REAL
                )
            """)

            # Execuções de backtest
            cursor.execute("""
                CREATE TABLE IF NOT EXISTS backtest_runs (
                    id INTEGER PRIMARY KEY AUTOINCREMENT,
                    timestamp DATETIME DEFAULT CURRENT_TIMESTAMP,
                    strategy TEXT NOT NULL,
                    rolling INTEGER NOT NULL,
                    summary TEXT
                )
            """)

            cursor.execute("""
                CREATE INDEX IF NOT EXISTS idx_curves_model
                ON training_curves(representative, model_seed)
            """)
            conn.commit()

    def add_training_points(self, representative: int, model_seed: int,
                            points: List[Dict]) -> None:
        """
        Registra pontos da curva de treino de um modelo.

        Args:
            representative: Índice da matriz representativa
            model_seed: Semente do modelo
            points: Dicionários com update_index, env_steps, mean_reward, loss
        """
        if not points:
            return
        with sqlite3.connect(self.db_path) as conn:
            conn.executemany(
                """
                INSERT INTO training_curves
                    (representative, model_seed, update_index, env_steps, mean_reward, loss)
                VALUES (?, ?, ?, ?, ?, ?)
                """,
                [
                    (representative, model_seed, p["update_index"], p["env_steps"],
                     p.get("mean_reward"), p.get("loss"))
                    for p in points
                ],
            )
            conn.commit()

    def add_backtest(self, strategy: str, rolling: bool, summary: Dict) -> int:
        """
        Registra o resumo de um backtest.

        Returns:
            ID da execução no banco de dados
        """
        with sqlite3.connect(self.db_path) as conn:
            cursor = conn.cursor()
            cursor.execute(
                "INSERT INTO backtest_runs (strategy, rolling, summary) VALUES (?, ?, ?)",
                (strategy, int(rolling), json.dumps(summary, sort_keys=True)),
            )
            conn.commit()
            return cursor.lastrowid

    def get_training_curve(self, representative: int, model_seed: int) -> List[Dict]:
        """
        Recupera a curva de treino de um modelo, em ordem de atualização.
        """
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute(
                """
                SELECT update_index, env_steps, mean_reward, loss FROM training_curves
                WHERE representative = ? AND model_seed = ?
                ORDER BY update_index
                """,
                (representative, model_seed),
            )
            return [dict(row) for row in cursor.fetchall()]

    def summarize_training(self) -> List[Dict]:
        """
        Resume as curvas por modelo: número de atualizações e recompensa final.

        Returns:
            Lista ordenada por (representative, model_seed)
        """
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute(
                """
                SELECT c.representative, c.model_seed, COUNT(*) AS updates,
                       MAX(c.env_steps) AS env_steps,
                       (SELECT mean_reward FROM training_curves d
                        WHERE d.representative = c.representative AND d.model_seed = c.model_seed
                        ORDER BY d.update_index DESC LIMIT 1) AS last_reward
                FROM training_curves c
                GROUP BY c.representative, c.model_seed
                ORDER BY c.representative, c.model_seed
                """
            )
            return [dict(row) for row in cursor.fetchall()]

    def get_recent_backtests(self, limit: int = 10) -> List[Dict]:
        """Recupera os backtests mais recentes."""
        with sqlite3.connect(self.db_path) as conn:
            conn.row_factory = sqlite3.Row
            cursor = conn.execute(
                "SELECT * FROM backtest_runs ORDER BY id DESC LIMIT ?", (limit,)
            )
            return [{
                'id': row['id'],
                'timestamp': row['timestamp'],
                'strategy': row['strategy'],
                'rolling': bool(row['rolling']),
                'summary': json.loads(row['summary']) if row['summary'] else None,
            } for row in cursor.fetchall()]

    def clear_model(self, representative: int, model_seed: Optional[int] = None) -> None:
        """Remove curvas antigas antes de retreinar um modelo."""
        with sqlite3.connect(self.db_path) as conn:
            if model_seed is None:
                conn.execute("DELETE FROM training_curves WHERE representative = ?",
                             (representative,))
            else:
                conn.execute(
                    "DELETE FROM training_curves WHERE representative = ? AND model_seed = ?",
                    (representative, model_seed),
                )
            conn.commit()
