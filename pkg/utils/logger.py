"""
Configuração do logging do projeto.
"""
import logging
import sys
from typing import Optional

from config import LOG_FILE, LOG_LEVEL

_FORMAT = "%(asctime)s %(levelname)-7s %(name)s: %(message)s"
_configured = False


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> None:
    """
    Configura o logger raiz uma única vez por processo.

    Args:
        level: Nível de log (padrão: PORTFOLIO_LOG_LEVEL)
        log_file: Arquivo opcional que recebe uma cópia dos logs
    """
    global _configured
    if _configured:
        return

    handlers = [logging.StreamHandler(sys.stderr)]
    target = log_file or LOG_FILE
    if target:
        handlers.append(logging.FileHandler(target, encoding="utf-8"))

    logging.basicConfig(
        level=(level or LOG_LEVEL).upper(),
        format=_FORMAT,
        handlers=handlers,
    )
    _configured = True
