"""Utilitários compartilhados: logging, fluxos aleatórios, cache e histórico de execuções."""
