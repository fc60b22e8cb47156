"""
Cache LRU em memória para resultados numéricos caros.

Nos backtests diários as janelas se sobrepõem e revisitam os mesmos dias
âncora; as matrizes de correlação de cada (t, janela) são calculadas uma vez.
"""
from collections import OrderedDict
from threading import Lock
from typing import Any, Callable, Hashable, Optional

from config import MAX_CACHE_ITEMS


class CacheManager:
    def __init__(self, max_items: int = MAX_CACHE_ITEMS, enabled: bool = True):
        """
        Args:
            max_items: Capacidade; o item menos usado sai primeiro
            enabled: Com False, nada é guardado e toda consulta é um miss
        """
        self._entries: "OrderedDict[Hashable, Any]" = OrderedDict()
        self._lock = Lock()
        self.enabled = enabled
        self.max_items = max(1, max_items)
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """Devolve o valor de `key` (marcando-o como recente) ou None."""
        if not self.enabled:
            return None
        with self._lock:
            try:
                self._entries.move_to_end(key)
            except KeyError:
                self.misses += 1
                return None
            self.hits += 1
            return self._entries[key]

    def set(self, key: Hashable, value: Any) -> None:
        if not self.enabled:
            return
        with self._lock:
            self._entries[key] = value
            self._entries.move_to_end(key)
            if len(self._entries) > self.max_items:
                self._entries.popitem(last=False)

    def get_or_compute(self, key: Hashable, compute: Callable[[], Any]) -> Any:
        """Devolve o valor em cache ou calcula, armazena e devolve."""
        value = self.get(key)
        if value is None:
            value = compute()
            self.set(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()

    def __len__(self) -> int:
        return len(self._entries)
