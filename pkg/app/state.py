from dataclasses import dataclass, field, asdict
from typing import Dict, Any
import logging
import os
import threading


@dataclass
class RunState:
    """Contadores e tempos de uma execução do pipeline"""
    status: str = "pending"
    frames: int = 0
    frames_registered: int = 0
    batches: int = 0
    failed_batches: int = 0
    segments: int = 0
    keyframes: int = 0
    links_attempted: int = 0
    links_accepted: int = 0
    loop_closures: int = 0
    optimization_passes: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Converter estado para dicionário"""
        return asdict(self)

    def update(self, updates: Dict[str, Any]) -> None:
        """Atualizar estado a partir de dicionário"""
        for key, value in updates.items():
            if hasattr(self, key):
                setattr(self, key, value)


class StateManager:
    """Gerencia o estado da execução; seguro entre as threads do front-end e do back-end"""

    COUNTERS = {"frames", "frames_registered", "batches", "failed_batches", "segments", "keyframes",
                "links_attempted", "links_accepted", "loop_closures", "optimization_passes"}

    def __init__(self) -> None:
        self.state = RunState()
        self._lock = threading.Lock()

    def update(self, **kwargs) -> None:
        """Atualizar estado com novos valores"""
        valid_keys = self.COUNTERS | {"status"}
        validated_updates = {k: v for k, v in kwargs.items() if k in valid_keys}
        if not validated_updates:
            logging.warning("⚠️ Nenhuma atualização válida fornecida")
            return
        with self._lock:
            self.state.update(validated_updates)
        self._log_state_change(validated_updates)

    def increment(self, key: str, n: int = 1) -> None:
        if key not in self.COUNTERS:
            logging.warning(f"⚠️ Contador desconhecido: {key}")
            return
        with self._lock:
            setattr(self.state, key, getattr(self.state, key) + n)

    def add_timing(self, key: str, seconds: float) -> None:
        with self._lock:
            self.state.timings[key] = self.state.timings.get(key, 0.0) + float(seconds)

    def get(self, key: str, default: Any = None) -> Any:
        """Obter valor do estado"""
        with self._lock:
            return getattr(self.state, key, default)

    def _log_state_change(self, changes: Dict[str, Any]) -> None:
        if "status" in changes:
            logging.debug(f"Estado atualizado: {changes}")

    def save_report(self, path: str) -> None:
        """Salvar relatório chave: valor"""
        with self._lock:
            values = self.state.to_dict()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            for key, value in values.items():
                if key == "timings":
                    for name, seconds in sorted(value.items()):
                        f.write(f"time_{name}: {seconds:.3f}\n")
                else:
                    f.write(f"{key}: {value}\n")
        logging.info(f"✅ Relatório salvo em: {path}")
