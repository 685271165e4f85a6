from typing import Any, Dict, Iterable, List, Optional
from pathlib import Path
import json
import logging
import math

import numpy as np
import pandas as pd

# Conditional imports for different execution contexts
try:
    from .detgraph import FactorGraph
    from .noise_model import ErrorModel
    from .schema import ExperimentConfig, dump_config
    from .simulator import DetectionRecord, write_records
except ImportError:
    from detgraph import FactorGraph
    from noise_model import ErrorModel
    from schema import ExperimentConfig, dump_config
    from simulator import DetectionRecord, write_records

logger = logging.getLogger(__name__)

SIGNIFICANT_DIGITS = 9
FLOAT_FORMAT = f"%.{SIGNIFICANT_DIGITS}g"


def round_significant(value: Any) -> Any:
    """Round every float in a nested structure to 9 significant digits"""
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.{SIGNIFICANT_DIGITS}g}")
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [round_significant(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {str(k): round_significant(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [round_significant(v) for v in value]
    return value


class ResultStore:
    """
    Owns every file an experiment writes under one output directory
    """

    TRACE = "trace.jsonl"
    SUMMARY = "summary.json"
    CONFIG = "config.json"
    CHECKPOINT = "checkpoint.npz"

    def __init__(self, out_dir):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_config(self, cfg: ExperimentConfig) -> Path:
        target = self.path(self.CONFIG)
        target.write_text(dump_config(cfg), encoding="utf-8")
        return target

    def reset_trace(self) -> None:
        self.path(self.TRACE).write_text("", encoding="utf-8")

    def append_trace(self, record: Dict[str, Any]) -> None:
        with open(self.path(self.TRACE), "a", encoding="utf-8") as f:
            f.write(json.dumps(round_significant(record)) + "\n")

    def rewrite_trace(self, records: Iterable[Dict[str, Any]]) -> None:
        self.reset_trace()
        for record in records:
            self.append_trace(record)

    @staticmethod
    def read_trace(path) -> List[Dict[str, Any]]:
        with open(path, encoding="utf-8") as f:
            return [json.loads(line) for line in f if line.strip()]

    def _write_csv(self, name: str, rows: List[Dict[str, Any]], columns: List[str]) -> Path:
        target = self.path(name)
        pd.DataFrame(rows, columns=columns).to_csv(target, index=False, float_format=FLOAT_FORMAT)
        logger.info(f"Wrote {len(rows)} rows to {target}")
        return target

    def write_phase_csv(self, rows: List[Dict[str, Any]]) -> Path:
        return self._write_csv("phase.csv", rows, ["f", "lambda_H", "r_stochastic", "r_learned", "error"])

    def write_scaling_csv(self, rows: List[Dict[str, Any]]) -> Path:
        return self._write_csv("scaling.csv", rows, ["d", "P", "epoch", "eps_L", "lambda"])

    def write_response_csv(self, rows: List[Dict[str, Any]]) -> Path:
        return self._write_csv("response.csv", rows, ["t0", "tau", "amplitude", "baseline", "flagged"])

    def write_psd_csv(self, rows: List[Dict[str, Any]]) -> Path:
        return self._write_csv("psd.csv", rows, ["freq", "psd_fixed", "psd_steered", "filter_db"])

    def write_summary(self, summary: Dict[str, Any]) -> Path:
        target = self.path(self.SUMMARY)
        target.write_text(json.dumps(round_significant(summary), indent=2), encoding="utf-8")
        logger.info(f"Wrote summary to {target}")
        return target

    def save_checkpoint(self, state: Dict[str, np.ndarray]) -> Path:
        target = self.path(self.CHECKPOINT)
        tmp = target.with_name("checkpoint.tmp.npz")
        np.savez(tmp, **state)
        tmp.replace(target)
        logger.debug(f"Checkpoint written to {target}")
        return target

    def load_checkpoint(self) -> Optional[Dict[str, np.ndarray]]:
        target = self.path(self.CHECKPOINT)
        if not target.exists():
            return None
        with np.load(target, allow_pickle=False) as data:
            return {key: data[key] for key in data.files}

    def dump_model(self, model: ErrorModel) -> Path:
        target = self.path("model.json")
        target.write_text(json.dumps(round_significant(model.to_json())), encoding="utf-8")
        return target

    def dump_graph(self, graph: FactorGraph) -> Path:
        target = self.path("graph.json")
        target.write_text(json.dumps(round_significant(graph.to_json())), encoding="utf-8")
        return target

    def dump_records(self, name: str, rec: DetectionRecord) -> Path:
        return write_records(self.path(f"{name}.qsdr"), rec)
