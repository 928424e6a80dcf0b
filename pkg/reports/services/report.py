"""
Отчёт запуска: эхо входов, проверки инвариантов и метрики.

Запись детерминирована: ключи отсортированы, float: кратчайший repr,
без времени и идентификаторов запуска.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from core.exceptions import FileError
from ellikorn import config

logger = logging.getLogger(__name__)


def clean(value):
    """Привести значение к JSON: numpy → python, inf/nan → строки, кортежи → списки."""
    if isinstance(value, dict):
        return {str(key): clean(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(item) for item in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if value is None or isinstance(value, str):
        return value
    return str(value)


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    tolerance: object = None
    provenance: str = ""

    def to_json(self) -> dict:
        return {"name": self.name, "pass": bool(self.passed), "value": clean(self.value),
                "tolerance": clean(self.tolerance), "provenance": self.provenance}


@dataclass
class Report:
    subcommand: str
    inputs: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    undecided: bool = False
    error: str = None

    def check(self, name: str, passed: bool, value=None, tolerance=None, provenance: str = "") -> Check:
        item = Check(name=name, passed=bool(passed), value=value, tolerance=tolerance, provenance=provenance)
        self.checks.append(item)
        if not item.passed:
            logger.info(f"⚠️ Проверка {name} не пройдена: {clean(value)} (допуск {clean(tolerance)})")
        return item

    @property
    def passed(self) -> bool:
        return self.error is None and all(item.passed for item in self.checks)

    @property
    def exit_code(self) -> int:
        if not self.passed:
            return 1
        return 2 if self.undecided else 0

    def to_json(self) -> dict:
        data = {
            "tool_version": config.TOOL_VERSION,
            "subcommand": self.subcommand,
            "inputs": clean(self.inputs),
            "checks": [item.to_json() for item in self.checks],
            "metrics": clean(self.metrics),
            "pass": self.passed,
        }
        if self.error is not None:
            data["error"] = self.error
        return data

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.dumps(), encoding="utf-8")
        except OSError as e:
            raise FileError(f"Не удалось записать отчёт {path}: {e}")
        logger.info(f"✅ Отчёт записан: {path}")
        return path

    def write_csv(self, path) -> Path:
        """Строки rows (таблица для графиков) в CSV; столбцы: объединение ключей в порядке появления."""
        path = Path(path)
        columns = []
        for row in self.rows:
            columns.extend(key for key in row if key not in columns)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("w", newline="", encoding="utf-8") as handle:
                writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
                writer.writeheader()
                for row in self.rows:
                    writer.writerow({key: _cell(row.get(key)) for key in columns})
        except OSError as e:
            raise FileError(f"Не удалось записать CSV {path}: {e}")
        logger.info(f"✅ CSV записан: {path} ({len(self.rows)} строк)")
        return path


def _cell(value):
    value = clean(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return "" if value is None else value
