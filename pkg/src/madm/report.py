"""Check reports: one JSON object per line, then a summary line."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

__all__ = ["CheckResult", "Report", "write_report", "read_report"]

FIELDS = ("check", "params", "residual", "bound", "pass")


def _plain(v):
    """JSON-friendly copy of a parameter value."""
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else int(v)
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if hasattr(v, "item"):
        return v.item()
    return v


@dataclass
class CheckResult:
    check: str
    params: dict
    residual: float
    bound: float

    @property
    def passed(self) -> bool:
        # NaN never passes
        return bool(self.residual <= self.bound)

    def record(self) -> dict:
        res = float(self.residual)
        return {
            "check": self.check,
            "params": _plain(self.params),
            "residual": res if math.isfinite(res) else str(res),
            "bound": float(self.bound),
            "pass": self.passed,
        }


@dataclass
class Report:
    results: list = field(default_factory=list)

    def add(self, check: str, params: dict, residual, bound) -> CheckResult:
        r = CheckResult(check, dict(params), float(residual), float(bound))
        self.results.append(r)
        return r

    def extend(self, other: "Report") -> None:
        self.results.extend(other.results)

    @property
    def n_pass(self) -> int:
        return sum(r.passed for r in self.results)

    @property
    def n_fail(self) -> int:
        return len(self.results) - self.n_pass

    @property
    def all_passed(self) -> bool:
        return self.n_fail == 0

    def summary(self) -> dict:
        return {"summary": {"total": len(self.results), "passed": self.n_pass, "failed": self.n_fail}}


def write_report(report: Report, path) -> None:
    """Write JSON lines with keys in the order check, params, residual, bound, pass.

    Raises ``OSError`` if the file cannot be written.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for r in report.results:
            fh.write(json.dumps(r.record(), ensure_ascii=False) + "\n")
        fh.write(json.dumps(report.summary()) + "\n")


def read_report(path) -> tuple[list[dict], dict]:
    """Inverse of :func:`write_report`: (check records, summary)."""
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(x) for x in fh if x.strip()]
    if not lines or "summary" not in lines[-1]:
        raise ValueError("report has no summary line")
    return lines[:-1], lines[-1]["summary"]
