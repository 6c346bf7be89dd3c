"""Structured pass/fail records shared by the certification routines."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class CheckResult:
    """One numeric check: a residual, the tolerance it was held to, and the verdict.

    Advisory checks are reported but do not gate the overall outcome; they are
    used when the hypotheses behind a guarantee could not be confirmed.
    """

    name: str
    value: float
    tolerance: float
    passed: bool
    advisory: bool = False
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "value": float(self.value),
            "tolerance": float(self.tolerance),
            "pass": bool(self.passed),
        }
        if self.advisory:
            out["advisory"] = True
        if self.detail:
            out["detail"] = self.detail
        return out


@dataclass
class Report:
    """A named bundle of checks with an aggregate verdict."""

    title: str
    checks: list[CheckResult] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, name: str, value: float, tolerance: float,
            detail: dict | None = None, advisory: bool = False) -> CheckResult:
        result = CheckResult(
            name=name,
            value=float(value),
            tolerance=float(tolerance),
            passed=bool(value <= tolerance),
            advisory=advisory,
            detail=detail or {},
        )
        self.checks.append(result)
        return result

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.advisory)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed and not c.advisory]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        out = {
            "title": self.title,
            "pass": self.passed,
            "checks": [c.to_dict() for c in self.checks],
        }
        if self.notes:
            out["notes"] = list(self.notes)
        return out
