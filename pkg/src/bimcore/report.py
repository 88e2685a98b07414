"""Pass/fail check reports shared by format and package verification."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

PASS = "pass"
FAIL = "fail"
SKIP = "skip"


@dataclass(frozen=True)
class Check:
    name: str
    status: str
    detail: str = ""
    offset: int | None = None
    paths: tuple[str, ...] = ()

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status,
            "detail": self.detail,
            "offset": self.offset,
            "paths": list(self.paths),
        }


@dataclass(frozen=True)
class VerificationReport:
    checks: tuple[Check, ...]
    context: dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def first_failure(self) -> Check | None:
        return next((c for c in self.checks if c.status == FAIL), None)

    @property
    def first_failure_offset(self) -> int | None:
        failed = self.first_failure
        return failed.offset if failed else None

    def check(self, name: str) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "ok": self.ok,
            "first_failure_offset": self.first_failure_offset,
            "checks": [c.to_dict() for c in self.checks],
            "context": self.context,
        }
