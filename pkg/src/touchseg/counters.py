"""Process-wide instrumentation counters.

Refinement by imprinting must be forward-only; these counters let tests and
the experiment harness assert that no backward pass ran on a given code path.
"""

from __future__ import annotations

_counts: dict[str, int] = {"forward_passes": 0, "backward_passes": 0, "gradient_steps": 0}


def incr(name: str, by: int = 1) -> None:
    _counts[name] = _counts.get(name, 0) + by


def get(name: str) -> int:
    return _counts.get(name, 0)


def snapshot() -> dict[str, int]:
    return dict(_counts)


def delta(before: dict[str, int]) -> dict[str, int]:
    """Counter increments since `before` (a snapshot())."""
    return {k: _counts.get(k, 0) - before.get(k, 0) for k in set(_counts) | set(before)}


def reset() -> None:
    for k in list(_counts):
        _counts[k] = 0
