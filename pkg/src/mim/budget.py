"""Memory budgeting for dense tensor work.

Dense order-k tensors over R^d take d^k doubles; the budget refuses
allocations that would not fit instead of letting numpy OOM. The cap is
2 GiB by default and can be overridden with the MIM_MEM_CAP_BYTES
environment variable.
"""

from __future__ import annotations

import os

DEFAULT_MEM_CAP_BYTES = 2**31


class MemoryBudgetError(MemoryError):
    """Requested dense allocation exceeds the configured cap."""


def mem_cap_bytes() -> int:
    raw = os.environ.get("MIM_MEM_CAP_BYTES")
    if raw is None:
        return DEFAULT_MEM_CAP_BYTES
    cap = int(raw)
    if cap <= 0:
        raise ValueError(f"MIM_MEM_CAP_BYTES must be positive, got {cap}")
    return cap


def check_budget(nbytes: int, what: str) -> None:
    """Raise MemoryBudgetError if an allocation of `nbytes` exceeds the cap."""
    cap = mem_cap_bytes()
    if nbytes > cap:
        raise MemoryBudgetError(
            f"{what} needs {nbytes} bytes but the memory cap is {cap} bytes "
            f"(override with MIM_MEM_CAP_BYTES)"
        )


def max_threads() -> int:
    """Worker-parallelism cap, from MIM_THREADS (default 1: serial)."""
    raw = os.environ.get("MIM_THREADS")
    if raw is None:
        return 1
    return max(1, int(raw))
