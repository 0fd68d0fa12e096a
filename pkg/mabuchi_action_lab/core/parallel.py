"""Batched thread-pool execution with deterministic result order."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor

from .settings import settings

logger = logging.getLogger(__name__)


def _batches[T](items: Sequence[T], batch_size: int) -> list[Sequence[T]]:
    return [items[i : i + batch_size] for i in range(0, len(items), batch_size)]


def map_in_batches[T, R](
    fn: Callable[[T], R],
    items: Sequence[T],
    *,
    label: str = "batch",
    batch_size: int | None = None,
    max_workers: int | None = None,
) -> list[R]:
    """Apply ``fn`` to every item, one parallel batch after another.

    Args:
        fn: Worker function; must be thread-safe.
        items: Work items, results come back in the same order.
        label: Prefix used in log messages.
        batch_size: Items submitted together (defaults to ``settings.batch_size``).
        max_workers: Thread cap (defaults to ``settings.threads``, 0 meaning auto).

    Returns:
        List of results aligned with ``items``.
    """
    size = batch_size or settings.batch_size
    workers = settings.threads if max_workers is None else max_workers
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: list[R] = []
    with ThreadPoolExecutor(max_workers=workers or None) as pool:
        for batch_idx, batch in enumerate(_batches(items, size)):
            results.extend(pool.map(fn, batch))
            logger.debug(
                f"[{label}] finished batch {batch_idx} ({len(results)}/{len(items)})"
            )
    return results
