"""Answer-correctness metrics."""

from __future__ import annotations

from typing import Callable

from .core import parse_number

RELATIVE_TOLERANCE = 0.05


def exact_match(prediction: str, gold: str) -> bool:
    return prediction.strip().casefold() == gold.strip().casefold()


def relaxed_match(prediction: str, gold: str) -> bool:
    """Numeric answers match within 5% of gold (exactly, when gold is zero);
    anything else falls back to normalized string equality."""
    p, g = parse_number(prediction), parse_number(gold)
    if p is not None and g is not None:
        if g == 0.0:
            return p == 0.0
        return abs(p - g) <= RELATIVE_TOLERANCE * abs(g)
    return exact_match(prediction, gold)


METRICS: dict[str, Callable[[str, str], bool]] = {
    "relaxed": relaxed_match,
    "exact": exact_match,
}


def get_metric(name: str) -> Callable[[str, str], bool]:
    try:
        return METRICS[name]
    except KeyError:
        raise ValueError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None
