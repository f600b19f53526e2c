"""Small shared helpers."""

import math

# Predictions are kept strictly inside (0, 1) so the cross-entropy loss and
# its gradient stay finite even for saturated outputs.
SIGMOID_EPS = 1e-12


def round_half_up(x: float) -> int:
    """Round a non-negative value with .5 going up (not banker's rounding)."""
    return math.floor(x + 0.5)


def sigmoid(x: float) -> float:
    """Numerically stable logistic function, clamped away from exact 0/1."""
    if math.isnan(x):
        return x
    if x >= 0:
        y = 1.0 / (1.0 + math.exp(-x))
    else:
        e = math.exp(x)
        y = e / (1.0 + e)
    return min(max(y, SIGMOID_EPS), 1.0 - SIGMOID_EPS)


def parse_int_list(text: str) -> list[int]:
    """Parse a comma-separated list of integers, e.g. "0,1,2"."""
    return [int(part) for part in text.split(",") if part.strip() != ""]
