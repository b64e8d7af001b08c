import numpy as np
import pytest

from specsamp.models import TabularModel


class ScriptedSource:
    """Stand-in for RandomSource that replays fixed uniforms in order."""

    def __init__(self, values):
        self.values = list(values)
        self.consumed = 0

    def uniform(self) -> float:
        if self.consumed >= len(self.values):
            raise AssertionError("scripted uniforms exhausted")
        u = self.values[self.consumed]
        self.consumed += 1
        return u

    @property
    def remaining(self) -> int:
        return len(self.values) - self.consumed


@pytest.fixture
def scripted():
    return ScriptedSource


def context_free(probs) -> TabularModel:
    return TabularModel(len(probs), 0, {}, probs)


@pytest.fixture
def q73():
    return context_free([0.7, 0.3])


@pytest.fixture
def p55():
    return context_free([0.5, 0.5])


def reference_truncation(x: np.ndarray, kind: str, param) -> np.ndarray:
    """Slow per-row truncation via a stable argsort, used as an oracle."""
    out = np.zeros_like(x)
    for i, row in enumerate(x):
        order = np.argsort(-row, kind="stable")
        if kind == "top_k":
            keep = order[:param]
        else:
            running, keep = 0.0, []
            for j in order:
                if running >= param - 1e-12:
                    break
                keep.append(j)
                running += row[j]
        out[i, keep] = row[keep]
        out[i] /= out[i].sum()
    return out
