import numpy as np
import pytest

from tabrep.table import Table, table_from_rows
from tabrep.tensor import Rng, set_default_dtype


@pytest.fixture(autouse=True)
def _float32_default():
    """Keep the global dtype at the production default between tests."""
    set_default_dtype(np.float32)
    yield
    set_default_dtype(np.float32)


def comparison_table(n_rows: int, seed: int, noise_column: bool = True) -> Table:
    """Synthetic task family: label says whether x1 beats x2.

    Single-digit numeric columns keep every value one token; `hint`
    mirrors the label so the relation is learnable quickly at tiny scale.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_rows):
        x1 = int(rng.integers(0, 10))
        x2 = int(rng.integers(0, 10))
        while x2 == x1:
            x2 = int(rng.integers(0, 10))
        hint = "hi" if x1 > x2 else "lo"
        label = "yes" if x1 > x2 else "no"
        row = [str(x1), str(x2), hint, label]
        if noise_column:
            row.insert(2, ["red", "blue", "green"][int(rng.integers(0, 3))])
        rows.append(row)
    names = ["x1", "x2", "tag", "hint", "label"] if noise_column else ["x1", "x2", "hint", "label"]
    return table_from_rows(names, rows)


def random_table(rng: np.random.Generator, n_cols: int | None = None, n_rows: int = 3) -> Table:
    """Random mixed-dtype table for invariance sweeps."""
    words = ["alpha", "beta", "gamma", "delta", "omega", "kappa", "sigma", "theta"]
    n_cols = n_cols or int(rng.integers(2, 11))
    names = [f"col {i} {words[int(rng.integers(0, len(words)))]}" for i in range(n_cols)]
    kinds = [int(rng.integers(0, 3)) for _ in range(n_cols)]
    rows = []
    for _ in range(n_rows):
        row = []
        for kind in kinds:
            if kind == 0:
                row.append(str(round(float(rng.uniform(-100, 100)), 2)))
            elif kind == 1:
                row.append(words[int(rng.integers(0, len(words)))])
            else:
                row.append(" ".join(words[int(rng.integers(0, len(words)))] for _ in range(2)))
        rows.append(row)
    return table_from_rows(names, rows)
