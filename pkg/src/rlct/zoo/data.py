"""Embedded datasets."""

import numpy as np

from rlct.model_core import Dataset

#: individuals captured t times (t = 1..21) among April 1994 successful
#: breeders at the Vorso colony
CORMORANT_FREQUENCIES = (13, 14, 10, 8, 11, 7, 7, 12, 7, 9, 6, 10, 7, 2, 0, 3, 1, 0, 0, 0, 1)

#: number of visits
CORMORANT_TRIALS = 30


def cormorant_fixture() -> Dataset:
    """One observation per individual: the number of times it was captured."""
    captures = np.repeat(np.arange(1, len(CORMORANT_FREQUENCIES) + 1), CORMORANT_FREQUENCIES)
    return Dataset(captures.astype(float))


def counts_dataset(counts) -> Dataset:
    """Dataset from a sequence of per-individual integer counts."""
    values = np.asarray(list(counts), dtype=float)
    if values.size == 0:
        raise ValueError("counts file is empty")
    if np.any(values != np.rint(values)) or np.any(values < 0):
        raise ValueError("counts must be non-negative integers")
    return Dataset(values)
