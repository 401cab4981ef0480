# splits.py
# Leave-one-site-out folds and the stratified folds of the nested threshold search

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from sklearn.model_selection import StratifiedKFold, train_test_split

from errors import DataError
from synthgen import Subject

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Fold:
    index: int
    test_site: int
    train: Tuple[str, ...]
    val: Tuple[str, ...]
    test: Tuple[str, ...]

    def roles(self) -> dict:
        return {"train": self.train, "val": self.val, "test": self.test}


def fold_seed(seed: int, *stream: int) -> int:
    """Independent 31-bit seed for the RNG stream (seed, *stream)"""
    return int(np.random.default_rng([seed, *stream]).integers(2 ** 31 - 1))


def labels_of(subjects: Sequence[Subject]) -> np.ndarray:
    return np.array([int(s.is_patient) for s in subjects])


def loso_split(subjects: Sequence[Subject], seed: int = 42, val_fraction: float = 0.1) -> List[Fold]:
    sites = sorted({s.site_id for s in subjects})
    if len(sites) < 2:
        raise DataError(f"leave-one-site-out needs at least two sites, cohort has {len(sites)}")
    folds = []
    for index, site in enumerate(sites):
        rest = [s for s in subjects if s.site_id != site]
        test = tuple(s.subject_id for s in subjects if s.site_id == site)
        try:
            train, val = train_test_split(
                [s.subject_id for s in rest], test_size=val_fraction, stratify=labels_of(rest),
                random_state=fold_seed(seed, index),
            )
        except ValueError as e:
            raise DataError(f"fold {index} (site {site}): cannot stratify {len(rest)} subjects: {e}") from e
        folds.append(Fold(index=index, test_site=site, train=tuple(sorted(train)), val=tuple(sorted(val)), test=test))
        logger.info(f"Fold {index}: test site {site} ({len(test)}), train {len(train)}, val {len(val)}")
    return folds


def stratified_folds(subjects: Sequence[Subject], n_splits: int, seed: int) -> List[Tuple[List[int], List[int]]]:
    """(train positions, held-out positions) per split, stratified by label"""
    labels = labels_of(subjects)
    if np.bincount(labels, minlength=2).min() < n_splits:
        raise DataError(f"{n_splits}-fold stratification needs {n_splits} subjects per class, "
                        f"have {np.bincount(labels, minlength=2).tolist()}")
    splitter = StratifiedKFold(n_splits=n_splits, shuffle=True, random_state=seed)
    return [(list(tr), list(te)) for tr, te in splitter.split(np.zeros(len(labels)), labels)]
