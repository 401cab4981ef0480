# gradcheck.py
# Central finite-difference verification of tape gradients

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional

import numpy as np

from errors import NonFiniteError
from numcore.tensor import Tensor, backward, kink_monitor, no_grad, reset_tape

logger = logging.getLogger(__name__)


@dataclass
class LeafReport:
    name: str
    max_rel_error: float
    checked: int
    exempt: int  # entries whose perturbation flips a relu input sign


@dataclass
class GradCheckReport:
    tol: float
    leaves: List[LeafReport] = field(default_factory=list)

    @property
    def max_error(self) -> float:
        return max((leaf.max_rel_error for leaf in self.leaves), default=0.0)

    @property
    def passed(self) -> bool:
        return all(leaf.max_rel_error < self.tol for leaf in self.leaves)

    def summary(self) -> Dict[str, float]:
        return {leaf.name: leaf.max_rel_error for leaf in self.leaves}


def _scalar(loss: Tensor) -> float:
    value = float(np.asarray(loss.data).reshape(-1)[0])
    if loss.size != 1 or not np.isfinite(value):
        raise NonFiniteError(f"grad_check: loss must be a finite scalar, got shape {loss.shape} value {value}")
    return value


def grad_check(graph_builder: Callable[[], Tensor], leaves: Mapping[str, Tensor], tol: float = 1e-4,
               step: float = 1e-5, max_entries: Optional[int] = None, seed: int = 0,
               abs_floor: float = 1e-3) -> GradCheckReport:
    """
    graph_builder() must rebuild the loss from the current values of `leaves`.
    Relative error per entry: |a - n| / max(|a|, |n|, abs_floor).
    max_entries samples a fixed random subset of each leaf (seeded).
    """
    saved_flags = {name: t.requires_grad for name, t in leaves.items()}
    for t in leaves.values():
        t.requires_grad = True
        t.grad = None
    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    try:
        # 1. Analytic pass
        reset_tape()
        with kink_monitor() as base_pattern:
            loss = graph_builder()
        _scalar(loss)
        backward(loss)
        analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                    for name, t in leaves.items()}

        # 2. Numeric pass, entry by entry
        for name, t in leaves.items():
            indices = np.arange(t.size)
            if max_entries is not None and t.size > max_entries:
                indices = np.sort(rng.choice(t.size, size=max_entries, replace=False))
            worst, exempt = 0.0, 0
            flat_grad = analytic[name].reshape(-1)
            for idx in indices:
                original = t.data.flat[idx]
                values = []
                kinked = False
                for sign in (1.0, -1.0):
                    t.data.flat[idx] = original + sign * step
                    with no_grad(), kink_monitor() as pattern:
                        values.append(_scalar(graph_builder()))
                    kinked = kinked or pattern != base_pattern
                t.data.flat[idx] = original
                if kinked:
                    exempt += 1
                    continue
                numeric = (values[0] - values[1]) / (2.0 * step)
                a = flat_grad[idx]
                err = abs(a - numeric) / max(abs(a), abs(numeric), abs_floor)
                worst = max(worst, err)
            report.leaves.append(LeafReport(name=name, max_rel_error=worst,
                                            checked=len(indices) - exempt, exempt=exempt))
    finally:
        reset_tape()
        for name, t in leaves.items():
            t.requires_grad = saved_flags[name]

    logger.info(f"grad_check: {len(report.leaves)} leaves, max rel error {report.max_error:.3e}, "
                f"{'passed' if report.passed else 'FAILED'}")
    return report
