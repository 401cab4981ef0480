# tensor.py
# Dense f64 tensor with a define-by-run gradient tape

import logging
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from errors import NonFiniteError, TapeError

logger = logging.getLogger(__name__)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

# Tape, grad mode and the relu-kink monitor are confined to the calling thread
_local = threading.local()


@dataclass
class Node:
    """One recorded op: inputs, output and the rule mapping d(out) to d(inputs)"""
    op: str
    inputs: Tuple["Tensor", ...]
    output: "Tensor"
    backward: BackwardFn


class Tape:
    """Ordered record of ops; inputs are always recorded before their consumers"""

    def __init__(self):
        self.nodes: List[Node] = []

    def record(self, node: Node):
        self.nodes.append(node)

    def clear(self):
        self.nodes.clear()

    def __len__(self) -> int:
        return len(self.nodes)


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = Tape()
        _local.tape = tape
    return tape


def reset_tape():
    current_tape().clear()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Forward passes inside this block record nothing"""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


# ========================== Relu kink monitor (used by grad_check) ==============================

@contextmanager
def kink_monitor() -> Iterator[List[bytes]]:
    """Collects the sign pattern of every relu input evaluated inside the block"""
    patterns: List[bytes] = []
    previous = getattr(_local, "kinks", None)
    _local.kinks = patterns
    try:
        yield patterns
    finally:
        _local.kinks = previous


def note_kink_pattern(x: np.ndarray):
    patterns = getattr(_local, "kinks", None)
    if patterns is not None:
        patterns.append(np.packbits(x > 0).tobytes())


# ========================== Tensor ==============================

class Tensor:
    """Row-major f64 array that optionally participates in the tape"""

    # ndarray op Tensor dispatches to the Tensor's reflected operator
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """No-copy constructor for op results"""
        t = cls.__new__(cls)
        t.data = np.asarray(arr, dtype=np.float64)
        t.requires_grad = requires_grad
        t.grad = None
        t.name = None
        return t

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor.wrap(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor.wrap(np.asarray(x, dtype=np.float64))


def apply_op(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """
    Wraps a forward result, enforces finiteness and records the node
    when any input participates in the tape.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: produced non-finite values (shape {np.shape(data)})")
    needs_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=needs_grad)
    if needs_grad:
        current_tape().record(Node(op=op, inputs=tuple(inputs), output=out, backward=backward))
    return out


# ========================== Backpropagation ==============================

def backward(loss: Tensor) -> Dict[int, np.ndarray]:
    """
    Reverse sweep over the thread's tape.
    Every leaf that requires grad and appears on the tape gets .grad = d(loss)/d(leaf);
    the tape is cleared afterwards.
    """
    if loss.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = current_tape()
    if not tape.nodes:
        raise TapeError("backward: tape is empty (was the loss built under no_grad?)")

    produced = {id(node.output) for node in tape.nodes}
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves[id(t)] = t

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            grads[key] = grads[key] + gi if key in grads else gi

    for key, leaf in leaves.items():
        leaf.grad = np.array(grads.get(key, np.zeros_like(leaf.data)))
    tape.clear()
    return {key: leaf.grad for key, leaf in leaves.items()}


def dump_csv(t: Tensor, path) -> None:
    """Debug dump: 2D view (leading axes flattened) as CSV"""
    arr = t.data.reshape(-1, t.shape[-1]) if t.ndim > 1 else t.data.reshape(1, -1)
    np.savetxt(path, arr, delimiter=",", fmt="%.17g")
    logger.info(f"Tensor {t.shape} dumped to {path}")
