#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Recorded layer applications swept in reverse to chain analytic backwards."""
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from field import ComplexTensor
from holo_errors import DimensionError

# grad_out (real, imag) -> one (real, imag) pair or None per input
BackwardFn = Callable[[np.ndarray, np.ndarray], Sequence[Optional[Tuple[np.ndarray, np.ndarray]]]]


@dataclass
class TapeRecord:
    op: str
    backward: BackwardFn
    inputs: Tuple[ComplexTensor, ...]
    output: ComplexTensor


class Tape:
    """Op log for one forward pass.

    Parameter gradients are collected in ``param_grads`` and only summed into
    the store by :meth:`flush`, so several tapes can run concurrently and be
    reduced in a fixed order.
    """

    def __init__(self):
        self.records: List[TapeRecord] = []
        self.param_grads: Dict[str, List[np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, backward: BackwardFn, inputs: Sequence[ComplexTensor],
               output: ComplexTensor):
        self.records.append(TapeRecord(op, backward, tuple(inputs), output))

    def add_param_grad(self, name: str, grad_real: np.ndarray, grad_imag: np.ndarray):
        if name in self.param_grads:
            self.param_grads[name][0] += grad_real
            self.param_grads[name][1] += grad_imag
        else:
            self.param_grads[name] = [np.array(grad_real, copy=True), np.array(grad_imag, copy=True)]

    def backward(self, output: ComplexTensor, grad: ComplexTensor):
        """Seed ``output`` with ``grad`` and sweep the records in reverse."""
        if grad.shape != output.shape:
            raise DimensionError(f"seed gradient {grad.shape} != output {output.shape}")
        output.grad = None
        output.accumulate_grad(grad.real, grad.imag)
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            input_grads = rec.backward(g.real, g.imag)
            for tensor, pair in zip(rec.inputs, input_grads):
                if pair is not None:
                    tensor.accumulate_grad(pair[0], pair[1])

    def flush(self, store):
        """Add collected parameter gradients into a ParamStore."""
        for name in store.names():
            if name in self.param_grads and store[name].trainable:
                store[name].add_grad(*self.param_grads[name])
        self.param_grads.clear()

    def clear(self):
        self.records.clear()
        self.param_grads.clear()
