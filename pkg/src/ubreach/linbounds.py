"""Backward linear-relaxation bounds over a feed-forward computation graph.

Blocks are vectors computed in topological order from a box-bounded input:
affine maps of earlier blocks, elementwise ReLU, or elementwise relations
``lower(z) <= y <= upper(z)`` supplied with a linear relaxation. The bound
of a block is found by substituting relaxations backwards down to the input
box, which keeps the correlations that plain interval arithmetic drops.
Every bound is intersected with the interval-arithmetic bound, so the result
is never looser than that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# (lo, hi) of the input -> (a_lo, b_lo, a_hi, b_hi): a_lo*z + b_lo <= y <= a_hi*z + b_hi
Relaxation = Callable[[np.ndarray, np.ndarray], tuple]
# (lo, hi) of the input -> (y_lo, y_hi)
Image = Callable[[np.ndarray, np.ndarray], tuple]


@dataclass
class Block:
    kind: str  # input | affine | relu | relation
    size: int
    parents: list = field(default_factory=list)  # affine: [(block, matrix)]; elementwise: [(block, None)]
    const: np.ndarray | None = None
    relax: Relaxation | None = None
    image: Image | None = None


def relu_relaxation(lo: np.ndarray, hi: np.ndarray):
    a_lo = np.zeros_like(lo)
    a_hi = np.zeros_like(lo)
    b_hi = np.zeros_like(lo)
    on = lo >= 0.0
    a_lo[on] = 1.0
    a_hi[on] = 1.0
    mixed = (lo < 0.0) & (hi > 0.0)
    s = hi[mixed] / (hi[mixed] - lo[mixed])
    a_hi[mixed] = s
    b_hi[mixed] = -s * lo[mixed]
    # lower slope chosen to minimize the relaxation area
    a_lo[mixed] = (hi[mixed] >= -lo[mixed]).astype(float)
    return a_lo, np.zeros_like(lo), a_hi, b_hi


class Graph:
    def __init__(self, lo, hi):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        self.blocks: list[Block] = [Block("input", lo.size)]
        self.lo: list[np.ndarray] = [lo.copy()]
        self.hi: list[np.ndarray] = [hi.copy()]
        self._relax: list[tuple | None] = [None]

    def affine(self, parts, const, symbolic: bool = True) -> int:
        """Add ``sum_p M_p z_p + const``; ``parts`` is a list of (block, M)."""
        const = np.asarray(const, dtype=float)
        parts = [(p, np.atleast_2d(np.asarray(M, dtype=float))) for p, M in parts]
        lo = const.copy()
        hi = const.copy()
        for p, M in parts:
            Mp, Mn = np.maximum(M, 0.0), np.minimum(M, 0.0)
            lo = lo + Mp @ self.lo[p] + Mn @ self.hi[p]
            hi = hi + Mp @ self.hi[p] + Mn @ self.lo[p]
        self.blocks.append(Block("affine", const.size, parts, const))
        self._relax.append(None)
        b = len(self.blocks) - 1
        self.lo.append(lo)
        self.hi.append(hi)
        if symbolic:
            slo, shi = self.symbolic_bounds(b)
            self.lo[b] = np.maximum(lo, slo)
            self.hi[b] = np.minimum(hi, shi)
            # rounding can cross the two bounds on (near-)fixed quantities
            cross = self.lo[b] > self.hi[b]
            if np.any(cross):
                mid = 0.5 * (self.lo[b][cross] + self.hi[b][cross])
                self.lo[b][cross] = mid
                self.hi[b][cross] = mid
        return b

    def relu(self, parent: int) -> int:
        lo, hi = self.lo[parent], self.hi[parent]
        self.blocks.append(Block("relu", lo.size, [(parent, None)]))
        self._relax.append(relu_relaxation(lo, hi))
        self.lo.append(np.maximum(lo, 0.0))
        self.hi.append(np.maximum(hi, 0.0))
        return len(self.blocks) - 1

    def relation(self, parent: int, relax: Relaxation, image: Image) -> int:
        lo, hi = self.lo[parent], self.hi[parent]
        self.blocks.append(Block("relation", lo.size, [(parent, None)], relax=relax, image=image))
        self._relax.append(relax(lo, hi))
        ylo, yhi = image(lo, hi)
        self.lo.append(np.asarray(ylo, dtype=float))
        self.hi.append(np.asarray(yhi, dtype=float))
        return len(self.blocks) - 1

    def symbolic_bounds(self, target: int) -> tuple[np.ndarray, np.ndarray]:
        size = self.blocks[target].size
        lam = np.vstack([np.eye(size), -np.eye(size)])
        low = self.lower_bound(target, lam)
        return low[:size], -low[size:]

    def lower_bound(self, target: int, lam: np.ndarray) -> np.ndarray:
        """Lower bounds of each row of ``lam @ z_target``."""
        coef: dict[int, np.ndarray] = {target: lam}
        const = np.zeros(lam.shape[0])
        for b in range(target, -1, -1):
            L = coef.pop(b, None)
            if L is None:
                continue
            blk = self.blocks[b]
            if blk.kind == "input":
                return const + np.maximum(L, 0.0) @ self.lo[0] + np.minimum(L, 0.0) @ self.hi[0]
            if blk.kind == "affine":
                const = const + L @ blk.const
                for p, M in blk.parents:
                    contrib = L @ M
                    coef[p] = coef[p] + contrib if p in coef else contrib
                continue
            a_lo, b_lo, a_hi, b_hi = self._relax[b]
            Lp, Ln = np.maximum(L, 0.0), np.minimum(L, 0.0)
            const = const + Lp @ b_lo + Ln @ b_hi
            contrib = Lp * a_lo + Ln * a_hi
            p = blk.parents[0][0]
            coef[p] = coef[p] + contrib if p in coef else contrib
        raise AssertionError("graph has no input block")
