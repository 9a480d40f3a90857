"""Guillotine partitions of the unit square and exact tree fitting.

A guillotine tree recursively splits an axis-aligned rectangle with cuts
parallel to the axes; leaves carry a constant mark.  Two dynamic programs
share the same skeleton:

- the empirical DP fits a <=K-leaf tree to (x, y) data by maximizing the
  Gaussian log-likelihood with known sigma, candidate cuts restricted to
  midpoints between sorted in-cell coordinates (the objective is piecewise
  constant in the cut between consecutive data coordinates, so midpoints
  lose nothing);
- the population DP approximates a piecewise-constant target function by a
  <=K-leaf tree in L2(area), candidate cuts taken from the target's own cut
  coordinates.

Both clip the optimal cell constant (mean of y, resp. cell average of the
target) to the mark interval [m_lo, m_hi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)

UNIT_BOX = (0.0, 1.0, 0.0, 1.0)  # (lo1, hi1, lo2, hi2)


@dataclass(frozen=True)
class Leaf:
    mark: float


@dataclass(frozen=True)
class Split:
    axis: int  # 1 or 2
    cut: float
    low: "Node"
    high: "Node"

    def __post_init__(self):
        if self.axis not in (1, 2):
            raise ValueError(f"split axis must be 1 or 2, got {self.axis}")
        if not 0.0 < self.cut < 1.0:
            raise ValueError(f"cut must lie in (0, 1), got {self.cut}")


Node = Union[Leaf, Split]


def tree_depth(node: Node) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.low), tree_depth(node.high))


def leaf_count(node: Node) -> int:
    if isinstance(node, Leaf):
        return 1
    return leaf_count(node.low) + leaf_count(node.high)


def iter_cells(node: Node, box=UNIT_BOX):
    """Yield (lo1, hi1, lo2, hi2, mark) for every leaf cell of the tree."""
    if isinstance(node, Leaf):
        yield (*box, node.mark)
        return
    lo1, hi1, lo2, hi2 = box
    if node.axis == 1:
        if not lo1 < node.cut < hi1:
            raise ValueError(f"cut {node.cut} outside cell extent [{lo1}, {hi1}] on axis 1")
        yield from iter_cells(node.low, (lo1, node.cut, lo2, hi2))
        yield from iter_cells(node.high, (node.cut, hi1, lo2, hi2))
    else:
        if not lo2 < node.cut < hi2:
            raise ValueError(f"cut {node.cut} outside cell extent [{lo2}, {hi2}] on axis 2")
        yield from iter_cells(node.low, (lo1, hi1, lo2, node.cut))
        yield from iter_cells(node.high, (lo1, hi1, node.cut, hi2))


def validate_tree(node: Node, box=UNIT_BOX) -> None:
    """Check that every cut lies strictly inside its cell (raises ValueError)."""
    for _ in iter_cells(node, box):
        pass


def eval_tree(node: Node, x: np.ndarray) -> np.ndarray:
    """Evaluate the marked partition at points x of shape (n, 2).

    Points exactly on a cut go to the high cell; the boundary is a null set
    under the uniform design.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return eval_tree(node, x[None, :])[0]
    out = np.empty(x.shape[0])
    _eval_into(node, x, np.arange(x.shape[0]), out)
    return out


def _eval_into(node, x, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.mark
        return
    coord = x[idx, node.axis - 1]
    low = coord < node.cut
    _eval_into(node.low, x, idx[low], out)
    _eval_into(node.high, x, idx[~low], out)


def split_first_shallow_leaf(node: Node, depth_cap: int, box=UNIT_BOX) -> Node:
    """Return a tree with one leaf split in two equal-mark halves.

    Splits the first (preorder) leaf whose depth allows another cut; the new
    cut bisects the cell's wider side.  Raises ValueError when every leaf
    already sits at the depth cap.
    """
    replaced = _split_first(node, depth_cap, box)
    if replaced is None:
        raise ValueError("no leaf below the depth cap; cannot embed by splitting")
    return replaced


def _split_first(node, depth_left, box):
    lo1, hi1, lo2, hi2 = box
    if isinstance(node, Leaf):
        if depth_left <= 0:
            return None
        if hi1 - lo1 >= hi2 - lo2:
            return Split(1, 0.5 * (lo1 + hi1), Leaf(node.mark), Leaf(node.mark))
        return Split(2, 0.5 * (lo2 + hi2), Leaf(node.mark), Leaf(node.mark))
    if node.axis == 1:
        low = _split_first(node.low, depth_left - 1, (lo1, node.cut, lo2, hi2))
        if low is not None:
            return Split(node.axis, node.cut, low, node.high)
        high = _split_first(node.high, depth_left - 1, (node.cut, hi1, lo2, hi2))
    else:
        low = _split_first(node.low, depth_left - 1, (lo1, hi1, lo2, node.cut))
        if low is not None:
            return Split(node.axis, node.cut, low, node.high)
        high = _split_first(node.high, depth_left - 1, (lo1, hi1, node.cut, hi2))
    if high is None:
        return None
    return Split(node.axis, node.cut, node.low, high)


def overlay_sq_integral(tree_a: Node, tree_b: Node) -> float:
    """Integral over the unit square of (f_a - f_b)^2, by rectangle overlay."""
    cells_a = list(iter_cells(tree_a))
    cells_b = list(iter_cells(tree_b))
    total = 0.0
    for a1, b1, a2, b2, ma in cells_a:
        for c1, d1, c2, d2, mb in cells_b:
            w = min(b1, d1) - max(a1, c1)
            h = min(b2, d2) - max(a2, c2)
            if w > 0.0 and h > 0.0:
                total += w * h * (ma - mb) ** 2
    return total


def random_tree(rng: np.random.Generator, k_leaves: int, depth_cap: int,
                m_lo: float, m_hi: float) -> Node:
    """Draw a random tree with exactly min(k_leaves, 2**depth_cap) leaves."""
    k_leaves = min(k_leaves, 2 ** depth_cap)

    def grow(box, depth, leaves):
        if leaves == 1 or depth == 0:
            return Leaf(float(rng.uniform(m_lo, m_hi)))
        lo1, hi1, lo2, hi2 = box
        axis = int(rng.integers(1, 3))
        if axis == 1:
            cut = float(rng.uniform(lo1 + 0.05 * (hi1 - lo1), hi1 - 0.05 * (hi1 - lo1)))
            boxes = ((lo1, cut, lo2, hi2), (cut, hi1, lo2, hi2))
        else:
            cut = float(rng.uniform(lo2 + 0.05 * (hi2 - lo2), hi2 - 0.05 * (hi2 - lo2)))
            boxes = ((lo1, hi1, lo2, cut), (lo1, hi1, cut, hi2))
        # children must be able to host their leaf budgets within depth - 1
        cap = 2 ** (depth - 1)
        k_lo = int(rng.integers(max(1, leaves - cap), min(cap, leaves - 1) + 1))
        low = grow(boxes[0], depth - 1, k_lo)
        high = grow(boxes[1], depth - 1, leaves - k_lo)
        return Split(axis, cut, low, high)

    return grow(UNIT_BOX, depth_cap, k_leaves)


# ---------------------------------------------------------------------------
# Empirical DP
# ---------------------------------------------------------------------------

def fit_tree_empirical(x: np.ndarray, y: np.ndarray, k_leaves: int, depth_cap: int,
                       sigma: float, m_lo: float, m_hi: float) -> tuple[Node, float]:
    """Best <=k_leaves guillotine tree for data (x, y); returns (tree, loglik).

    Exact over the candidate-cut class: cuts at midpoints between consecutive
    distinct in-cell coordinates per axis, memoized on the in-cell point set.
    Empty cells keep mark 0 and contribute no likelihood terms.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    const = -0.5 * LOG_2PI - math.log(sigma)
    inv2s2 = 0.5 / sigma ** 2
    memo: dict[tuple, tuple[float, Node]] = {}

    empty_mark = min(max(0.0, m_lo), m_hi)  # convention mark, kept inside the box

    def leaf_for(idx):
        if idx.size == 0:
            return 0.0, Leaf(empty_mark)
        s, ss = y[idx].sum(), float(y[idx] @ y[idx])
        m = min(max(s / idx.size, m_lo), m_hi)
        rss = ss - 2.0 * m * s + m * m * idx.size
        return idx.size * const - rss * inv2s2, Leaf(m)

    def best_two(idx):
        """Best of {single leaf, one cut with two leaf children}, vectorized
        over all candidate boundaries via prefix sums."""
        val, node = leaf_for(idx)
        for axis in (1, 2):
            coords = x[idx, axis - 1]
            order = np.argsort(coords, kind="stable")
            cs = coords[order]
            ys = y[idx][order]
            m_pts = cs.size
            if m_pts < 2:
                continue
            boundary = np.nonzero(cs[:-1] < cs[1:])[0]
            if boundary.size == 0:
                continue
            cy = np.cumsum(ys)
            cy2 = np.cumsum(ys * ys)
            nl = (boundary + 1).astype(float)
            nr = m_pts - nl
            syl, sy2l = cy[boundary], cy2[boundary]
            syr, sy2r = cy[-1] - syl, cy2[-1] - sy2l
            ml = np.clip(syl / nl, m_lo, m_hi)
            mr = np.clip(syr / nr, m_lo, m_hi)
            rss = (sy2l - 2.0 * ml * syl + ml * ml * nl
                   + sy2r - 2.0 * mr * syr + mr * mr * nr)
            vals = m_pts * const - rss * inv2s2
            j = int(np.argmax(vals))
            if vals[j] > val + 1e-12:
                val = float(vals[j])
                cut = 0.5 * (cs[boundary[j]] + cs[boundary[j] + 1])
                node = Split(axis, float(cut), Leaf(float(ml[j])), Leaf(float(mr[j])))
        return val, node

    def best(idx, k, depth):
        key = (idx.tobytes(), k, depth)
        hit = memo.get(key)
        if hit is not None:
            return hit
        if k <= 1 or depth == 0 or idx.size <= 1:
            out = leaf_for(idx)
        elif k == 2:
            out = best_two(idx)
        else:
            val, node = best_two(idx)  # covers every <=2-leaf candidate
            for axis in (1, 2):
                coords = np.unique(x[idx, axis - 1])
                if coords.size < 2:
                    continue
                for cut in 0.5 * (coords[:-1] + coords[1:]):
                    low = idx[x[idx, axis - 1] < cut]
                    high = idx[x[idx, axis - 1] >= cut]
                    for k_lo in range(1, k):
                        if k_lo == 1 and k - k_lo == 1:
                            continue  # handled by best_two
                        v_lo, t_lo = best(low, k_lo, depth - 1)
                        v_hi, t_hi = best(high, k - k_lo, depth - 1)
                        if v_lo + v_hi > val + 1e-12:
                            val = v_lo + v_hi
                            node = Split(axis, float(cut), t_lo, t_hi)
            out = (val, node)
        memo[key] = out
        return out

    if n == 0:
        return Leaf(empty_mark), 0.0
    val, node = best(np.arange(n), k_leaves, depth_cap)
    return node, val


# ---------------------------------------------------------------------------
# Population DP
# ---------------------------------------------------------------------------

def fit_tree_population(target: Node, k_leaves: int, depth_cap: int,
                        m_lo: float, m_hi: float) -> tuple[Node, float]:
    """Best <=k_leaves tree approximating a target tree in L2(area).

    Returns (tree, integral of (f_target - f_tree)^2).  Candidate cuts are the
    target's own cut coordinates; cell averages are exact (areas are products
    of interval overlaps) and clipped to [m_lo, m_hi].
    """
    cells = list(iter_cells(target))
    cuts1 = sorted({c[1] for c in cells if c[1] < 1.0} | {c[0] for c in cells if c[0] > 0.0})
    cuts2 = sorted({c[3] for c in cells if c[3] < 1.0} | {c[2] for c in cells if c[2] > 0.0})
    memo: dict[tuple, tuple[float, Node]] = {}

    def stats(box):
        lo1, hi1, lo2, hi2 = box
        area = intf = intf2 = 0.0
        for a1, b1, a2, b2, m in cells:
            w = min(b1, hi1) - max(a1, lo1)
            h = min(b2, hi2) - max(a2, lo2)
            if w > 0.0 and h > 0.0:
                a = w * h
                area += a
                intf += a * m
                intf2 += a * m * m
        return area, intf, intf2

    empty_mark = min(max(0.0, m_lo), m_hi)

    def leaf_for(box):
        area, intf, intf2 = stats(box)
        if area <= 0.0:
            return 0.0, Leaf(empty_mark)
        m = min(max(intf / area, m_lo), m_hi)
        sse = intf2 - 2.0 * m * intf + m * m * area
        return max(sse, 0.0), Leaf(m)

    def best(box, k, depth):
        key = (box, k, depth)
        hit = memo.get(key)
        if hit is not None:
            return hit
        val, node = leaf_for(box)
        lo1, hi1, lo2, hi2 = box
        if k > 1 and depth > 0:
            for axis, cuts in ((1, cuts1), (2, cuts2)):
                lo, hi = (lo1, hi1) if axis == 1 else (lo2, hi2)
                for cut in cuts:
                    if not lo < cut < hi:
                        continue
                    if axis == 1:
                        boxes = ((lo1, cut, lo2, hi2), (cut, hi1, lo2, hi2))
                    else:
                        boxes = ((lo1, hi1, lo2, cut), (lo1, hi1, cut, hi2))
                    for k_lo in range(1, k):
                        v_lo, t_lo = best(boxes[0], k_lo, depth - 1)
                        v_hi, t_hi = best(boxes[1], k - k_lo, depth - 1)
                        if v_lo + v_hi < val - 1e-15:
                            val = v_lo + v_hi
                            node = Split(axis, cut, t_lo, t_hi)
        memo[key] = (val, node)
        return val, node

    sse, node = best(UNIT_BOX, k_leaves, depth_cap)
    return node, sse


def minimal_leaf_count(target: Node, depth_cap: int, m_lo: float, m_hi: float,
                       tol: float = 1e-12) -> int:
    """Smallest leaf budget whose population DP reproduces the target exactly."""
    for k in range(1, leaf_count(target) + 1):
        _, sse = fit_tree_population(target, k, depth_cap, m_lo, m_hi)
        if sse <= tol:
            return k
    return leaf_count(target)
