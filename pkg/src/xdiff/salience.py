"""Interaction salience over grids of feature vectors.

A grid holds n feature vectors of dimension d.  The first-order
importance of vector i weights the model gradient by x_i's coordinates;
higher orders differentiate that inner sum once per additional vector,
summing over each vector's coordinates.  Every entry of the resulting
order-l tensor is a single multilinear directional derivative, so one
lattice evaluation with l tags computes it exactly: tag 0 carries x_i's
coordinates as the direction (on vector i alone for the local variant,
replicated across every vector slot otherwise) and each further tag
carries an all-ones direction over one vector's coordinates.

Models can be ``Mlp`` instances over the flattened n*d input (batched,
one forward pass for a whole tensor) or callables taking the grid as a
list of n rows of scalars, which is how analytic toys plug in.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from itertools import combinations, permutations, product

import numpy as np

from .autodiff import MAX_TAGS, CapacityError, CrossDual
from .mlp import ActivationError, Mlp, forward_lattice


@dataclass(frozen=True)
class FeatureGrid:
    """n feature vectors of dimension d, with an optional rows*cols
    spatial layout used only for rendering."""

    x: np.ndarray
    layout: tuple[int, int] | None = None

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"grid must be a 2-d matrix, got shape {x.shape}")
        n, d = x.shape
        if n < 2 or d < 1:
            raise ValueError(f"grid needs at least 2 vectors of dimension >= 1, got {n}x{d}")
        if not np.isfinite(x).all():
            raise ValueError("grid contains non-finite entries")
        object.__setattr__(self, "x", x)
        if self.layout is not None:
            r, c = self.layout
            if r * c != n:
                raise ValueError(f"layout {r}x{c} does not tile {n} vectors")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]


@dataclass(frozen=True)
class CamOptions:
    local_k: bool = True
    square: bool = True
    symmetrize: bool = True
    zero_diagonal: bool = True
    sum_before_square: bool = False
    rectify: bool = False


@dataclass(frozen=True)
class SalienceTensor:
    order: int
    values: np.ndarray
    symmetrized: bool = False
    diagonal_zeroed: bool = False

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != self.order:
            raise ValueError(f"order-{self.order} tensor cannot have shape {v.shape}")
        if self.order >= 1 and len(set(v.shape)) > 1:
            raise ValueError(f"tensor axes must share one grid size, got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("salience values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _check_model(model, order: int):
    if order < 1:
        raise ValueError(f"order must be at least 1, got {order}")
    if order > MAX_TAGS:
        raise CapacityError(f"order {order} exceeds the {MAX_TAGS}-tag budget")
    if isinstance(model, Mlp) and model.config.activation == "relu" and order >= 2:
        raise ActivationError(
            "relu has an identically zero second derivative; "
            "order >= 2 salience needs a smooth activation"
        )


def _directions(grid: FeatureGrid, tup: tuple[int, ...], local_k: bool) -> list[tuple[int, np.ndarray]]:
    """Per-tag direction vectors over the flattened n*d input."""
    n, d = grid.x.shape
    dirs = []
    v0 = np.zeros(n * d)
    if local_k:
        i = tup[0]
        v0[i * d : (i + 1) * d] = grid.x[i]
    else:
        v0 = np.tile(grid.x[tup[0]], n)
    dirs.append((0, v0))
    for t, j in enumerate(tup[1:], start=1):
        vt = np.zeros(n * d)
        vt[j * d : (j + 1) * d] = 1.0
        dirs.append((t, vt))
    return dirs


def _evaluate_tuples(model, grid: FeatureGrid, tuples, order: int, local_k: bool, threads: int = 1):
    """Directed salience value for each index tuple, in the given order."""
    if not tuples:
        return []
    n, d = grid.x.shape
    if isinstance(model, Mlp):
        if model.config.input_dim != n * d:
            raise ValueError(
                f"model expects {model.config.input_dim} inputs, grid flattens to {n * d}"
            )
        k = 1 << order
        arr = np.zeros((len(tuples), n * d, k))
        arr[:, :, 0] = grid.x.reshape(-1)
        for b, tup in enumerate(tuples):
            for t, direction in _directions(grid, tup, local_k):
                arr[b, :, 1 << t] = direction
        out = forward_lattice(model, arr, order)
        return [float(v) for v in out[:, 0, k - 1]]

    def one(tup):
        seeds = {t: direction for t, direction in _directions(grid, tup, local_k)}
        rows = []
        for v in range(n):
            row = []
            for p in range(d):
                flat = v * d + p
                weights = {t: w[flat] for t, w in seeds.items() if w[flat] != 0.0}
                if weights:
                    row.append(CrossDual.linear(grid.x[v, p], order, weights))
                else:
                    row.append(grid.x[v, p])
            rows.append(row)
        out = model(rows)
        if isinstance(out, CrossDual):
            return float(out.coeffs[-1])
        return 0.0

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, tuples))
    return [one(t) for t in tuples]


def grad_cam(model, grid: FeatureGrid, i: int, opts: CamOptions = CamOptions()) -> float:
    """First-order importance of vector i: its coordinates times the
    model gradient, summed over the vector's own coordinates (local) or
    over every vector slot."""
    _check_model(model, 1)
    if not 0 <= i < grid.n:
        raise IndexError(f"vector index {i} out of range for a {grid.n}-vector grid")
    val = _evaluate_tuples(model, grid, [(i,)], 1, opts.local_k)[0]
    if opts.rectify:
        val = max(val, 0.0)
    return val


def taylor_cam(
    model,
    grid: FeatureGrid,
    order: int,
    opts: CamOptions = CamOptions(),
    threads: int = 1,
) -> SalienceTensor:
    """Order-l salience tensor over the grid.  Order 1 is exactly the
    per-vector importance; order 2 weights second cross partials; each
    further order differentiates along one more vector's coordinates."""
    _check_model(model, order)
    n = grid.n
    if order == 1:
        vals = np.array([grad_cam(model, grid, i, opts) for i in range(n)])
        return SalienceTensor(1, vals)

    if opts.zero_diagonal:
        tuples = [t for t in product(range(n), repeat=order) if len(set(t)) == order]
    else:
        tuples = list(product(range(n), repeat=order))
    raw = np.zeros((n,) * order)
    for tup, val in zip(tuples, _evaluate_tuples(model, grid, tuples, order, opts.local_k, threads)):
        raw[tup] = val
    if opts.rectify:
        raw = np.maximum(raw, 0.0)

    if opts.symmetrize:
        values = _combine_mutual(raw, order, opts)
    elif opts.square:
        values = raw * raw
    else:
        values = raw
    return SalienceTensor(
        order, values, symmetrized=opts.symmetrize, diagonal_zeroed=opts.zero_diagonal
    )


def hessian_cam(model, grid: FeatureGrid, opts: CamOptions = CamOptions(), threads: int = 1) -> SalienceTensor:
    """Pairwise salience matrix; the order-2 tensor."""
    return taylor_cam(model, grid, 2, opts, threads)


def _combine_mutual(raw: np.ndarray, order: int, opts: CamOptions) -> np.ndarray:
    """Fold the mutual cells of each index set together.  Order 2 keeps
    a full symmetric matrix; beyond that the lexicographically smallest
    tuple carries the combined value and the other permutations go to 0.
    Squaring happens cell-wise before the fold unless sum_before_square
    asks for the fold first."""
    if order == 2:
        if opts.square and opts.sum_before_square:
            s = raw + raw.T
            return s * s
        if opts.square:
            sq = raw * raw
            return sq + sq.T
        return raw + raw.T
    n = raw.shape[0]
    out = np.zeros_like(raw)
    for comb in combinations(range(n), order):
        cells = [raw[p] for p in permutations(comb)]
        if opts.square and opts.sum_before_square:
            out[comb] = sum(cells) ** 2
        elif opts.square:
            out[comb] = sum(c * c for c in cells)
        else:
            out[comb] = sum(cells)
    return out


def symmetrize(tensor: SalienceTensor, sum_before_square: bool = False) -> SalienceTensor:
    """Fold mutual cells of an unsymmetrized tensor; a second call
    returns the tensor unchanged."""
    if tensor.symmetrized:
        return tensor
    opts = CamOptions(square=False, sum_before_square=sum_before_square)
    values = _combine_mutual(tensor.values, tensor.order, opts)
    return replace(tensor, values=values, symmetrized=True)


def top_interactions(
    tensor: SalienceTensor, k: int, threshold: float | None = None
) -> list[tuple[tuple[int, ...], float]]:
    """Distinct index sets ranked by salience, strongest first, ties
    lexicographic.  Each set is reported once, at the strongest of its
    permutation cells; sets with fewer distinct entries than the order
    (diagonals) are not sets and never appear."""
    if k < 0:
        raise ValueError("k must be non-negative")
    rows = []
    for comb in combinations(range(tensor.n), tensor.order):
        val = max(float(tensor.values[p]) for p in permutations(comb))
        rows.append((comb, val))
    if threshold is not None:
        rows = [r for r in rows if r[1] > threshold]
    rows.sort(key=lambda r: (-r[1], r[0]))
    return rows[:k]


_BOX_PALETTE = ("#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
_CELL = 26
_PAD = 44


def _shade(t: float) -> str:
    # white at 0 to deep blue at 1
    r = round(255 + (30 - 255) * t)
    g = round(255 + (72 - 255) * t)
    b = round(255 + (132 - 255) * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_heatmap(
    tensor: SalienceTensor,
    path,
    layout: tuple[int, int] | None = None,
    top: int = 4,
) -> None:
    """Write an SVG of the pairwise salience matrix and, when a spatial
    layout is given, the strongest pairs as linked boxes on the grid.
    Identical tensors produce identical bytes."""
    if tensor.order != 2:
        raise ValueError(f"rendering needs an order-2 tensor, got order {tensor.order}")
    n = tensor.n
    vals = tensor.values
    vmax = float(np.abs(vals).max())
    width = _PAD + n * _CELL + _PAD
    if layout is not None:
        rows, cols = layout
        if rows * cols != n:
            raise ValueError(f"layout {rows}x{cols} does not tile {n} vectors")
        panel_x = width
        width += cols * _CELL + _PAD
    height = _PAD + n * _CELL + _PAD

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
    ]
    for i in range(n):
        for j in range(n):
            t = abs(float(vals[i, j])) / vmax if vmax > 0 else 0.0
            x, y = _PAD + j * _CELL, _PAD + i * _CELL
            out.append(
                f'<rect x="{x}" y="{y}" width="{_CELL}" height="{_CELL}" '
                f'fill="{_shade(t)}" stroke="#cccccc" stroke-width="1"/>'
            )
    for i in range(n):
        cx = _PAD + i * _CELL + _CELL // 2
        out.append(
            f'<text x="{cx}" y="{_PAD - 8}" font-size="10" text-anchor="middle" '
            f'fill="#333333" font-family="monospace">{i}</text>'
        )
        out.append(
            f'<text x="{_PAD - 8}" y="{_PAD + i * _CELL + _CELL // 2 + 3}" font-size="10" '
            f'text-anchor="end" fill="#333333" font-family="monospace">{i}</text>'
        )

    if layout is not None:
        rows, cols = layout
        for v in range(n):
            r, c = divmod(v, cols)
            x, y = panel_x + c * _CELL, _PAD + r * _CELL
            out.append(
                f'<rect x="{x}" y="{y}" width="{_CELL}" height="{_CELL}" '
                f'fill="#f5f5f5" stroke="#bbbbbb" stroke-width="1"/>'
            )
            out.append(
                f'<text x="{x + _CELL // 2}" y="{y + _CELL // 2 + 3}" font-size="9" '
                f'text-anchor="middle" fill="#666666" font-family="monospace">{v}</text>'
            )
        pairs = top_interactions(tensor, top, threshold=0.0)
        for rank, ((i, j), _val) in enumerate(pairs):
            color = _BOX_PALETTE[rank % len(_BOX_PALETTE)]
            centers = []
            for v in (i, j):
                r, c = divmod(v, cols)
                x, y = panel_x + c * _CELL, _PAD + r * _CELL
                out.append(
                    f'<rect x="{x + 2}" y="{y + 2}" width="{_CELL - 4}" height="{_CELL - 4}" '
                    f'fill="none" stroke="{color}" stroke-width="2"/>'
                )
                centers.append((x + _CELL // 2, y + _CELL // 2))
            (x1, y1), (x2, y2) = centers
            out.append(
                f'<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="{color}" '
                f'stroke-width="2" stroke-dasharray="4 2"/>'
            )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")


def salience_document(tensor: SalienceTensor, opts: CamOptions, top: int) -> dict:
    """JSON-ready view: order, ranked tuples, and the options used."""
    return {
        "order": tensor.order,
        "tuples": [
            {"set": list(s), "salience": v} for s, v in top_interactions(tensor, top)
        ],
        "options": {
            "local_k": opts.local_k,
            "square": opts.square,
            "symmetrize": opts.symmetrize,
            "zero_diagonal": opts.zero_diagonal,
            "sum_before_square": opts.sum_before_square,
            "rectify": opts.rectify,
        },
    }
