"""Cross-modal alignment: token-level transport plans and kernel distribution distance.

Two complementary mechanisms live here. The local one treats token sequences
as discrete distributions, builds a cosine-distance cost matrix and solves a
relaxed transport problem in closed form: with only the outgoing row marginal
kept (each source token must ship exactly 1/T_src of mass), the optimum puts
each row's mass on its cheapest anchor column. The global one measures the
squared maximum mean discrepancy between two token sets under a Gaussian
kernel, as a biased V-statistic including self-pairs.

Plan selection is piecewise constant, so gradients never flow through the
argmin; they do flow through the application of a fixed plan to the source
features and through every kernel evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError
from .numcore import Var, _accum, as_array, wrap

_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    """Gaussian kernel bandwidth policy.

    ``bandwidth=None`` selects the median heuristic, recomputed per call and
    treated as a constant in backward. A fixed bandwidth must be positive.
    """

    bandwidth: float | None = None

    def __post_init__(self):
        if self.bandwidth is not None and not self.bandwidth > 0:
            raise ParameterError(f"kernel bandwidth must be positive, got {self.bandwidth}")

    def resolve(self, x: np.ndarray, y: np.ndarray) -> float:
        if self.bandwidth is not None:
            return float(self.bandwidth)
        return median_bandwidth(x, y)


@dataclass(frozen=True)
class TransportPlan:
    """Row-structured solution of the relaxed transport problem.

    Each source row carries mass 1/n_src on exactly one anchor column
    (``anchor_index``); all other entries are zero. Ties in the underlying
    cost are broken toward the smallest column index.
    """

    anchor_index: np.ndarray  # (n_src,) int64
    n_src: int
    n_anchor: int

    @property
    def mass(self) -> float:
        return 1.0 / self.n_src

    def dense(self) -> np.ndarray:
        m = np.zeros((self.n_src, self.n_anchor))
        m[np.arange(self.n_src), self.anchor_index] = self.mass
        return m

    def column_mass(self) -> np.ndarray:
        """Total incoming mass per anchor column; sums to 1."""
        counts = np.bincount(self.anchor_index, minlength=self.n_anchor)
        return counts * self.mass

    def diagonal_fraction(self) -> float:
        """Fraction of source rows mapped to their own index (square plans)."""
        n = min(self.n_src, self.n_anchor)
        return float(np.mean(self.anchor_index[:n] == np.arange(n)))


def cosine_cost(x_src, x_anchor) -> np.ndarray:
    """Pairwise cosine-distance cost matrix, entries in [0, 2].

    C(i, j) = 1 - <src_i, anchor_j> / (||src_i|| ||anchor_j||). Inputs are
    plain arrays; the cost only steers plan selection and carries no gradient.
    """
    xs, xa = as_array(x_src), as_array(x_anchor)
    if xs.ndim != 2 or xa.ndim != 2 or xs.shape[1] != xa.shape[1]:
        raise DimensionError(f"cosine_cost: need (n, d) inputs with equal d, got {xs.shape} and {xa.shape}")
    ns = np.linalg.norm(xs, axis=1)
    na = np.linalg.norm(xa, axis=1)
    for name, norms in (("source", ns), ("anchor", na)):
        bad = np.nonzero(norms < _NORM_FLOOR)[0]
        if bad.size:
            raise DegenerateInputError(f"cosine_cost: {name} row {bad[0]} has zero norm")
    return 1.0 - (xs @ xa.T) / np.outer(ns, na)


def relaxed_ot_plan(cost: np.ndarray) -> TransportPlan:
    """Closed-form optimum of the row-marginal-only transport problem.

    Row i of the plan assigns its full 1/n_src mass to argmin_j C(i, j);
    ties go to the smallest column index (numpy argmin convention).
    """
    c = as_array(cost)
    if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] == 0:
        raise DimensionError(f"relaxed_ot_plan: cost matrix must be non-empty 2-D, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ParameterError("relaxed_ot_plan: cost matrix has non-finite entries")
    idx = np.argmin(c, axis=1).astype(np.int64)
    return TransportPlan(anchor_index=idx, n_src=c.shape[0], n_anchor=c.shape[1])


def plan_cost(plan: TransportPlan, cost: np.ndarray) -> float:
    """Total transported cost sum_ij M(i,j) C(i,j)."""
    c = as_array(cost)
    return float(np.sum(c[np.arange(plan.n_src), plan.anchor_index]) * plan.mass)


def apply_plan(plan: TransportPlan, x_src, mode: str = "paper_literal") -> Var:
    """Transport source features onto the anchor timeline.

    ``paper_literal`` returns M^T x_src exactly: anchor row j collects
    mass-weighted source rows assigned to it, so unselected rows come out
    zero and magnitudes carry the 1/n_src factor. ``mass_normalized``
    additionally divides each output row by its incoming column mass when
    positive (i.e. averages the assigned source rows), which restores the
    feature scale; zero-mass rows stay zero. Differentiable in x_src; the
    plan itself is a constant.
    """
    if mode not in ("paper_literal", "mass_normalized"):
        raise ParameterError(f"apply_plan: unknown mode '{mode}'")
    x = wrap(x_src)
    if x.data.ndim != 2 or x.shape[0] != plan.n_src:
        raise DimensionError(f"apply_plan: expected ({plan.n_src}, d) source, got {x.shape}")
    idx = plan.anchor_index
    counts = np.bincount(idx, minlength=plan.n_anchor).astype(np.float64)
    if mode == "paper_literal":
        row_w = np.full(plan.n_src, plan.mass)
    else:
        # averaging the rows assigned to each anchor slot
        row_w = 1.0 / counts[idx]
    out_data = np.zeros((plan.n_anchor, x.shape[1]))
    np.add.at(out_data, idx, x.data * row_w[:, None])
    out = Var(out_data, (x,))

    def vjp(g: np.ndarray) -> None:
        _accum(x, g[idx] * row_w[:, None])

    out._vjp = vjp
    return out


def median_bandwidth(x, y) -> float:
    """Median-heuristic bandwidth over the pooled rows of x and y.

    sigma = sqrt(median of pairwise squared distances / 2); falls back to 1.0
    when the median is zero (all points identical).
    """
    pooled = np.concatenate([as_array(x), as_array(y)], axis=0)
    n = pooled.shape[0]
    if n < 2:
        raise ParameterError(f"median_bandwidth: need at least 2 pooled rows, got {n}")
    sq = _pairwise_sq(pooled, pooled)
    med = float(np.median(sq[np.triu_indices(n, k=1)]))
    if med <= 0.0:
        return 1.0
    return float(np.sqrt(med / 2.0))


def _pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sq = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(sq, 0.0)


def gaussian_kernel_matrix(x, y, sigma: float) -> Var:
    """k(x_i, y_j) = exp(-||x_i - y_j||^2 / (2 sigma^2)); differentiable."""
    if not sigma > 0:
        raise ParameterError(f"gaussian_kernel_matrix: sigma must be positive, got {sigma}")
    x, y = wrap(x), wrap(y)
    if x.data.ndim != 2 or y.data.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"gaussian_kernel_matrix: need (n, d) inputs with equal d, got {x.shape} and {y.shape}")
    n, m = x.shape[0], y.shape[0]
    ones_row_m = Var(np.ones((1, m)))
    ones_row_n = Var(np.ones((1, n)))
    sq_x = (x * x).sum(axis=1).matmul(ones_row_m)          # (n, m)
    sq_y = (y * y).sum(axis=1).matmul(ones_row_n).T        # (n, m)
    cross = x.matmul(y.T).scale(-2.0)
    sqdist = (sq_x + sq_y + cross).clip_min(0.0)  # roundoff can dip below zero
    return sqdist.scale(-1.0 / (2.0 * sigma * sigma)).exp()


def mmd_sq(x, y, kcfg: KernelConfig = KernelConfig()) -> Var:
    """Squared MMD between two row sets, biased V-statistic form.

    (1/n^2) sum k(x, x') + (1/m^2) sum k(y, y') - (2/nm) sum k(x, y), with
    self-pairs included; the equal-length case is the textbook single-T
    expression. Nonnegative up to roundoff and differentiable in both inputs.
    """
    x, y = wrap(x), wrap(y)
    if x.data.ndim != 2 or y.data.ndim != 2:
        raise DimensionError(f"mmd_sq: need 2-D inputs, got {x.shape} and {y.shape}")
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ParameterError("mmd_sq: inputs must be non-empty")
    if x.shape[1] != y.shape[1]:
        raise DimensionError(f"mmd_sq: feature dimensions differ, {x.shape} vs {y.shape}")
    sigma = kcfg.resolve(x.data, y.data)
    k_xx = gaussian_kernel_matrix(x, x, sigma).mean(axis=None)
    k_yy = gaussian_kernel_matrix(y, y, sigma).mean(axis=None)
    k_xy = gaussian_kernel_matrix(x, y, sigma).mean(axis=None)
    return k_xx + k_yy + k_xy.scale(-2.0)


def align_loss(xa_aligned, xv_aligned, xl, kcfg: KernelConfig = KernelConfig()) -> Var:
    """Global alignment objective: MMD^2(video, language) + MMD^2(audio, language)."""
    xa, xv, xl = wrap(xa_aligned), wrap(xv_aligned), wrap(xl)
    for name, t in (("audio", xa), ("video", xv)):
        if t.shape != xl.shape:
            raise DimensionError(f"align_loss: {name} shape {t.shape} != language shape {xl.shape}")
    return mmd_sq(xv, xl, kcfg) + mmd_sq(xa, xl, kcfg)
