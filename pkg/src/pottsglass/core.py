"""Domain types: state distributions, Gram matrices, monotone matrix paths.

Paths are stored as step functions on cells (x_{p-1}, x_p], constant equal to
gamma_p on each cell, with value 0 at 0.  Everything is immutable after
validation and safe to share across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .util import ValidationError

SUM_TOL = 1e-12
SYM_TOL = 1e-12
PSD_TOL = 1e-10
ENTRY_TOL = 1e-12
CONSTRAINT_TOL = 1e-10
D_MATCH_TOL = 1e-10


class GramViolation(ValueError):
    """A matrix failed a Gram-cone invariant; .reason names the first check."""

    def __init__(self, reason, detail=""):
        self.reason = reason
        super().__init__(f"{reason}: {detail}" if detail else reason)


def _freeze(a):
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StateDistribution:
    """A point on the kappa-simplex of state proportions."""

    d: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float)
        if d.ndim != 1 or d.size < 1 or not np.all(np.isfinite(d)):
            raise ValidationError("distribution must be a finite 1-d vector")
        if np.any(d < -ENTRY_TOL):
            raise ValidationError("distribution entries must be nonnegative")
        if abs(d.sum() - 1.0) > SUM_TOL:
            raise ValidationError(f"distribution sums to {d.sum()!r}, not 1")
        object.__setattr__(self, "d", _freeze(np.clip(d, 0.0, None)))

    @property
    def kappa(self):
        return self.d.size

    def is_representable(self, N):
        counts = self.d * N
        return bool(np.all(np.abs(counts - np.round(counts)) <= 1e-9))

    def counts(self, N):
        if not self.is_representable(N):
            raise ValidationError(f"distribution is not {N}-representable")
        return np.round(self.d * N).astype(int)

    @classmethod
    def uniform(cls, kappa):
        return cls(np.full(kappa, 1.0 / kappa))

    def to_json_dict(self):
        return {"kappa": int(self.kappa), "d": [float(v) for v in self.d]}

    @classmethod
    def from_json_dict(cls, obj):
        return cls(np.asarray(obj["d"], dtype=float))


@dataclass(frozen=True)
class GramMatrix:
    """Validated element of the Gram cone, optionally with extra flags.

    nonneg marks membership in the sub-cone of entrywise-nonnegative Gram
    matrices; d marks membership in the d-constrained slice (last row/column
    determined by the principal block).
    """

    entries: np.ndarray
    nonneg: bool = False
    d: StateDistribution | None = None

    def __post_init__(self):
        object.__setattr__(self, "entries", _freeze(self.entries))

    @property
    def kappa(self):
        return self.entries.shape[0]

    def trace(self):
        return float(np.trace(self.entries))

    def norm_hs_sq(self):
        return float(np.sum(self.entries**2))

    def norm_l1(self):
        return float(np.sum(np.abs(self.entries)))


def _lifting_residuals(m, d):
    """Residuals of the last-row/column identities for the d-constrained cone."""
    kappa = d.kappa
    dd = d.d
    block = m[: kappa - 1, : kappa - 1]
    row = dd[: kappa - 1] - block.sum(axis=1)
    corner = dd[kappa - 1] - dd[: kappa - 1].sum() + block.sum()
    res_col = m[kappa - 1, : kappa - 1] - row
    res_row = m[: kappa - 1, kappa - 1] - row
    res_corner = m[kappa - 1, kappa - 1] - corner
    return res_row, res_col, res_corner


def validate_gram(m, nonneg=False, d=None):
    """Validate a square matrix against the Gram-cone invariants.

    Returns a GramMatrix, or raises GramViolation naming the first violated
    invariant.  Non-square or non-finite input raises ValidationError.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.size == 0:
        raise ValidationError("matrix must be square and nonempty")
    if not np.all(np.isfinite(m)):
        raise ValidationError("matrix has non-finite entries")
    if np.max(np.abs(m - m.T)) > SYM_TOL:
        raise GramViolation("asymmetry", f"max |m - m.T| = {np.max(np.abs(m - m.T)):.3e}")
    sym = 0.5 * (m + m.T)
    lam_min = float(np.linalg.eigvalsh(sym)[0])
    if lam_min < -PSD_TOL:
        raise GramViolation("negative eigenvalue", f"lambda_min = {lam_min:.3e}")
    if nonneg and np.min(m) < -ENTRY_TOL:
        raise GramViolation("negative entry", f"min entry = {np.min(m):.3e}")
    if d is not None:
        if d.kappa != m.shape[0]:
            raise ValidationError("distribution and matrix dimensions differ")
        residuals = _lifting_residuals(sym, d)
        worst = max(float(np.max(np.abs(r))) if np.size(r) else 0.0 for r in residuals)
        if worst > CONSTRAINT_TOL:
            raise GramViolation("constraint mismatch", f"max lifting residual = {worst:.3e}")
    return GramMatrix(sym, nonneg=nonneg, d=d)


def lift_reduced(d, reduced):
    """Fill in the last row/column of a (kappa-1) principal block.

    The lifted matrix is validated as d-constrained; an infeasible lift
    raises GramViolation with the violated check.
    """
    reduced = np.asarray(reduced, dtype=float)
    kappa = d.kappa
    if reduced.shape != (kappa - 1, kappa - 1):
        raise ValidationError(f"reduced block must be {(kappa - 1, kappa - 1)}, got {reduced.shape}")
    if kappa > 1 and np.max(np.abs(reduced - reduced.T)) > SYM_TOL:
        raise ValidationError("reduced block must be symmetric")
    full = np.zeros((kappa, kappa))
    full[: kappa - 1, : kappa - 1] = reduced
    row = d.d[: kappa - 1] - reduced.sum(axis=1)
    full[kappa - 1, : kappa - 1] = row
    full[: kappa - 1, kappa - 1] = row
    full[kappa - 1, kappa - 1] = d.d[kappa - 1] - d.d[: kappa - 1].sum() + reduced.sum()
    return validate_gram(full, d=d)


@dataclass(frozen=True)
class LagrangeMultipliers:
    """Lagrange multipliers for the first kappa-1 state-size constraints."""

    lam: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=float)
        if lam.ndim != 1 or not np.all(np.isfinite(lam)):
            raise ValidationError("multipliers must be a finite 1-d vector")
        object.__setattr__(self, "lam", _freeze(lam))

    @property
    def kappa(self):
        return self.lam.size + 1


def as_multipliers(lam, kappa):
    """Coerce an array-like (or scalar for kappa=2) to validated multipliers."""
    if isinstance(lam, LagrangeMultipliers):
        out = lam
    else:
        arr = np.atleast_1d(np.asarray(lam, dtype=float))
        if kappa >= 2 and arr.size == 1 and kappa - 1 != 1:
            arr = np.full(kappa - 1, float(arr[0]))
        if kappa == 1:
            arr = arr[:0]
        out = LagrangeMultipliers(arr)
    if out.kappa != kappa:
        raise ValidationError(f"expected {kappa - 1} multipliers, got {out.lam.size}")
    return out


@dataclass(frozen=True)
class MonotonePath:
    """Discrete monotone path: gamma_p on the cell (x_{p-1}, x_p].

    xs has length r+2 (0 = x_{-1}, x_0, ..., x_r = 1); gammas has shape
    (r+1, kappa, kappa) with gamma_0 = 0 and gamma_r = diag(d).
    """

    d: StateDistribution
    xs: np.ndarray
    gammas: np.ndarray

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        gammas = np.asarray(self.gammas, dtype=float)
        kappa = self.d.kappa
        if xs.ndim != 1 or xs.size < 2:
            raise ValidationError("xs must hold at least the two endpoints")
        r = xs.size - 2
        if gammas.shape != (r + 1, kappa, kappa):
            raise ValidationError(f"gammas must have shape {(r + 1, kappa, kappa)}")
        if xs[0] != 0.0 or xs[-1] != 1.0:
            raise ValidationError("xs endpoints must be exactly 0 and 1")
        if np.any(np.diff(xs) < 0):
            raise ValidationError("xs must be nondecreasing")
        if np.max(np.abs(gammas[0])) > ENTRY_TOL:
            raise ValidationError("gamma_0 must be the zero matrix")
        if not np.array_equal(gammas[-1], np.diag(self.d.d)):
            raise ValidationError("gamma_r must equal diag(d) exactly")
        for p in range(1, r + 1):
            inc = gammas[p] - gammas[p - 1]
            if np.max(np.abs(inc - inc.T)) > SYM_TOL:
                raise ValidationError(f"increment {p} is not symmetric")
            lam_min = float(np.linalg.eigvalsh(0.5 * (inc + inc.T))[0])
            if lam_min < -PSD_TOL:
                raise ValidationError(f"increment {p} is not PSD (lambda_min = {lam_min:.3e})")
        object.__setattr__(self, "xs", _freeze(xs))
        object.__setattr__(self, "gammas", _freeze(gammas))

    @property
    def r(self):
        return self.xs.size - 2

    @property
    def kappa(self):
        return self.d.kappa

    @property
    def inner_x(self):
        """x_0, ..., x_{r-1}: the cascade/recursion level parameters."""
        return self.xs[1:-1]

    def value_at(self, x):
        """Path value: gamma_p for x in (x_{p-1}, x_p], zero at 0."""
        if x <= 0.0:
            return self.gammas[0]
        p = int(np.searchsorted(self.xs[1:], x, side="left"))
        return self.gammas[min(p, self.r)]

    def trace_at(self, x):
        return float(np.trace(self.value_at(x)))

    def hs_sq_integral(self):
        """Exact integral of the squared Hilbert-Schmidt norm over [0, 1]."""
        widths = np.diff(self.xs)
        hs = np.sum(self.gammas**2, axis=(1, 2))
        return float(np.sum(widths * hs))

    @classmethod
    def from_increments(cls, d, inner_x, increments):
        """Build a path from level x's and the first r-1 PSD increments.

        The final increment is derived so gamma_r = diag(d) exactly.
        """
        inner_x = np.asarray(inner_x, dtype=float)
        r = inner_x.size
        increments = list(increments)
        if len(increments) != r - 1:
            raise ValidationError(f"expected {r - 1} free increments, got {len(increments)}")
        kappa = d.kappa
        gammas = np.zeros((r + 1, kappa, kappa))
        for p, inc in enumerate(increments, start=1):
            gammas[p] = gammas[p - 1] + inc
        gammas[r] = np.diag(d.d)
        xs = np.concatenate([[0.0], inner_x, [1.0]])
        return cls(d, xs, gammas)

    @classmethod
    def one_step(cls, d, x0):
        """The r=1 path: zero before x0-weighted level, diag(d) after."""
        return cls.from_increments(d, [float(x0)], [])

    def to_json_dict(self):
        return {
            "kappa": int(self.kappa),
            "d": [float(v) for v in self.d.d],
            "x": [float(v) for v in self.xs],
            "gammas": [[[float(v) for v in row] for row in g] for g in self.gammas],
        }

    @classmethod
    def from_json_dict(cls, obj):
        return cls(
            StateDistribution(np.asarray(obj["d"], dtype=float)),
            np.asarray(obj["x"], dtype=float),
            np.asarray(obj["gammas"], dtype=float),
        )


def _check_same_space(a, b):
    if a.kappa != b.kappa:
        raise ValidationError("paths have different kappa")
    if np.max(np.abs(a.d.d - b.d.d)) > D_MATCH_TOL:
        raise ValidationError("paths have different state distributions")


def path_delta(a, b):
    """The L1 path metric, computed exactly on the merged breakpoint grid."""
    _check_same_space(a, b)
    grid = np.union1d(a.xs, b.xs)
    total = 0.0
    for left, right in zip(grid[:-1], grid[1:]):
        if right <= left:
            continue
        diff = a.value_at(right) - b.value_at(right)
        total += (right - left) * float(np.sum(np.abs(diff)))
    return total


def _path_probe(p):
    """Normalize a MonotonePath or callable probe to an evaluation function."""
    if isinstance(p, MonotonePath):
        return p.value_at, p.d
    if callable(p):
        return p, None
    raise ValidationError("expected a MonotonePath or a callable probe")


def discretize_path(p, grid, anchors=None, d=None):
    """Step-path discretization taking the value p(anchor_p) on each cell.

    grid holds the interior breakpoints (strictly increasing, inside (0,1));
    anchors default to the right endpoints of the cells.  The last anchor must
    be 1 so the result stays a valid path ending at diag(d).
    """
    value_at, path_d = _path_probe(p)
    if path_d is not None:
        d = path_d
    if d is None:
        raise ValidationError("a state distribution is required for callable probes")
    grid = np.asarray(grid, dtype=float)
    if grid.size and (np.any(np.diff(grid) <= 0) or grid[0] <= 0.0 or grid[-1] >= 1.0):
        raise ValidationError("grid must be strictly increasing inside (0, 1)")
    edges = np.concatenate([[0.0], grid, [1.0]])
    if anchors is None:
        anchors = edges[1:]
    anchors = np.asarray(anchors, dtype=float)
    if anchors.size != edges.size - 1:
        raise ValidationError("need one anchor per grid cell")
    for left, right, anchor in zip(edges[:-1], edges[1:], anchors):
        if not (left < anchor <= right):
            raise ValidationError(f"anchor {anchor!r} outside its cell ({left!r}, {right!r}]")
    if anchors[-1] != 1.0:
        raise ValidationError("the last anchor must be 1 so the path ends at diag(d)")
    values = [np.asarray(value_at(a), dtype=float) for a in anchors]
    # A nonzero value on the first cell needs a degenerate leading level,
    # since gamma_0 is pinned to zero.
    if np.max(np.abs(values[0])) > ENTRY_TOL:
        xs = np.concatenate([[0.0, 0.0], grid, [1.0]])
        gammas = np.concatenate([[np.zeros_like(values[0])], values])
    else:
        xs = edges
        gammas = np.asarray(values)
    gammas = np.array(gammas, dtype=float)
    gammas[-1] = np.diag(d.d)
    return MonotonePath(d, xs, gammas)


def discretization_bound(p, discretized, d=None, samples=4096):
    """kappa * integral of |trace difference|: the guaranteed Delta bound."""
    value_at, path_d = _path_probe(p)
    if path_d is not None:
        d = path_d
    kappa = discretized.kappa
    if isinstance(p, MonotonePath):
        grid = np.union1d(p.xs, discretized.xs)
        total = 0.0
        for left, right in zip(grid[:-1], grid[1:]):
            if right <= left:
                continue
            diff = np.trace(value_at(right)) - discretized.trace_at(right)
            total += (right - left) * abs(float(diff))
        return kappa * total
    # Midpoint rule for dense probes; the integrand is bounded and piecewise
    # monotone so this converges quickly.
    xs = (np.arange(samples) + 0.5) / samples
    vals = [abs(float(np.trace(value_at(x))) - discretized.trace_at(x)) for x in xs]
    return kappa * float(np.mean(vals))


def round_distribution(d, N):
    """Nearest N-representable distribution by largest-remainder rounding.

    Zero entries stay zero; ties break toward the lowest state index.
    """
    if N < 1:
        raise ValidationError("N must be at least 1")
    target = d.d * N
    counts = np.floor(target).astype(int)
    remainder = target - counts
    missing = N - counts.sum()
    if missing > 0:
        eligible = np.flatnonzero(d.d > 0)
        # stable sort on -remainder keeps the lowest index first among ties
        order = eligible[np.argsort(-remainder[eligible], kind="stable")]
        for k in order[:missing]:
            counts[k] += 1
    return StateDistribution(counts / N)
