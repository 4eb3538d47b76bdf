"""Finite-size Potts glass: Hamiltonian, free energies, overlaps, cavity fields.

Configurations are label vectors in {1..kappa}.  Free energies average
(1/N) log Z over independent disorder draws; Z is computed exactly by
enumeration when the configuration count fits the budget, otherwise by
constraint-preserving Metropolis with thermodynamic integration.
"""

from dataclasses import dataclass
from math import lgamma

import numpy as np
from scipy.special import logsumexp

from .cascade import OverlapArray
from .core import StateDistribution, _freeze
from .functional import EvalResult
from .util import BudgetError, ValidationError, jackknife_se, map_indexed, stream

ENUM_BUDGET = 20_000_000
_ENUM_CHUNK = 8192
FACTOR_BUDGET = 4096


@dataclass(frozen=True)
class DisorderInstance:
    """An N x N matrix of i.i.d. standard Gaussian couplings.

    Regeneration from (seed, N, draw) is bit-reproducible.
    """

    N: int
    seed: int
    draw: int = 0
    g: np.ndarray = None

    def __post_init__(self):
        if self.N < 1:
            raise ValidationError("N must be at least 1")
        if self.g is None:
            rng = stream(self.seed, 0xD15, self.N, self.draw)
            object.__setattr__(self, "g", _freeze(rng.standard_normal((self.N, self.N))))
        else:
            g = np.asarray(self.g, dtype=float)
            if g.shape != (self.N, self.N) or not np.all(np.isfinite(g)):
                raise ValidationError("g must be a finite N x N matrix")
            object.__setattr__(self, "g", _freeze(g))


@dataclass(frozen=True)
class Configuration:
    """A length-N vector of state labels in {1..kappa}."""

    sigma: np.ndarray
    kappa: int

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.int64)
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValidationError("sigma must be a nonempty 1-d label vector")
        if np.min(sigma) < 1 or np.max(sigma) > self.kappa:
            raise ValidationError("labels must lie in 1..kappa")
        s = sigma.copy()
        s.flags.writeable = False
        object.__setattr__(self, "sigma", s)

    @property
    def N(self):
        return self.sigma.size


def _labels(sigma):
    if isinstance(sigma, Configuration):
        return sigma.sigma
    return np.asarray(sigma, dtype=np.int64)


@dataclass(frozen=True)
class OverlapMatrix:
    """Joint empirical state frequencies of two same-length configurations."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValidationError("overlap must be a square matrix")
        if np.min(e) < -1e-12 or np.max(e) > 1.0 + 1e-12:
            raise ValidationError("overlap entries must lie in [0, 1]")
        if abs(e.sum() - 1.0) > 1e-9:
            raise ValidationError(f"overlap entries sum to {e.sum()!r}, not 1")
        object.__setattr__(self, "entries", _freeze(e))

    @property
    def kappa(self):
        return self.entries.shape[0]

    def trace(self):
        return float(np.trace(self.entries))


def hamiltonian(g, sigma):
    """(1/sqrt N) sum over all ordered site pairs (including i=j) of
    g_ij 1{sigma_i = sigma_j}."""
    s = _labels(sigma)
    if s.size != g.N:
        raise ValidationError("configuration length does not match N")
    eq = s[:, None] == s[None, :]
    return float(np.sum(g.g[eq]) / np.sqrt(g.N))


def overlap(a, b, kappa=None):
    """R^{k,k'} = (1/N) sum_i 1{a_i = k} 1{b_i = k'}."""
    a = _labels(a)
    b = _labels(b)
    if a.size != b.size:
        raise ValidationError("configurations have different lengths")
    if kappa is None:
        kappa = int(max(a.max(), b.max()))
    counts = np.zeros((kappa, kappa))
    np.add.at(counts, (a - 1, b - 1), 1.0)
    return OverlapMatrix(counts / a.size)


def enumerate_configs(N, kappa, counts=None):
    """All label vectors in {1..kappa}^N, optionally with fixed state counts.

    Returns an (n_conf, N) array of labels.
    """
    total = kappa**N
    if total > ENUM_BUDGET:
        raise BudgetError(f"kappa^N = {total} exceeds the enumeration budget {ENUM_BUDGET}")
    idx = np.arange(total, dtype=np.int64)
    configs = np.empty((total, N), dtype=np.int64)
    rest = idx
    for i in range(N - 1, -1, -1):
        configs[:, i] = rest % kappa + 1
        rest = rest // kappa
    if counts is not None:
        counts = np.asarray(counts, dtype=int)
        keep = np.ones(total, dtype=bool)
        for k in range(kappa):
            keep &= np.count_nonzero(configs == k + 1, axis=1) == counts[k]
        configs = configs[keep]
        if configs.shape[0] == 0:
            raise ValidationError("the constraint set is empty")
    return configs


def _config_energies(configs, g):
    """Hamiltonian values for a whole configuration set, chunked for memory."""
    n_conf, n = configs.shape
    flat = g.ravel() / np.sqrt(n)
    out = np.empty(n_conf)
    for lo in range(0, n_conf, _ENUM_CHUNK):
        c = configs[lo : lo + _ENUM_CHUNK]
        eq = (c[:, :, None] == c[:, None, :]).reshape(c.shape[0], -1)
        out[lo : lo + _ENUM_CHUNK] = eq @ flat
    return out


def enumerate_free_energy(N, kappa, beta, n_disorder=200, seed=0, constraint=None, threads=1):
    """Exact per-draw (1/N) log Z averaged over disorder draws."""
    if n_disorder < 2:
        raise ValidationError("need at least 2 disorder draws")
    counts = constraint.counts(N) if constraint is not None else None
    configs = enumerate_configs(N, kappa, counts)

    def one(i):
        g = DisorderInstance(N, seed, draw=i)
        return float(logsumexp(beta * _config_energies(configs, g.g)) / N)

    values = np.asarray(map_indexed(one, n_disorder, threads))
    return EvalResult(
        float(values.mean()),
        jackknife_se(values),
        "enumeration",
        {
            "n_disorder": n_disorder,
            "n_configurations": int(configs.shape[0]),
            "constrained": constraint is not None,
        },
    )


def _log_multinomial(counts):
    counts = np.asarray(counts, dtype=int)
    return lgamma(counts.sum() + 1) - sum(lgamma(c + 1) for c in counts)


def _pair_swap_sweep(sigma, s_sum, beta, sqrt_n, rng):
    """One Metropolis sweep of N attempted label swaps; returns (accepts, H shift)."""
    n = sigma.size
    accepted = 0
    dh_total = 0.0
    for _ in range(n):
        i, j = rng.integers(0, n, size=2)
        a, b = sigma[i], sigma[j]
        if a == b:
            continue
        row = s_sum[i] - s_sum[j]
        mask_b = sigma == b
        mask_a = sigma == a
        dh = row @ (mask_b.astype(float) - mask_a.astype(float))
        # remove the i/j self contributions: site i leaves state a, j leaves b
        dh -= row[i] * (0.0 - 1.0) + row[j] * (1.0 - 0.0)
        dh /= sqrt_n
        if dh >= 0 or rng.random() < np.exp(beta * dh):
            sigma[i], sigma[j] = b, a
            accepted += 1
            dh_total += dh
    return accepted, dh_total


def _initial_configuration(counts):
    return np.repeat(np.arange(1, counts.size + 1), counts)


def _ti_instance(g, counts, beta, beta_grid, sweeps, burn, rng):
    """Thermodynamic integration of <H>/N along a tempered beta ladder."""
    n = g.N
    sqrt_n = np.sqrt(n)
    s_sum = g.g + g.g.T
    n_chain = beta_grid.size
    sigmas = [_initial_configuration(counts).copy() for _ in range(n_chain)]
    for s in sigmas:
        rng.shuffle(s)
    energies = np.array([hamiltonian(g, s) for s in sigmas])
    mean_h = np.zeros(n_chain)
    kept = 0
    swap_attempts = 0
    swap_accepts = 0
    for sweep in range(burn + sweeps):
        for c in range(n_chain):
            _, dh = _pair_swap_sweep(sigmas[c], s_sum, beta_grid[c], sqrt_n, rng)
            energies[c] += dh
        # neighbor exchange pass
        for c in range(n_chain - 1):
            swap_attempts += 1
            log_acc = (beta_grid[c + 1] - beta_grid[c]) * (energies[c] - energies[c + 1])
            if log_acc >= 0 or rng.random() < np.exp(log_acc):
                sigmas[c], sigmas[c + 1] = sigmas[c + 1], sigmas[c]
                energies[c], energies[c + 1] = energies[c + 1], energies[c]
                swap_accepts += 1
        if sweep >= burn:
            mean_h += energies
            kept += 1
    mean_h /= kept
    entropy = _log_multinomial(counts) / n
    value = entropy + float(np.trapezoid(mean_h, beta_grid)) / n
    swap_rate = swap_accepts / swap_attempts if swap_attempts else 1.0
    return value, mean_h, swap_rate


def mcmc_free_energy(
    N,
    kappa,
    beta,
    d,
    n_disorder=8,
    n_beta=9,
    sweeps=300,
    burn=150,
    seed=0,
    threads=1,
):
    """Constrained free energy by pair-swap Metropolis with parallel tempering
    and thermodynamic integration from the exact zero-temperature-side entropy."""
    counts = d.counts(N)
    if n_disorder < 2:
        raise ValidationError("need at least 2 disorder draws")
    beta_grid = np.linspace(0.0, beta, max(n_beta, 2))

    def one(i):
        g = DisorderInstance(N, seed, draw=i)
        rng = stream(seed, 0x3C3C, N, i)
        return _ti_instance(g, counts, beta, beta_grid, sweeps, burn, rng)

    results = map_indexed(one, n_disorder, threads)
    values = np.asarray([r[0] for r in results])
    grid_means = np.mean([r[1] for r in results], axis=0)
    swap_rate = float(np.mean([r[2] for r in results]))
    warnings = []
    if beta > 0 and swap_rate < 0.01:
        warnings.append(f"tempering swap acceptance {swap_rate:.4f} below 1%")
    return EvalResult(
        float(values.mean()),
        jackknife_se(values),
        "mcmc",
        {
            "n_disorder": n_disorder,
            "beta_grid": [float(b) for b in beta_grid],
            "grid_mean_energy": [float(v) for v in grid_means],
            "swap_acceptance": swap_rate,
            "warnings": warnings,
            "entropy_term": _log_multinomial(counts) / N,
        },
    )


def overlap_array_from_replicas(replicas, kappa):
    """Pairwise overlap traces and blocks for an (n, N) replica label array."""
    replicas = np.asarray(replicas, dtype=np.int64)
    n, n_sites = replicas.shape
    onehot = (replicas[:, :, None] == np.arange(1, kappa + 1)[None, None, :]).astype(float)
    blocks = np.einsum("aik,bil->abkl", onehot, onehot) / n_sites
    traces = np.trace(blocks, axis1=2, axis2=3)
    return OverlapArray(traces, blocks)


def gibbs_replicas(g, beta, d, n_replicas, method="exact", seed=0, sweeps=300, burn=150, thin=10):
    """I.i.d. replicas from the constrained Gibbs measure, plus their overlaps.

    Exact sampling enumerates the Boltzmann probabilities; the mcmc method
    thins a long pair-swap chain.
    """
    if n_replicas < 1:
        raise ValidationError("need at least one replica")
    counts = d.counts(g.N)
    rng = stream(seed, 0x61BB, g.N, g.draw)
    if method == "exact":
        configs = enumerate_configs(g.N, d.kappa, counts)
        h = _config_energies(configs, g.g)
        logp = beta * h - logsumexp(beta * h)
        picks = rng.choice(configs.shape[0], size=n_replicas, p=np.exp(logp))
        replicas = configs[picks]
    elif method == "mcmc":
        sqrt_n = np.sqrt(g.N)
        s_sum = g.g + g.g.T
        sigma = _initial_configuration(counts)
        rng.shuffle(sigma)
        for _ in range(burn):
            _pair_swap_sweep(sigma, s_sum, beta, sqrt_n, rng)
        out = []
        while len(out) < n_replicas:
            for _ in range(thin):
                _pair_swap_sweep(sigma, s_sum, beta, sqrt_n, rng)
            out.append(sigma.copy())
        replicas = np.asarray(out)
    else:
        raise ValidationError(f"unknown sampling method {method!r}")
    return replicas, overlap_array_from_replicas(replicas, d.kappa)


@dataclass(frozen=True)
class PerturbationSpec:
    """Parameters of one perturbation covariance: Hadamard power p, powers
    n_1..n_m, and direction vectors lambda^1..lambda^m in [-1, 1]^kappa.

    codes are the encoding lengths of the lambda vectors, used only in the
    summability index; the caller fixes the encoding.
    """

    p: int
    n: tuple
    lambdas: np.ndarray
    codes: tuple | None = None

    def __post_init__(self):
        if self.p < 1:
            raise ValidationError("p must be at least 1")
        n = tuple(int(v) for v in self.n)
        if len(n) < 1 or any(v < 1 for v in n):
            raise ValidationError("each n_j must be at least 1")
        lams = np.asarray(self.lambdas, dtype=float)
        if lams.ndim != 2 or lams.shape[0] != len(n):
            raise ValidationError("need one lambda vector per n_j")
        if np.max(np.abs(lams)) > 1.0 + 1e-12:
            raise ValidationError("lambda entries must lie in [-1, 1]")
        codes = (0,) * len(n) if self.codes is None else tuple(int(c) for c in self.codes)
        if len(codes) != len(n) or any(c < 0 for c in codes):
            raise ValidationError("need one nonnegative code length per lambda")
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "lambdas", _freeze(lams))
        object.__setattr__(self, "codes", codes)

    @property
    def m(self):
        return len(self.n)

    @property
    def j_index(self):
        """Summability index: p + sum n_j + sum code lengths + 4m."""
        return self.p + sum(self.n) + sum(self.codes) + 4 * self.m


def perturbation_covariance(spec, R):
    """Product over j of (lambda_j^T R^{hadamard p} lambda_j)^{n_j}."""
    r = R.entries if isinstance(R, OverlapMatrix) else np.asarray(R, dtype=float)
    hp = r**spec.p
    out = 1.0
    for nj, lam in zip(spec.n, spec.lambdas):
        out *= float(lam @ hp @ lam) ** nj
    return out


def quadratic_forms(spec, R):
    """The m quadratic forms (lambda_j^T R^{hadamard p} lambda_j)."""
    r = R.entries if isinstance(R, OverlapMatrix) else np.asarray(R, dtype=float)
    hp = r**spec.p
    return np.array([float(lam @ hp @ lam) for lam in spec.lambdas])


def perturbation_scale(N, gamma=0.375):
    """The perturbation magnitude N^gamma; gamma must lie in (1/4, 1/2)."""
    if not 0.25 < gamma < 0.5:
        raise ValidationError("gamma must lie in (1/4, 1/2)")
    return float(N**gamma)


class PerturbationHamiltonian:
    """The weighted perturbation field over an enumerable configuration set.

    Each component is a centered Gaussian process with covariance
    perturbation_covariance(theta, R(sigma, sigma')), realized by factorizing
    the covariance matrix over the set instead of materializing the
    exponentially large index sum.  values[c] is sum_theta 2^{-j(theta)}
    u_theta h_theta at configuration index c.
    """

    def __init__(self, specs, u, configs, kappa, seed=0):
        configs = np.asarray(configs, dtype=np.int64)
        n_conf = configs.shape[0]
        if n_conf > FACTOR_BUDGET:
            raise BudgetError(
                f"{n_conf} configurations exceed the covariance factorization "
                f"budget {FACTOR_BUDGET}"
            )
        u = np.asarray(u, dtype=float)
        if u.size != len(specs):
            raise ValidationError("need one weight per perturbation spec")
        if len(specs) and (np.min(u) < 1.0 or np.max(u) > 2.0):
            raise ValidationError("weights must lie in [1, 2]")
        self.specs = tuple(specs)
        self.u = u
        self.configs = configs
        self.kappa = kappa
        overlaps = overlap_array_from_replicas(configs, kappa) if n_conf else None
        self.components = []
        total = np.zeros(n_conf)
        for t, spec in enumerate(self.specs):
            cov = np.empty((n_conf, n_conf))
            for a in range(n_conf):
                for b in range(n_conf):
                    cov[a, b] = perturbation_covariance(spec, overlaps.blocks[a, b])
            lam, vec = np.linalg.eigh(0.5 * (cov + cov.T))
            factor = vec * np.sqrt(np.clip(lam, 0.0, None))
            h = factor @ stream(seed, 0x9E7, t).standard_normal(n_conf)
            self.components.append(h)
            total += 2.0 ** (-spec.j_index) * u[t] * h
        self.values = total

    def value(self, index):
        return float(self.values[index])

    def variance_bound(self):
        """Deterministic bound on the total variance: (sum 2^{-j} u_t)^2."""
        return float(sum(2.0 ** (-s.j_index) * w for s, w in zip(self.specs, self.u))) ** 2


def _cov_with_se(x, y):
    """Sample cross-moment of two centered samples, with its standard error."""
    prod = x * y
    return float(prod.mean()), float(prod.std(ddof=1) / np.sqrt(prod.size))


def ass_covariance_check(N, M, kappa, n_pairs=3, n_draws=10_000, seed=0):
    """Empirical check of the cavity decomposition covariances.

    For sampled configuration pairs, verifies over fresh disorder that the
    local-field covariance is (2N/(N+M)) R, the correction-field covariance is
    (N/(N+M)) sum R^2, and the split H' + sqrt(M) Y reproduces the covariance
    of the original Hamiltonian exactly.
    """
    if n_draws < 100:
        raise ValidationError("need at least 100 disorder draws")
    rng = stream(seed, 0xA55)
    pairs = [(np.ones(N, dtype=np.int64), np.ones(N, dtype=np.int64))]
    while len(pairs) < n_pairs:
        pairs.append(
            (rng.integers(1, kappa + 1, size=N), rng.integers(1, kappa + 1, size=N))
        )
    checks = []
    for idx, (s1, s2) in enumerate(pairs):
        r = overlap(s1, s2, kappa).entries
        draws = stream(seed, 0xA55, 1, idx)
        pair_report = {"pair": idx, "sigma1": s1.tolist(), "sigma2": s2.tolist()}
        if M > 0:
            # local fields at cavity site 1, shared couplings across replicas
            c = draws.standard_normal((n_draws, N)) + draws.standard_normal((n_draws, N))
            onehot1 = (s1[:, None] == np.arange(1, kappa + 1)).astype(float)
            onehot2 = (s2[:, None] == np.arange(1, kappa + 1)).astype(float)
            z1 = c @ onehot1 / np.sqrt(N + M)
            z2 = c @ onehot2 / np.sqrt(N + M)
            z_err = np.zeros((kappa, kappa))
            z_se = np.zeros((kappa, kappa))
            target_z = 2.0 * N / (N + M) * r
            for k in range(kappa):
                for kp in range(kappa):
                    est, se = _cov_with_se(z1[:, k], z2[:, kp])
                    z_err[k, kp] = est - target_z[k, kp]
                    z_se[k, kp] = se
            pair_report["z_max_error"] = float(np.max(np.abs(z_err)))
            pair_report["z_passed"] = bool(np.all(np.abs(z_err) <= 3.0 * z_se + 1e-12))
        gp = draws.standard_normal((n_draws, N * N))
        mask1 = (s1[:, None] == s1[None, :]).astype(float).ravel()
        mask2 = (s2[:, None] == s2[None, :]).astype(float).ravel()
        y1 = gp @ mask1 / np.sqrt(N * (N + M))
        y2 = gp @ mask2 / np.sqrt(N * (N + M))
        y_est, y_se = _cov_with_se(y1, y2)
        target_y = N / (N + M) * float(np.sum(r**2))
        pair_report["y_estimate"] = y_est
        pair_report["y_target"] = target_y
        pair_report["y_passed"] = bool(abs(y_est - target_y) <= 3.0 * y_se + 1e-12)
        # exact covariance identity of the split: N sum R^2 on both sides
        lhs = N * float(np.sum(r**2))
        rhs = N**2 / (N + M) * float(np.sum(r**2)) + M * target_y
        pair_report["split_identity_residual"] = abs(lhs - rhs)
        checks.append(pair_report)
    passed = all(
        c.get("z_passed", True) and c["y_passed"] and c["split_identity_residual"] <= 1e-10
        for c in checks
    )
    return {"N": N, "M": M, "kappa": kappa, "n_draws": n_draws, "pairs": checks, "passed": passed}
