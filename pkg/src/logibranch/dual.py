"""The dual side: a finite-N Moran model with selection and one-way
mutation, the branching-coalescing ancestral graph embedded in it, and
the Wright-Fisher diffusion limit

    dp = (-mu*p + s*p*(1-p)) dt + sqrt(nu*p*(1-p)) dW,   p_0 in [0,1],

with 0 absorbing.  Provides the classical scale/speed machinery, the
stationary density of the diffusion conditioned never to be absorbed,
and the large-time density of the diffusion conditioned on current
survival (its Yaglom limit), which carries the conditioned transition
rates of the branching process.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import io
from .errors import NumericalFailure
from .quadrature import tanh_sinh_nodes
from .rng import stream

__all__ = [
    "MoranRealization",
    "DensityGrid",
    "DiffusionPath",
    "moran_simulate",
    "asg_trace",
    "sde_simulate",
    "sde_simulate_conditioned",
    "sde_endpoints",
    "conditioned_endpoints",
    "speed_scale",
    "conditioned_stationary_density",
    "yaglom_density",
    "default_dt",
    "ConditionedDrift",
]

MUTATION, RESAMPLING, SELECTION = 0, 1, 2


# ---------------------------------------------------------------------------
# Moran model and its ancestral graph
# ---------------------------------------------------------------------------

@dataclass
class MoranRealization:
    """Complete event log of one Moran run (all individuals start type a).

    Events: (kind, i, j, time).  Mutation flips individual i to type A;
    resampling copies j's type onto i; selection copies j's type-a onto
    i only when i is type A and j is type a.  The log is retained so a
    backward ancestry pass can replay exactly the forward randomness.
    """

    N: int
    s: float
    nu: float
    mu: float
    t: float
    times: np.ndarray
    kinds: np.ndarray
    ii: np.ndarray
    jj: np.ndarray

    def __len__(self) -> int:
        return len(self.times)

    def forward_types(self) -> np.ndarray:
        """Types at the horizon: ``True`` means type a."""
        a = np.ones(self.N, dtype=bool)
        kinds = self.kinds.tolist()
        ii = self.ii.tolist()
        jj = self.jj.tolist()
        for n in range(len(kinds)):
            k = kinds[n]
            if k == MUTATION:
                a[ii[n]] = False
            elif k == RESAMPLING:
                a[ii[n]] = a[jj[n]]
            else:
                if a[jj[n]] and not a[ii[n]]:
                    a[ii[n]] = True
        return a

    def fraction_a_path(self) -> tuple[np.ndarray, np.ndarray]:
        """Piecewise-constant path of the type-a fraction (times, values)."""
        a = np.ones(self.N, dtype=bool)
        count = self.N
        times = [0.0]
        vals = [1.0]
        for n in range(len(self.times)):
            k = self.kinds[n]
            i = self.ii[n]
            j = self.jj[n]
            if k == MUTATION:
                if a[i]:
                    a[i] = False
                    count -= 1
            elif k == RESAMPLING:
                if a[i] != a[j]:
                    count += 1 if a[j] else -1
                    a[i] = a[j]
            else:
                if a[j] and not a[i]:
                    a[i] = True
                    count += 1
            times.append(self.times[n])
            vals.append(count / self.N)
        return np.asarray(times), np.asarray(vals)


def moran_simulate(N: int, s: float, nu: float, mu: float, t: float, seed: int) -> MoranRealization:
    """Simulate the Moran event log on [0, t].

    Poisson intensities: ``mu`` per individual for mutation, ``nu/2`` per
    ordered pair for resampling, ``s/N`` per ordered pair for selection.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if min(s, nu, mu) < 0:
        raise ValueError("rates must be >= 0")
    if not t > 0:
        raise ValueError(f"horizon must be > 0, got {t}")
    rng = stream(seed)
    pairs = N * (N - 1)
    totals = (N * mu, pairs * nu / 2.0, pairs * s / N)
    counts = [rng.poisson(rate * t) for rate in totals]
    times = rng.uniform(0.0, t, sum(counts))
    kinds = np.repeat(np.array([MUTATION, RESAMPLING, SELECTION], dtype=np.int8), counts)
    ii = rng.integers(0, N, sum(counts))
    jj = rng.integers(0, N - 1, sum(counts))
    jj += jj >= ii  # uniform over j != i
    order = np.argsort(times, kind="stable")
    return MoranRealization(N, s, nu, mu, t, times[order], kinds[order], ii[order], jj[order])


def asg_trace(real: MoranRealization, sample) -> tuple[bool, np.ndarray, np.ndarray]:
    """Trace the ancestry of ``sample`` backwards through the event log.

    Replays the same events in reverse order: a mutation prunes the
    lineage (its type is known to be A), a resampling moves lineage i
    onto j (coalescing if j is already traced), a selection event on a
    traced lineage branches it, adding j as a potential ancestor.

    Returns ``(survived, backward_times, lineage_counts)`` where
    ``survived`` is True when at least one lineage persists all the way
    back to forward time 0.
    """
    sample = list(dict.fromkeys(int(i) for i in sample))
    if not sample:
        raise ValueError("sample must be nonempty")
    if min(sample) < 0 or max(sample) >= real.N:
        raise ValueError("sample ids out of range")
    xi = set(sample)
    utimes = [0.0]
    kappa = [len(xi)]
    kinds = real.kinds.tolist()
    ii = real.ii.tolist()
    jj = real.jj.tolist()
    times = real.times.tolist()
    for n in range(len(times) - 1, -1, -1):
        i = ii[n]
        if i not in xi:
            continue
        k = kinds[n]
        if k == MUTATION:
            xi.discard(i)
        elif k == RESAMPLING:
            xi.discard(i)
            xi.add(jj[n])
        else:
            xi.add(jj[n])
        u = real.t - times[n]
        if kappa[-1] != len(xi):
            utimes.append(u)
            kappa.append(len(xi))
        if not xi:
            break
    return bool(xi), np.asarray(utimes), np.asarray(kappa, dtype=np.int64)


# ---------------------------------------------------------------------------
# Diffusion simulation
# ---------------------------------------------------------------------------

@dataclass
class DiffusionPath:
    """Values of a [0,1]-valued diffusion on a uniform time grid."""

    times: np.ndarray
    values: np.ndarray

    def to_csv(self, path) -> None:
        io.write_csv(path, ["time", "p"], zip(self.times, self.values))


def default_dt(s: float, nu: float, mu: float) -> float:
    """1e-3 of the fastest characteristic time of the dynamics."""
    return 1e-3 / max(s, nu, mu)


def _drift_free(p, s, nu, mu):
    return -mu * p + s * p * (1.0 - p)


_MAX_INCREMENT = 0.1
_MAX_HALVINGS = 16


def _em_advance(p, dt, rng, drift, nu, absorbing, depth=0):
    """One Euler-Maruyama step, halved recursively while any proposed
    increment exceeds 0.1 in magnitude."""
    live = p > 0.0 if absorbing else np.ones_like(p, dtype=bool)
    inc = np.zeros_like(p)
    sig = np.sqrt(np.maximum(nu * p * (1.0 - p), 0.0))
    inc[live] = drift(p[live]) * dt + sig[live] * math.sqrt(dt) * rng.standard_normal(
        int(live.sum())
    )
    big = live & (np.abs(inc) > _MAX_INCREMENT)
    if np.any(big) and depth < _MAX_HALVINGS:
        half = _em_advance(p[big], dt / 2.0, rng, drift, nu, absorbing, depth + 1)
        half = _em_advance(half, dt / 2.0, rng, drift, nu, absorbing, depth + 1)
        out = p + inc
        out[big] = half
    else:
        out = p + inc
    if absorbing:
        out = np.clip(out, 0.0, 1.0)
    else:
        # reflect discretization overshoots; the conditioned process never
        # reaches 0
        out = np.abs(out)
        out = 1.0 - np.abs(1.0 - out)
        out[out == 0.0] = 1e-16
    return out


def _grid(t, dt):
    if not dt > 0 or dt >= t:
        raise ValueError(f"need 0 < dt < t, got dt={dt}, t={t}")
    n = max(int(round(t / dt)), 1)
    return n, t / n


def sde_simulate(s, nu, mu, p0, t, dt, seed) -> DiffusionPath:
    """Euler-Maruyama path of the free diffusion; 0 is absorbing."""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must be in [0,1], got {p0}")
    n, dt = _grid(t, dt)
    rng = stream(seed)
    drift = lambda p: _drift_free(p, s, nu, mu)
    vals = np.empty(n + 1)
    vals[0] = p0
    p = np.array([float(p0)])
    for k in range(n):
        p = _em_advance(p, dt, rng, drift, nu, absorbing=True)
        vals[k + 1] = p[0]
    return DiffusionPath(dt * np.arange(n + 1), vals)


def sde_simulate_conditioned(s, nu, mu, p0, t, dt, seed) -> DiffusionPath:
    """Path of the diffusion conditioned never to be absorbed at 0.

    The conditioning adds the repulsive term sigma^2 * s(x)/S(x) to the
    drift; the path never touches 0.  Requires p0 > 0.
    """
    if not 0.0 < p0 <= 1.0:
        raise ValueError(f"p0 must be in (0,1], got {p0}")
    n, dt = _grid(t, dt)
    rng = stream(seed)
    drift = ConditionedDrift(s, nu, mu)
    vals = np.empty(n + 1)
    vals[0] = p0
    p = np.array([float(p0)])
    for k in range(n):
        p = _em_advance(p, dt, rng, drift, nu, absorbing=False)
        vals[k + 1] = p[0]
    return DiffusionPath(dt * np.arange(n + 1), vals)


def sde_endpoints(s, nu, mu, p0, t, dt, n_paths, seed) -> np.ndarray:
    """Terminal values of ``n_paths`` independent free-diffusion paths."""
    if not 0.0 <= p0 <= 1.0:
        raise ValueError(f"p0 must be in [0,1], got {p0}")
    n, dt = _grid(t, dt)
    rng = stream(seed)
    drift = lambda p: _drift_free(p, s, nu, mu)
    p = np.full(n_paths, float(p0))
    for _ in range(n):
        p = _em_advance(p, dt, rng, drift, nu, absorbing=True)
    return p


def conditioned_endpoints(s, nu, mu, p0, t, dt, n_paths, seed, thin=None):
    """Terminal (and optionally thinned interior) values of conditioned paths.

    With ``thin=k`` also returns every k-th step of every path as a
    flattened sample array, for long-run histogram estimates.
    """
    if not 0.0 < p0 <= 1.0:
        raise ValueError(f"p0 must be in (0,1], got {p0}")
    n, dt = _grid(t, dt)
    rng = stream(seed)
    drift = ConditionedDrift(s, nu, mu)
    p = np.full(n_paths, float(p0))
    kept = []
    for k in range(n):
        p = _em_advance(p, dt, rng, drift, nu, absorbing=False)
        if thin and (k + 1) % thin == 0:
            kept.append(p.copy())
    if thin:
        return p, np.concatenate(kept)
    return p


# ---------------------------------------------------------------------------
# Scale, speed, and conditioned densities
# ---------------------------------------------------------------------------

def _log_scale_density(x, s, nu, mu):
    # log of the scale density exp(-2sx/nu) * (1-x)^(-2mu/nu)
    return -2.0 * s * x / nu - (2.0 * mu / nu) * np.log1p(-x)


_TS_U, _TS_W = tanh_sinh_nodes(7)


def _log_S(x, s, nu, mu):
    """log of S(x) = int_0^x scale density, stable for extreme exponents.

    Substituting z = x*u puts the integrand's sharp features (the
    exponential decay scale nu/s near 0 and the power blowup layer of
    width 1-x near x) at the endpoints of (0,1), where the tanh-sinh
    nodes cluster double-exponentially; a max-shift keeps the
    exponentials in range.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = x[:, None] * _TS_U[None, :]
    g = _log_scale_density(z, s, nu, mu)
    gmax = g.max(axis=1)
    out = np.log(x) + gmax + np.log(
        np.einsum("ij,j->i", np.exp(g - gmax[:, None]), _TS_W)
    )
    return out


def speed_scale(s: float, nu: float, mu: float):
    """Scale density, scale function, and speed density as callables.

    s(x) = exp(-2sx/nu)(1-x)^(-2mu/nu);  S(x) = int_0^x s;
    m(x) = 1/(s(x) * nu x(1-x)).  S(1) is finite iff mu < nu/2.
    """
    if not nu > 0:
        raise ValueError(f"nu must be > 0, got {nu}")

    def s_fun(x):
        x = np.asarray(x, dtype=float)
        return np.exp(_log_scale_density(x, s, nu, mu))

    def S_fun(x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if np.any((x < 0) | (x > 1)):
            raise ValueError("S is defined on [0, 1]")
        out = np.zeros_like(x)
        interior = (x > 0) & (x < 1)
        out[interior] = np.exp(_log_S(x[interior], s, nu, mu))
        if np.any(x == 1.0):
            if 2.0 * mu / nu >= 1.0:
                out[x == 1.0] = np.inf
            else:
                nodes, weights = tanh_sinh_nodes(10)
                out[x == 1.0] = float(
                    np.dot(weights, np.exp(_log_scale_density(nodes, s, nu, mu)))
                )
        return float(out[0]) if scalar else out

    def m_fun(x):
        x = np.asarray(x, dtype=float)
        if np.any((x <= 0) | (x >= 1)):
            raise ValueError("speed density is defined on the open interval (0, 1)")
        return np.exp(-_log_scale_density(x, s, nu, mu)) / (nu * x * (1.0 - x))

    return s_fun, S_fun, m_fun


@dataclass
class DensityGrid:
    """A density tabulated on (0,1) with quadrature weights.

    ``sum(weights * values)`` is 1 when ``normalized``.  ``decay_rate``
    is set by :func:`yaglom_density` (the exponential rate at which the
    survival probability of the underlying diffusion decays).
    """

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    normalized: bool = True
    decay_rate: float | None = None

    def integrate(self, f) -> float:
        """Integral of ``f`` (callable or values at nodes) against the density."""
        fx = f(self.nodes) if callable(f) else np.asarray(f)
        return float(np.dot(self.weights * self.values, fx))

    def moments_one_minus_power(self, kmax: int) -> np.ndarray:
        """I_k = integral of 1-(1-x)^k for k = 1..kmax, in one sweep."""
        ks = np.arange(1, kmax + 1)
        f = -np.expm1(ks[:, None] * np.log1p(-self.nodes)[None, :])
        return f @ (self.weights * self.values)

    def to_csv(self, path) -> None:
        io.write_csv(path, ["x", "weight", "value"],
                     zip(self.nodes, self.weights, self.values))


def conditioned_stationary_density(s, nu, mu, grid_size: int = 2000) -> DensityGrid:
    """Stationary density of the diffusion conditioned never to hit 0.

    Proportional to m(x) S(x)^2 when mu < nu (the conditioned speed
    density, which is then integrable) and to m(x) S(x) when mu >= nu
    (the only integrable stationary solution; m S^2 diverges near 1).
    Normalization by tanh-sinh quadrature, refined until the normalizer
    is stable to 1e-6 relative.
    """
    if not (nu > 0 and mu > 0):
        raise ValueError("need nu > 0 and mu > 0")
    power = 2 if mu < nu else 1
    level = 6
    while 2 ** (level + 1) < grid_size:
        level += 1
    prev = None
    for lv in range(level, 14):
        x, w = tanh_sinh_nodes(lv)
        logv = (
            -_log_scale_density(x, s, nu, mu)
            - np.log(nu * x * (1.0 - x))
            + power * _log_S(x, s, nu, mu)
        )
        shift = logv.max()
        v = np.exp(logv - shift)
        norm = float(np.dot(w, v))
        if prev is not None and abs(norm - prev) <= 1e-6 * norm:
            return DensityGrid(x, w, v / norm)
        prev = norm
    raise NumericalFailure(
        "conditioned stationary density did not normalize stably",
        diagnostics={"s": s, "nu": nu, "mu": mu, "last_normalizer": prev},
    )


class ConditionedDrift:
    """Drift of the conditioned diffusion: beta(x) + sigma^2(x) s(x)/S(x).

    The correction equals nu(1-x) as x -> 0 (the repulsion that forbids
    absorption) and is evaluated from a precomputed table because the
    naive quotient is 0/0 there and over/underflows elsewhere.
    """

    def __init__(self, s, nu, mu, table_size: int = 1600):
        if not nu > 0:
            raise ValueError(f"nu must be > 0, got {nu}")
        self.s, self.nu, self.mu = s, nu, mu
        lo = np.geomspace(1e-9, 0.05, table_size // 4)
        mid = np.linspace(0.05, 0.95, table_size // 2)
        hi = 1.0 - np.geomspace(1e-9, 0.05, table_size // 4)[::-1]
        x = np.unique(np.concatenate([lo, mid, hi]))
        log_push = (
            np.log(nu * x * (1.0 - x))
            + _log_scale_density(x, s, nu, mu)
            - _log_S(x, s, nu, mu)
        )
        self._x = x
        self._push = np.exp(np.clip(log_push, -745.0, 705.0))

    def push(self, p):
        """The conditioning term sigma^2 s/S, interpolated."""
        p = np.asarray(p, dtype=float)
        small = p < self._x[0]
        out = np.interp(p, self._x, self._push)
        if np.any(small):
            out = np.where(small, self.nu * (1.0 - p), out)
        return out

    def __call__(self, p):
        return _drift_free(p, self.s, self.nu, self.mu) + self.push(p)


def _nonuniform_grid(s, nu, mu, size):
    parts = [
        np.geomspace(1e-8, 0.02, size // 6),
        np.linspace(0.02, 0.98, size - 2 * (size // 6)),
        1.0 - np.geomspace(1e-8, 0.02, size // 6)[::-1],
    ]
    if s > mu and nu < 0.05 * (s - mu):
        # weak competition: the mass is a spike around the deterministic
        # equilibrium; refine there or the eigensolve cannot see it
        pbar = 1.0 - mu / s
        sd = (1.0 - pbar) * math.sqrt(nu / (2.0 * mu))
        lo = max(1e-6, pbar - 60 * sd)
        hi = min(1.0 - 1e-6, pbar + 60 * sd)
        parts.append(np.linspace(lo, hi, size))
    return np.unique(np.concatenate(parts))


def yaglom_density(s, nu, mu, grid_size: int = 4000) -> DensityGrid:
    """Large-time density of p_t conditioned on {p_t > 0}.

    Discretizes the generator on a nonuniform grid as a birth-death
    chain (drift upwinded wherever the diffusion term cannot carry it),
    and extracts the top eigenpair of the symmetrized tridiagonal
    matrix.  The left eigenvector is the conditioned density; minus the
    eigenvalue is the decay rate of the survival probability.
    """
    if not (nu > 0 and mu > 0 and s >= 0):
        raise ValueError("need nu > 0, mu > 0, s >= 0")
    x = _nonuniform_grid(s, nu, mu, grid_size)
    hm = np.diff(x, prepend=x[0] - (x[1] - x[0]))      # x_i - x_{i-1}
    hp = np.diff(x, append=x[-1] + (x[-1] - x[-2]))    # x_{i+1} - x_i
    sig2 = nu * x * (1.0 - x)
    beta = _drift_free(x, s, nu, mu)
    diff_up = sig2 / (hp * (hp + hm))
    diff_dn = sig2 / (hm * (hp + hm))
    central_ok = (diff_up + beta / (hp + hm) >= 0) & (diff_dn - beta / (hp + hm) >= 0)
    up = np.where(central_ok, diff_up + beta / (hp + hm), diff_up + np.maximum(beta, 0) / hp)
    dn = np.where(central_ok, diff_dn - beta / (hp + hm), diff_dn + np.maximum(-beta, 0) / hm)
    up[-1] = 0.0  # no flux through 1
    # down-rate at the first node is the killing rate at 0
    diag = -(up + dn)
    with np.errstate(divide="ignore"):
        logw = np.concatenate([[0.0], np.cumsum(np.log(up[:-1]) - np.log(dn[1:]))])
    off = np.sqrt(up[:-1] * dn[1:])
    n = len(x)
    vals, vecs = eigh_tridiagonal(diag, off, select="i", select_range=(n - 1, n - 1))
    u = vecs[:, 0]
    if u[int(np.argmax(np.abs(u)))] < 0:
        u = -u
    log_mass = 0.5 * logw + np.log(np.maximum(np.abs(u), 1e-300))
    log_mass -= log_mass.max()
    mass = np.exp(log_mass) * np.where(u < 0, 0.0, 1.0)
    total = mass.sum()
    if not np.isfinite(total) or total <= 0:
        raise NumericalFailure(
            "conditioned-density eigensolve produced a degenerate vector",
            diagnostics={"s": s, "nu": nu, "mu": mu},
        )
    mass /= total
    cell = 0.5 * (hp + hm)
    return DensityGrid(x, cell, mass / cell, decay_rate=float(-vals[0]))
