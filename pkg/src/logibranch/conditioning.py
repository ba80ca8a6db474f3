"""Transition rates of the logistic branching process conditioned on
survival.

Conditioned on surviving to a fixed horizon T, the chain is a
time-inhomogeneous birth-death process whose rates are the unconditioned
ones multiplied by ratios of survival probabilities; by duality those
probabilities are moments E[1-(1-p_tau)^k] of the Wright-Fisher
diffusion started from 1.  Conditioned to survive forever (the
Q-process), the ratios converge to moment ratios of the diffusion's
large-time conditioned density, which gives a time-homogeneous chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln
from scipy.stats import wasserstein_distance

from . import io
from .dual import default_dt, _em_advance, _drift_free, yaglom_density
from .errors import KTooSmall, NumericalFailure, UnsupportedRegime
from .model import ModelParams, simulate_endpoints
from .rng import derive, stream

__all__ = [
    "RateTable",
    "StationaryPMF",
    "MomentEstimates",
    "dual_params",
    "survival_moments",
    "rate_table_T",
    "rate_table_Q",
    "q_stationary",
    "q_process_occupation",
    "r_star_weak",
    "r_star_weak_limit",
    "scaling_check",
    "ALPHA_CONVENTIONS",
]


def dual_params(p: ModelParams) -> tuple[float, float, float]:
    """Diffusion parameters (s, nu, mu) dual to the chain (b, c, d).

    Matching generators against the duality function 1-(1-p)^z forces
    s = b, mu = d and nu = 2c: the second-derivative term
    (nu/2) p(1-p) must reproduce the pairwise competition rate
    c·z(z-1), so the noise coefficient carries twice the competition
    rate.
    """
    return p.b, 2.0 * p.c, p.d


# ---------------------------------------------------------------------------
# Survival-probability moments of the dual diffusion
# ---------------------------------------------------------------------------

@dataclass
class MomentEstimates:
    """Monte Carlo estimates of E[1-(1-p_t)^k], k = 1..kmax."""

    estimates: np.ndarray
    standard_errors: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        """True where the sample was too small: SE above 1% of the value,
        or no surviving path contributed at all."""
        with np.errstate(divide="ignore", invalid="ignore"):
            ok = (self.estimates > 0) & (self.standard_errors <= 0.01 * self.estimates)
        return ~ok


def survival_moments(s, nu, mu, t, kmax, M, dt=None, seed=0) -> MomentEstimates:
    """Plain Monte Carlo moments from M free-diffusion paths, p_0 = 1.

    These are absolute survival probabilities, so for large t (when the
    diffusion is almost surely absorbed) the estimates vanish and the
    ``flagged`` mask lights up; use :func:`rate_table_T` for the ratios,
    which remain O(1).
    """
    if not t > 0:
        raise ValueError(f"t must be > 0, got {t}")
    if kmax < 1:
        raise ValueError(f"kmax must be >= 1, got {kmax}")
    if dt is None:
        dt = default_dt(s, nu, mu)
    rng = stream(seed)
    n = max(int(round(t / dt)), 1)
    step = t / n
    p = np.ones(M)
    drift = lambda q: _drift_free(q, s, nu, mu)
    for _ in range(n):
        p = _em_advance(p, step, rng, drift, nu, absorbing=True)
    ks = np.arange(1, kmax + 1)
    with np.errstate(divide="ignore"):
        f = -np.expm1(ks[:, None] * np.log1p(-p)[None, :])
    f[:, p >= 1.0] = 1.0
    est = f.mean(axis=1)
    se = f.std(axis=1, ddof=1) / math.sqrt(M)
    return MomentEstimates(est, se)


def _conditional_moments(s, nu, mu, tau, kmax, M, dt, seed, n_groups=8):
    """Group-wise conditional moments E[1-(1-p_tau)^k | p_tau > 0].

    Particles that are absorbed are immediately restarted at the
    position of a surviving particle chosen at random (within their
    group), so the ensemble tracks the conditioned law even at times
    where the unconditional survival probability is astronomically
    small.  Returns an (n_groups, kmax) matrix of group estimates.
    """
    rng = stream(seed)
    per = max(M // n_groups, 2)
    ks = np.arange(1, kmax + 1)
    out = np.empty((n_groups, kmax))
    n = max(int(round(tau / dt)), 1) if tau > 0 else 0
    step = tau / n if n else 0.0
    drift = lambda q: _drift_free(q, s, nu, mu)
    for g in range(n_groups):
        p = np.ones(per)
        for _ in range(n):
            p = _em_advance(p, step, rng, drift, nu, absorbing=True)
            dead = np.flatnonzero(p <= 0.0)
            if dead.size:
                alive = np.flatnonzero(p > 0.0)
                if alive.size == 0:
                    raise NumericalFailure(
                        "every particle absorbed in one step; decrease dt",
                        diagnostics={"s": s, "nu": nu, "mu": mu, "tau": tau},
                    )
                p[dead] = p[rng.choice(alive, dead.size)]
        with np.errstate(divide="ignore"):
            f = -np.expm1(ks[:, None] * np.log1p(-p)[None, :])
        f[:, p >= 1.0] = 1.0
        out[g] = f.mean(axis=1)
    return out


def _moran_moment_groups(s, nu, mu, tau, kmax, n_real, N, seed, n_groups=8):
    """Finite-N route: P(ancestral graph of a size-k sample survives tau).

    Uses the per-realization nesting of samples {0..k-1} so one event log
    serves every k.
    """
    from .dual import asg_trace, moran_simulate

    out = np.zeros((n_groups, kmax))
    per = max(n_real // n_groups, 1)
    for g in range(n_groups):
        hits = np.zeros(kmax)
        for r in range(per):
            real = moran_simulate(N, s, nu, mu, tau, seed=derive(seed, g, r))
            for k in range(1, kmax + 1):
                survived, _, _ = asg_trace(real, range(k))
                hits[k - 1] += survived
        out[g] = hits / per
    return out


@dataclass
class RateTable:
    """Conditioned birth/death rates up to a state cap K.

    ``up[k-1]`` is the conditioned rate k -> k+1 for k = 1..K-1;
    ``down[k-2]`` the rate k -> k-1 for k = 2..K.  ``kind`` is either
    ``q_process`` (homogeneous, conditioned to survive forever) or
    ``fixed_horizon`` (the rates of Z | survival to T, evaluated at
    time t).
    """

    params: ModelParams
    kind: str
    K: int
    up: np.ndarray
    down: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def up_rate(self, k: int) -> float:
        if not 1 <= k <= self.K - 1:
            raise ValueError(f"up rate defined for 1 <= k <= {self.K - 1}, got {k}")
        return float(self.up[k - 1])

    def down_rate(self, k: int) -> float:
        if not 2 <= k <= self.K:
            raise ValueError(f"down rate defined for 2 <= k <= {self.K}, got {k}")
        return float(self.down[k - 2])

    def up_factor(self, k: int) -> float:
        """Conditioning multiplier on the unconditioned birth rate at k."""
        return self.up_rate(k) / (self.params.b * k)

    def down_factor(self, k: int) -> float:
        d = self.params
        return self.down_rate(k) / (d.d * k + d.c * k * (k - 1))

    def to_json_dict(self) -> dict:
        return {
            "params": {"b": self.params.b, "c": self.params.c, "d": self.params.d},
            "kind": self.kind,
            "K": self.K,
            "up": [float(v) for v in self.up],
            "down": [float(v) for v in self.down],
            "diagnostics": {
                k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.diagnostics.items()
            },
        }


def _sandwich_check(r_up, r_dn, slack=1e-9):
    ks_up = np.arange(1, len(r_up) + 1)
    lo_ok = np.all(r_up >= 1.0 - slack)
    hi_ok = np.all(r_up <= (ks_up + 1.0) / ks_up + slack)
    ks_dn = np.arange(2, len(r_dn) + 2)
    dn_ok = np.all((r_dn >= 1.0 - 1.0 / ks_dn - slack) & (r_dn <= 1.0 + slack))
    if not (lo_ok and hi_ok and dn_ok):
        raise NumericalFailure(
            "conditioned rate factors violate their a-priori bounds",
            diagnostics={"r_up": r_up, "r_down": r_dn},
        )


def rate_table_T(
    p: ModelParams, T, t, K, M=40000, dt=None, seed=0, method="sde", moran_N=200
) -> RateTable:
    """Rates of Z conditioned on surviving to T, evaluated at time t < T.

    up(k) = b k * m_{k+1}/m_k and down(k) = (d k + c k(k-1)) * m_{k-1}/m_k
    with m_k the survival moment at the remaining time T - t.  Moment
    ratios are estimated from survivor-conditioned Monte Carlo (method
    ``sde``) or from ancestral-graph survival in a finite Moran model
    (method ``moran``; only sensible for small T - t).
    """
    if not 0 <= t < T:
        raise ValueError(f"need 0 <= t < T, got t={t}, T={T}")
    s, nu, mu = dual_params(p)
    tau = T - t
    if dt is None:
        dt = default_dt(s, nu, mu)
    if method == "sde":
        groups = _conditional_moments(s, nu, mu, tau, K, M, dt, seed)
    elif method == "moran":
        groups = _moran_moment_groups(s, nu, mu, tau, K, M, moran_N, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(divide="ignore", invalid="ignore"):
        rup_groups = groups[:, 1:] / groups[:, :-1]      # r_{k+1,k}, k=1..K-1
        rdn_groups = groups[:, :-1] / groups[:, 1:]      # r_{k-1,k}, k=2..K
    r_up = rup_groups.mean(axis=0)
    r_dn = rdn_groups.mean(axis=0)
    g = groups.shape[0]
    se_up = rup_groups.std(axis=0, ddof=1) / math.sqrt(g)
    se_dn = rdn_groups.std(axis=0, ddof=1) / math.sqrt(g)
    ks = np.arange(1, K)
    up = p.b * ks * r_up
    ks2 = np.arange(2, K + 1)
    down = (p.d * ks2 + p.c * ks2 * (ks2 - 1)) * r_dn
    return RateTable(
        p, "fixed_horizon", K, up, down,
        diagnostics={
            "T": T, "t": t, "remaining": tau, "method": method,
            "r_up": r_up, "r_down": r_dn,
            "se_up": se_up * p.b * ks,
            "se_down": se_dn * (p.d * ks2 + p.c * ks2 * (ks2 - 1)),
            "paths": M, "dt": dt,
        },
    )


def rate_table_Q(p: ModelParams, K, grid_size: int = 4000) -> RateTable:
    """Rates of the Q-process (conditioned to survive forever).

    The conditioning factors are ratios of the moments
    I_k = integral of (1-(1-z)^k) against the dual diffusion's
    large-time conditioned density; they satisfy the a-priori sandwich
    1 <= r_{k+1,k} <= (1-1/(k+1))^{-1} and are asserted to.
    """
    if K < 2:
        raise ValueError(f"K must be >= 2, got {K}")
    if p.c <= 0:
        raise UnsupportedRegime(
            "the Q-process rate table needs c > 0 (the dual diffusion "
            "degenerates when competition vanishes)"
        )
    s, nu, mu = dual_params(p)
    grid = yaglom_density(s, nu, mu, grid_size)
    I = grid.moments_one_minus_power(K)
    r_up = I[1:] / I[:-1]          # r_{k+1,k}, k = 1..K-1
    r_dn = I[:-1] / I[1:]          # r_{k-1,k}, k = 2..K
    _sandwich_check(r_up, r_dn)
    ks = np.arange(1, K)
    up = p.b * ks * r_up
    ks2 = np.arange(2, K + 1)
    down = (p.d * ks2 + p.c * ks2 * (ks2 - 1)) * r_dn
    return RateTable(
        p, "q_process", K, up, down,
        diagnostics={
            "grid_size": len(grid.nodes),
            "decay_rate": grid.decay_rate,
            "r_up": r_up, "r_down": r_dn,
        },
    )


# ---------------------------------------------------------------------------
# Q-process stationary law
# ---------------------------------------------------------------------------

@dataclass
class StationaryPMF:
    """Stationary law of the Q-process on states 1..K plus a tail bound."""

    probs: np.ndarray            # index k-1 <-> state k
    tail: float
    K: int

    def prob(self, k: int) -> float:
        return float(self.probs[k - 1])

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    def mean(self) -> float:
        return float(np.dot(np.arange(1, self.K + 1), self.probs))

    def to_csv(self, path) -> None:
        io.write_csv(path, ["k", "prob"],
                     zip(range(1, self.K + 1), self.probs))


def q_stationary(table: RateTable, tail_tol: float = 1e-6) -> StationaryPMF:
    """Detailed-balance stationary law of a Q-process rate table.

    Birth-death product form: pi(k+1)/pi(k) = up(k)/down(k+1).  The
    mass beyond K is bounded by geometric domination of the ratios,
    which decay like b/(c k); if the bound exceeds ``tail_tol`` the cap
    K is declared too small.
    """
    if table.kind != "q_process":
        raise ValueError("q_stationary needs a Q-process rate table")
    p = table.params
    K = table.K
    log_ratio = np.log(table.up) - np.log(table.down)   # k -> k+1 over k+1 -> k
    logw = np.concatenate([[0.0], np.cumsum(log_ratio)])
    logw -= logw.max()
    w = np.exp(logw)
    total = w.sum()
    # every ratio beyond K is at most b(k+1)^2 / (k^2 (d + c k)) by the
    # sandwich bounds; this is < 1 and decreasing once c k dominates b
    if p.c > 0:
        rho = p.b * (K + 1) ** 2 / (K**2 * (p.d + p.c * K))
    else:
        rho = p.b / p.d * ((K + 1) / K) ** 2
    if rho >= 1.0:
        raise KTooSmall(
            f"cannot bound the tail beyond K={K}; increase K",
            diagnostics={"rho": rho},
        )
    tail_weight = w[-1] * rho / (1.0 - rho)
    tail = tail_weight / (total + tail_weight)
    if tail > tail_tol:
        raise KTooSmall(
            f"tail mass bound {tail:.3e} exceeds {tail_tol:.1e}; increase K",
            diagnostics={"tail": tail, "K": K},
        )
    probs = w / total * (1.0 - tail)
    residual = np.max(
        np.abs(probs[:-1] * table.up - probs[1:] * table.down)
        / np.maximum(probs[:-1] * table.up, 1e-300)
    )
    pmf = StationaryPMF(probs, tail, K)
    table.diagnostics.setdefault("detailed_balance_residual", float(residual))
    return pmf


def q_process_occupation(table: RateTable, z0: int, n_events: int, seed: int):
    """Occupation-time fractions of the CTMC with the table's rates.

    The cap K reflects (no up-move at K); with a tail bound at 1e-6 the
    reflection is statistically invisible.  Returns an array over states
    1..K.
    """
    if not 1 <= z0 <= table.K:
        raise ValueError(f"z0 must be in [1, K], got {z0}")
    rng = stream(seed)
    up = np.concatenate([table.up, [0.0]])           # state K: no up
    down = np.concatenate([[0.0], table.down])       # state 1: no down
    hold = np.zeros(table.K)
    k = z0
    expo = rng.exponential(1.0, n_events)
    unif = rng.random(n_events)
    for n in range(n_events):
        u, d = up[k - 1], down[k - 1]
        hold[k - 1] += expo[n] / (u + d)
        k += 1 if unif[n] * (u + d) < u else -1
    return hold / hold.sum()


# ---------------------------------------------------------------------------
# Weak-competition closed form
# ---------------------------------------------------------------------------

ALPHA_CONVENTIONS = ("2(s-mu)/nu", "s(s-mu)/nu")


def r_star_weak_limit(rho: float, k) -> np.ndarray:
    """The c -> 0 limit of the up-conditioning factor: (1-rho^(k+1))/(1-rho^k)."""
    k = np.asarray(k, dtype=float)
    return np.expm1((k + 1) * math.log(rho)) / np.expm1(k * math.log(rho))


def r_star_weak(p: ModelParams, k, convention: str = "s(s-mu)/nu"):
    """Beta-approximation to the Q-process up-factor r_{k+1,k}.

    Valid for weak competition with positive intrinsic growth (b > d).
    Two circulating conventions for the beta concentration parameter are
    exposed; they differ by a factor b/2 and the caller can compare both
    against the full quadrature.  With c = 0 the exact limit
    (1-rho^(k+1))/(1-rho^k), rho = d/b, is returned.
    """
    if convention not in ALPHA_CONVENTIONS:
        raise ValueError(f"convention must be one of {ALPHA_CONVENTIONS}")
    s, nu, mu = dual_params(p)
    if s <= mu:
        raise UnsupportedRegime(
            f"weak-competition approximation needs b > d, got b={p.b}, d={p.d}"
        )
    rho = mu / s
    k = np.asarray(k)
    if nu == 0.0:
        return r_star_weak_limit(rho, k)
    pbar = 1.0 - mu / s
    alpha = 2.0 * (s - mu) / nu if convention == "2(s-mu)/nu" else s * (s - mu) / nu
    nu1 = alpha * (1.0 - pbar)
    nu2 = alpha * pbar

    def one_minus_moment(j):
        # 1 - E[(1-Z)^j] for Z ~ Beta(2 nu2, 2 nu1), in log space
        logE = (
            gammaln(2 * nu1 + 2 * nu2)
            - gammaln(2 * nu1 + 2 * nu2 + j)
            + gammaln(2 * nu1 + j)
            - gammaln(2 * nu1)
        )
        return -np.expm1(logE)

    return one_minus_moment(k + 1) / one_minus_moment(k)


# ---------------------------------------------------------------------------
# Scaling limit check
# ---------------------------------------------------------------------------

def scaling_check(
    feller_b, feller_c, K_sequence, horizon, n_paths=20000, dt=1e-3, seed=0,
    ref_paths=None,
) -> dict:
    """Distance between the rescaled chain and its Feller-logistic limit.

    For each K the chain with parameters (1/2, c/K^2, 1/2 - b/K), run
    for K * horizon units of chain time (the generator of the rescaled
    chain is O(1/K), so the limit lives on sped-up time) and divided by
    K, is compared at the horizon against Euler paths of
    dX = (bX - cX^2) dt + sqrt(X) dW, X_0 = 1, via the Wasserstein-1
    distance of the endpoint samples.  The reference ensemble is
    oversized (default 8x) so the sampling-noise floor of the distance
    is common across K and the trend in K stays visible.
    """
    K_sequence = list(K_sequence)
    if any(K2 <= K1 for K1, K2 in zip(K_sequence, K_sequence[1:])):
        raise ValueError("K_sequence must be increasing")
    if ref_paths is None:
        ref_paths = 8 * n_paths
    x = np.full(ref_paths, 1.0)
    rng = stream(seed, 0)
    n = max(int(round(horizon / dt)), 1)
    step = horizon / n
    for _ in range(n):
        alive = x > 0
        drift = feller_b * x - feller_c * x * x
        noise = np.sqrt(np.maximum(x, 0.0) * step) * rng.standard_normal(ref_paths)
        x = np.where(alive, np.maximum(x + drift * step + noise, 0.0), 0.0)
    reference = x
    out = {"K": [], "w1": [], "feller_b": feller_b, "feller_c": feller_c,
           "horizon": horizon, "n_paths": n_paths, "ref_paths": ref_paths}
    for j, K in enumerate(K_sequence):
        d_model = 0.5 - feller_b / K
        if d_model <= 0:
            raise ValueError(f"K={K} too small for b={feller_b}")
        params = ModelParams(0.5, feller_c / K**2, d_model)
        z, _ = simulate_endpoints(params, K, K * horizon, n_paths, seed=derive(seed, 1, j))
        out["K"].append(int(K))
        out["w1"].append(float(wasserstein_distance(z / K, reference)))
    return out
