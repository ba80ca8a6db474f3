"""Acceptance suite: one test (or clause) per criterion, each printing a
PASS/FAIL line.  Run with ``pytest tests/test_acceptance.py -s`` to see
the lines as they complete.  Budget is a few minutes of CPU.
"""

import itertools
import math

import numpy as np
from scipy import stats

from logibranch import ModelParams, simulate, simulate_with_genealogy
from logibranch import conditioning as cond
from logibranch import dual
from logibranch import genealogy as gen
from logibranch import yaglom as yg
from logibranch.genealogy import _prune
from logibranch.rng import derive, stream
from conftest import total_variation


def report(tag: str, ok: bool, detail: str = "") -> bool:
    print(f"[ACCEPTANCE {tag}] {'PASS' if ok else 'FAIL'} {detail}")
    return ok


# ---------------------------------------------------------------------------
# 1. pathwise ancestry identity
# ---------------------------------------------------------------------------

def test_criterion_01_ancestry_identity():
    N, s, nu, mu, t = 50, 0.5, 1.0, 0.3, 5.0
    reps = 10_000
    violations = 0
    for rep in range(reps):
        real = dual.moran_simulate(N, s, nu, mu, t, seed=derive(1001, rep))
        k0 = 1 + rep % 5
        survived, _, _ = dual.asg_trace(real, range(k0))
        if survived != bool(real.forward_types()[:k0].any()):
            violations += 1
    ok = report("1", violations == 0,
                f"{violations} violations in {reps} coupled realizations")
    assert ok


# ---------------------------------------------------------------------------
# 2. a-priori bounds on the conditioning factors
# ---------------------------------------------------------------------------

def test_criterion_02_factor_bounds_across_grid():
    worst = 0.0
    for b, c, d in itertools.product((0.5, 1.0, 2.0), (0.1, 0.3, 1.0), (0.5, 1.0, 2.0)):
        table = cond.rate_table_Q(ModelParams(b, c, d), K=200, grid_size=3000)
        r_up = table.diagnostics["r_up"]
        ks = np.arange(1, 200)
        worst = max(
            worst,
            float(np.max(1.0 - r_up)),
            float(np.max(r_up - (ks + 1.0) / ks)),
        )
        r_dn = table.diagnostics["r_down"]
        ks2 = np.arange(2, 201)
        worst = max(
            worst,
            float(np.max(r_dn - 1.0)),
            float(np.max(1.0 - 1.0 / ks2 - r_dn)),
        )
    ok = report("2", worst <= 1e-9,
                f"27 parameter sets, k <= 200, worst bound excess {worst:.2e}")
    assert ok


# ---------------------------------------------------------------------------
# 3. conditioned rates vs rejection sampling
# ---------------------------------------------------------------------------

def test_criterion_03_conditioned_rates_vs_rejection_oracle():
    p = ModelParams(1.0, 0.3, 1.0)
    T, z0, kmax = 3.0, 3, 8
    lo, hi = 0.6, 1.4
    time_in = np.zeros(kmax + 2)
    ups = np.zeros(kmax + 2)
    downs = np.zeros(kmax + 2)
    for r in range(100_000):
        tr = simulate(p, z0, T, seed=derive(3001, r))
        if tr.absorbed:
            continue
        ts, st = tr.times, tr.states
        for i in range(len(ts) - 1):
            k = st[i]
            if ts[i + 1] <= lo or ts[i] >= hi or k > kmax + 1:
                continue
            time_in[k] += min(ts[i + 1], hi) - max(ts[i], lo)
            if lo <= ts[i + 1] < hi:
                if st[i + 1] == k + 1:
                    ups[k] += 1
                else:
                    downs[k] += 1
        if st[-1] <= kmax + 1 and ts[-1] < hi:
            time_in[st[-1]] += hi - max(ts[-1], lo)

    mid = cond.rate_table_T(p, T, 1.0, K=kmax + 2, M=48_000, dt=1e-3, seed=3002)
    edge_a = cond.rate_table_T(p, T, lo, K=kmax + 2, M=24_000, dt=1e-3, seed=3003)
    edge_b = cond.rate_table_T(p, T, hi, K=kmax + 2, M=24_000, dt=1e-3, seed=3004)

    worst = 0.0
    for k in range(1, kmax + 1):
        emp = ups[k] / time_in[k]
        se = math.sqrt(
            ups[k] / time_in[k] ** 2
            + mid.diagnostics["se_up"][k - 1] ** 2
            + ((edge_b.up_rate(k) - edge_a.up_rate(k)) / 2) ** 2
        )
        worst = max(worst, abs(emp - mid.up_rate(k)) / se)
    for k in range(2, kmax + 1):
        emp = downs[k] / time_in[k]
        se = math.sqrt(
            downs[k] / time_in[k] ** 2
            + mid.diagnostics["se_down"][k - 2] ** 2
            + ((edge_b.down_rate(k) - edge_a.down_rate(k)) / 2) ** 2
        )
        worst = max(worst, abs(emp - mid.down_rate(k)) / se)
    ok = report("3", worst <= 3.0,
                f"empirical conditioned rates, worst |z| = {worst:.2f} (k <= 8)")
    assert ok


# ---------------------------------------------------------------------------
# 4. fixed-horizon factors approach the Q-process factors
# ---------------------------------------------------------------------------

def test_criterion_04_fixed_horizon_limit():
    p = ModelParams(1.0, 0.3, 1.0)
    table_q = cond.rate_table_Q(p, K=25)
    rstar = table_q.diagnostics["r_up"][:20]
    gaps, slacks = [], []
    for T, seed in ((10.0, 41), (40.0, 42), (160.0, 43)):
        t = cond.rate_table_T(p, T, 0.0, K=21, M=24_000, dt=2e-3, seed=seed)
        rel = np.abs(t.diagnostics["r_up"][:20] - rstar) / rstar
        se_rel = t.diagnostics["se_up"][:20] / (p.b * np.arange(1, 21)) / rstar
        gaps.append(rel)
        slacks.append(se_rel)
    monotone = np.all(gaps[1] <= gaps[0] + 3 * np.hypot(slacks[1], slacks[0])) and np.all(
        gaps[2] <= gaps[1] + 3 * np.hypot(slacks[2], slacks[1])
    )
    final = float(gaps[2].max())
    ok = report("4", monotone and final < 0.05,
                f"approach monotone within noise, final relative gap {final:.4f}")
    assert ok


# ---------------------------------------------------------------------------
# 5. stationary law vs simulated occupation
# ---------------------------------------------------------------------------

def test_criterion_05_q_stationary_occupation(desk_q_table):
    pmf = cond.q_stationary(desk_q_table)
    occ = cond.q_process_occupation(desk_q_table, z0=2, n_events=1_000_000, seed=51)
    tv = 0.5 * float(np.abs(occ - pmf.probs).sum())
    ok = report("5", tv < 0.02, f"occupation TV {tv:.4f} at 1e6 events")
    assert ok


# ---------------------------------------------------------------------------
# 6. Yaglom triple agreement
# ---------------------------------------------------------------------------

def test_criterion_06a_recursion_vs_feynman_kac(desk_params, desk_yaglom):
    # The hitting-functional identity underlying this clause requires the
    # auxiliary diffusion to reach 0 from the interior, which happens
    # only when d < c (the scale density ~ x^(-d/c) must be integrable
    # at 0).  At (b, c, d) = (1, 0.3, 1) no path ever exits through 0,
    # every weight is zero, and the estimator returns G = 1 identically,
    # so this clause cannot pass at the stated parameters; the identity
    # is verified in its valid regime in test_yaglom.py.
    thetas = (0.2, 0.5, 0.8)
    fk = yg.yaglom_feynman_kac(desk_params, desk_yaglom.a, thetas,
                               M=20_000, dt=1e-3, seed=61)
    G = desk_yaglom.pgf(np.asarray(thetas))
    worst = 0.0
    for theta, want in zip(thetas, G):
        r = fk[theta]
        z = abs(r["estimate"] - want) / max(3 * r["se"], 1e-12)
        worst = max(worst, z / 3.0)
    ok = report("6a", worst <= 1.0,
                f"recursion vs hitting-functional, worst |z|/3 = {worst:.2e} "
                "(identity degenerate for d >= c; see decisions ledger)")
    assert ok


def test_criterion_06b_recursion_vs_empirical(desk_params, desk_yaglom):
    emp = yg.yaglom_empirical(desk_params, T=50.0, z0=3, replicates=10_000,
                              seed=62, method="fleming_viot")
    tv = total_variation(emp.probs, desk_yaglom.pmf)
    ok = report("6b", tv < 0.05, f"recursion vs empirical TV {tv:.4f} at T=50")
    assert ok


def test_criterion_06c_extinction_rate_exact(desk_params, desk_yaglom):
    exact = desk_yaglom.a == desk_params.d * desk_yaglom.pmf[0]
    ok = report("6c", exact, f"a = d*pi(1) = {desk_yaglom.a:.6f}")
    assert ok


# ---------------------------------------------------------------------------
# 7. conditioned-size distribution shapes at a late sampling time
# ---------------------------------------------------------------------------

def test_criterion_07_distribution_shapes():
    emp_exp = yg.yaglom_empirical(ModelParams(0.995, 0.0, 1.0), T=500.0,
                                  z0=200, replicates=10_000, seed=71)
    probs = emp_exp.probs
    width = 20
    blocks = np.array([
        probs[i * width : (i + 1) * width].sum() for i in range(10)
    ])
    declining = bool(np.all(np.diff(blocks) < 0)) and blocks[0] == blocks.max()

    emp_gauss = yg.yaglom_empirical(ModelParams(1.15, 0.001, 1.0), T=500.0,
                                    z0=150, replicates=10_000, seed=72)
    sam = emp_gauss.samples
    mode = int(np.argmax(emp_gauss.probs)) + 1
    skew = float(stats.skew(sam))
    interior = 20 < mode < len(emp_gauss.probs) - 20
    ok = report(
        "7", declining and interior and abs(skew) < 0.5,
        f"no-competition law declining={declining}; competition law mode={mode}, "
        f"skewness {skew:+.3f}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 8. node-depth statistic
# ---------------------------------------------------------------------------

def test_criterion_08_gamma_statistic():
    fixture = gen.gamma_statistic([1.0, 1.0])
    fixture_ok = abs(fixture - (-0.34641)) < 1e-5

    rng = stream(81)
    ks = np.arange(2, 21)
    yule = np.array([
        gen.gamma_statistic(rng.exponential(1.0 / ks)) for _ in range(1000)
    ])
    se = yule.std(ddof=1) / math.sqrt(len(yule))
    yule_ok = abs(yule.mean()) < 3 * se

    p = ModelParams(1.0, 0.0075, 0.1)
    rows = gen.gamma_scan(p, [0.03, 0.06, 0.25, 1.0], sample_time=300.0,
                          replicates=150, seed=82)
    small = [r for r in rows if r["lambda"] < 0.1]
    band_ok = all(-3.26 <= r["mean_gamma"] <= 1.85 for r in small)
    detail = (
        f"fixture {fixture:.5f}; pure-birth mean {yule.mean():+.4f} (se {se:.4f}); "
        + "; ".join(f"lam={r['lambda']}: mean {r['mean_gamma']:+.2f} (n={r['n_used']})"
                    for r in rows)
    )
    ok = report("8", fixture_ok and yule_ok and band_ok, detail)
    assert ok


# ---------------------------------------------------------------------------
# 9. size at the MRCA vs size at present
# ---------------------------------------------------------------------------

def test_criterion_09_mrca_bottleneck_trend():
    all_ok = True
    details = []
    for i, b in enumerate((0.8, 0.9, 1.0)):
        stats_c = []
        for j, c in enumerate((0.0, 0.01, 0.05)):
            p = ModelParams(b, c, 1.0)
            samples = gen.mrca_experiment(p, sample_time=15.0, replicates=1000,
                                          seed=derive(91, i, j))
            g = np.array([s.z_present - s.z_before_mrca for s in samples])
            stats_c.append((g.mean(), g.std(ddof=1) / math.sqrt(len(g))))
        (m0, s0), (m1, s1), (m2, s2) = stats_c
        positive = m0 > 3 * s0
        shrinking = (m0 > m1 - 2 * math.hypot(s0, s1)
                     and m1 > m2 - 2 * math.hypot(s1, s2)
                     and m0 - m2 > 2 * math.hypot(s0, s2))
        all_ok = all_ok and positive and shrinking
        details.append(f"b={b}: gaps {m0:.2f}>{m1:.2f}>{m2:.2f}")
    ok = report("9", all_ok, "; ".join(details))
    assert ok


# ---------------------------------------------------------------------------
# 10. time to the MRCA: generator route vs forward genealogies
# ---------------------------------------------------------------------------

def test_criterion_10_tmrca_cross_validation(desk_params):
    t_s, n0, target = 12.0, 3, 500
    rng = stream(101)
    fwd_tmrca, fwd_z = [], []
    for attempt in range(600_000):
        if len(fwd_tmrca) >= target:
            break
        traj, log = simulate_with_genealogy(
            desk_params, 3, t_s * (1 + 1e-12), seed=derive(102, attempt)
        )
        if traj.absorbed:
            continue
        extant = log.alive_at(t_s)
        if len(extant) < n0:
            continue
        sample = rng.choice(extant, n0, replace=False)
        merges, _ = _prune(log, sample, t_s)
        if merges is None:
            continue
        fwd_tmrca.append(t_s - min(merges))
        fwd_z.append(len(extant))
    table = cond.rate_table_Q(desk_params, K=50)
    fwd_z = np.asarray(fwd_z)
    rng2 = stream(103)
    coal = [
        gen.simulate_coalescent(int(rng2.choice(fwd_z)), n0, table,
                                seed=derive(104, i)).tmrca
        for i in range(len(fwd_tmrca))
    ]
    ks = stats.ks_2samp(fwd_tmrca, coal)
    ok = report(
        "10", ks.pvalue > 0.01,
        f"two-route tmrca: n={len(fwd_tmrca)} each, KS {ks.statistic:.4f}, "
        f"p {ks.pvalue:.3f}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 11. convergence to the Feller-logistic diffusion
# ---------------------------------------------------------------------------

def test_criterion_11_scaling_limit():
    rep = cond.scaling_check(1.0, 0.5, [20, 50, 100], horizon=2.0,
                             n_paths=60_000, dt=5e-4, seed=111,
                             ref_paths=400_000)
    w = rep["w1"]
    ok = report(
        "11", w[0] > w[1] > w[2],
        "W1 " + " > ".join(f"{v:.4f}" for v in w) + f" at K={rep['K']}",
    )
    assert ok


# ---------------------------------------------------------------------------
# 12. weak-competition closed form
# ---------------------------------------------------------------------------

def test_criterion_12_weak_competition():
    s, nu, mu = 1.1, 1e-4, 1.0
    p = ModelParams(s, nu / 2.0, mu)
    pbar = 1.0 - mu / s

    n_paths = 256
    _, samples = dual.conditioned_endpoints(
        s, nu, mu, pbar, t=400.0, dt=2e-3, n_paths=n_paths, seed=121, thin=2500
    )
    keep = samples.reshape(-1, n_paths)[20:].ravel()
    ks_by_conv = {}
    for conv in cond.ALPHA_CONVENTIONS:
        alpha = 2 * (s - mu) / nu if conv == "2(s-mu)/nu" else s * (s - mu) / nu
        a_beta, b_beta = 2 * alpha * pbar, 2 * alpha * (1 - pbar)
        ks_by_conv[conv] = stats.kstest(
            keep, lambda x: stats.beta.cdf(x, a_beta, b_beta)
        ).statistic
    best = min(ks_by_conv, key=ks_by_conv.get)
    ks_ok = ks_by_conv[best] < 0.05

    table = cond.rate_table_Q(p, K=22, grid_size=6000)
    quad = table.diagnostics["r_up"][:20]
    approx = cond.r_star_weak(p, np.arange(1, 21), best)
    agree = float(np.max(np.abs(approx - quad) / quad))

    ks_lim = np.arange(1, 25)
    rho = mu / s
    limit_err = float(np.max(np.abs(
        cond.r_star_weak(ModelParams(s, 0.0, mu), ks_lim)
        - (1 - rho ** (ks_lim + 1)) / (1 - rho**ks_lim)
    )))
    ok = report(
        "12", ks_ok and agree < 0.02 and limit_err < 1e-6,
        f"best convention {best}: KS {ks_by_conv[best]:.4f} "
        f"(other {max(ks_by_conv.values()):.4f}); factor agreement "
        f"{agree:.2e}; vanishing-competition limit error {limit_err:.1e}",
    )
    assert ok
