"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The experiment-scale checks (6 through 9 and 12) train real agents and are
marked ``slow``; deselect them with ``-m "not slow"``.
"""

import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binomtest, chi2

from maskxrl.collaboration import (EpsilonSchedule, SharedBuffer, apply_exploration, comm_union,
                                   epsilon_at)
from maskxrl.envs import ChainMdpSpec, chain_oracle_critical_state
from maskxrl.harness import Trainer, load_config, run_ablations, run_experiment, run_tau_sweep
from maskxrl.harness.sweeps import mean_iterations
from maskxrl.masking import (CriticalStateEntry, MaskDecision, identify_critical_states, masked_action,
                             state_key, surrogate_mask_loss)
from maskxrl.metrics import fidelity_between_agents, kl_divergence, reward_drop_after_perturbation
from maskxrl.nn import GradientTape, MlpNet, make_mask_net
from maskxrl.ppo import MaskedRolloutBatch, clipped_surrogate_loss, compute_gae, surrogate_terms

from oracles import central_diff, gae_double_sum

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture
def report(capsys):
    def _report(n, ok, detail):
        with capsys.disabled():
            print(f"\nAC{n} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return _report


def _cfg(name, tmp_path, **kw):
    return load_config(CONFIGS / f"{name}.toml", {"output_dir": str(tmp_path), **kw})


# ---------------------------------------------------------------- 1. gradients


def test_ac01_gradient_fidelity(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for i in range(100):
        depth = int(rng.integers(1, 4))
        dims = [int(d) for d in rng.integers(2, 7, size=depth + 1)]
        net = MlpNet(dims, output_activation=("identity", "softmax", "sigmoid")[i % 3], rng=rng)
        for _, p in net.parameters():
            p[...] = rng.normal(scale=0.7, size=p.shape)
        x = rng.normal(size=(3, net.in_dim))
        target = rng.normal(size=(3, net.out_dim))
        tape = GradientTape(net)
        net.backward(tape, net.forward(x) - target)
        analytic = tape.get_flat()
        flat = net.get_flat()

        def loss():
            net.set_flat(flat)
            return float(0.5 * np.sum((net.forward(x, cache=False) - target) ** 2))

        numeric = central_diff(loss, flat)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-6)
        worst = max(worst, float(rel.max()))
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-4 and elapsed < 30,
           f"100 random nets, max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 30s)")


# ---------------------------------------------------------------- 2. GAE


def test_ac02_gae_oracle(report):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = rng.random(n) < 0.2
        gamma, lam, last = rng.uniform(0.5, 1.0), rng.uniform(0.0, 1.0), rng.normal()
        adv, _ = compute_gae(r, v, d, gamma, lam, last_value=last)
        worst = max(worst, float(np.max(np.abs(adv - gae_double_sum(r, v, d, gamma, lam, last)))))
    report(2, worst < 1e-10, f"1000 trajectories, max |recursion - double sum| = {worst:.2e} (< 1e-10)")


# ---------------------------------------------------------------- 3. PPO clip


def _batch(adv, old_logp):
    n = len(adv)
    b = MaskedRolloutBatch(obs=np.zeros((n, 2)), actions=np.zeros(n, dtype=np.int64), rewards=np.zeros(n),
                           dones=np.zeros(n, dtype=bool), legal=np.ones((n, 2), dtype=bool),
                           log_probs=np.asarray(old_logp, dtype=np.float64), values=np.zeros(n),
                           mask_values=np.ones(n), randomized=np.zeros(n, dtype=bool))
    b.advantages = np.asarray(adv, dtype=np.float64)
    b.returns = b.advantages.copy()
    return b


def test_ac03_ppo_clip(report):
    rng = np.random.default_rng(303)
    adv = rng.normal(size=16)
    old = np.log(rng.uniform(0.1, 1, size=16))
    ratio_one = clipped_surrogate_loss(_batch(adv, old), old.copy(), 0.2) == -float(np.mean(adv))
    clipped = surrogate_terms(np.array([1.5]), np.array([1.0]), 0.2)[0] == 1.2
    inactive = True
    for _ in range(200):
        n = int(rng.integers(1, 30))
        a = rng.normal(size=n)
        o = np.log(rng.uniform(0.05, 1.0, size=n))
        nw = o + rng.uniform(np.log(0.81), np.log(1.19), size=n)
        inactive &= clipped_surrogate_loss(_batch(a, o), nw, 0.2) == -float(np.mean(np.exp(nw - o) * a))
    report(3, ratio_one and clipped and inactive,
           f"ratio 1 -> -mean A exact: {ratio_one}; ratio 1.5 clip term 1.2 exact: {clipped}; "
           f"200 clip-inactive batches equal the unclipped surrogate exactly: {inactive}")


# ---------------------------------------------------------------- 4. mask rule


def test_ac04_mask_rule(report):
    rng = np.random.default_rng(404)
    policy = MlpNet([3, 5], output_activation="softmax")
    policy.biases[0][...] = [10.0, 0, 0, 0, 0]
    mask = make_mask_net(3, rng, hidden=(4,))
    mask.set_flat(np.zeros(mask.n_params()))
    mask.biases[-1][0] = np.log(0.2 / 0.8)
    legal = (1, 2, 4)
    counts = dict.fromkeys(legal, 0)
    all_legal = True
    for _ in range(10_000):
        d = masked_action(policy, mask, np.zeros(3), legal, 0.5, rng)
        all_legal &= d.action in counts and d.randomized
        counts[d.action] = counts.get(d.action, 0) + 1
    obs = np.array([counts[a] for a in legal], dtype=float)
    stat = float(((obs - obs.sum() / 3) ** 2 / (obs.sum() / 3)).sum())
    crit = chi2.ppf(0.99, df=2)
    iff = True
    for _ in range(500):
        m = rng.uniform(size=int(rng.integers(1, 8)))
        tau = float(rng.uniform(0.05, 0.95))
        iff &= (surrogate_mask_loss(m, tau) == 0.0) == (m.mean() == tau)
    iff &= surrogate_mask_loss([0.25, 0.75], 0.5) == 0.0 and surrogate_mask_loss([0.3], 0.3) == 0.0
    report(4, all_legal and stat < crit and iff,
           f"10^4 masked draws legal: {all_legal}; chi2 {stat:.2f} < {crit:.2f}; "
           f"surrogate zero iff mean = tau: {iff}")


# ---------------------------------------------------------------- 5. epsilon


def test_ac05_epsilon_schedule(report):
    eps = epsilon_at(EpsilonSchedule(1.0, float(np.log(2))), 1)
    exact = abs(eps - 0.5) <= 1e-12
    formula = all(epsilon_at(EpsilonSchedule(e0, lam), t) == e0 * np.exp(-lam * t)
                  for e0, lam, t in [(0.9, 1e-3, 17), (0.3, 0.0, 5), (1.0, 2.5, 0)])
    rng = np.random.default_rng(505)
    target = epsilon_at(EpsilonSchedule(1.0, 1e-3), 1000 * np.log(4))  # 0.25
    d = MaskDecision(mask_value=0.9, randomized=False, action=0, source="policy")
    n = 100_000
    hits = sum(apply_exploration(d, target, (0, 1, 2), rng).source == "epsilon_random" for _ in range(n))
    freq = hits / n
    report(5, exact and formula and abs(freq - target) <= 0.01,
           f"eps(1; 1, ln2) = {eps!r}; closed form exact: {formula}; "
           f"replacement frequency {freq:.4f} vs eps {target:.4f} (within 0.01)")


# ---------------------------------------------------------------- 6. chain oracle


@pytest.mark.slow
def test_ac06_chain_critical_state(report, tmp_path):
    idx, exact = chain_oracle_critical_state(ChainMdpSpec())
    hits, worst_time, worst_gap = 0, 0.0, 0.0
    for s in range(20):
        t0 = time.perf_counter()
        tr = Trainer(_cfg("chain", tmp_path, seed=s, run_name=f"chain-{s}"))
        tr.run()
        worst_time = max(worst_time, time.perf_counter() - t0)
        ents = identify_critical_states(tr._make_env(), tr.policies, tr.agents[0].mask, 0, 16,
                                        tr.cfg.mask.tau, [s], np.random.default_rng(s))
        top = ents[0]
        pos = int(np.argmax(top.features[:ChainMdpSpec().length]))
        gap = abs(top.score - exact)
        worst_gap = max(worst_gap, gap if pos == idx else 0.0)
        hits += pos == idx and gap <= 0.1
    report(6, hits >= 18 and worst_time < 300,
           f"oracle state ranked top-1 with drop within 0.1 of {exact:.2f} in {hits}/20 runs (>= 18); "
           f"largest drop gap {worst_gap:.3f}; slowest training {worst_time:.1f}s (< 300s)")


# ---------------------------------------------------------------- 7. reward-drop ordering

AC7_K, AC7_EPISODES, AC7_SALIENCY_EVALS, AC7_SEEDS = 3, 64, 32, 20
_trained = {}


def _trained_trainer(name, tmp_root):
    """Train once per config; reused by the ordering and timing checks."""
    if name not in _trained:
        t0 = time.perf_counter()
        tr = Trainer(load_config(CONFIGS / f"{name}.toml", {"output_dir": str(tmp_root), "run_name": name}))
        tr.run()
        _trained[name] = (tr, time.perf_counter() - t0)
    return _trained[name]


def _ordering(tr, k=AC7_K):
    """Paired top-K vs random-K comparison on ``AC7_SEEDS`` informative trajectories.

    For each evaluation seed the agent-0 trajectory is scored by branch
    rollouts; seeds whose trajectory has no more than K perturbable states are
    skipped (top-K and random-K would coincide). Both sets are then perturbed
    on the same replayed trajectory and the signed return drop is compared.
    """
    env = tr._make_env()
    wins, used, j = 0, 0, -1
    gaps = []
    while used < AC7_SEEDS:
        j += 1
        seed, stream = 5_000_000 + j, 77_000 + j
        rng = np.random.default_rng([j, 3])
        ents = identify_critical_states(env, tr.policies, tr.agents[0].mask, 0, AC7_SALIENCY_EVALS,
                                        tr.cfg.mask.tau, [seed], rng, streams=[stream])
        if len(ents) <= k:
            continue
        used += 1
        top = [e.features for e in ents[:k]]
        rnd = [ents[i].features for i in rng.choice(len(ents), size=k, replace=False)]
        kw = dict(seeds=[seed] * AC7_EPISODES, rng=None, streams=[stream] * AC7_EPISODES)
        a = reward_drop_after_perturbation(env, tr.policies, 0, top, AC7_EPISODES, **kw).absolute
        b = reward_drop_after_perturbation(env, tr.policies, 0, rnd, AC7_EPISODES, **kw).absolute
        wins += a > b
        gaps.append(a - b)
    p = binomtest(wins, AC7_SEEDS, 0.5, alternative="greater").pvalue
    return wins, p, float(np.mean(gaps))


@pytest.mark.slow
def test_ac07_reward_drop_ordering(report, tmp_path_factory):
    root = tmp_path_factory.mktemp("ac7")
    t0 = time.perf_counter()
    lines, ok = [], True
    for name in ("highway", "connect4"):
        tr, _ = _trained_trainer(name, root)
        wins, p, gap = _ordering(tr)
        ok &= p < 0.05
        lines.append(f"{name}: top-{AC7_K} beats random-{AC7_K} on {wins}/{AC7_SEEDS} seeds, "
                     f"sign test p = {p:.3g}, mean drop gap {gap:+.3f}")
    elapsed = time.perf_counter() - t0
    report(7, ok and elapsed < 1800, "; ".join(lines) + f"; total {elapsed:.0f}s (< 1800s)")


# ---------------------------------------------------------------- 8. tau sweep


@pytest.mark.slow
def test_ac08_tau_sweep(report, tmp_path):
    t0 = time.perf_counter()
    table = run_tau_sweep(_cfg("highway", tmp_path), [0.3, 0.5, 0.7], seeds=3, out_dir=tmp_path / "tau")
    elapsed = time.perf_counter() - t0
    drop = {r.label: abs(r.mean("reward_drop")) for r in table.rows}
    fid = {r.label: r.mean("fidelity") for r in table.rows}
    best_drop = max(drop, key=drop.get) == "tau=0.5"
    best_fid = max(fid, key=fid.get) == "tau=0.5"
    fmt = lambda d: ", ".join(f"{k} {v:.3f}" for k, v in d.items())
    report(8, best_drop and best_fid and elapsed < 2700,
           f"|reward drop| {fmt(drop)}; fidelity {fmt(fid)}; tau=0.5 largest drop: {best_drop}, "
           f"highest fidelity: {best_fid}; {elapsed:.0f}s (< 2700s)")


# ---------------------------------------------------------------- 9. ablations


@pytest.mark.slow
def test_ac09_ablation_ordering(report, tmp_path):
    cfg = _cfg("highway", tmp_path)
    t0 = time.perf_counter()
    table = run_ablations(cfg, seeds=3, out_dir=tmp_path / "abl")
    elapsed = time.perf_counter() - t0
    fid = {r.label: r.mean("fidelity") for r in table.rows}
    its = {r.label: mean_iterations(r.iterations_to_target, cfg.t_max) for r in table.rows}
    fid_ok = fid["full"] >= fid["no_comm"] and fid["full"] >= fid["no_adaptive_eps"]
    its_ok = its["full"] <= its["no_comm"] and its["full"] <= its["no_adaptive_eps"]
    report(9, fid_ok and its_ok and elapsed < 2700,
           "fidelity " + ", ".join(f"{k} {v:.3f}" for k, v in fid.items())
           + "; mean iterations to reward target " + ", ".join(f"{k} {v:.1f}" for k, v in its.items())
           + f"; {elapsed:.0f}s (< 2700s)")


# ---------------------------------------------------------------- 10. metric axioms


def test_ac10_metric_axioms(report, tmp_path):
    rng = np.random.default_rng(1010)
    self_kl = max(kl_divergence(p, p) for p in rng.dirichlet(np.ones(4), size=200))
    nonneg = min(kl_divergence(p, q) for p, q in zip(rng.dirichlet(np.ones(4), size=200),
                                                     rng.dirichlet(np.ones(4) * 0.1, size=200)))
    nonneg = min(nonneg, kl_divergence([0.5, 0.5], [1.0, 0.0]))
    fid_ok = True
    for _ in range(200):
        mv = rng.uniform(size=(int(rng.integers(2, 5)), int(rng.integers(1, 10))))
        f = fidelity_between_agents(mv, 0.5)
        fid_ok &= 0.0 <= f <= 1.0 and abs(f - fidelity_between_agents(mv[::-1], 0.5)) <= 1e-12
        fid_ok &= fidelity_between_agents(mv[:2], 0.5) == fidelity_between_agents(mv[1::-1], 0.5)
        fid_ok &= fidelity_between_agents(np.stack([mv[0]] * 3), 0.5) == 1.0
    cfg = load_config(CONFIGS / "highway.toml", {"output_dir": str(tmp_path), "t_max": 2,
                                                  "rollout_length": 64, "n_eval_episodes": 2})
    tr = Trainer(cfg)
    tr.run()
    before = [a.param_hash() for a in tr.agents]
    tr.evaluate()
    unchanged = before == [a.param_hash() for a in tr.agents]
    report(10, self_kl <= 1e-12 and nonneg >= 0 and fid_ok and unchanged,
           f"max KL(p,p) {self_kl:.1e}; min KL {nonneg:.2e} >= 0; fidelity symmetric, in [0,1], "
           f"1 on identical masks: {fid_ok}; evaluation leaves parameter hashes unchanged: {unchanged}")


# ---------------------------------------------------------------- 11. collaboration laws

_vec = st.lists(st.integers(-2, 2), min_size=2, max_size=2).map(lambda v: np.array(v, dtype=float))
_sets = st.lists(_vec, max_size=5)


def _keys(states):
    return {state_key(x) for x in states}


@settings(max_examples=200, deadline=None)
@given(_sets, _sets, _sets)
def _union_laws(a, b, c):
    assert _keys(comm_union([a, b])) == _keys(comm_union([b, a]))
    assert _keys(comm_union([comm_union([a, b]), c])) == _keys(comm_union([a, comm_union([b, c])]))
    assert _keys(comm_union([a, a])) == _keys(a) and len(comm_union([a, a])) == len(_keys(a))


def test_ac11_collaboration_laws(report, tmp_path):
    try:
        _union_laws()
        laws = True
    except AssertionError:
        laws = False
    rng = np.random.default_rng(1111)
    topk_ok = True
    for _ in range(100):
        buf = SharedBuffer(capacity=1000, topk=5)
        scores = rng.integers(0, 6, size=int(rng.integers(1, 20))) / 5
        for i, s in enumerate(scores):
            buf.insert(CriticalStateEntry(features=np.array([float(i)]), score=float(s), agent_id=0, timestep=i))
        expected = sorted(range(len(scores)), key=lambda i: (-scores[i], i))[:5]
        topk_ok &= [int(e.features[0]) for e in buf.top()] == expected
    buf.insert(CriticalStateEntry(features=np.array([0.0]), score=1.0, agent_id=0, timestep=0))
    ticks = [t for t in range(1000) if buf.broadcast_topk(t)]
    tick_ok = ticks == list(range(0, 1000, 50))
    base = {"output_dir": str(tmp_path), "t_max": 3, "rollout_length": 128, "n_eval_episodes": 2,
            "eval_interval": 1}
    a = run_experiment(load_config(CONFIGS / "highway.toml", {**base, "disable_comm": True, "run_name": "indep"}))
    b = run_experiment(load_config(CONFIGS / "highway.toml", {**base, "buffer": {"capacity": 0},
                                                             "run_name": "cap0"}))
    same = a.records == b.records
    report(11, laws and topk_ok and tick_ok and same,
           f"union commutative/associative/idempotent: {laws}; top-K equals sort oracle: {topk_ok}; "
           f"broadcast ticks are multiples of 50: {tick_ok}; capacity-0 run equals independent agents "
           f"bit-exactly: {same}")


# ---------------------------------------------------------------- 12. reproducibility


@pytest.mark.slow
def test_ac12_reproducibility(report, tmp_path_factory):
    root = tmp_path_factory.mktemp("ac12")
    times, texts = [], []
    for name in ("first", "second"):
        cfg = load_config(CONFIGS / "highway.toml", {"output_dir": str(root), "run_name": name,
                                                      "deterministic": True})
        t0 = time.perf_counter()
        art = run_experiment(cfg)
        times.append(time.perf_counter() - t0)
        texts.append(art.metrics_jsonl.read_bytes())
    identical = texts[0] == texts[1]
    for name in ("chain", "connect4"):
        t0 = time.perf_counter()
        run_experiment(load_config(CONFIGS / f"{name}.toml", {"output_dir": str(root), "run_name": name}))
        times.append(time.perf_counter() - t0)
    slowest = max(times)
    report(12, identical and slowest < 600,
           f"two highway runs give bit-identical metrics.jsonl: {identical}; slowest single experiment "
           f"(highway x2, chain, connect4) {slowest:.0f}s (< 600s)")
