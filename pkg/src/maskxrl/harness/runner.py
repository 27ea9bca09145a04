"""The training loop: rollout, policy update, mask update, collaboration, evaluation."""

from __future__ import annotations

import json
import logging
import math
import shutil
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..collaboration import SharedBuffer, apply_exploration, comm_union, epsilon_at
from ..envs import make_env
from ..errors import NonFiniteError
from ..masking import (CriticalStateEntry, PairedRollout, branch_saliency, mask_update,
                       mask_values, masked_action, state_key)
from ..metrics import (MetricsRecord, append_metrics, fidelity_between_agents,
                       fidelity_rank_correlation, final_average_reward, legal_matrix,
                       policy_shift_kl, reward_drop_after_perturbation)
from ..nn import Adam, MlpNet, make_mask_net, make_policy_net, make_value_net
from ..policy import legal_mask
from ..ppo import MaskedRolloutBatch, Transition, ppo_update
from ..rollout import run_episode
from .config import ExperimentConfig

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 1_000_000


class NumericFailure(RuntimeError):
    """Training hit a non-finite value; a checkpoint and error record were written."""


class Agent:
    """One learner: policy, value and mask networks with their optimizers."""

    def __init__(self, agent_id, obs_dim, n_actions, cfg, rng):
        self.id = agent_id
        self.policy = make_policy_net(obs_dim, n_actions, rng, cfg.hidden)
        self.value = make_value_net(obs_dim, rng, cfg.hidden)
        self.mask = make_mask_net(obs_dim, rng, cfg.hidden)
        self.policy_opt = Adam(lr=cfg.ppo.lr)
        self.value_opt = Adam(lr=cfg.ppo.lr)
        self.mask_opt = Adam(lr=cfg.mask.lr)
        self.steps = 0
        self.rng = rng

    def nets(self):
        return {"policy": self.policy, "value": self.value, "mask": self.mask}

    def param_hash(self):
        return "".join(n.param_hash()[:16] for n in self.nets().values())


@dataclass
class RunArtifacts:
    run_id: str
    run_dir: Path
    config_path: Path
    metrics_csv: Path
    metrics_jsonl: Path
    events_jsonl: Path
    critical_states_csv: Path
    checkpoints: list = field(default_factory=list)
    plots: list = field(default_factory=list)
    records: list = field(default_factory=list)
    iterations_run: int = 0
    converged: bool = False
    target_iteration: int | None = None


@dataclass
class _Probe:
    agent_id: int
    env: object
    obs: np.ndarray
    tick: int


class Trainer:
    """Holds run state; :meth:`run` executes the whole experiment."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg.validate()
        self.run_id = cfg.run_id()
        self.run_dir = cfg.run_dir()
        ss = np.random.SeedSequence(cfg.seed)
        agent_ss, env_ss, probe_ss, ppo_ss, eval_ss = ss.spawn(5)
        n = cfg.n_agents
        self.envs = [self._make_env() for _ in range(cfg.n_envs)]
        spec = self.envs[0].spec
        self.spec = spec
        # per-agent streams: parameter init and action sampling use the agent's own generator
        self.agents = [Agent(i, spec.obs_dim, spec.action_count, cfg, np.random.default_rng(s))
                       for i, s in enumerate(agent_ss.spawn(n))]
        self.env_rngs = [np.random.default_rng(s) for s in env_ss.spawn(cfg.n_envs)]
        self.probe_rng = np.random.default_rng(probe_ss)
        self.ppo_rng = np.random.default_rng(ppo_ss)
        self.eval_ss = eval_ss
        self.buffer = None if cfg.disable_comm else SharedBuffer(
            capacity=cfg.buffer.capacity, interval=cfg.buffer.interval, topk=cfg.buffer.topk,
            delta=cfg.buffer.delta, w_min=cfg.buffer.w_min)
        self.broadcast = []
        self.tick = 0
        self.iteration = 0
        self.eval_seeds = [EVAL_SEED_BASE + 1000 * cfg.seed + j for j in range(cfg.n_eval_episodes)]
        self.history = []
        self._obs = [None] * cfg.n_envs

    def _make_env(self):
        return make_env(self.cfg.env, n_agents=self.cfg.n_agents, **self.cfg.env_options)

    @property
    def policies(self):
        return [a.policy for a in self.agents]

    # -- bookkeeping ---------------------------------------------------------
    def _event(self, **payload):
        payload = {"run_id": self.run_id, **payload}
        with open(self.run_dir / "events.jsonl", "a") as f:
            f.write(json.dumps(payload) + "\n")

    def _prepare_dir(self):
        self.run_dir.mkdir(parents=True, exist_ok=True)
        for name in ("metrics.csv", "metrics.jsonl", "events.jsonl", "critical_states.csv",
                     "summary.json", "error.json"):
            (self.run_dir / name).unlink(missing_ok=True)
        shutil.rmtree(self.run_dir / "checkpoints", ignore_errors=True)
        snapshot = {"run_id": self.run_id, "config": self.cfg.to_dict()}
        (self.run_dir / "config.json").write_text(json.dumps(snapshot, indent=2))

    def epsilon(self, agent):
        if self.cfg.disable_adaptive_epsilon:
            return self.cfg.epsilon.eps0
        return epsilon_at(self.cfg.epsilon, agent.steps)

    def _next_seed(self, c):
        return int(self.env_rngs[c].integers(2**31))

    # -- phases --------------------------------------------------------------
    def rollout_phase(self):
        """Collect complete episodes until each env copy has run ``rollout_length`` ticks."""
        cfg = self.cfg
        n = cfg.n_agents
        tau = cfg.mask.tau
        segments = [[[] for _ in range(cfg.n_envs)] for _ in range(n)]
        snapshots = [[] for _ in range(n)]
        comm_local = [[] for _ in range(n)]
        for c, env in enumerate(self.envs):
            obs = env.reset(self._next_seed(c))
            ticks = 0
            while True:
                if self.buffer is not None:
                    out = self.buffer.broadcast_topk(self.tick)
                    if self.tick % self.buffer.interval == 0:
                        self.broadcast = out
                        scores = [e.score for e in out]
                        self._event(event="broadcast", iteration=self.iteration, tick=self.tick,
                                    count=len(out), score_min=min(scores) if scores else None,
                                    score_max=max(scores) if scores else None)
                actions = [0] * n
                acted = []
                for i, agent in enumerate(self.agents):
                    if not obs.active[i]:
                        continue
                    x = obs.per_agent[i]
                    legal = env.legal_actions(i)
                    dec = masked_action(agent.policy, agent.mask, x, legal, tau, agent.rng)
                    dec = apply_exploration(dec, self.epsilon(agent), legal, agent.rng)
                    agent.steps += 1
                    actions[i] = dec.action
                    v = float(agent.value.forward(x, cache=False)[0])
                    lm = legal_mask(legal, self.spec.action_count)
                    logp = math.log(max(dec.probs[dec.action], 1e-300))
                    tr = Transition(obs=x, action=dec.action, reward=0.0, done=False, legal=lm,
                                    log_prob=logp, value=v, mask_value=dec.mask_value,
                                    randomized=dec.randomized, source=dec.source)
                    segments[i][c].append(tr)
                    snapshots[i].append(_Probe(i, env.clone(), x, self.tick))
                    if dec.randomized:
                        comm_local[i].append(x)
                    acted.append(i)
                res = env.step(actions)
                self.tick += 1
                ticks += 1
                for i in range(n):
                    seg = segments[i][c]
                    if not seg:
                        continue
                    # rewards that arrive while waiting (Connect-4) go to the agent's last move
                    if i in acted or res.rewards[i] != 0.0 or (res.dones[i] and not seg[-1].done):
                        seg[-1].reward += float(res.rewards[i])
                        seg[-1].done = seg[-1].done or res.dones[i]
                obs = res.next_obs
                if res.episode_done:
                    if ticks >= cfg.rollout_length:
                        break
                    obs = env.reset(self._next_seed(c))
        self._event(event="phase", phase="rollout", iteration=self.iteration, tick=self.tick)
        return segments, snapshots, comm_local

    def ppo_phase(self, segments):
        cfg = self.cfg
        batches = []
        for i, agent in enumerate(self.agents):
            batch = MaskedRolloutBatch.from_segments([(s, 0.0) for s in segments[i] if s],
                                                     cfg.ppo.gamma, cfg.ppo.gae_lambda)
            stats = ppo_update(agent.policy, agent.value, batch, cfg.ppo, agent.policy_opt,
                               agent.value_opt, self.ppo_rng)
            self._event(event="ppo", iteration=self.iteration, agent=i, **stats)
            batches.append(batch)
        self._event(event="phase", phase="ppo", iteration=self.iteration)
        return batches

    def _select_probes(self, agent_id, snapshots):
        """Sample probe states with probability proportional to the exploration weight."""
        if not snapshots:
            return []
        peers = [e for e in self.broadcast if e.agent_id != agent_id]
        if self.buffer is not None and peers:
            w = np.array([self.buffer.weight(s.obs, peers) for s in snapshots])
        else:
            w = np.ones(len(snapshots))
        k = min(self.cfg.probes_per_iter, len(snapshots))
        idx = self.probe_rng.choice(len(snapshots), size=k, replace=False, p=w / w.sum())
        return [snapshots[j] for j in sorted(idx)]

    def mask_phase(self, batches, snapshots):
        cfg = self.cfg
        probe_results = []
        for i, agent in enumerate(self.agents):
            chosen = self._select_probes(i, snapshots[i])
            paired, results = [], []
            for p in chosen:
                clean, pert = branch_saliency(p.env, self.policies, i, cfg.probe_pairs, self.probe_rng)
                paired.append(PairedRollout(states=p.obs[None, :], return_clean=clean,
                                            return_masked=pert, agent_id=i))
                results.append((p, clean - pert))
            shared = self.broadcast if cfg.buffer.share_scores else []
            for e in shared:
                if e.agent_id != i:
                    paired.append(PairedRollout(states=e.features[None, :], return_clean=e.score,
                                                return_masked=0.0, agent_id=e.agent_id))
            for _ in range(cfg.mask_steps):
                stats = mask_update(agent.mask, agent.mask_opt, batches[i].obs, paired, cfg.mask,
                                    policy_net=agent.policy, kl_legal=batches[i].legal)
            self._event(event="mask", iteration=self.iteration, agent=i, n_probes=len(chosen),
                        n_shared=len(paired) - len(chosen), **stats)
            probe_results.append(results)
        self._event(event="phase", phase="mask", iteration=self.iteration)
        return probe_results

    def collaboration_phase(self, probe_results, comm_local):
        if self.buffer is not None:
            for i, results in enumerate(probe_results):
                for p, score in results:
                    self.buffer.insert(CriticalStateEntry(features=p.obs, score=score, agent_id=i,
                                                          timestep=p.tick))
            comm = comm_union(comm_local)
            self._event(event="collab", iteration=self.iteration, comm_size=len(comm),
                        local_sizes=[len(comm_union([s])) for s in comm_local],
                        buffer_size=len(self.buffer))
        self._event(event="phase", phase="collab", iteration=self.iteration)

    # -- evaluation ----------------------------------------------------------
    def evaluate(self):
        """Held-out validation; never mutates network parameters."""
        cfg = self.cfg
        tau = cfg.mask.tau
        env = self._make_env()
        # keyed by iteration so a reloaded checkpoint evaluates identically
        rng = np.random.default_rng(np.random.SeedSequence(
            self.eval_ss.entropy, spawn_key=(*self.eval_ss.spawn_key, self.iteration)))
        before = [a.param_hash() for a in self.agents]
        per_episode, visits = [], [[] for _ in self.agents]
        stream_seed = int(rng.integers(2**63))
        srng = np.random.default_rng(stream_seed)
        # reward_drop_after_perturbation replays these exact streams
        streams = [int(srng.integers(2**63)) for _ in self.eval_seeds]
        for seed, stream in zip(self.eval_seeds, streams):
            ret, v = run_episode(env, self.policies, seed, np.random.default_rng(stream))
            per_episode.append(ret)
            for i in range(len(self.agents)):
                visits[i].extend(v[i])
        per_episode = np.array(per_episode)
        mean_r, _ = final_average_reward(per_episode.mean(axis=1))
        std_r = float(per_episode.mean(axis=1).std())

        masked = []
        mrng = np.random.default_rng([self.cfg.seed, self.iteration, 7])
        for seed, stream in zip(self.eval_seeds, streams):
            def override(i, x, legal, t):
                m = float(self.agents[i].mask.forward(x, cache=False)[0])
                if m <= tau:
                    return int(legal[int(mrng.integers(len(legal)))])
                return None
            ret, _ = run_episode(env, self.policies, seed, np.random.default_rng(stream), override=override)
            masked.append(ret.mean())

        kls, drops_frac, drops_abs, frac_rand = [], [], [], []
        for i, agent in enumerate(self.agents):
            if not visits[i]:
                continue
            states = np.stack([x for _, x, _ in visits[i]])
            lm = legal_matrix([l for _, _, l in visits[i]], self.spec.action_count)
            kls.append(policy_shift_kl(agent.policy, agent.mask, states, tau, legal=lm))
            uniq = comm_union([states])
            mv = mask_values(agent.mask, np.stack(uniq))
            frac_rand.append(float(np.mean(mv <= tau)))
            order = np.argsort(-mv, kind="stable")[:cfg.critical_k]
            crit = [uniq[j] for j in order]
            drop = reward_drop_after_perturbation(env, self.policies, i, crit, len(self.eval_seeds),
                                                  self.eval_seeds, np.random.default_rng(stream_seed))
            drops_frac.append(drop.fraction)
            drops_abs.append(drop.absolute)

        shared = comm_union([[x for _, x, _ in v] for v in visits])
        if len(self.agents) >= 2 and shared:
            mv = np.stack([mask_values(a.mask, np.stack(shared)) for a in self.agents])
            fid = fidelity_between_agents(mv, tau)
            fid_rank = fidelity_rank_correlation(mv)
        else:
            fid, fid_rank = 1.0, 1.0
        after = [a.param_hash() for a in self.agents]
        if before != after:
            raise RuntimeError("evaluation mutated network parameters")
        record = MetricsRecord(
            iteration=self.iteration, final_avg_reward=float(mean_r), kl_divergence=float(np.mean(kls)),
            fidelity=fid, reward_drop_fraction=float(np.mean(drops_frac)), n_eval_episodes=len(self.eval_seeds),
            seed=cfg.seed, reward_std=std_r, masked_avg_reward=float(np.mean(masked)),
            reward_drop_abs=float(np.mean(drops_abs)), fidelity_rank=fid_rank,
            frac_randomized=float(np.mean(frac_rand)))
        return record.validate()

    # -- checkpoints ---------------------------------------------------------
    def save_checkpoint(self, tag=None):
        tag = tag or f"iter_{self.iteration:04d}"
        d = self.run_dir / "checkpoints" / tag
        d.mkdir(parents=True, exist_ok=True)
        for a in self.agents:
            for name, net in a.nets().items():
                net.save(d / f"agent{a.id}_{name}.json")
        meta = {"run_id": self.run_id, "iteration": self.iteration, "tick": self.tick,
                "config": self.cfg.to_dict()}
        (d / "state.json").write_text(json.dumps(meta, indent=2))
        return d

    def _converged(self):
        w = self.cfg.convergence_window
        if len(self.history) < w:
            return False
        last = [r.final_avg_reward for r in self.history[-w:]]
        scale = max(abs(float(np.mean(last))), 1e-8)
        return (max(last) - min(last)) / scale < self.cfg.convergence_tol

    def run(self):
        cfg = self.cfg
        self._prepare_dir()
        art = RunArtifacts(
            run_id=self.run_id, run_dir=self.run_dir, config_path=self.run_dir / "config.json",
            metrics_csv=self.run_dir / "metrics.csv", metrics_jsonl=self.run_dir / "metrics.jsonl",
            events_jsonl=self.run_dir / "events.jsonl",
            critical_states_csv=self.run_dir / "critical_states.csv")
        try:
            for it in range(1, cfg.t_max + 1):
                self.iteration = it
                segments, snapshots, comm_local = self.rollout_phase()
                batches = self.ppo_phase(segments)
                probe_results = self.mask_phase(batches, snapshots)
                self.collaboration_phase(probe_results, comm_local)
                art.iterations_run = it
                if it % cfg.eval_interval == 0 or it == cfg.t_max:
                    record = self.evaluate()
                    append_metrics(self.run_dir, record, self.run_id)
                    self._event(event="phase", phase="eval", iteration=it)
                    self.history.append(record)
                    art.records.append(record)
                    if (art.target_iteration is None and cfg.reward_target is not None
                            and record.final_avg_reward >= cfg.reward_target):
                        art.target_iteration = it
                    if self._converged():
                        art.converged = True
                        break
        except (NonFiniteError, FloatingPointError) as e:
            art.checkpoints.append(self.save_checkpoint("failure"))
            (self.run_dir / "error.json").write_text(json.dumps(
                {"run_id": self.run_id, "iteration": self.iteration, "error": str(e)}))
            raise NumericFailure(str(e)) from e
        art.checkpoints.append(self.save_checkpoint())
        self._write_critical_states()
        if art.records:
            from .plots import plot_curves

            art.plots = plot_curves(self.run_dir)
        summary = {"run_id": self.run_id, "iterations_run": art.iterations_run,
                   "converged": art.converged, "target_iteration": art.target_iteration}
        (self.run_dir / "summary.json").write_text(json.dumps(summary, indent=2))
        return art

    def _write_critical_states(self):
        """Buffer contents (or, without a buffer, nothing but the header)."""
        from ..masking import write_critical_states_csv

        entries = []
        if self.buffer is not None:
            for e in self.buffer.top(len(self.buffer)):
                m = float(self.agents[e.agent_id].mask.forward(e.features, cache=False)[0])
                entries.append(CriticalStateEntry(features=e.features, score=e.score, agent_id=e.agent_id,
                                                  timestep=e.timestep, episode=self.iteration,
                                                  mask_value=m, mask_selected=m <= self.cfg.mask.tau))
        write_critical_states_csv(self.run_dir / "critical_states.csv", entries)


def run_experiment(config):
    """Run one experiment end to end and return its artifacts."""
    return Trainer(config).run()


def trainer_from_checkpoint(checkpoint_dir, **changes):
    """A :class:`Trainer` whose networks are restored from ``checkpoint_dir``."""
    from .config import config_from_dict

    meta, nets = load_agents(checkpoint_dir)
    cfg = config_from_dict({**meta["config"], **changes})
    tr = Trainer(cfg)
    for agent, d in zip(tr.agents, nets):
        agent.policy, agent.value, agent.mask = d["policy"], d["value"], d["mask"]
    tr.iteration = meta["iteration"]
    tr.tick = meta["tick"]
    return tr


def load_agents(checkpoint_dir):
    """Rebuild agents' networks from a checkpoint directory: ``[{name: MlpNet}, ...]``."""
    checkpoint_dir = Path(checkpoint_dir)
    meta = json.loads((checkpoint_dir / "state.json").read_text())
    n = meta["config"]["n_agents"]
    return meta, [{name: MlpNet.load(checkpoint_dir / f"agent{i}_{name}.json")
                   for name in ("policy", "value", "mask")} for i in range(n)]
