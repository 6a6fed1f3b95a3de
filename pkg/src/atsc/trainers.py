"""PPO-family trainers: the constrained dual-critic learner and baselines.

Three algorithms share one set of mechanics (clipped surrogate, GAE,
frozen-target TD updates, soft target blending, epsilon-greedy layered
over the categorical policy):

* ``mappo-lce`` — shared actor + centralized reward and cost critics.
  The actor descends ``L_r - lambda * L_c`` where each L is a clipped
  surrogate plus an unclipped value-regression term; a cost-estimator
  network regresses realized per-step cost from (global state, joint
  action) and drives the multiplier: ``lambda += lr * (E[predicted
  cost] - cost_limit)``, clamped at 0.
* ``mappo`` — same shared actor and centralized reward critic, no cost
  machinery; constraint pressure enters only through the penalty reward
  ``r - zeta * c``.
* ``ippo`` — independent per-agent actors and critics on local
  observations with the same penalty reward.

All losses here are written as quantities to *minimize*; the clipped
surrogate therefore enters with a negative sign so that gradient descent
raises the expected advantage-weighted ratio.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintEngine
from .nn import Adam, DenseNet, epsilon_at, gae, log_softmax, sample_action, softmax
from .simulator import OBS_SIZE, TrafficSimulator


class TrainingError(Exception):
    pass


@dataclass
class TrainerConfig:
    """Algorithm hyperparameters (shared across the three trainers)."""

    algo: str = "mappo-lce"
    lr: float = 5e-5
    gamma: float = 0.985
    gae_lambda: float = 0.95
    eps_clip: float = 0.15
    critic_coef: float = 0.5
    entropy_coef: float = 0.0
    mini_epochs: int = 2
    grad_norm_clip: float = 10.0
    hidden_dim: int = 128
    batch_size: int = 8
    buffer_size: int = 8
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_time: int = 500_000
    tau: float = 0.01
    lambda_init: float = 0.01
    lambda_lr: float = 1e-4
    cost_limit: float = 0.0
    cost_estimator_lr: float = 1e-4
    zeta: float = 0.2
    normalize_advantages: bool = True
    actor_out_scale: float = 0.01  # near-uniform starting policy
    # Accepted for config-file compatibility; no behaviour is attached:
    # targets blend softly every iteration, and no extra regulariser is used.
    target_update_interval: int = 200
    reg_coef: float = 0.01


@dataclass
class Transition:
    """One environment step as stored in the replay buffer."""

    observations: np.ndarray     # (n_agents, obs_dim)
    actions: np.ndarray          # (n_agents,) int
    log_probs: np.ndarray        # (n_agents,) behaviour log-probs
    reward: float
    cost: float
    next_observations: np.ndarray
    done: bool

    @property
    def state(self) -> np.ndarray:
        return self.observations.reshape(-1)

    @property
    def next_state(self) -> np.ndarray:
        return self.next_observations.reshape(-1)


class EpisodeBatch:
    """One complete episode, column-major over time."""

    def __init__(self, transitions: list[Transition]):
        if not transitions:
            raise ValueError("episode must contain at least one transition")
        self.obs = np.stack([t.observations for t in transitions])
        self.actions = np.stack([t.actions for t in transitions]).astype(np.int64)
        self.log_probs = np.stack([t.log_probs for t in transitions])
        self.rewards = np.array([t.reward for t in transitions], dtype=np.float64)
        self.costs = np.array([t.cost for t in transitions], dtype=np.float64)
        self.next_obs = np.stack([t.next_observations for t in transitions])
        self.dones = np.array([float(t.done) for t in transitions])

    def __len__(self) -> int:
        return len(self.rewards)

    @property
    def n_agents(self) -> int:
        return self.obs.shape[1]

    @property
    def states(self) -> np.ndarray:
        return self.obs.reshape(len(self), -1)

    @property
    def next_states(self) -> np.ndarray:
        return self.next_obs.reshape(len(self), -1)


class ReplayBuffer:
    """Ring of complete episodes, oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("buffer capacity must be positive")
        self.capacity = capacity
        self.episodes: list[EpisodeBatch] = []

    def push(self, episode: EpisodeBatch) -> None:
        self.episodes.append(episode)
        if len(self.episodes) > self.capacity:
            self.episodes.pop(0)

    def sample(self, rng: np.random.Generator, k: int) -> list[EpisodeBatch]:
        if not self.episodes:
            raise TrainingError("cannot sample from an empty buffer")
        replace = len(self.episodes) < k
        idx = rng.choice(len(self.episodes), size=k, replace=replace)
        return [self.episodes[int(i)] for i in idx]

    def __len__(self) -> int:
        return len(self.episodes)


# ----------------------------------------------------------------------
# shared update math


def penalty_reward(reward: float, cost: float, zeta: float) -> float:
    """Scalarised baseline reward ``r - zeta * c``."""
    if zeta < 0:
        raise ValueError("zeta must be non-negative")
    return reward - zeta * cost


def soft_update(live: DenseNet, target: DenseNet, tau: float) -> DenseNet:
    """Blend target parameters toward the live ones: tau*live + (1-tau)*target."""
    if live.params.shape != target.params.shape:
        raise ValueError("live/target parameter shapes differ")
    target.params[:] = tau * live.params + (1.0 - tau) * target.params
    return target


def clipped_surrogate_terms(ratios: np.ndarray, advantages: np.ndarray,
                            eps_clip: float) -> np.ndarray:
    """Per-sample ``min(rho*A, clip(rho, 1 +/- eps)*A)``."""
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - eps_clip, 1.0 + eps_clip) * advantages
    return np.minimum(unclipped, clipped)


def surrogate_loss(ratios: np.ndarray, advantages: np.ndarray, eps_clip: float,
                   values: np.ndarray, targets: np.ndarray,
                   critic_coef: float) -> float:
    """Minimised scalar: negated mean surrogate plus value regression."""
    surr = float(clipped_surrogate_terms(ratios, advantages, eps_clip).mean())
    reg = float(critic_coef * 0.5 * np.mean((values - targets) ** 2))
    return -surr + reg


def policy_gradient(actor: DenseNet, obs: np.ndarray, actions: np.ndarray,
                    old_logp: np.ndarray, advantages: np.ndarray,
                    eps_clip: float, entropy_coef: float = 0.0):
    """Flat gradient of the minimised surrogate part of the actor loss.

    Returns (gradient, diagnostics). Raises :class:`TrainingError` with
    the offending sample index if an importance ratio is non-finite.
    """
    logits, cache = actor.forward(obs)
    logp_all = log_softmax(logits)
    n = len(actions)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    with np.errstate(over="ignore"):  # overflow is reported as an error below
        ratios = np.exp(logp - old_logp)
    if not np.all(np.isfinite(ratios)):
        bad = int(np.flatnonzero(~np.isfinite(ratios))[0])
        raise TrainingError(f"non-finite importance ratio at batch sample {bad}")
    unclipped = ratios * advantages
    clipped = np.clip(ratios, 1.0 - eps_clip, 1.0 + eps_clip) * advantages
    terms = np.minimum(unclipped, clipped)
    # loss = -mean(terms); gradient flows only where the unclipped branch
    # is active (which includes the interior where both branches agree)
    active = unclipped <= clipped
    dlogp = np.where(active, -unclipped / n, 0.0)
    probs = np.exp(logp_all)
    glogits = dlogp[:, None] * (-probs)
    glogits[idx, actions] += dlogp
    diag = {
        "surrogate": float(terms.mean()),
        "clip_fraction": float(1.0 - active.mean()),
        "mean_ratio": float(ratios.mean()),
    }
    if entropy_coef != 0.0:
        entropy = -(probs * logp_all).sum(axis=1)
        glogits += (entropy_coef / n) * probs * (logp_all + entropy[:, None])
        diag["entropy"] = float(entropy.mean())
    return actor.backward(cache, glogits), diag


def value_regression_gradient(net: DenseNet, inputs: np.ndarray,
                              targets: np.ndarray, coef: float):
    """Gradient of ``coef * 0.5 * mean((V(x) - target)^2)``."""
    v, cache = net.forward(inputs)
    v = v[:, 0]
    diff = v - targets
    grad = net.backward(cache, (coef * diff / len(diff))[:, None])
    return grad, float(coef * 0.5 * np.mean(diff ** 2))


def td_gradient(net: DenseNet, target_net: DenseNet, inputs: np.ndarray,
                next_inputs: np.ndarray, signal: np.ndarray, dones: np.ndarray,
                gamma: float):
    """Gradient of the squared TD residual, bootstrapping from the frozen net."""
    next_v = target_net.forward(next_inputs)[0][:, 0]
    y = signal + gamma * (1.0 - dones) * next_v
    v, cache = net.forward(inputs)
    v = v[:, 0]
    diff = v - y
    grad = net.backward(cache, (diff / len(diff))[:, None])
    return grad, float(0.5 * np.mean(diff ** 2))


def _normalize(x: np.ndarray) -> np.ndarray:
    return (x - x.mean()) / (x.std() + 1e-8)


def _episode_advantages(critic: DenseNet, state_seqs: list[np.ndarray],
                        next_state_seqs: list[np.ndarray],
                        signals: list[np.ndarray], dones_seqs: list[np.ndarray],
                        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated (advantages, returns) over a batch of episodes."""
    advs, rets = [], []
    for states, next_states, sig, dones in zip(state_seqs, next_state_seqs,
                                               signals, dones_seqs):
        values = critic.forward(states)[0][:, 0]
        next_values = critic.forward(next_states)[0][:, 0]
        a, r = gae(sig, values, next_values, dones, gamma, lam)
        advs.append(a)
        rets.append(r)
    return np.concatenate(advs), np.concatenate(rets)


def _one_hot(indices: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((len(indices), n), dtype=np.float64)
    out[np.arange(len(indices)), indices] = 1.0
    return out


def compress_counts(obs: np.ndarray) -> np.ndarray:
    """log1p on the count features of simulator observations.

    Queue counts grow into the hundreds under congestion, which would
    saturate tanh units straight from initialisation; phase one-hots and
    normalised speeds are already O(1) and pass through unchanged. Applied
    at the learner boundary only, so stored and simulated observations
    keep their raw counts. Inputs that do not use the simulator's feature
    layout (anything not 56 wide) pass through untouched.
    """
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-1] != OBS_SIZE:
        return obs
    out = obs.copy()
    out[..., 0:24] = np.log1p(out[..., 0:24])
    out[..., 32:44] = np.log1p(out[..., 32:44])
    return out


# ----------------------------------------------------------------------
# learners


class MappoLearner:
    """Shared-actor PPO with a centralized critic.

    With ``constrained=True`` this is the full Lagrangian learner (cost
    critic, cost estimator, multiplier); with ``constrained=False`` it is
    the penalty-reward baseline. Construction draws actor and reward
    critic first so that both variants initialise those nets identically
    from the same generator.
    """

    def __init__(self, cfg: TrainerConfig, n_agents: int,
                 rng: np.random.Generator, obs_dim: int = OBS_SIZE,
                 constrained: bool = True):
        self.cfg = cfg
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.constrained = constrained
        # an agent-id one-hot disambiguates the shared actor; with a single
        # agent it would be a constant input, so it is omitted
        self.id_dim = n_agents if n_agents > 1 else 0
        self.state_dim = n_agents * obs_dim
        h = cfg.hidden_dim
        self.actor = DenseNet((obs_dim + self.id_dim, h, h, 8), rng=rng,
                              out_scale=cfg.actor_out_scale)
        self.critic_r = DenseNet((self.state_dim, h, h, 1), rng=rng)
        if constrained:
            self.critic_c = DenseNet((self.state_dim, h, h, 1), rng=rng)
            self.estimator = DenseNet((self.state_dim + 8 * n_agents, h, h, 1), rng=rng)
            self.lam = float(cfg.lambda_init)
        self.actor_target = self.actor.copy()
        self.critic_r_target = self.critic_r.copy()
        if constrained:
            self.critic_c_target = self.critic_c.copy()
        self.actor_opt = Adam(self.actor.n_params, cfg.lr)
        self.critic_r_opt = Adam(self.critic_r.n_params, cfg.lr)
        if constrained:
            self.critic_c_opt = Adam(self.critic_c.n_params, cfg.lr)
            self.estimator_opt = Adam(self.estimator.n_params, cfg.cost_estimator_lr)
        self._eye = np.eye(n_agents, dtype=np.float64)

    # -- acting --------------------------------------------------------

    def act(self, observations: np.ndarray, epsilon: float,
            rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
        obs = compress_counts(observations)
        actions, logps = [], np.zeros(self.n_agents)
        for i in range(self.n_agents):
            logits = self.actor.forward(self._augment_one(obs[i], i))[0]
            a, lp = sample_action(logits, epsilon, rng)
            actions.append(a)
            logps[i] = lp
        return actions, logps

    def greedy_actions(self, observations: np.ndarray) -> list[int]:
        obs = compress_counts(observations)
        actions = []
        for i in range(self.n_agents):
            logits = self.actor.forward(self._augment_one(obs[i], i))[0]
            actions.append(int(np.argmax(logits)))
        return actions

    def _augment_one(self, obs: np.ndarray, agent: int) -> np.ndarray:
        if self.id_dim == 0:
            return obs
        return np.concatenate([obs, self._eye[agent]])

    def _augment_batch(self, obs: np.ndarray) -> np.ndarray:
        # obs: (T, n, d) -> (T*n, d [+ n])
        T = obs.shape[0]
        flat = obs.reshape(T * self.n_agents, self.obs_dim)
        if self.id_dim == 0:
            return flat
        ids = np.tile(self._eye, (T, 1))
        return np.concatenate([flat, ids], axis=1)

    # -- batch preparation ----------------------------------------------

    def _reward_signals(self, episodes: list[EpisodeBatch]) -> list[np.ndarray]:
        if self.constrained or self.cfg.zeta == 0.0:
            return [ep.rewards for ep in episodes]
        return [ep.rewards - self.cfg.zeta * ep.costs for ep in episodes]

    def _prepare(self, episodes: list[EpisodeBatch]) -> dict:
        """Compressed, flattened batch arrays used by every update."""
        state_seqs, next_state_seqs, obs_aug_parts = [], [], []
        for ep in episodes:
            co = compress_counts(ep.obs)
            cn = compress_counts(ep.next_obs)
            state_seqs.append(co.reshape(len(ep), -1))
            next_state_seqs.append(cn.reshape(len(ep), -1))
            obs_aug_parts.append(self._augment_batch(co))
        return {
            "episodes": episodes,
            "state_seqs": state_seqs,
            "next_state_seqs": next_state_seqs,
            "dones_seqs": [ep.dones for ep in episodes],
            "obs_aug": np.concatenate(obs_aug_parts),
            "actions": np.concatenate([ep.actions.reshape(-1) for ep in episodes]),
            "old_logp": np.concatenate([ep.log_probs.reshape(-1) for ep in episodes]),
            "states": np.concatenate(state_seqs),
            "next_states": np.concatenate(next_state_seqs),
            "rewards": np.concatenate(self._reward_signals(episodes)),
            "costs": np.concatenate([ep.costs for ep in episodes]),
            "dones": np.concatenate([ep.dones for ep in episodes]),
        }

    # -- updates ---------------------------------------------------------

    def actor_update(self, episodes: list[EpisodeBatch]) -> dict:
        cfg = self.cfg
        prep = self._prepare(episodes)
        obs_aug, actions, old_logp = prep["obs_aug"], prep["actions"], prep["old_logp"]
        states = prep["states"]
        adv_r, ret_r = _episode_advantages(
            self.critic_r, prep["state_seqs"], prep["next_state_seqs"],
            self._reward_signals(episodes), prep["dones_seqs"],
            cfg.gamma, cfg.gae_lambda)
        if cfg.normalize_advantages:
            adv_r = _normalize(adv_r)
        adv_r_agents = np.repeat(adv_r, self.n_agents)
        if self.constrained:
            adv_c, ret_c = _episode_advantages(
                self.critic_c, prep["state_seqs"], prep["next_state_seqs"],
                [ep.costs for ep in episodes], prep["dones_seqs"],
                cfg.gamma, cfg.gae_lambda)
            if cfg.normalize_advantages:
                adv_c = _normalize(adv_c)
            adv_c_agents = np.repeat(adv_c, self.n_agents)

        stats: dict[str, float] = {}
        for _ in range(cfg.mini_epochs):
            g_actor_r, diag = policy_gradient(
                self.actor, obs_aug, actions, old_logp, adv_r_agents,
                cfg.eps_clip, cfg.entropy_coef)
            g_critic_r, vloss_r = value_regression_gradient(
                self.critic_r, states, ret_r, cfg.critic_coef)
            if self.constrained and self.lam != 0.0:
                g_actor_c, diag_c = policy_gradient(
                    self.actor, obs_aug, actions, old_logp, adv_c_agents,
                    cfg.eps_clip)
                g_actor = g_actor_r - self.lam * g_actor_c
                stats["surrogate_c"] = diag_c["surrogate"]
            else:
                g_actor = g_actor_r
            self.actor_opt.step(self.actor.params, g_actor, cfg.grad_norm_clip)
            self.critic_r_opt.step(self.critic_r.params, g_critic_r,
                                   cfg.grad_norm_clip)
            if self.constrained:
                g_critic_c, vloss_c = value_regression_gradient(
                    self.critic_c, states, ret_c, cfg.critic_coef)
                self.critic_c_opt.step(self.critic_c.params,
                                       -self.lam * g_critic_c, cfg.grad_norm_clip)
                stats["value_loss_c"] = vloss_c
            stats.update(surrogate_r=diag["surrogate"], value_loss_r=vloss_r,
                         clip_fraction=diag["clip_fraction"])
        return stats

    def critic_update(self, episodes: list[EpisodeBatch]) -> dict:
        cfg = self.cfg
        prep = self._prepare(episodes)
        states, next_states = prep["states"], prep["next_states"]
        g_r, td_r = td_gradient(self.critic_r, self.critic_r_target, states,
                                next_states, prep["rewards"], prep["dones"],
                                cfg.gamma)
        self.critic_r_opt.step(self.critic_r.params, g_r, cfg.grad_norm_clip)
        stats = {"td_loss_r": td_r}
        if self.constrained:
            g_c, td_c = td_gradient(self.critic_c, self.critic_c_target, states,
                                    next_states, prep["costs"], prep["dones"],
                                    cfg.gamma)
            self.critic_c_opt.step(self.critic_c.params, g_c, cfg.grad_norm_clip)
            stats["td_loss_c"] = td_c
        return stats

    def _estimator_inputs(self, episodes: list[EpisodeBatch]) -> np.ndarray:
        parts = []
        for ep in episodes:
            states = compress_counts(ep.obs).reshape(len(ep), -1)
            onehots = np.concatenate(
                [_one_hot(ep.actions[:, i], 8) for i in range(self.n_agents)],
                axis=1)
            parts.append(np.concatenate([states, onehots], axis=1))
        return np.concatenate(parts)

    def estimator_update(self, episodes: list[EpisodeBatch]) -> dict:
        inputs = self._estimator_inputs(episodes)
        costs = np.concatenate([ep.costs for ep in episodes])
        pred, cache = self.estimator.forward(inputs)
        diff = pred[:, 0] - costs
        grad = self.estimator.backward(cache, (2.0 * diff / len(diff))[:, None])
        self.estimator_opt.step(self.estimator.params, grad)
        return {"estimator_loss": float(np.mean(diff ** 2))}

    def lambda_update(self, episodes: list[EpisodeBatch]) -> dict:
        predicted = self.estimator.forward(self._estimator_inputs(episodes))[0][:, 0]
        excess = float(np.mean(predicted)) - self.cfg.cost_limit
        self.lam = max(0.0, self.lam + self.cfg.lambda_lr * excess)
        return {"lambda": self.lam, "predicted_cost": float(np.mean(predicted))}

    def soft_updates(self) -> None:
        tau = self.cfg.tau
        soft_update(self.actor, self.actor_target, tau)
        soft_update(self.critic_r, self.critic_r_target, tau)
        if self.constrained:
            soft_update(self.critic_c, self.critic_c_target, tau)

    def update(self, episodes: list[EpisodeBatch]) -> dict:
        stats = self.actor_update(episodes)
        stats.update(self.critic_update(episodes))
        if self.constrained:
            stats.update(self.estimator_update(episodes))
            stats.update(self.lambda_update(episodes))
        self.soft_updates()
        return stats

    # -- persistence -----------------------------------------------------

    def named_nets(self) -> dict[str, DenseNet]:
        nets = {"actor": self.actor, "critic_r": self.critic_r,
                "actor_target": self.actor_target,
                "critic_r_target": self.critic_r_target}
        if self.constrained:
            nets.update(critic_c=self.critic_c,
                        critic_c_target=self.critic_c_target,
                        estimator=self.estimator)
        return nets

    def scalars(self) -> dict[str, float]:
        return {"lambda": self.lam} if self.constrained else {}


class IppoLearner:
    """Independent PPO: one actor and one critic per agent, local inputs."""

    def __init__(self, cfg: TrainerConfig, n_agents: int,
                 rng: np.random.Generator, obs_dim: int = OBS_SIZE):
        self.cfg = cfg
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        h = cfg.hidden_dim
        self.actors, self.critics = [], []
        self.actor_targets, self.critic_targets = [], []
        self.actor_opts, self.critic_opts = [], []
        for _ in range(n_agents):
            actor = DenseNet((obs_dim, h, h, 8), rng=rng,
                             out_scale=cfg.actor_out_scale)
            critic = DenseNet((obs_dim, h, h, 1), rng=rng)
            self.actors.append(actor)
            self.critics.append(critic)
            self.actor_targets.append(actor.copy())
            self.critic_targets.append(critic.copy())
            self.actor_opts.append(Adam(actor.n_params, cfg.lr))
            self.critic_opts.append(Adam(critic.n_params, cfg.lr))
        self.constrained = False

    def act(self, observations: np.ndarray, epsilon: float,
            rng: np.random.Generator) -> tuple[list[int], np.ndarray]:
        obs = compress_counts(observations)
        actions, logps = [], np.zeros(self.n_agents)
        for i in range(self.n_agents):
            logits = self.actors[i].forward(obs[i])[0]
            a, lp = sample_action(logits, epsilon, rng)
            actions.append(a)
            logps[i] = lp
        return actions, logps

    def greedy_actions(self, observations: np.ndarray) -> list[int]:
        obs = compress_counts(observations)
        return [int(np.argmax(self.actors[i].forward(obs[i])[0]))
                for i in range(self.n_agents)]

    def _reward_signals(self, episodes: list[EpisodeBatch]) -> list[np.ndarray]:
        if self.cfg.zeta == 0.0:
            return [ep.rewards for ep in episodes]
        return [ep.rewards - self.cfg.zeta * ep.costs for ep in episodes]

    def update(self, episodes: list[EpisodeBatch]) -> dict:
        cfg = self.cfg
        signals = self._reward_signals(episodes)
        rewards = np.concatenate(signals)
        dones = np.concatenate([ep.dones for ep in episodes])
        stats: dict[str, float] = {}
        for i in range(self.n_agents):
            obs_seqs = [compress_counts(ep.obs[:, i, :]) for ep in episodes]
            next_obs_seqs = [compress_counts(ep.next_obs[:, i, :])
                             for ep in episodes]
            obs_i = np.concatenate(obs_seqs)
            next_obs_i = np.concatenate(next_obs_seqs)
            actions_i = np.concatenate([ep.actions[:, i] for ep in episodes])
            old_logp_i = np.concatenate([ep.log_probs[:, i] for ep in episodes])
            adv, ret = _episode_advantages(
                self.critics[i], obs_seqs, next_obs_seqs, signals,
                [ep.dones for ep in episodes], cfg.gamma, cfg.gae_lambda)
            if cfg.normalize_advantages:
                adv = _normalize(adv)
            for _ in range(cfg.mini_epochs):
                g_actor, diag = policy_gradient(
                    self.actors[i], obs_i, actions_i, old_logp_i, adv,
                    cfg.eps_clip, cfg.entropy_coef)
                g_critic, vloss = value_regression_gradient(
                    self.critics[i], obs_i, ret, cfg.critic_coef)
                self.actor_opts[i].step(self.actors[i].params, g_actor,
                                        cfg.grad_norm_clip)
                self.critic_opts[i].step(self.critics[i].params, g_critic,
                                         cfg.grad_norm_clip)
            g_td, td_loss = td_gradient(
                self.critics[i], self.critic_targets[i], obs_i, next_obs_i,
                rewards, dones, cfg.gamma)
            self.critic_opts[i].step(self.critics[i].params, g_td,
                                     cfg.grad_norm_clip)
            soft_update(self.actors[i], self.actor_targets[i], cfg.tau)
            soft_update(self.critics[i], self.critic_targets[i], cfg.tau)
            stats[f"surrogate_r_{i}"] = diag["surrogate"]
            stats[f"value_loss_{i}"] = vloss
            stats[f"td_loss_{i}"] = td_loss
        return stats

    def named_nets(self) -> dict[str, DenseNet]:
        nets = {}
        for i in range(self.n_agents):
            nets[f"actor_{i}"] = self.actors[i]
            nets[f"critic_{i}"] = self.critics[i]
            nets[f"actor_target_{i}"] = self.actor_targets[i]
            nets[f"critic_target_{i}"] = self.critic_targets[i]
        return nets

    def scalars(self) -> dict[str, float]:
        return {}


class RandomPolicy:
    """Uniform-random controller, used as an evaluation baseline."""

    def __init__(self, n_agents: int, rng: np.random.Generator):
        self.n_agents = n_agents
        self.rng = rng

    def greedy_actions(self, observations) -> list[int]:
        return [int(a) for a in self.rng.integers(8, size=self.n_agents)]


def make_learner(cfg: TrainerConfig, n_agents: int, rng: np.random.Generator,
                 obs_dim: int = OBS_SIZE):
    if cfg.algo == "mappo-lce":
        return MappoLearner(cfg, n_agents, rng, obs_dim, constrained=True)
    if cfg.algo == "mappo":
        return MappoLearner(cfg, n_agents, rng, obs_dim, constrained=False)
    if cfg.algo == "ippo":
        return IppoLearner(cfg, n_agents, rng, obs_dim)
    raise ValueError(f"unknown algorithm {cfg.algo!r}")


# ----------------------------------------------------------------------
# rollout collection and evaluation


def collect_episode(sim: TrafficSimulator, engine: ConstraintEngine, learner,
                    rng: np.random.Generator, cfg: TrainerConfig,
                    global_step: int) -> list[Transition]:
    """Run one full training episode and return its transitions.

    Exploration epsilon advances with the global environment step count;
    costs come from the constraint engine in its configured mode.
    """
    obs = sim.reset()
    engine.reset()
    transitions = []
    horizon = sim.config.episode_length
    for t in range(horizon):
        eps = epsilon_at(global_step + t, cfg.epsilon_start, cfg.epsilon_finish,
                         cfg.epsilon_anneal_time)
        actions, logps = learner.act(obs, eps, rng)
        next_obs, reward, info = sim.step(actions)
        cost = engine.step(info["prev_phases"], info["phases"]).total
        transitions.append(Transition(
            observations=obs, actions=np.array(actions, dtype=np.int64),
            log_probs=logps.copy(), reward=reward, cost=cost,
            next_observations=next_obs, done=t == horizon - 1))
        obs = next_obs
    return transitions


def evaluate_episode(sim: TrafficSimulator, engine: ConstraintEngine,
                     policy) -> dict:
    """One greedy episode; never touches buffers or the epsilon schedule."""
    obs = sim.reset()
    engine.reset()
    total_reward = 0.0
    cost_sums = {"greentime": 0.0, "phaseskip": 0.0, "greenskip": 0.0, "total": 0.0}
    horizon = sim.config.episode_length
    for _ in range(horizon):
        actions = policy.greedy_actions(obs)
        obs, reward, info = sim.step(actions)
        sample = engine.step(info["prev_phases"], info["phases"])
        total_reward += reward
        cost_sums["greentime"] += sample.greentime
        cost_sums["phaseskip"] += sample.phaseskip
        cost_sums["greenskip"] += sample.greenskip
        cost_sums["total"] += sample.total
    metrics = sim.episode_metrics()
    return {
        "test_reward": total_reward,
        "throughput": metrics.throughput,
        "avg_delay": metrics.average_delay,
        "cost_greentime": cost_sums["greentime"] / horizon,
        "cost_phaseskip": cost_sums["phaseskip"] / horizon,
        "cost_greenskip": cost_sums["greenskip"] / horizon,
        "cost_total": cost_sums["total"] / horizon,
    }
