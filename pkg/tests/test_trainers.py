import numpy as np
import pytest

from atsc.constraints import ConstraintConfig, ConstraintEngine
from atsc.gridgen import gen_grid, gen_grid_document
from atsc.network import load_network
from atsc.nn import DenseNet
from atsc.simulator import SimConfig, TrafficSimulator
from atsc.trainers import (EpisodeBatch, IppoLearner, MappoLearner,
                           RandomPolicy, ReplayBuffer, TrainerConfig,
                           TrainingError, Transition, clipped_surrogate_terms,
                           collect_episode, evaluate_episode, make_learner,
                           penalty_reward, policy_gradient, soft_update,
                           surrogate_loss, td_gradient,
                           value_regression_gradient)

SMALL = dict(hidden_dim=32)


def random_episode(rng, T=12, n_agents=2, obs_dim=6, costs=None):
    transitions = []
    for t in range(T):
        obs = rng.normal(size=(n_agents, obs_dim))
        nxt = rng.normal(size=(n_agents, obs_dim))
        logits = rng.normal(size=(n_agents, 8))
        actions = rng.integers(8, size=n_agents)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        lp = logp[np.arange(n_agents), actions]
        cost = float(costs[t]) if costs is not None else float(rng.uniform(0, 1))
        transitions.append(Transition(obs, actions, lp, float(rng.normal()),
                                      cost, nxt, t == T - 1))
    return EpisodeBatch(transitions)


def tiny_env(intensity=3.0, seed=0, episode_length=15, mode="greentime",
             **limits):
    doc, rules = gen_grid(2, 2, intensity=intensity, seed=seed,
                          horizon=episode_length * 10.0)
    net = load_network(doc)
    sim = TrafficSimulator(net, rules, SimConfig(episode_length=episode_length))
    engine = ConstraintEngine(net, ConstraintConfig(mode=mode, **limits))
    return sim, engine


# -- surrogate mechanics ------------------------------------------------------

def test_clipped_surrogate_pinned_values():
    assert clipped_surrogate_terms(np.array([2.0]), np.array([1.0]), 0.15)[0] \
        == pytest.approx(1.15)
    assert clipped_surrogate_terms(np.array([0.5]), np.array([-1.0]), 0.15)[0] \
        == pytest.approx(-0.85)
    # inside the trust region both branches agree
    assert clipped_surrogate_terms(np.array([1.1]), np.array([2.0]), 0.15)[0] \
        == pytest.approx(2.2)


def test_surrogate_equals_mean_advantage_at_identity():
    rng = np.random.default_rng(0)
    adv = rng.normal(size=50)
    ratios = np.ones(50)
    terms = clipped_surrogate_terms(ratios, adv, 0.15)
    assert terms.mean() == pytest.approx(adv.mean())
    values = rng.normal(size=50)
    loss = surrogate_loss(ratios, adv, 0.15, values, values.copy(), 0.5)
    assert loss == pytest.approx(-adv.mean())


def test_surrogate_clip_bound_property():
    rng = np.random.default_rng(1)
    for _ in range(200):
        rho = float(rng.uniform(0.0, 3.0))
        adv = float(rng.normal())
        term = clipped_surrogate_terms(np.array([rho]), np.array([adv]), 0.15)[0]
        if adv >= 0:
            assert term <= rho * adv + 1e-12


def test_policy_gradient_zero_advantages():
    rng = np.random.default_rng(2)
    actor = DenseNet((6, 16, 8), rng=rng)
    obs = rng.normal(size=(10, 6))
    actions = rng.integers(8, size=10)
    old_logp = np.full(10, np.log(1 / 8))
    grad, diag = policy_gradient(actor, obs, actions, old_logp, np.zeros(10), 0.15)
    assert np.all(grad == 0.0)
    assert diag["surrogate"] == 0.0


def test_policy_gradient_rejects_nonfinite_ratio():
    rng = np.random.default_rng(3)
    actor = DenseNet((6, 16, 8), rng=rng)
    obs = rng.normal(size=(4, 6))
    actions = rng.integers(8, size=4)
    old_logp = np.array([0.0, -2000.0, 0.0, 0.0])  # exp overflow at sample 1
    with pytest.raises(TrainingError, match="sample 1"):
        policy_gradient(actor, obs, actions, old_logp, np.ones(4), 0.15)


def test_policy_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    actor = DenseNet((5, 12, 8), rng=rng)
    obs = rng.normal(size=(20, 5))
    actions = rng.integers(8, size=20)
    base_logits = actor.forward(obs)[0]
    base_logp = base_logits - np.log(np.exp(base_logits).sum(1, keepdims=True))
    old_logp = base_logp[np.arange(20), actions] + rng.normal(size=20) * 0.1
    adv = rng.normal(size=20)
    analytic, _ = policy_gradient(actor, obs, actions, old_logp, adv, 0.15)

    def loss_value():
        logits = actor.forward(obs)[0]
        logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        ratios = np.exp(logp[np.arange(20), actions] - old_logp)
        return -clipped_surrogate_terms(ratios, adv, 0.15).mean()

    h = 1e-6
    fd = np.zeros_like(actor.params)
    for i in range(actor.n_params):
        orig = actor.params[i]
        actor.params[i] = orig + h
        hi = loss_value()
        actor.params[i] = orig - h
        lo = loss_value()
        actor.params[i] = orig
        fd[i] = (hi - lo) / (2 * h)
    rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(fd), 1e-12)
    assert rel < 1e-4


# -- scalar helpers -----------------------------------------------------------

def test_penalty_reward_values():
    assert penalty_reward(6.0, 0.125, 0.2) == pytest.approx(5.975)
    assert penalty_reward(3.5, 0.0, 0.2) == 3.5
    assert penalty_reward(3.5, 0.9, 0.0) == 3.5
    with pytest.raises(ValueError):
        penalty_reward(1.0, 1.0, -0.1)


def test_soft_update_blending():
    rng = np.random.default_rng(5)
    live = DenseNet((3, 4, 2), rng=rng)
    target = DenseNet((3, 4, 2), rng=rng)

    t = target.copy()
    soft_update(live, t, tau=1.0)
    assert np.array_equal(t.params, live.params)

    t = target.copy()
    before = t.params.copy()
    soft_update(live, t, tau=0.0)
    assert np.array_equal(t.params, before)

    ones = DenseNet((2, 2), params=np.ones(6))
    zeros = DenseNet((2, 2), params=np.zeros(6))
    soft_update(ones, zeros, tau=0.01)
    assert np.allclose(zeros.params, 0.01)


# -- replay buffer ------------------------------------------------------------

def test_buffer_eviction_oldest_first():
    rng = np.random.default_rng(6)
    buf = ReplayBuffer(capacity=3)
    episodes = [random_episode(rng, T=4) for _ in range(5)]
    for ep in episodes:
        buf.push(ep)
    assert len(buf) == 3
    assert buf.episodes == episodes[2:]


def test_buffer_sampling_without_replacement_when_full():
    rng = np.random.default_rng(7)
    buf = ReplayBuffer(capacity=4)
    for _ in range(4):
        buf.push(random_episode(rng, T=3))
    batch = buf.sample(np.random.default_rng(0), 4)
    assert len(batch) == 4
    assert len({id(ep) for ep in batch}) == 4  # all distinct episodes


def test_buffer_sampling_with_replacement_when_small():
    rng = np.random.default_rng(8)
    buf = ReplayBuffer(capacity=8)
    buf.push(random_episode(rng, T=3))
    batch = buf.sample(np.random.default_rng(0), 8)
    assert len(batch) == 8


def test_buffer_rejects_empty_sample():
    with pytest.raises(TrainingError):
        ReplayBuffer(2).sample(np.random.default_rng(0), 1)


# -- learner updates ----------------------------------------------------------

def test_lambda_update_pinned_example():
    cfg = TrainerConfig(lambda_init=0.01, lambda_lr=1e-4, cost_limit=0.0, **SMALL)
    learner = MappoLearner(cfg, n_agents=2, rng=np.random.default_rng(9),
                           obs_dim=6)
    learner.estimator.params[:] = 0.0
    learner.estimator.biases[-1][0] = 0.5  # constant prediction 0.5
    ep = random_episode(np.random.default_rng(1), T=8)
    learner.lambda_update([ep])
    assert learner.lam == pytest.approx(0.01005)


def test_lambda_unchanged_at_cost_limit():
    cfg = TrainerConfig(lambda_init=0.03, lambda_lr=1e-3, cost_limit=0.25, **SMALL)
    learner = MappoLearner(cfg, n_agents=2, rng=np.random.default_rng(10),
                           obs_dim=6)
    learner.estimator.params[:] = 0.0
    learner.estimator.biases[-1][0] = 0.25
    ep = random_episode(np.random.default_rng(2), T=8)
    learner.lambda_update([ep])
    assert learner.lam == 0.03


def test_lambda_clamped_at_zero():
    cfg = TrainerConfig(lambda_init=0.0, lambda_lr=1e-2, cost_limit=0.0, **SMALL)
    learner = MappoLearner(cfg, n_agents=2, rng=np.random.default_rng(11),
                           obs_dim=6)
    learner.estimator.params[:] = 0.0
    learner.estimator.biases[-1][0] = -0.2
    ep = random_episode(np.random.default_rng(3), T=8)
    learner.lambda_update([ep])
    assert learner.lam == 0.0


def test_actor_update_stationary_at_zero_advantage():
    # zero rewards against a zero-valued critic give exactly zero advantages
    # and regression targets equal to the critic's values, so nothing moves
    cfg = TrainerConfig(**SMALL)
    learner = MappoLearner(cfg, n_agents=2, rng=np.random.default_rng(12),
                           obs_dim=6)
    learner.lam = 0.0
    learner.critic_r.params[:] = 0.0
    rng = np.random.default_rng(4)
    transitions = []
    T = 10
    for t in range(T):
        obs = rng.normal(size=(2, 6))
        nxt = rng.normal(size=(2, 6))
        logits = learner.actor.forward(learner._augment_batch(obs[None]))[0]
        logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        actions = rng.integers(8, size=2)
        lp = logp[np.arange(2), actions]
        transitions.append(Transition(obs, actions, lp, 0.0, 0.0, nxt,
                                      t == T - 1))
    before = {k: v.params.copy() for k, v in learner.named_nets().items()}
    learner.actor_update([EpisodeBatch(transitions)])
    for name in ("actor", "critic_r", "critic_c"):
        assert np.array_equal(getattr(learner, name).params, before[name]), name


def test_actor_update_lambda_zero_matches_unconstrained():
    rng = np.random.default_rng(5)
    ep = random_episode(rng, T=16, n_agents=3, obs_dim=7)
    cfg_lce = TrainerConfig(algo="mappo-lce", lr=1e-3, **SMALL)
    cfg_base = TrainerConfig(algo="mappo", lr=1e-3, zeta=0.0, **SMALL)
    lce = MappoLearner(cfg_lce, 3, np.random.default_rng(42), obs_dim=7,
                       constrained=True)
    base = MappoLearner(cfg_base, 3, np.random.default_rng(42), obs_dim=7,
                        constrained=False)
    assert np.array_equal(lce.actor.params, base.actor.params)
    lce.lam = 0.0
    lce.actor_update([ep])
    base.actor_update([ep])
    assert np.array_equal(lce.actor.params, base.actor.params)
    assert np.array_equal(lce.critic_r.params, base.critic_r.params)


def test_critic_regresses_to_reward_at_gamma_zero():
    cfg = TrainerConfig(gamma=0.0, lr=3e-3, **SMALL)
    learner = MappoLearner(cfg, n_agents=1, rng=np.random.default_rng(13),
                           obs_dim=5, constrained=False)
    rng = np.random.default_rng(6)
    states = rng.normal(size=(16, 5))
    rewards = rng.uniform(-1, 1, size=16)
    dones = np.zeros(16)
    for _ in range(2500):
        g, _loss = td_gradient(learner.critic_r, learner.critic_r_target,
                               states, states, rewards, dones, gamma=0.0)
        learner.critic_r_opt.step(learner.critic_r.params, g, cfg.grad_norm_clip)
    v = learner.critic_r.forward(states)[0][:, 0]
    assert np.max(np.abs(v - rewards)) < 0.05


def test_estimator_regression_convergence():
    cfg = TrainerConfig()  # the real 2x128 estimator architecture
    learner = MappoLearner(cfg, n_agents=2, rng=np.random.default_rng(14),
                           obs_dim=6)
    ep = random_episode(np.random.default_rng(7), T=32,
                        costs=np.full(32, 0.5))
    for _ in range(500):
        stats = learner.estimator_update([ep])
        assert stats["estimator_loss"] >= 0.0
    pred = learner.estimator.forward(learner._estimator_inputs([ep]))[0][:, 0]
    assert abs(float(pred.mean()) - 0.5) < 1e-2


def test_ippo_gradients_do_not_cross_agents():
    rng = np.random.default_rng(8)
    ep_a = random_episode(rng, T=10, n_agents=4, obs_dim=6)
    cfg = TrainerConfig(algo="ippo", lr=1e-3, **SMALL)
    l1 = IppoLearner(cfg, 4, np.random.default_rng(77), obs_dim=6)
    l2 = IppoLearner(cfg, 4, np.random.default_rng(77), obs_dim=6)
    # perturb agent 2's observations only
    ep_b = random_episode(np.random.default_rng(8), T=10, n_agents=4, obs_dim=6)
    ep_b.obs = ep_a.obs.copy()
    ep_b.next_obs = ep_a.next_obs.copy()
    ep_b.actions = ep_a.actions.copy()
    ep_b.log_probs = ep_a.log_probs.copy()
    ep_b.rewards = ep_a.rewards.copy()
    ep_b.costs = ep_a.costs.copy()
    ep_b.dones = ep_a.dones.copy()
    ep_b.obs[:, 2, :] += 1.0
    l1.update([ep_a])
    l2.update([ep_b])
    for i in range(4):
        same = np.array_equal(l1.actors[i].params, l2.actors[i].params)
        assert same == (i != 2), f"agent {i}"


def test_ippo_equals_mappo_for_single_agent():
    doc = gen_grid_document(1, 1)
    net = load_network(doc)
    inter = net.intersections[0]
    rules = []
    from atsc.flow import FlowRule
    for approach, exit_dir in (("N", "S"), ("E", "W")):
        rules.append(FlowRule((inter.incoming[approach],
                               inter.outgoing[exit_dir]), 0, 7, 20))
    kwargs = dict(lr=5e-4, zeta=0.2, **SMALL)
    results = {}
    for algo in ("mappo", "ippo"):
        sim = TrafficSimulator(net, rules, SimConfig(episode_length=12))
        engine = ConstraintEngine(net, ConstraintConfig(mode="greenskip"))
        cfg = TrainerConfig(algo=algo, **kwargs)
        rng = np.random.default_rng(99)
        learner = make_learner(cfg, 1, rng)
        buf = ReplayBuffer(cfg.buffer_size)
        step = 0
        for _ in range(3):
            transitions = collect_episode(sim, engine, learner, rng, cfg, step)
            step += len(transitions)
            buf.push(EpisodeBatch(transitions))
            learner.update(buf.sample(rng, cfg.batch_size))
        results[algo] = learner
    mappo, ippo = results["mappo"], results["ippo"]
    assert np.array_equal(mappo.actor.params, ippo.actors[0].params)
    assert np.array_equal(mappo.critic_r.params, ippo.critics[0].params)


# -- rollout collection -------------------------------------------------------

def test_collect_episode_covers_3600_seconds():
    sim, engine = tiny_env(episode_length=360, intensity=1.0)
    cfg = TrainerConfig(**SMALL)
    learner = make_learner(cfg, 4, np.random.default_rng(0))
    transitions = collect_episode(sim, engine, learner,
                                  np.random.default_rng(1), cfg, 0)
    assert len(transitions) == 360
    assert sim.clock == 3600
    assert transitions[-1].done and not transitions[0].done


def test_collect_episode_deterministic():
    def collect():
        sim, engine = tiny_env(episode_length=10)
        cfg = TrainerConfig(**SMALL)
        learner = make_learner(cfg, 4, np.random.default_rng(3))
        return collect_episode(sim, engine, learner,
                               np.random.default_rng(4), cfg, 0)

    a, b = collect(), collect()
    for ta, tb in zip(a, b):
        assert np.array_equal(ta.observations, tb.observations)
        assert np.array_equal(ta.actions, tb.actions)
        assert ta.reward == tb.reward and ta.cost == tb.cost


def test_collect_costs_zero_under_huge_thresholds():
    sim, engine = tiny_env(episode_length=20, green_time_limit=10**6,
                           phase_skip_limit=10**6, green_skip_limit=10**6,
                           mode="all")
    cfg = TrainerConfig(**SMALL)
    learner = make_learner(cfg, 4, np.random.default_rng(5))
    transitions = collect_episode(sim, engine, learner,
                                  np.random.default_rng(6), cfg, 0)
    assert all(t.cost == 0.0 for t in transitions)


def test_transition_state_views():
    rng = np.random.default_rng(9)
    ep = random_episode(rng, T=3, n_agents=2, obs_dim=6)
    assert ep.states.shape == (3, 12)
    assert ep.next_states.shape == (3, 12)
    t = Transition(np.ones((2, 6)), np.zeros(2, dtype=int), np.zeros(2),
                   0.0, 0.0, np.zeros((2, 6)), False)
    assert t.state.shape == (12,)


def test_evaluation_purity():
    sim, engine = tiny_env(episode_length=8)
    cfg = TrainerConfig(**SMALL)
    learner = make_learner(cfg, 4, np.random.default_rng(10))
    rng = np.random.default_rng(11)
    state_before = rng.bit_generator.state
    evaluate_episode(sim, engine, learner)
    assert rng.bit_generator.state == state_before  # no exploration consumed

    # interleaving evaluations must not change the training trajectory
    def final_params(evaluate_every):
        sim, engine = tiny_env(episode_length=8)
        learner = make_learner(cfg, 4, np.random.default_rng(12))
        rng = np.random.default_rng(13)
        buf = ReplayBuffer(cfg.buffer_size)
        step = 0
        for it in range(3):
            transitions = collect_episode(sim, engine, learner, rng, cfg, step)
            step += len(transitions)
            buf.push(EpisodeBatch(transitions))
            learner.update(buf.sample(rng, cfg.batch_size))
            if it % evaluate_every == 0:
                evaluate_episode(sim, engine, learner)
        return learner.actor.params.copy()

    assert np.array_equal(final_params(1), final_params(10))


def test_random_policy_uniform():
    policy = RandomPolicy(4, np.random.default_rng(14))
    actions = np.array([policy.greedy_actions(None) for _ in range(500)])
    assert actions.min() >= 0 and actions.max() <= 7
    assert len(np.unique(actions)) == 8
