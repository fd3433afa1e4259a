"""Oracles shared by the unit and acceptance suites."""
import numpy as np

from s4sagin.config import LearningConfig
from s4sagin.marl import (MlpParams, PPOBatch, actor_forward, critic_forward, init_agent, policy_probs,
                         ppo_loss, ppo_update, sample_action)


def random_ppo_problem(rng, obs_dim=None, hidden=None, actions=None, batch=6, neighbors=2):
    """A small actor/critic pair, a batch with some clipped ratios and a
    neighbour mixture, all drawn from ``rng``."""
    obs_dim = obs_dim or int(rng.integers(4, 9))
    h1, h2 = (int(rng.integers(4, 9)) for _ in range(2)) if hidden is None else (hidden, hidden)
    actions = actions or int(rng.integers(4, 9))
    actor = MlpParams.init((obs_dim, h1, h2, actions), rng)
    critic = MlpParams.init((obs_dim, h1, h2, 1), rng)
    for p in actor.arrays() + critic.arrays():  # non-zero biases exercise every path
        p += rng.normal(0, 0.3, size=p.shape)
    obs = rng.uniform(-1, 1, size=(batch, obs_dim))
    acts = rng.integers(actions, size=batch)
    logp = np.log(policy_probs(actor, obs))
    logp_old = logp[np.arange(batch), acts] + rng.normal(0, 0.4, size=batch)
    b = PPOBatch(obs, acts, logp_old, rng.normal(size=batch), rng.normal(size=batch))
    mix = None
    if neighbors:
        mix = np.zeros((batch, actions))
        for _ in range(neighbors):
            mix += policy_probs(MlpParams.init((obs_dim, h1, h2, actions), rng), obs)
        mix /= neighbors
    return actor, critic, b, mix


def gradient_check(actor, critic, batch, mix, h=1e-5, kl_beta=0.05, entropy_coef=0.01):
    """Largest relative error between analytic and central-difference
    gradients over every parameter (entries with absolute error < 1e-7 count
    as exact)."""
    args = dict(clip_eps=0.2, entropy_coef=entropy_coef, value_coef=0.5, kl_beta=kl_beta)
    _, ga, gc, _ = ppo_loss(actor, critic, batch, mix, **args)
    worst = 0.0
    for net, grads in ((actor, ga), (critic, gc)):
        analytic = np.concatenate([g.ravel() for g in grads])
        flat = net.flat()
        for i in range(flat.size):
            x = flat.copy()
            x[i] += h
            net.set_flat(x)
            up = ppo_loss(actor, critic, batch, mix, **args)[0]
            x[i] -= 2 * h
            net.set_flat(x)
            down = ppo_loss(actor, critic, batch, mix, **args)[0]
            net.set_flat(flat)
            num = (up - down) / (2 * h)
            err = abs(num - analytic[i])
            if err < 1e-7:
                continue
            worst = max(worst, err / max(abs(num), abs(analytic[i])))
    return worst


def bandit_updates_to_threshold(seed, threshold=0.95, max_updates=200, samples=16, cfg=None):
    """Updates a fresh agent needs on a 2-armed bandit (arm 0 pays 1) before
    its arm-0 probability reaches ``threshold``; ``None`` if it never does."""
    cfg = cfg or LearningConfig()
    agent = init_agent(0, action_count=2, seed=seed, hidden=cfg.hidden)
    rng = np.random.default_rng(seed)
    obs = np.full(8, 0.5)
    for update in range(1, max_updates + 1):
        probs = actor_forward(agent, obs)
        for _ in range(samples):
            a, logp = sample_action(probs, rng)
            agent.store(obs, a, logp, 1.0 if a == 0 else 0.0, critic_forward(agent, obs))
        ppo_update(agent, cfg=cfg)
        if actor_forward(agent, obs)[0] >= threshold:
            return update
    return None
