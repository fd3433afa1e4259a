"""Decentralised policy-sharing PPO in plain numpy.

Each SR owns an actor (8 -> 256 -> 256 -> 13, ReLU, ReLU, softmax) and a
critic of the same shape with a single linear output.  Besides the usual
clipped surrogate, entropy bonus and value loss, the actor is pulled
towards the averaged policy of its creditable neighbours through a
``KL(pi || mean neighbour pi)`` penalty evaluated on its own observations.

All summations run in a fixed order on float64 arrays, so identical agent
state, batch and seed give bitwise-identical parameters.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field

import numpy as np

from .config import LearningConfig

logger = logging.getLogger(__name__)

OBS_DIM = 8
LOGIT_CLAMP = 60.0
AMOUNT_LEVELS = (0.25, 0.50, 0.75)
TARGET_RANKS = (1, 2, 3, 4)


class NumericError(ArithmeticError):
    pass


# action table: 0 = no-op, then (rank, level) pairs rank-major
ACTION_TABLE: tuple = (None,) + tuple((r, l) for r in TARGET_RANKS for l in AMOUNT_LEVELS)
ACTION_COUNT = len(ACTION_TABLE)


def decode_action(index: int):
    """``None`` for the no-op, otherwise ``(neighbour rank, amount level)``."""
    if not 0 <= index < ACTION_COUNT:
        raise IndexError(f"action index {index} outside [0, {ACTION_COUNT})")
    return ACTION_TABLE[index]


def encode_action(rank: int, level: float) -> int:
    return ACTION_TABLE.index((rank, level))


@dataclass
class MlpParams:
    """Weights ``W[i]`` of shape (in, out) and biases ``b[i]`` of shape (out,)."""
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, zero: bool = False) -> "MlpParams":
        ws, bs = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = np.zeros((fan_in, fan_out)) if zero else rng.uniform(-bound, bound, (fan_in, fan_out))
            ws.append(w)
            bs.append(np.zeros(fan_out))
        return cls(ws, bs)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    def forward(self, x: np.ndarray):
        """Return (output, cache) for a batch ``x`` of shape (B, in)."""
        acts = [x]
        pres = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            pres.append(pre)
            h = pre if i == last else np.maximum(pre, 0.0)
            if i != last:
                acts.append(h)
        return h, (acts, pres)

    def backward(self, cache, d_out: np.ndarray) -> list[np.ndarray]:
        """Gradients in ``arrays()`` order for upstream gradient ``d_out``."""
        acts, pres = cache
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.weights)
        d = d_out
        for i in range(len(self.weights) - 1, -1, -1):
            grads_w[i] = acts[i].T @ d
            grads_b[i] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.weights[i].T) * (pres[i - 1] > 0.0)
        out = []
        for gw, gb in zip(grads_w, grads_b):
            out += [gw, gb]
        return out


def _check_finite(obs: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if not np.all(np.isfinite(obs)):
        raise ValueError("observation contains non-finite entries")
    return obs


def _softmax(logits: np.ndarray):
    z = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    logp = z - np.log(e.sum(axis=1, keepdims=True))
    return p, logp


def policy_probs(actor: MlpParams, obs) -> np.ndarray:
    logits, _ = actor.forward(_check_finite(obs))
    return _softmax(logits)[0]


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class Agent:
    sr_id: int
    actor: MlpParams
    critic: MlpParams
    rng: np.random.Generator
    buffer: dict[str, list] = field(default_factory=lambda: {k: [] for k in ("obs", "action", "logp", "reward", "value")})
    neighbor_policies: dict[int, tuple[MlpParams, int]] = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)

    def store(self, obs, action: int, logp: float, reward: float, value: float) -> None:
        for k, v in (("obs", np.asarray(obs, dtype=float)), ("action", int(action)), ("logp", float(logp)),
                     ("reward", float(reward)), ("value", float(value))):
            self.buffer[k].append(v)

    def clear(self) -> None:
        for v in self.buffer.values():
            v.clear()

    def __len__(self) -> int:
        return len(self.buffer["action"])


def init_agent(sr_id: int, action_count: int = ACTION_COUNT, seed: int = 0, hidden: int = 256,
               obs_dim: int = OBS_DIM, zero: bool = False) -> Agent:
    rng = np.random.default_rng(np.random.SeedSequence([seed, sr_id]))
    actor = MlpParams.init((obs_dim, hidden, hidden, action_count), rng, zero=zero)
    critic = MlpParams.init((obs_dim, hidden, hidden, 1), rng, zero=zero)
    return Agent(sr_id, actor, critic, rng)


def actor_forward(agent: Agent, obs) -> np.ndarray:
    """Action probabilities (1-D for one observation, 2-D for a batch)."""
    obs_arr = np.asarray(obs, dtype=float)
    probs = policy_probs(agent.actor, obs_arr)
    return probs[0] if obs_arr.ndim == 1 else probs


def critic_forward(agent: Agent, obs):
    obs_arr = np.asarray(obs, dtype=float)
    out, _ = agent.critic.forward(_check_finite(obs_arr))
    return float(out[0, 0]) if obs_arr.ndim == 1 else out[:, 0]


def sample_action(probabilities, rng: np.random.Generator) -> tuple[int, float]:
    """Inverse-CDF categorical draw from one uniform variate."""
    p = np.asarray(probabilities, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or not np.all(np.isfinite(p)) or abs(p.sum() - 1.0) > 1e-6:
        raise NumericError("probabilities do not form a distribution")
    u = rng.uniform()
    idx = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    idx = min(idx, len(p) - 1)
    while p[idx] == 0.0:  # guard the float edge at the top of the CDF
        idx -= 1
    return idx, float(np.log(p[idx]))


def compute_advantages(rewards, values, gamma: float = 0.99, lam: float = 0.95,
                       last_value: float | None = None, normalize: bool = True):
    """Generalised advantage estimates and return targets.

    The trajectory is treated as a slice of a continuing task: the value
    after the final step is bootstrapped with ``last_value`` (defaults to
    the last stored value).
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.size == 0 or r.shape != v.shape:
        raise ValueError("trajectory must be non-empty with aligned values")
    nxt = v[-1] if last_value is None else float(last_value)
    adv = np.zeros_like(r)
    running = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nxt - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        nxt = v[t]
    returns = adv + v
    if normalize:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    return adv, returns


@dataclass
class PPOBatch:
    obs: np.ndarray
    actions: np.ndarray
    logp_old: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray

    def __len__(self):
        return len(self.actions)

    def take(self, idx) -> "PPOBatch":
        return PPOBatch(self.obs[idx], self.actions[idx], self.logp_old[idx],
                        self.advantages[idx], self.returns[idx])


def neighbor_mixture(agent: Agent, obs: np.ndarray) -> np.ndarray | None:
    """Mean of stored neighbour policies on ``obs`` (ascending neighbour id)."""
    if not agent.neighbor_policies:
        return None
    acc = None
    for nid in sorted(agent.neighbor_policies):
        p = policy_probs(agent.neighbor_policies[nid][0], obs)
        acc = p if acc is None else acc + p
    return acc / len(agent.neighbor_policies)


def ppo_loss(actor: MlpParams, critic: MlpParams, batch: PPOBatch, mixture: np.ndarray | None,
             clip_eps: float = 0.2, entropy_coef: float = 0.01, value_coef: float = 0.5,
             kl_beta: float = 0.01):
    """Loss to minimise and its gradients ``(actor grads, critic grads)``.

    loss = mean(-clipped surrogate - c_ent * entropy + beta * KL(pi || mix))
           + c_v * mean((V - R)^2)
    """
    B = len(batch)
    logits, a_cache = actor.forward(batch.obs)
    clamped = np.abs(logits) <= LOGIT_CLAMP
    probs, logp = _softmax(logits)
    rows = np.arange(B)
    logp_a = logp[rows, batch.actions]
    ratio = np.exp(logp_a - batch.logp_old)
    adv = batch.advantages
    clipped_ratio = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    unclipped_term = ratio * adv
    surr = np.minimum(unclipped_term, clipped_ratio * adv)
    active = unclipped_term <= clipped_ratio * adv

    entropy = -(probs * logp).sum(axis=1)
    onehot = np.zeros_like(probs)
    onehot[rows, batch.actions] = 1.0
    d_logits = -(active * unclipped_term)[:, None] * (onehot - probs)
    d_logits += entropy_coef * probs * (logp + entropy[:, None])
    kl = np.zeros(B)
    if mixture is not None and kl_beta:
        log_mix = np.log(np.maximum(mixture, 1e-300))
        diff = logp - log_mix
        kl = (probs * diff).sum(axis=1)
        d_logits += kl_beta * probs * (diff - kl[:, None])
    d_logits = d_logits * clamped / B

    values, c_cache = critic.forward(batch.obs)
    v_err = values[:, 0] - batch.returns
    d_values = (value_coef * 2.0 * v_err / B)[:, None]

    loss = float(np.mean(-surr - entropy_coef * entropy + kl_beta * kl) + value_coef * np.mean(v_err ** 2))
    report = {
        "loss": loss, "surrogate": float(surr.mean()), "entropy": float(entropy.mean()),
        "kl": float(kl.mean()), "value_loss": float(np.mean(v_err ** 2)),
        "clip_fraction": float(np.mean(~active)),
    }
    return loss, actor.backward(a_cache, d_logits), critic.backward(c_cache, d_values), report


def batch_from_buffer(agent: Agent, gamma: float = 0.99, lam: float = 0.95) -> PPOBatch | None:
    if len(agent) == 0:
        return None
    b = agent.buffer
    adv, ret = compute_advantages(b["reward"], b["value"], gamma, lam)
    return PPOBatch(np.stack(b["obs"]), np.asarray(b["action"], dtype=int),
                    np.asarray(b["logp"], dtype=float), adv, ret)


def _step(agent: Agent, which: str, params: MlpParams, grads, cfg: LearningConfig) -> None:
    arrays = params.arrays()
    if cfg.optimizer == "adam":
        opt = agent.optimizer.get(which)
        if opt is None:
            opt = agent.optimizer[which] = Adam(cfg.lr)
        opt.step(arrays, grads)
    else:
        for p, g in zip(arrays, grads):
            p -= cfg.lr * g


def ppo_update(agent: Agent, batch: PPOBatch | None = None, cfg: LearningConfig | None = None) -> dict:
    """Run ``epochs`` passes of shuffled minibatch descent on the loss and
    clear the agent's buffer.  An empty batch is a no-op (with a warning in
    the report)."""
    cfg = cfg or LearningConfig()
    if batch is None:
        batch = batch_from_buffer(agent, cfg.gamma, cfg.gae_lambda)
    agent.clear()
    if batch is None or len(batch) == 0:
        return {"warning": "empty batch", "updates": 0}
    mixture_all = neighbor_mixture(agent, batch.obs) if cfg.kl_beta else None
    reports = []
    for _ in range(cfg.epochs):
        order = agent.rng.permutation(len(batch))
        for start in range(0, len(batch), cfg.minibatch):
            idx = order[start:start + cfg.minibatch]
            mb = batch.take(idx)
            mix = None if mixture_all is None else mixture_all[idx]
            _, g_actor, g_critic, rep = ppo_loss(agent.actor, agent.critic, mb, mix, cfg.clip_eps,
                                                 cfg.entropy_coef, cfg.value_coef, cfg.kl_beta)
            _step(agent, "actor", agent.actor, g_actor, cfg)
            _step(agent, "critic", agent.critic, g_critic, cfg)
            reports.append(rep)
    out = {k: float(np.mean([r[k] for r in reports])) for k in reports[0]}
    out["updates"] = len(reports)
    return out


def select_creditable_neighbors(weights, neighbor_ids, k: int = 3) -> list[int]:
    """Top-``k`` neighbours by cumulative weight (ties by id).  Zero-weight
    neighbours only qualify when every neighbour has zero weight."""
    ids = list(neighbor_ids)
    w = {i: float(weights[i]) for i in ids}
    if any(v > 0 for v in w.values()):
        ids = [i for i in ids if w[i] > 0]
    return sorted(ids, key=lambda i: (-w[i], i))[:k]


def exchange_policies(agents: dict[int, Agent], creditable: dict[int, list[int]], version: int) -> None:
    """Each agent stores a copy of its creditable neighbours' current actors."""
    snapshots = {}
    for sr in sorted(creditable):
        for n in creditable[sr]:
            if n not in agents or n == sr:
                continue
            if n not in snapshots:
                snapshots[n] = agents[n].actor.copy()
            old = agents[sr].neighbor_policies.get(n)
            if old is not None and old[1] >= version:
                continue
            agents[sr].neighbor_policies[n] = (snapshots[n].copy(), version)


_MAGIC = b"S4MLP\x00"
_VERSION = 1


def save_params(params: MlpParams, path) -> None:
    """Binary checkpoint: magic, version, JSON shape header, float64 data."""
    header = json.dumps({"shape": list(params.shape), "dtype": "<f8"}).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _VERSION, len(header)))
        fh.write(header)
        fh.write(params.flat().astype("<f8").tobytes())


def load_params(path, expected_shape=None) -> MlpParams:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a parameter checkpoint")
        version, hlen = struct.unpack("<HI", fh.read(6))
        if version != _VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen))
        data = np.frombuffer(fh.read(), dtype="<f8")
    shape = tuple(header["shape"])
    if expected_shape is not None and tuple(expected_shape) != shape:
        raise ValueError(f"checkpoint shape {shape} does not match expected {tuple(expected_shape)}")
    params = MlpParams.init(shape, np.random.default_rng(0), zero=True)
    if data.size != params.flat().size:
        raise ValueError("checkpoint payload size does not match its header")
    params.set_flat(data.astype(float))
    return params
