"""Value-based learner in plain numpy.

A multilayer perceptron Q-network with an optional dueling head, manual
backpropagation and Adam, epsilon-greedy control with action masks, double
Q-learning targets and proportional prioritized replay on a sum-tree.

Variants:

========  ===========  =============  ===========
variant   head         target         replay
========  ===========  =============  ===========
dqn       single       max target     uniform
d2qn      single       double         uniform
d3qn      dueling      double         uniform
d3qnper   dueling      double         prioritized
========  ===========  =============  ===========
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

VARIANTS = ("dqn", "d2qn", "d3qn", "d3qnper")
CHECKPOINT_FORMAT = "gridsched-agent/1"


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class AgentConfig:
    variant: str = "d3qnper"
    state_dim: int = 51
    n_actions: int = 25
    hidden: tuple[int, ...] = (128, 128, 128)
    gamma: float = 0.99
    learning_rate: float = 2.5e-4
    batch_size: int = 32
    buffer_size: int = 10000
    sync_period: int = 16
    eps_start: float = 1.0
    eps_min: float = 0.05
    eps_decay: float = 0.99
    episodes: int = 2000
    alpha_per: float = 0.95
    alpha_dev_start: float = 0.4
    alpha_dev_end: float = 0.99
    priority_floor: float = 0.001
    center_advantage: bool = False
    grad_clip: float = 10.0
    reward_scale: float = 0.01
    learn_start: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            raise ValueError("need 1 <= batch_size <= buffer_size")

    @property
    def dueling(self) -> bool:
        return self.variant in ("d3qn", "d3qnper")

    @property
    def double(self) -> bool:
        return self.variant != "dqn"

    @property
    def prioritized(self) -> bool:
        return self.variant == "d3qnper"

    def epsilon(self, episode: int) -> float:
        """Exploration rate after ``episode`` completed episodes."""
        return max(self.eps_min, self.eps_start * self.eps_decay ** episode)

    def alpha_dev(self, episode: int) -> float:
        frac = min(max(episode / max(self.episodes - 1, 1), 0.0), 1.0)
        return self.alpha_dev_start + frac * (self.alpha_dev_end - self.alpha_dev_start)


# ------------------------------------------------------------------ network

class QNetwork:
    """ReLU trunk with either a 25-way head or value + advantage heads."""

    def __init__(self, state_dim: int, n_actions: int, hidden=(128, 128, 128),
                 dueling: bool = True, center_advantage: bool = False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim, self.n_actions = state_dim, n_actions
        self.hidden = tuple(hidden)
        self.dueling, self.center_advantage = dueling, center_advantage
        shapes: dict[str, tuple] = {}
        fan_in = state_dim
        for i, h in enumerate(self.hidden):
            shapes[f"W{i}"], shapes[f"b{i}"] = (fan_in, h), (h,)
            fan_in = h
        heads = (("Wv", "bv", 1), ("Wa", "ba", n_actions)) if dueling else (("Wq", "bq", n_actions),)
        for wk, bk, out in heads:
            shapes[wk], shapes[bk] = (fan_in, out), (out,)
        self.shapes = shapes
        self.flat = np.empty(sum(int(np.prod(s)) for s in shapes.values()))
        self.params = self._views(self.flat)
        for k, shape in shapes.items():
            bound = 1.0 / math.sqrt(shapes["W" + k[1:]][0])
            self.params[k][...] = rng.uniform(-bound, bound, shape)

    def _views(self, buf: np.ndarray) -> dict[str, np.ndarray]:
        """Named parameter-shaped views into one contiguous vector."""
        out, pos = {}, 0
        for k, shape in self.shapes.items():
            n = int(np.prod(shape))
            out[k] = buf[pos:pos + n].reshape(shape)
            pos += n
        return out

    def copy(self) -> "QNetwork":
        other = object.__new__(QNetwork)
        other.__dict__.update(self.__dict__)
        other.flat = self.flat.copy()
        other.params = other._views(other.flat)
        return other

    def load_params(self, params: "dict[str, np.ndarray] | QNetwork"):
        if isinstance(params, QNetwork):
            np.copyto(self.flat, params.flat)
            return
        for k in self.params:
            self.params[k][...] = params[k]

    def forward(self, X, return_cache: bool = False):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        H = X[None, :] if single else X
        if H.shape[1] != self.state_dim:
            raise ValueError(f"state length {H.shape[1]} != {self.state_dim}")
        p = self.params
        acts = [H]
        for i in range(len(self.hidden)):
            H = np.maximum(H @ p[f"W{i}"] + p[f"b{i}"], 0.0)
            acts.append(H)
        if self.dueling:
            V = H @ p["Wv"] + p["bv"]
            A = H @ p["Wa"] + p["ba"]
            Q = V + A - (A.mean(axis=1, keepdims=True) if self.center_advantage else 0.0)
        else:
            Q = H @ p["Wq"] + p["bq"]
        Q = Q[0] if single else Q
        return (Q, acts) if return_cache else Q

    __call__ = forward

    def backward(self, acts: list[np.ndarray], dQ: np.ndarray) -> dict[str, np.ndarray]:
        """Gradients of ``sum(dQ * Q)`` with respect to every parameter."""
        p = self.params
        self.grad_flat = np.empty_like(self.flat)
        g = self._views(self.grad_flat)
        H = acts[-1]
        if self.dueling:
            dV = dQ.sum(axis=1, keepdims=True)
            dA = dQ - dQ.mean(axis=1, keepdims=True) if self.center_advantage else dQ
            np.matmul(H.T, dV, out=g["Wv"]); g["bv"][...] = dV.sum(axis=0)
            np.matmul(H.T, dA, out=g["Wa"]); g["ba"][...] = dA.sum(axis=0)
            dH = dV @ p["Wv"].T + dA @ p["Wa"].T
        else:
            np.matmul(H.T, dQ, out=g["Wq"]); g["bq"][...] = dQ.sum(axis=0)
            dH = dQ @ p["Wq"].T
        for i in reversed(range(len(self.hidden))):
            dZ = dH * (acts[i + 1] > 0)
            np.matmul(acts[i].T, dZ, out=g[f"W{i}"]); g[f"b{i}"][...] = dZ.sum(axis=0)
            if i:
                dH = dZ @ p[f"W{i}"].T
        return g


class Adam:
    """Adam over a network's flat parameter vector."""

    def __init__(self, net: "QNetwork", lr: float = 2.5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m_flat = np.zeros_like(net.flat)
        self.v_flat = np.zeros_like(net.flat)
        self.m = net._views(self.m_flat)
        self.v = net._views(self.v_flat)
        self._tmp = np.empty_like(net.flat)
        self.t = 0

    def step(self, net: "QNetwork", grad_flat: np.ndarray):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        m, v, tmp = self.m_flat, self.v_flat, self._tmp
        # in place: this runs once per learning step
        m *= self.beta1
        np.multiply(grad_flat, 1.0 - self.beta1, out=tmp)
        m += tmp
        v *= self.beta2
        np.multiply(grad_flat, grad_flat, out=tmp)
        tmp *= 1.0 - self.beta2
        v += tmp
        np.multiply(v, 1.0 / c2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += self.eps
        np.divide(m, tmp, out=tmp)
        tmp *= self.lr / c1
        net.flat -= tmp


# ------------------------------------------------------------------- replay

class ReplayBuffer:
    """Ring buffer of (s, a, r, s', done, next_mask) with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, n_actions: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity, dtype=bool)
        self.mask2 = np.ones((capacity, n_actions), dtype=bool)
        self.pos = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, s2, done, next_mask=None) -> int:
        i = self.pos
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, done
        self.mask2[i] = True if next_mask is None else next_mask
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def _gather(self, idx):
        return (self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx], self.mask2[idx])

    def sample(self, batch_size: int, rng: np.random.Generator, **_):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, batch_size)
        return idx, self._gather(idx), np.ones(batch_size)

    def update_priorities(self, idx, td_errors):
        pass


class SumTree:
    """Array-backed binary sum tree over ``capacity`` leaves."""

    def __init__(self, capacity: int):
        n = 1
        while n < capacity:
            n *= 2
        self.n = n
        self.tree = np.zeros(2 * n)

    @property
    def total(self) -> float:
        return float(self.tree[1])

    def leaves(self) -> np.ndarray:
        return self.tree[self.n:]

    def update(self, idx, values):
        node = np.asarray(idx, dtype=np.int64) + self.n
        self.tree[node] = values
        node //= 2
        while node[0] >= 1:
            # duplicates are harmless: every write stores the same sum
            self.tree[node] = self.tree[2 * node] + self.tree[2 * node + 1]
            node //= 2

    def find(self, u: np.ndarray) -> np.ndarray:
        """Leaf index whose cumulative interval contains each ``u``."""
        u = np.array(u, dtype=float)
        node = np.ones(u.shape, dtype=np.int64)
        while node[0] < self.n:
            left = 2 * node
            lv = self.tree[left]
            go_right = u >= lv
            # never descend into an empty subtree
            go_right &= self.tree[left + 1] > 0
            go_right |= lv <= 0
            u = np.where(go_right, u - lv, u)
            node = np.where(go_right, left + 1, left)
        return node - self.n


class PrioritizedReplayBuffer(ReplayBuffer):
    """Proportional prioritization: P(i) = p_i^a / sum p^a, p_i = |td_i| + floor."""

    def __init__(self, capacity, state_dim, n_actions, alpha: float = 0.95, floor: float = 0.001):
        super().__init__(capacity, state_dim, n_actions)
        self.alpha, self.floor = alpha, floor
        self.tree = SumTree(capacity)

    def add(self, s, a, r, s2, done, next_mask=None) -> int:
        # enter at the largest priority currently stored (1 for an empty buffer)
        top = float(self.tree.leaves()[: self.size].max()) if self.size else 1.0
        i = super().add(s, a, r, s2, done, next_mask)
        self.tree.update([i], [top])
        return i

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / leaves.sum()

    def sample(self, batch_size: int, rng: np.random.Generator, alpha_dev: float = 0.4):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        total = self.tree.total
        idx = self.tree.find(rng.uniform(0.0, total, batch_size))
        idx = np.minimum(idx, self.size - 1)
        prob = self.tree.leaves()[idx] / total
        w = (1.0 / (self.size * prob)) ** alpha_dev
        return idx, self._gather(idx), w / w.max()

    def update_priorities(self, idx, td_errors):
        p = np.abs(np.asarray(td_errors, dtype=float)) + self.floor
        self.tree.update(idx, p ** self.alpha)


# ------------------------------------------------------------ control/learn

def select_action(q_values, epsilon: float, mask=None, rng: np.random.Generator | None = None) -> int:
    q = np.asarray(q_values, dtype=float)
    allowed = np.ones(q.size, bool) if mask is None else np.asarray(mask, bool)
    if not allowed.any():
        raise ValueError("every action is masked")
    rng = rng if rng is not None else np.random.default_rng()
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(allowed)))
    return int(np.argmax(np.where(allowed, q, -np.inf)))


def td_target(variant: str, reward, next_state, gamma: float, online: QNetwork,
              target: QNetwork, done=False, next_mask=None):
    """Bootstrapped targets for a single transition or a batch."""
    r = np.asarray(reward, dtype=float)
    s2 = np.asarray(next_state, dtype=float)
    single = s2.ndim == 1
    S2 = s2[None, :] if single else s2
    q_t = target.forward(S2)
    m = np.ones_like(q_t, bool) if next_mask is None else np.atleast_2d(np.asarray(next_mask, bool))
    if variant == "dqn":
        boot = np.where(m, q_t, -np.inf).max(axis=1)
    else:
        q_o = online.forward(S2)
        a_star = np.argmax(np.where(m, q_o, -np.inf), axis=1)
        boot = q_t[np.arange(len(a_star)), a_star]
    y = r + gamma * np.where(np.asarray(done, bool), 0.0, boot if not single else boot[0])
    return float(y) if single else y


def loss_and_grads(net: QNetwork, states, actions, targets, weights):
    """Importance-weighted squared TD loss, its gradients and the TD errors."""
    Q, acts = net.forward(states, return_cache=True)
    B = len(actions)
    q_sa = Q[np.arange(B), actions]
    td = targets - q_sa
    loss = float(np.mean((weights * td) ** 2))
    dQ = np.zeros_like(Q)
    dQ[np.arange(B), actions] = -2.0 * weights ** 2 * td / B
    return loss, net.backward(acts, dQ), td


def learn_step(online: QNetwork, optimizer: Adam, states, actions, targets, weights,
               grad_clip: float | None = None) -> tuple[float, np.ndarray]:
    """One Adam step on the weighted TD loss. Returns (loss, td_errors)."""
    weights = np.asarray(weights, dtype=float)
    loss, grads, td = loss_and_grads(online, states, actions, targets, weights)
    if not math.isfinite(loss):
        raise NonFiniteLossError(f"non-finite loss {loss}; |td| max={np.nanmax(np.abs(td))}")
    if not np.any(weights):
        return loss, td
    grad = online.grad_flat
    if grad_clip:
        norm = float(np.sqrt(grad @ grad))
        if norm > grad_clip:
            grad *= grad_clip / norm
    optimizer.step(online, grad)
    return loss, td


def should_sync(episode_index: int, period: int) -> bool:
    """True for 1-indexed episodes 1, 1 + period, 1 + 2 * period, ..."""
    return episode_index % period == 1 % period


def sync_target(online: QNetwork, target: QNetwork, episode_index: int, period: int) -> bool:
    if should_sync(episode_index, period):
        target.load_params(online)
        return True
    return False


# -------------------------------------------------------------------- agent

class Agent:
    def __init__(self, config: AgentConfig | None = None):
        self.config = cfg = config or AgentConfig()
        self.rng = np.random.default_rng(cfg.seed)
        init_rng = np.random.default_rng([cfg.seed, 1])
        self.online = QNetwork(cfg.state_dim, cfg.n_actions, cfg.hidden, cfg.dueling,
                               cfg.center_advantage, init_rng)
        self.target = self.online.copy()
        self.optimizer = Adam(self.online, cfg.learning_rate)
        if cfg.prioritized:
            self.buffer = PrioritizedReplayBuffer(cfg.buffer_size, cfg.state_dim, cfg.n_actions,
                                                  cfg.alpha_per, cfg.priority_floor)
        else:
            self.buffer = ReplayBuffer(cfg.buffer_size, cfg.state_dim, cfg.n_actions)
        self.episode = 0
        self.learn_steps = 0

    @property
    def epsilon(self) -> float:
        return self.config.epsilon(self.episode)

    def act(self, state, mask=None, epsilon: float | None = None) -> int:
        eps = self.epsilon if epsilon is None else epsilon
        return select_action(self.online.forward(state), eps, mask, self.rng)

    def remember(self, s, a, r, s2, done, next_mask=None):
        self.buffer.add(s, a, r * self.config.reward_scale, s2, done, next_mask)

    def learn(self) -> float | None:
        cfg = self.config
        if len(self.buffer) < max(cfg.batch_size, cfg.learn_start):
            return None
        idx, (s, a, r, s2, done, m2), w = self.buffer.sample(
            cfg.batch_size, self.rng, alpha_dev=cfg.alpha_dev(self.episode))
        y = td_target(cfg.variant, r, s2, cfg.gamma, self.online, self.target, done, m2)
        loss, td = learn_step(self.online, self.optimizer, s, a, y, w, cfg.grad_clip)
        self.buffer.update_priorities(idx, td)
        self.learn_steps += 1
        return loss

    def end_episode(self) -> bool:
        """Count a finished episode and sync the target when due."""
        self.episode += 1
        return sync_target(self.online, self.target, self.episode, self.config.sync_period)

    # ------------------------------------------------------------ persistence
    def save(self, path: str | Path, extra: dict | None = None):
        arrays = {f"online/{k}": v for k, v in self.online.params.items()}
        arrays.update({f"target/{k}": v for k, v in self.target.params.items()})
        arrays.update({f"adam_m/{k}": v for k, v in self.optimizer.m.items()})
        arrays.update({f"adam_v/{k}": v for k, v in self.optimizer.v.items()})
        meta = {"format": CHECKPOINT_FORMAT, "config": asdict(self.config),
                "episode": self.episode, "epsilon": self.epsilon,
                "adam_t": self.optimizer.t, "learn_steps": self.learn_steps,
                "extra": extra or {}}
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Agent":
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
            agent = cls(AgentConfig(**meta["config"]))
            for prefix, target in (("online", agent.online.params), ("target", agent.target.params),
                                   ("adam_m", agent.optimizer.m), ("adam_v", agent.optimizer.v)):
                for k in target:
                    target[k][...] = z[f"{prefix}/{k}"]
        agent.optimizer.t = meta["adam_t"]
        agent.episode = meta["episode"]
        agent.learn_steps = meta["learn_steps"]
        agent.meta = meta
        return agent
