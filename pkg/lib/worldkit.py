"""
Synthetic control environments, offline datasets, returns and the
inverse-dynamics model.

Environments are deterministic: the state is the only thing carried
between steps, and every step is a semi-implicit Euler update with
dt = 0.05. Actions are clipped to the environment bounds before use,
and the clipped action is what gets recorded.
"""

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

import numerics as nx
from errors import DatasetError, NonFiniteError, ShapeError
from globals import DATASET_VERSION

logger = logging.getLogger(__name__)

DT = 0.05
GAMMA = 0.99
REPLAY_TOLERANCE = 1e-9

OSC_STIFFNESS = 4.0
OSC_DAMPING = 0.5
PENDULUM_GRAVITY = 10.0
PENDULUM_LENGTH = 1.0
PENDULUM_MASS = 1.0
PENDULUM_MAX_SPEED = 8.0


class EnvKind(Enum):
    POINTMASS = "pointmass"
    OSCILLATOR = "oscillator"
    PENDULUM = "pendulum"


_DIMS = {
    EnvKind.POINTMASS: (4, 2, 1.0),
    EnvKind.OSCILLATOR: (2, 1, 1.0),
    EnvKind.PENDULUM: (3, 1, 2.0),
}


@dataclass(frozen=True)
class Environment:
    kind: EnvKind
    d_s: int
    d_a: int
    action_low: np.ndarray
    action_high: np.ndarray
    gamma: float = GAMMA
    dt: float = DT

    @property
    def name(self):
        return self.kind.value

    def header(self):
        return {
            "env": self.name,
            "d_s": self.d_s,
            "d_a": self.d_a,
            "gamma": self.gamma,
            "dt": self.dt,
            "action_low": self.action_low.tolist(),
            "action_high": self.action_high.tolist(),
        }


def make_env(kind, gamma=GAMMA):
    """
    Environment for `kind` (EnvKind or its name)
    """

    if not isinstance(kind, EnvKind):
        try:
            kind = EnvKind(str(kind).lower())
        except ValueError as exc:
            raise ValueError("unknown environment: %s" % kind) from exc
    if not 0.0 < gamma <= 1.0:
        raise ValueError("discount must lie in (0, 1]")
    d_s, d_a, bound = _DIMS[kind]
    return Environment(
        kind=kind,
        d_s=d_s,
        d_a=d_a,
        action_low=np.full(d_a, -bound),
        action_high=np.full(d_a, bound),
        gamma=gamma,
    )


def clip_action(env, action):
    return np.clip(np.asarray(action, dtype=np.float64).reshape(env.d_a), env.action_low, env.action_high)


def _angle_normalize(theta):
    return ((theta + math.pi) % (2.0 * math.pi)) - math.pi


def oscillator_energy(state, stiffness=OSC_STIFFNESS):
    "Mechanical energy 0.5 v^2 + 0.5 k x^2"

    x, v = state
    return 0.5 * v * v + 0.5 * stiffness * x * x


def env_step(env, state, action):
    """
    Advance `state` by one step under `action`.
    Returns (next_state, reward, done); episodes have a fixed horizon,
    so done is always False.
    """

    state = np.asarray(state, dtype=np.float64).reshape(-1)
    if state.shape != (env.d_s,):
        raise ShapeError("state has %d entries, %s needs %d" % (state.size, env.name, env.d_s))
    if not np.all(np.isfinite(state)):
        raise NonFiniteError("non-finite state", name="state")
    action = clip_action(env, action)
    dt = env.dt

    if env.kind is EnvKind.POINTMASS:
        position, velocity = state[:2], state[2:]
        velocity = velocity + dt * action
        position = position + dt * velocity
        next_state = np.concatenate([position, velocity])
        reward = -float(np.linalg.norm(position))
    elif env.kind is EnvKind.OSCILLATOR:
        x, v = state
        v = v + dt * (-OSC_STIFFNESS * x - OSC_DAMPING * v + action[0])
        x = x + dt * v
        next_state = np.array([x, v])
        reward = -float(x * x)
    else:
        theta = math.atan2(state[1], state[0])
        speed = state[2]
        torque = action[0]
        accel = PENDULUM_GRAVITY / PENDULUM_LENGTH * math.sin(theta) + torque / (
            PENDULUM_MASS * PENDULUM_LENGTH ** 2
        )
        speed = float(np.clip(speed + dt * accel, -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
        theta = theta + dt * speed
        next_state = np.array([math.cos(theta), math.sin(theta), speed])
        reward = -float(_angle_normalize(theta) ** 2 + 0.1 * speed * speed + 0.001 * torque * torque)
    return next_state, reward, False


def initial_state(env, rng):
    "Sample from the initial-state distribution"

    if env.kind is EnvKind.POINTMASS:
        return np.concatenate([rng.uniform(-1.0, 1.0, size=2), np.zeros(2)])
    if env.kind is EnvKind.OSCILLATOR:
        return rng.uniform(-1.0, 1.0, size=2)
    theta = rng.uniform(-0.15, 0.15)
    return np.array([math.cos(theta), math.sin(theta), rng.uniform(-0.2, 0.2)])


# policies {{{


class PolicyKind(Enum):
    RANDOM = "random"
    SCRIPTED_NOISY = "scripted_noisy"
    SCRIPTED_EXPERT = "scripted_expert"
    MEDIUM_EXPERT = "medium_expert"
    MEDIUM_REPLAY = "medium_replay"


@dataclass(frozen=True)
class PolicySpec:
    kind: PolicyKind
    sigma: float = 0.5


def parse_policy(text, sigma=0.5):
    """
    "random", "scripted_expert", "scripted_noisy" or "scripted_noisy(0.3)", ...
    """

    text = str(text).strip().lower()
    if text.endswith(")") and "(" in text:
        text, value = text[:-1].split("(", 1)
        sigma = float(value)
    try:
        kind = PolicyKind(text)
    except ValueError as exc:
        raise ValueError("unknown policy: %s" % text) from exc
    if sigma < 0.0:
        raise ValueError("policy noise must be >= 0")
    return PolicySpec(kind=kind, sigma=sigma)


def scripted_action(env, state):
    """
    Proportional-derivative controller towards the goal state
    """

    if env.kind is EnvKind.POINTMASS:
        return -4.0 * state[:2] - 4.0 * state[2:]
    if env.kind is EnvKind.OSCILLATOR:
        return np.array([-2.0 * state[0] - 2.0 * state[1]])
    theta = math.atan2(state[1], state[0])
    return np.array([-12.0 * theta - 3.0 * state[2]])


def policy_action(env, spec_kind, sigma, state, rng):
    if spec_kind is PolicyKind.RANDOM:
        return rng.uniform(env.action_low, env.action_high)
    action = scripted_action(env, state)
    if sigma > 0.0:
        action = action + rng.normal(0.0, sigma, size=env.d_a)
    return clip_action(env, action)


def _episode_policy(spec, index, episodes):
    if spec.kind is PolicyKind.MEDIUM_EXPERT:
        if index < episodes // 2:
            return PolicyKind.SCRIPTED_NOISY, spec.sigma, "scripted_noisy(%g)" % spec.sigma
        return PolicyKind.SCRIPTED_EXPERT, 0.0, "scripted_expert"
    if spec.kind is PolicyKind.MEDIUM_REPLAY:
        sigma = 1.0 - 0.8 * index / max(1, episodes - 1)
        return PolicyKind.SCRIPTED_NOISY, sigma, "scripted_noisy(%g)" % sigma
    if spec.kind is PolicyKind.SCRIPTED_NOISY:
        return spec.kind, spec.sigma, "scripted_noisy(%g)" % spec.sigma
    if spec.kind is PolicyKind.SCRIPTED_EXPERT:
        return spec.kind, 0.0, "scripted_expert"
    return spec.kind, 0.0, "random"


# }}}
# episodes and datasets {{{


@dataclass
class Episode:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    behavior_tag: str

    @property
    def length(self):
        return len(self.rewards)

    def undiscounted_return(self):
        return float(np.sum(self.rewards))


@dataclass
class Dataset:
    env: Environment
    episodes: list
    reference: Optional[dict] = None
    header_extra: dict = field(default_factory=dict)

    @property
    def transitions(self):
        return sum(ep.length for ep in self.episodes)


def run_episode(env, spec_kind, sigma, horizon, rng, tag):
    state = initial_state(env, rng)
    states = [state]
    actions = []
    rewards = []
    for _ in range(horizon):
        action = policy_action(env, spec_kind, sigma, state, rng)
        state, reward, _ = env_step(env, state, action)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
    return Episode(
        states=np.array(states),
        actions=np.array(actions).reshape(horizon, env.d_a),
        rewards=np.array(rewards),
        behavior_tag=tag,
    )


def generate_dataset(env, policy_spec, episodes, horizon, seed, with_reference=True):
    """
    Roll out `episodes` episodes of `horizon` steps. Each episode draws
    from its own child stream of `seed`.
    """

    if horizon < 2:
        raise ShapeError("horizon must be at least 2")
    if isinstance(policy_spec, str):
        policy_spec = parse_policy(policy_spec)
    children = np.random.SeedSequence(seed).spawn(episodes)
    result = []
    for index, child in enumerate(children):
        kind, sigma, tag = _episode_policy(policy_spec, index, episodes)
        rng = np.random.default_rng(child)
        result.append(run_episode(env, kind, sigma, horizon, rng, tag))
    reference = None
    if with_reference:
        reference = reference_returns(env, max(10, min(episodes, 50)), horizon, seed)
    logger.info(
        "generated %d %s episodes of %d steps on %s", episodes, policy_spec.kind.value, horizon, env.name
    )
    return Dataset(env=env, episodes=result, reference=reference)


def reference_returns(env, episodes, horizon, seed):
    """
    Mean undiscounted return of the random and the scripted expert policy,
    used to normalize evaluation scores.
    """

    streams = np.random.SeedSequence([seed, 7919]).spawn(2 * episodes)
    random_returns = []
    expert_returns = []
    for index in range(episodes):
        rng = np.random.default_rng(streams[index])
        random_returns.append(
            run_episode(env, PolicyKind.RANDOM, 0.0, horizon, rng, "random").undiscounted_return()
        )
        rng = np.random.default_rng(streams[episodes + index])
        expert_returns.append(
            run_episode(env, PolicyKind.SCRIPTED_EXPERT, 0.0, horizon, rng, "expert").undiscounted_return()
        )
    return {
        "random": float(np.mean(random_returns)),
        "expert": float(np.mean(expert_returns)),
        "horizon": horizon,
    }


def normalized_score(ret, reference):
    """
    100 * (ret - random) / (expert - random)
    """

    span = reference["expert"] - reference["random"]
    if span == 0.0:
        raise ValueError("reference returns coincide")
    return 100.0 * (ret - reference["random"]) / span


def replay_error(env, episode):
    "Largest deviation between recorded and re-simulated next states"

    worst = 0.0
    for k in range(episode.length):
        expected, _, _ = env_step(env, episode.states[k], episode.actions[k])
        worst = max(worst, float(np.max(np.abs(expected - episode.states[k + 1]))))
    return worst


def discounted_return(episode, gamma):
    """
    sum_k gamma^k r_k
    """

    rewards = episode.rewards if isinstance(episode, Episode) else np.asarray(episode, dtype=np.float64)
    if len(rewards) == 0:
        raise ShapeError("episode has no rewards")
    total = 0.0
    for reward in reversed(list(rewards)):
        total = reward + gamma * total
    return float(total)


@dataclass(frozen=True)
class ReturnNormalizer:
    min_return: float
    max_return: float

    def __call__(self, ret):
        if self.max_return == self.min_return:
            return 1.0
        return (ret - self.min_return) / (self.max_return - self.min_return)


def normalize_returns(dataset):
    """
    Min-max normalize the discounted episode returns into [0, 1].
    Returns (normalizer, per-episode R).
    """

    if not dataset.episodes:
        raise ShapeError("dataset has no episodes")
    returns = [discounted_return(ep, dataset.env.gamma) for ep in dataset.episodes]
    normalizer = ReturnNormalizer(min_return=min(returns), max_return=max(returns))
    return normalizer, [normalizer(r) for r in returns]


# }}}
# dataset files {{{


def _episode_record(env, episode):
    return {
        "version": DATASET_VERSION,
        "env": env.name,
        "behavior_tag": episode.behavior_tag,
        "states": episode.states.tolist(),
        "actions": episode.actions.tolist(),
        "rewards": episode.rewards.tolist(),
    }


def serialize_dataset(dataset):
    header = {"version": DATASET_VERSION, "type": "header"}
    header.update(dataset.env.header())
    header["episodes"] = len(dataset.episodes)
    if dataset.reference is not None:
        header["reference"] = dataset.reference
    header.update(dataset.header_extra)
    lines = [json.dumps(header, sort_keys=True)]
    for episode in dataset.episodes:
        lines.append(json.dumps(_episode_record(dataset.env, episode), sort_keys=True))
    return "\n".join(lines) + "\n"


def save_dataset(dataset, filename):
    text = serialize_dataset(dataset)
    with open(filename, "w", encoding="utf-8") as f_data:
        f_data.write(text)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dataset_checksum(dataset):
    return hashlib.sha256(serialize_dataset(dataset).encode("utf-8")).hexdigest()


def _parse_line(line, number):
    try:
        return json.loads(line)
    except ValueError as exc:
        raise DatasetError("malformed JSON: %s" % exc, line=number) from exc


def load_dataset(filename):
    """
    Read a JSON Lines dataset; errors carry the offending line number
    """

    try:
        with open(filename, "r", encoding="utf-8") as f_data:
            lines = f_data.read().splitlines()
    except OSError as exc:
        raise DatasetError("cannot read %s: %s" % (filename, exc)) from exc
    if not lines:
        raise DatasetError("empty dataset file", line=1)

    header = _parse_line(lines[0], 1)
    if not isinstance(header, dict) or header.get("type") != "header":
        raise DatasetError("first line must be the header record", line=1)
    try:
        env = make_env(header["env"], gamma=float(header["gamma"]))
    except (KeyError, ValueError) as exc:
        raise DatasetError("bad header: %s" % exc, line=1) from exc

    episodes = []
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        record = _parse_line(line, number)
        try:
            states = np.asarray(record["states"], dtype=np.float64)
            actions = np.asarray(record["actions"], dtype=np.float64).reshape(-1, env.d_a)
            rewards = np.asarray(record["rewards"], dtype=np.float64).reshape(-1)
            tag = str(record["behavior_tag"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetError("bad episode record: %s" % exc, line=number) from exc
        if record.get("env") != env.name:
            raise DatasetError("episode env %s differs from header" % record.get("env"), line=number)
        if states.ndim != 2 or states.shape[1] != env.d_s:
            raise DatasetError("states must be rows of %d values" % env.d_s, line=number)
        if not len(states) == len(actions) + 1 == len(rewards) + 1:
            raise DatasetError("inconsistent episode lengths", line=number)
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(actions)) and np.all(np.isfinite(rewards))):
            raise DatasetError("non-finite values", line=number)
        episodes.append(Episode(states=states, actions=actions, rewards=rewards, behavior_tag=tag))
    extra = {
        key: value
        for key, value in header.items()
        if key not in ("version", "type", "episodes", "reference") and key not in env.header()
    }
    return Dataset(env=env, episodes=episodes, reference=header.get("reference"), header_extra=extra)


# }}}
# inverse dynamics {{{


class InverseDynamicsParams:
    """
    f_phi(s_t, s_next) -> a_t: a two-layer ReLU network over the
    standardized state and state change (see `inverse_features`). The
    standardization statistics are kept beside the weights.
    """

    def __init__(self, params, stats, d_s, d_a):
        self.params = params
        self.stats = stats
        self.d_s = d_s
        self.d_a = d_a
        self.ffn = nx.ffn_view(params, "inverse")


def init_inverse_dynamics(d_s, d_a, rng, hidden=nx.FFN_HIDDEN):
    params = nx.ParameterSet("inverse_dynamics")
    nx.init_ffn(params, "inverse", 2 * d_s, d_a, rng, hidden=hidden)
    stats = nx.ParameterSet("inverse_stats")
    stats.add("input.mean", np.zeros((1, 2 * d_s)))
    stats.add("input.scale", np.ones((1, 2 * d_s)))
    stats.add("output.scale", np.ones((1, d_a)))
    return InverseDynamicsParams(params, stats, d_s, d_a)


def transitions(dataset):
    "(inputs, actions): rows concat(s_t, s_next) and a_t over all episodes"

    inputs = []
    targets = []
    for episode in dataset.episodes:
        inputs.append(np.concatenate([episode.states[:-1], episode.states[1:]], axis=1))
        targets.append(episode.actions)
    if not inputs:
        return np.zeros((0, 2 * dataset.env.d_s)), np.zeros((0, dataset.env.d_a))
    return np.concatenate(inputs, axis=0), np.concatenate(targets, axis=0)


def inverse_features(inputs, d_s):
    "concat(s_t, s_next - s_t) for rows concat(s_t, s_next)"

    inputs = np.asarray(inputs, dtype=np.float64)
    return np.concatenate([inputs[:, :d_s], inputs[:, d_s:] - inputs[:, :d_s]], axis=1)


def _inverse_forward(inv, inputs):
    features = inverse_features(inputs, inv.d_s)
    x = nx.constant((features - inv.stats["input.mean"].data) / inv.stats["input.scale"].data)
    return nx.mul(nx.ffn_apply(x, inv.ffn), nx.constant(inv.stats["output.scale"].data))


def train_inverse_dynamics(dataset, inv, epochs, lr=1e-3, batch_size=256, seed=0):
    """
    MSE regression of a_t from (s_t, s_next) on a 90/10 split.
    Returns (inv, validation MSE).
    """

    inputs, targets = transitions(dataset)
    if len(inputs) == 0:
        raise ShapeError("dataset has no transitions")
    if len(inputs) < 1000:
        logger.warning("only %d transitions for inverse dynamics", len(inputs))

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(inputs))
    cut = min(len(inputs) - 1, int(0.9 * len(inputs))) if len(inputs) > 1 else 1
    train_idx, valid_idx = order[:cut], order[cut:]
    if len(valid_idx) == 0:
        valid_idx = train_idx

    train_inputs = inverse_features(inputs[train_idx], inv.d_s)
    inv.stats["input.mean"].data[...] = train_inputs.mean(axis=0, keepdims=True)
    inv.stats["input.scale"].data[...] = np.maximum(train_inputs.std(axis=0, keepdims=True), 1e-6)
    inv.stats["output.scale"].data[...] = (dataset.env.action_high - dataset.env.action_low)[None, :] / 2.0

    for epoch in range(epochs):
        shuffled = rng.permutation(train_idx)
        for start in range(0, len(shuffled), batch_size):
            chunk = shuffled[start : start + batch_size]
            prediction = _inverse_forward(inv, inputs[chunk])
            loss = nx.mean_all(nx.square(nx.sub(prediction, nx.constant(targets[chunk]))))
            nx.backward(loss)
            nx.adam_step(inv.params, lr)
        if (epoch + 1) % 50 == 0:
            logger.debug("inverse dynamics epoch %d loss %.3g", epoch + 1, loss.item())

    valid_pred = _inverse_forward(inv, inputs[valid_idx]).data
    mse = float(np.mean((valid_pred - targets[valid_idx]) ** 2))
    logger.info("inverse dynamics: %d transitions, validation MSE %.3g", len(inputs), mse)
    return inv, mse


def predict_action(inv, s_t, s_next, env=None):
    """
    a_t = f_phi(s_t, s_next), clipped to the action bounds of `env`
    """

    row = np.concatenate([np.asarray(s_t, dtype=np.float64).reshape(-1), np.asarray(s_next, dtype=np.float64).reshape(-1)])
    if row.size != 2 * inv.d_s:
        raise ShapeError("state pair has %d values, expected %d" % (row.size, 2 * inv.d_s))
    action = _inverse_forward(inv, row[None, :]).data[0]
    if env is not None:
        action = clip_action(env, action)
    return action


# }}}
