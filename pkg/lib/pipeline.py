"""
Training, planning and evaluation of the wavelet diffusion planner.

    window_dataset    sliding H-length state windows tagged with R(tau)
    train             LFD + HFD + CFFC jointly, inverse dynamics separately
    plan_step         one closed-loop planning step (history -> action)
    rollout/evaluate  closed-loop returns, mean and standard error over seeds
    ablation_suite    the CFFC variants and the time-domain baseline
    wavelet_suite     the same planner under different mother wavelets
"""

import json
import logging
import os
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Optional

import numpy as np
from gevent.threadpool import ThreadPool

import cffc as conditioner
import diffusion
import numerics as nx
import spectral
import worldkit
from errors import ConfigError, DatasetError, ShapeError, UntrainedError
from fields import DESCRIPTION
from globals import (
    RUN_BUNDLE_META,
    RUN_CONFIG,
    RUN_DATASET_CHECKSUM,
    RUN_EVAL,
    RUN_FREQUENCY_SHIFT,
    RUN_LOSS_SPECTRUM,
    THREADS,
)
from parse_config import parse_config, serialize_config
from view.report import render_eval
from view.tables import render_frequency_shift, render_loss_spectrum

logger = logging.getLogger(__name__)


class AblationMode(Enum):
    FULL = "full"
    LOW_FREQ_ONLY = "low_freq_only"
    HIGH_FREQ_ONLY = "high_freq_only"
    NONE_FREQ = "none_freq"
    BASELINE = "baseline_time_domain"


ABLATION_ORDER = [
    AblationMode.FULL,
    AblationMode.LOW_FREQ_ONLY,
    AblationMode.HIGH_FREQ_ONLY,
    AblationMode.NONE_FREQ,
    AblationMode.BASELINE,
]


@dataclass(frozen=True)
class TrainConfig:
    horizon: int = 96
    history: int = 0
    wavelet: str = "haar"
    diffusion_steps: int = 100
    p_null: float = 0.25
    omega: float = 1.2
    temp: float = 0.5
    literal_update: bool = False
    clamp_first_state: bool = True
    learning_rate: float = 2e-4
    epochs: int = 200
    batch_size: int = 32
    batches_per_epoch: int = 8
    inverse_epochs: int = 200
    inverse_lr: float = 1e-3
    d_model: int = 64
    hidden: int = 512
    denoiser_width: int = 64
    denoiser_blocks: int = 4
    kernel: int = 3
    mode: str = "full"
    track_baseline: bool = False
    band_width: int = 10
    seed: int = 0

    @classmethod
    def from_values(cls, values):
        known = {key: value for key, value in values.items() if key in DESCRIPTION}
        return cls(**known)

    @classmethod
    def from_file(cls, filename):
        return cls.from_values(parse_config(filename))

    def to_text(self):
        return serialize_config(asdict(self))

    @property
    def capacity(self):
        return self.history or self.horizon

    @property
    def ablation(self):
        return AblationMode(self.mode)

    @property
    def bank(self):
        return spectral.filter_bank(self.wavelet)

    @property
    def guidance(self):
        return diffusion.GuidanceConfig(
            omega=self.omega, temp=self.temp, literal_update=self.literal_update
        )

    def validate(self):
        """
        Reject inconsistent settings before any training step
        """

        def bad(text):
            raise ConfigError(text)

        if self.horizon < 4 or self.horizon % 2:
            bad("horizon must be even and >= 4, got %d" % self.horizon)
        if self.capacity < 2 or self.capacity % 2:
            bad("history must be even, got %d" % self.capacity)
        try:
            AblationMode(self.mode)
        except ValueError:
            bad("unknown mode %r" % self.mode)
        try:
            bank = self.bank
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if min(self.horizon, self.capacity) < bank.length:
            bad("%s needs windows of at least %d states" % (self.wavelet, bank.length))
        if self.diffusion_steps < 1:
            bad("diffusion_steps must be >= 1")
        if not 0.0 <= self.p_null <= 1.0:
            bad("p_null must lie in [0, 1]")
        if self.omega < 0.0:
            bad("omega must be >= 0")
        if not 0.0 <= self.temp <= 1.0:
            bad("temp must lie in [0, 1]")
        if self.learning_rate <= 0.0 or self.inverse_lr <= 0.0:
            bad("learning rates must be positive")
        if self.epochs < 0 or self.inverse_epochs < 0:
            bad("epochs must be >= 0")
        if self.batch_size < 1 or self.batches_per_epoch < 0:
            bad("batch_size must be >= 1 and batches_per_epoch >= 0")
        if self.kernel < 1 or self.kernel % 2 == 0:
            bad("kernel must be odd")
        if min(self.d_model, self.hidden, self.denoiser_width, self.denoiser_blocks) < 1:
            bad("model sizes must be positive")
        if self.horizon // 2 + 1 < 2 * self.band_width:
            bad(
                "horizon %d is too short for %d-mode loss bands"
                % (self.horizon, self.band_width)
            )
        return self


# windows {{{


@dataclass
class Window:
    states: np.ndarray
    ret: float
    episode: int


def window_dataset(dataset, horizon):
    """
    Stride-1 windows of `horizon` states over every episode, each tagged
    with its episode's normalized return.
    """

    _, normalized = worldkit.normalize_returns(dataset)
    windows = []
    for index, (episode, ret) in enumerate(zip(dataset.episodes, normalized)):
        count = len(episode.states) - horizon + 1
        for start in range(max(0, count)):
            windows.append(Window(episode.states[start : start + horizon], ret, index))
    if not windows:
        raise ShapeError("every episode is shorter than the horizon %d" % horizon)
    return windows


# }}}
# scaling {{{

SCALE_FLOOR = 1e-6
_STREAMS = ("low", "high", "time")


def init_scaler(d_s):
    """
    Identity standardization of the low and high sub-trajectories and
    of the raw time-domain window
    """

    scaler = nx.ParameterSet("scaler")
    for stream in _STREAMS:
        scaler.add(stream + ".mean", np.zeros((1, d_s)))
        scaler.add(stream + ".scale", np.ones((1, d_s)))
    return scaler


def fit_scaler(scaler, windows, bank):
    """
    Per-dimension mean and standard deviation of every stream over
    `windows`. The wavelet high band of a smooth trajectory is orders of
    magnitude smaller than its low band, and for PointMass it carries the
    actions, so each band gets its own statistics.
    """

    pairs = [spectral.dwt(w.states, bank) for w in windows]
    values = {
        "low": np.concatenate([p.low for p in pairs], axis=0),
        "high": np.concatenate([p.high for p in pairs], axis=0),
        "time": np.concatenate([w.states for w in windows], axis=0),
    }
    for stream in _STREAMS:
        scaler[stream + ".mean"].data[...] = values[stream].mean(axis=0, keepdims=True)
        scaler[stream + ".scale"].data[...] = np.maximum(values[stream].std(axis=0, keepdims=True), SCALE_FLOOR)
    logger.debug(
        "stream scales: low %s high %s",
        np.round(scaler["low.scale"].data[0], 4), np.round(scaler["high.scale"].data[0], 4),
    )
    return scaler


def standardize(scaler, stream, values):
    return (values - scaler[stream + ".mean"].data) / scaler[stream + ".scale"].data


def destandardize(scaler, stream, values):
    return values * scaler[stream + ".scale"].data + scaler[stream + ".mean"].data


def scaled_dwt(scaler, states, bank):
    "DWT of `states` with both bands standardized"

    pair = spectral.dwt(states, bank)
    return spectral.SubTrajectoryPair(
        standardize(scaler, "low", pair.low), standardize(scaler, "high", pair.high), pair.source_len
    )


def scaled_idwt(scaler, low, high, bank):
    "Inverse of `scaled_dwt`"

    pair = spectral.SubTrajectoryPair(
        destandardize(scaler, "low", low), destandardize(scaler, "high", high), 2 * len(low)
    )
    return spectral.idwt(pair, bank)


# }}}
# bundle {{{


@dataclass
class TrainedBundle:
    cfg: TrainConfig
    env: worldkit.Environment
    inverse: worldkit.InverseDynamicsParams
    normalizer: worldkit.ReturnNormalizer
    lfd: Optional[diffusion.DenoiserParams] = None
    hfd: Optional[diffusion.DenoiserParams] = None
    cffc: Optional[conditioner.CFFCParams] = None
    baseline: Optional[diffusion.DenoiserParams] = None
    scaler: Optional[nx.ParameterSet] = None
    dataset_checksum: str = ""
    reference: Optional[dict] = None
    trained: bool = False

    def parameter_sets(self):
        result = []
        for part in (self.lfd, self.hfd, self.cffc, self.baseline):
            if part is not None:
                result.append(part.params)
        result.append(self.inverse.params)
        result.append(self.inverse.stats)
        if self.scaler is not None:
            result.append(self.scaler)
        return result

    def checksums(self):
        return {p.name: nx.params_checksum(p) for p in self.parameter_sets()}


def init_bundle(cfg, env, rng, with_baseline=False):
    """
    Fresh parameters for `cfg`; the baseline is built for the baseline
    mode or when `with_baseline` is set.
    """

    mode = cfg.ablation
    cond_dim = cfg.d_model + 1
    lfd = hfd = cffc = baseline = None
    if mode is not AblationMode.BASELINE:
        cffc = conditioner.init_cffc(env.d_s, rng, d_model=cfg.d_model, hidden=cfg.hidden)
        lfd = diffusion.init_denoiser(
            env.d_s, cond_dim, rng, width=cfg.denoiser_width, blocks=cfg.denoiser_blocks,
            kernel=cfg.kernel, name="lfd",
        )
        hfd = diffusion.init_denoiser(
            env.d_s, cond_dim, rng, width=cfg.denoiser_width, blocks=cfg.denoiser_blocks,
            kernel=cfg.kernel, name="hfd",
        )
    if mode is AblationMode.BASELINE or with_baseline:
        baseline = diffusion.init_denoiser(
            env.d_s, 1, rng, width=cfg.denoiser_width, blocks=cfg.denoiser_blocks,
            kernel=cfg.kernel, name="baseline",
        )
    inverse = worldkit.init_inverse_dynamics(env.d_s, env.d_a, rng, hidden=cfg.hidden)
    return TrainedBundle(
        cfg=cfg,
        env=env,
        inverse=inverse,
        normalizer=worldkit.ReturnNormalizer(0.0, 1.0),
        lfd=lfd,
        hfd=hfd,
        cffc=cffc,
        baseline=baseline,
        scaler=init_scaler(env.d_s),
    )


# }}}
# training {{{


@dataclass
class FrequencyShiftEntry:
    epoch: int
    model_ratio: Optional[float]
    baseline_ratio: Optional[float]
    model_loss: Optional[float]
    baseline_loss: Optional[float]
    model_bands: tuple = (0.0, 0.0)
    baseline_bands: tuple = (0.0, 0.0)
    grad_norms: dict = field(default_factory=dict)
    model_residuals: list = field(default_factory=list)
    baseline_residuals: list = field(default_factory=list)
    model_power: Optional[np.ndarray] = None


@dataclass
class FrequencyShiftLog:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def final(self):
        return self.entries[-1] if self.entries else None

    def model_ratios(self):
        return [e.model_ratio for e in self.entries]

    def baseline_ratios(self):
        return [e.baseline_ratio for e in self.entries]


class _BandAccumulator:
    def __init__(self, band_width):
        self.band_width = band_width
        self.low = 0.0
        self.high = 0.0
        self.power = None
        self.loss = 0.0
        self.batches = 0

    def add_residual(self, residual):
        report = spectral.loss_spectrum(residual, self.band_width)
        self.low += report.low_band_power
        self.high += report.high_band_power
        power = report.one_sided_power
        self.power = power if self.power is None else self.power + power

    def ratio(self):
        if self.batches == 0 or self.high <= 0.0:
            return None
        return self.low / self.high

    def mean_loss(self):
        return self.loss / self.batches if self.batches else None


def _condition(pooled, ret):
    return nx.concat_cols([pooled, nx.constant([[ret]])])


def wfd_batch_loss(bundle, windows, sched, rng_low, rng_high):
    """
    Joint LFD + HFD loss over `windows` with conditions from the CFFC on
    each window's clean, standardized sub-trajectory pair.
    Returns (loss, time-domain residuals, (low result, high result)).
    """

    cfg = bundle.cfg
    mode = cfg.ablation
    bank = cfg.bank
    low_batch = []
    high_batch = []
    for window in windows:
        pair = scaled_dwt(bundle.scaler, window.states, bank)
        y_low = y_high = None
        if mode is not AblationMode.NONE_FREQ:
            cond = conditioner.cffc_forward(pair, bundle.cffc)
            if mode is not AblationMode.HIGH_FREQ_ONLY:
                y_low = _condition(cond.pooled_low, window.ret)
            if mode is not AblationMode.LOW_FREQ_ONLY:
                y_high = _condition(cond.pooled_high, window.ret)
        low_batch.append((pair.low, y_low))
        high_batch.append((pair.high, y_high))

    low = diffusion.training_loss(low_batch, sched, bundle.lfd, cfg.p_null, rng_low)
    high = diffusion.training_loss(high_batch, sched, bundle.hfd, cfg.p_null, rng_high)
    residuals = [
        spectral.idwt(spectral.SubTrajectoryPair(r_low, r_high, 2 * len(r_low)), bank)
        for r_low, r_high in zip(low.residuals, high.residuals)
    ]
    return nx.add(low.loss, high.loss), residuals, (low, high)


def baseline_batch_loss(bundle, windows, sched, rng):
    batch = [(standardize(bundle.scaler, "time", w.states), nx.constant([[w.ret]])) for w in windows]
    result = diffusion.training_loss(batch, sched, bundle.baseline, bundle.cfg.p_null, rng)
    return result.loss, result.residuals


def _grad_norms(bundle):
    norms = {}
    if bundle.cffc is not None:
        params = bundle.cffc.params
        norms["cffc"] = params.grad_norm()
        for prefix in ("attend.v_low", "attend.v_high", "attend.q", "attend.k", "enhance_low", "enhance_high"):
            norms["cffc." + prefix] = params.grad_norm(prefix)
    if bundle.lfd is not None:
        norms["lfd.cond"] = bundle.lfd.params.grad_norm("cond.")
        norms["hfd.cond"] = bundle.hfd.params.grad_norm("cond.")
    return norms


def _batches(rng, count, cfg):
    order = rng.permutation(count)
    chunks = [order[k : k + cfg.batch_size] for k in range(0, count, cfg.batch_size)]
    if cfg.batches_per_epoch:
        chunks = chunks[: cfg.batches_per_epoch]
    return chunks


def train(dataset, cfg, run_logger=None, keep_residuals=False):
    """
    Train every model of the planner on `dataset`.
    Returns (TrainedBundle, FrequencyShiftLog).
    """

    cfg.validate()
    env = dataset.env
    mode = cfg.ablation
    streams = np.random.SeedSequence(cfg.seed).spawn(6)
    init_rng, batch_rng, low_rng, high_rng, base_rng, inverse_rng = [
        np.random.default_rng(s) for s in streams
    ]

    windows = window_dataset(dataset, cfg.horizon)
    normalizer, _ = worldkit.normalize_returns(dataset)
    with_baseline = mode is AblationMode.BASELINE or cfg.track_baseline
    bundle = init_bundle(cfg, env, init_rng, with_baseline=with_baseline)
    fit_scaler(bundle.scaler, windows, cfg.bank)
    bundle.normalizer = normalizer
    bundle.dataset_checksum = worldkit.dataset_checksum(dataset)
    bundle.reference = dataset.reference
    sched = diffusion.linear_schedule(cfg.diffusion_steps)
    wfd = mode is not AblationMode.BASELINE

    log = FrequencyShiftLog()
    logger.info(
        "training %s on %d windows (H=%d, N=%d, %d epochs)",
        mode.value, len(windows), cfg.horizon, cfg.diffusion_steps, cfg.epochs,
    )
    for epoch in range(1, cfg.epochs + 1):
        model_acc = _BandAccumulator(cfg.band_width)
        base_acc = _BandAccumulator(cfg.band_width)
        grad_norms = {}
        model_residuals = []
        baseline_residuals = []
        for chunk in _batches(batch_rng, len(windows), cfg):
            batch = [windows[k] for k in chunk]
            if wfd:
                loss, residuals, _ = wfd_batch_loss(bundle, batch, sched, low_rng, high_rng)
                nx.backward(loss)
                for key, value in _grad_norms(bundle).items():
                    grad_norms[key] = grad_norms.get(key, 0.0) + value
                nx.adam_step(bundle.lfd.params, cfg.learning_rate)
                nx.adam_step(bundle.hfd.params, cfg.learning_rate)
                if mode is not AblationMode.NONE_FREQ:
                    nx.adam_step(bundle.cffc.params, cfg.learning_rate)
                model_acc.loss += loss.item()
                model_acc.batches += 1
                for residual in residuals:
                    model_acc.add_residual(residual)
                if keep_residuals:
                    model_residuals.extend(residuals)
            if bundle.baseline is not None:
                loss, residuals = baseline_batch_loss(bundle, batch, sched, base_rng)
                nx.backward(loss)
                nx.adam_step(bundle.baseline.params, cfg.learning_rate)
                base_acc.loss += loss.item()
                base_acc.batches += 1
                for residual in residuals:
                    base_acc.add_residual(residual)
                if keep_residuals:
                    baseline_residuals.extend(residuals)

        entry = FrequencyShiftEntry(
            epoch=epoch,
            model_ratio=model_acc.ratio(),
            baseline_ratio=base_acc.ratio(),
            model_loss=model_acc.mean_loss(),
            baseline_loss=base_acc.mean_loss(),
            model_bands=(model_acc.low, model_acc.high),
            baseline_bands=(base_acc.low, base_acc.high),
            grad_norms=grad_norms,
            model_residuals=model_residuals,
            baseline_residuals=baseline_residuals,
            model_power=model_acc.power if wfd else base_acc.power,
        )
        log.entries.append(entry)
        record = {
            "epoch": epoch,
            "model_loss": entry.model_loss,
            "model_ratio": entry.model_ratio,
            "baseline_loss": entry.baseline_loss,
            "baseline_ratio": entry.baseline_ratio,
        }
        if run_logger is not None:
            run_logger.log(record)
        logger.debug("epoch %d: %s", epoch, record)

    bundle.inverse, mse = worldkit.train_inverse_dynamics(
        dataset, bundle.inverse, cfg.inverse_epochs, lr=cfg.inverse_lr,
        seed=int(inverse_rng.integers(2 ** 31)),
    )
    if run_logger is not None:
        run_logger.log({"inverse_validation_mse": mse})
    bundle.trained = True
    return bundle, log


# }}}
# planning {{{


class HistoryQueue:
    """
    Bounded FIFO of observed states; the oldest state leaves first
    """

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("queue capacity must be positive")
        self.capacity = capacity
        self._states = deque(maxlen=capacity)

    def insert(self, state):
        self._states.append(np.asarray(state, dtype=np.float64).reshape(-1).copy())

    def __len__(self):
        return len(self._states)

    @property
    def current(self):
        return self._states[-1]

    def padded(self):
        """
        capacity x d_s history, front-padded with the oldest state
        """

        if not self._states:
            raise ShapeError("history queue is empty")
        states = list(self._states)
        missing = self.capacity - len(states)
        return np.array([states[0]] * missing + states)


def _clamp_projector(state, scaler, bank, half):
    def project(mean):
        tau = scaled_idwt(scaler, mean[:half], mean[half:], bank)
        tau[0] = state
        pair = scaled_dwt(scaler, tau, bank)
        return np.concatenate([pair.low, pair.high], axis=0)

    return project


def plan_trajectory(bundle, queue, cfg, rng):
    """
    Sample a full H x d_s plan conditioned on the history in `queue`.
    Guidance and clamping come from `cfg`; the model layout always
    comes from the bundle. Sampling runs on standardized streams and the
    plan is returned in state units.
    """

    if not bundle.trained:
        raise UntrainedError("bundle has not been trained")
    if not len(queue):
        raise ShapeError("history queue is empty")
    trained = bundle.cfg
    cfg = cfg or trained
    env = bundle.env
    scaler = bundle.scaler
    sched = diffusion.linear_schedule(trained.diffusion_steps)
    guidance = cfg.guidance
    state = queue.current
    mode = trained.ablation

    if mode is AblationMode.BASELINE:
        projector = None
        if cfg.clamp_first_state:
            start = standardize(scaler, "time", state[None, :])[0]

            def projector(mean):
                mean = mean.copy()
                mean[0] = start
                return mean

        x = diffusion.sample(
            np.array([[1.0]]), sched, guidance, bundle.baseline, rng,
            (trained.horizon, env.d_s), projector=projector,
        )
        plan = destandardize(scaler, "time", x)
    else:
        bank = trained.bank
        y_low = y_high = None
        if mode is not AblationMode.NONE_FREQ:
            cond = conditioner.cffc_forward(scaled_dwt(scaler, queue.padded(), bank), bundle.cffc)
            if mode is not AblationMode.HIGH_FREQ_ONLY:
                y_low = np.concatenate([cond.pooled_low.data, [[1.0]]], axis=1)
            if mode is not AblationMode.LOW_FREQ_ONLY:
                y_high = np.concatenate([cond.pooled_high.data, [[1.0]]], axis=1)

        half = trained.horizon // 2
        projector = _clamp_projector(state, scaler, bank, half) if cfg.clamp_first_state else None
        x = rng.standard_normal((2 * half, env.d_s))
        for step in range(sched.steps, 0, -1):
            eps_low = diffusion.guided_epsilon(x[:half], y_low, step - 1, guidance, bundle.lfd)
            eps_high = diffusion.guided_epsilon(x[half:], y_high, step - 1, guidance, bundle.hfd)
            eps_hat = np.concatenate([eps_low, eps_high], axis=0)
            x = diffusion.denoise_step(x, eps_hat, step, sched, guidance, rng, projector=projector)
        plan = scaled_idwt(scaler, x[:half], x[half:], bank)
    if cfg.clamp_first_state:
        plan[0] = state
    return plan


def plan_step(bundle, queue, cfg, rng, return_plan=False):
    """
    Plan from the history in `queue` and return the action joining the
    first two planned states.
    """

    plan = plan_trajectory(bundle, queue, cfg, rng)
    action = worldkit.predict_action(bundle.inverse, plan[0], plan[1], bundle.env)
    if return_plan:
        return action, plan
    return action


@dataclass
class RolloutStats:
    returns: list
    discounted: list
    seed: int

    @property
    def mean_return(self):
        return float(np.mean(self.returns)) if self.returns else 0.0


def rollout(bundle, env, episodes, max_steps, seed):
    """
    Closed-loop episodes, replanning at every step
    """

    children = np.random.SeedSequence(seed).spawn(episodes)
    returns = []
    discounted = []
    for child in children:
        env_rng, plan_rng = [np.random.default_rng(s) for s in child.spawn(2)]
        state = worldkit.initial_state(env, env_rng)
        queue = HistoryQueue(bundle.cfg.capacity)
        rewards = []
        for _ in range(max_steps):
            queue.insert(state)
            action = plan_step(bundle, queue, bundle.cfg, plan_rng)
            state, reward, done = worldkit.env_step(env, state, action)
            rewards.append(reward)
            if done:
                break
        returns.append(float(np.sum(rewards)))
        discounted.append(worldkit.discounted_return(rewards, env.gamma) if rewards else 0.0)
    return RolloutStats(returns=returns, discounted=discounted, seed=seed)


def mean_stderr(values):
    """
    Mean and standard error (sample standard deviation / sqrt(n))
    """

    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ShapeError("no values")
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(values.size))


@dataclass
class EvalResult:
    mean: float
    stderr: float
    seeds: list
    per_seed: list
    rollouts: list
    normalized_mean: Optional[float] = None
    normalized_stderr: Optional[float] = None

    def to_dict(self):
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "seeds": self.seeds,
            "per_seed_mean": self.per_seed,
            "returns": [r.returns for r in self.rollouts],
            "discounted": [r.discounted for r in self.rollouts],
            "normalized_mean": self.normalized_mean,
            "normalized_stderr": self.normalized_stderr,
        }


def evaluate(bundle, env, seeds=5, episodes=20, max_steps=100, base_seed=0, reference=None):
    """
    Mean and standard error of the per-seed mean return. Seeds run on a
    thread pool; results are gathered in seed order.
    """

    seed_list = list(seeds) if isinstance(seeds, (list, tuple)) else [base_seed + k for k in range(seeds)]
    if len(seed_list) < 2:
        raise ShapeError("evaluation needs at least 2 seeds")
    pool = ThreadPool(min(THREADS, len(seed_list)))
    try:
        jobs = [pool.spawn(rollout, bundle, env, episodes, max_steps, s) for s in seed_list]
        rollouts = [job.get() for job in jobs]
    finally:
        pool.kill()
    per_seed = [r.mean_return for r in rollouts]
    mean, stderr = mean_stderr(per_seed)
    result = EvalResult(mean=mean, stderr=stderr, seeds=seed_list, per_seed=per_seed, rollouts=rollouts)
    if reference is not None:
        try:
            scores = [worldkit.normalized_score(v, reference) for v in per_seed]
        except ValueError as exc:
            logger.warning("no normalized score: %s", exc)
        else:
            result.normalized_mean, result.normalized_stderr = mean_stderr(scores)
    logger.info("evaluation over %d seeds: %.4g +- %.4g", len(seed_list), mean, stderr)
    return result


# }}}
# suites {{{


@dataclass
class SuiteRow:
    name: str
    mean: float
    stderr: float
    final_ratio: Optional[float]
    dataset_checksum: str
    seeds: list
    log: FrequencyShiftLog


def _suite_row(name, dataset, cfg, env, seeds, episodes, max_steps):
    bundle, log = train(dataset, cfg)
    result = evaluate(bundle, env, seeds=seeds, episodes=episodes, max_steps=max_steps)
    final = log.final
    if final is None:
        ratio = None
    elif cfg.ablation is AblationMode.BASELINE:
        ratio = final.baseline_ratio
    else:
        ratio = final.model_ratio
    return SuiteRow(
        name=name,
        mean=result.mean,
        stderr=result.stderr,
        final_ratio=ratio,
        dataset_checksum=bundle.dataset_checksum,
        seeds=list(result.seeds),
        log=log,
    )


def ablation_suite(dataset, env, cfg, seeds=(0, 1, 2, 3, 4), episodes=20, max_steps=100):
    """
    Train and evaluate the four conditioner variants and the time-domain
    baseline under one seed list.
    """

    rows = []
    for mode in ABLATION_ORDER:
        variant = replace(cfg, mode=mode.value, track_baseline=False)
        logger.info("ablation: %s", mode.value)
        rows.append(_suite_row(mode.value, dataset, variant, env, list(seeds), episodes, max_steps))
    return rows


def wavelet_suite(dataset, env, cfg, wavelets=("haar", "db2", "db3"), seeds=(0, 1, 2, 3, 4), episodes=20, max_steps=100):
    """
    The full planner under each mother wavelet
    """

    rows = []
    for wavelet in wavelets:
        variant = replace(cfg, wavelet=wavelet, mode=AblationMode.FULL.value, track_baseline=False)
        logger.info("mother wavelet: %s", wavelet)
        rows.append(_suite_row(wavelet, dataset, variant, env, list(seeds), episodes, max_steps))
    return rows


# }}}
# run directories {{{

_PARTS = ("lfd", "hfd", "cffc", "baseline")


def _expected_parts(cfg):
    if cfg.ablation is AblationMode.BASELINE:
        return ["baseline"]
    return ["lfd", "hfd", "cffc"]


def save_bundle(bundle, run_dir):
    """
    Write config snapshot, dataset checksum, checkpoints and bundle metadata
    """

    if not os.path.exists(run_dir):
        os.makedirs(run_dir)
    with open(os.path.join(run_dir, RUN_CONFIG), "w", encoding="utf-8") as f_cfg:
        f_cfg.write(bundle.cfg.to_text())
    with open(os.path.join(run_dir, RUN_DATASET_CHECKSUM), "w", encoding="utf-8") as f_sum:
        f_sum.write(bundle.dataset_checksum + "\n")
    parts = []
    for name in _PARTS:
        part = getattr(bundle, name)
        if part is not None:
            nx.save_checkpoint(part.params, os.path.join(run_dir, name))
            parts.append(name)
    nx.save_checkpoint(bundle.inverse.params, os.path.join(run_dir, "inverse"))
    nx.save_checkpoint(bundle.inverse.stats, os.path.join(run_dir, "inverse_stats"))
    nx.save_checkpoint(bundle.scaler, os.path.join(run_dir, "scaler"))
    meta = {
        "env": bundle.env.header(),
        "parts": parts,
        "normalizer": [bundle.normalizer.min_return, bundle.normalizer.max_return],
        "dataset_checksum": bundle.dataset_checksum,
        "reference": bundle.reference,
    }
    with open(os.path.join(run_dir, RUN_BUNDLE_META), "w", encoding="utf-8") as f_meta:
        json.dump(meta, f_meta, indent=1, sort_keys=True)
        f_meta.write("\n")


def load_bundle(run_dir):
    """
    Rebuild a TrainedBundle from `run_dir`
    """

    cfg = TrainConfig.from_file(os.path.join(run_dir, RUN_CONFIG)).validate()
    try:
        with open(os.path.join(run_dir, RUN_BUNDLE_META), "r", encoding="utf-8") as f_meta:
            meta = json.load(f_meta)
    except (OSError, ValueError) as exc:
        raise UntrainedError("no trained bundle in %s: %s" % (run_dir, exc)) from exc
    try:
        env = worldkit.make_env(meta["env"]["env"], gamma=meta["env"]["gamma"])
        parts = list(meta["parts"])
        normalizer = worldkit.ReturnNormalizer(*[float(v) for v in meta["normalizer"]])
        checksum = str(meta["dataset_checksum"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError("malformed %s in %s: %r" % (RUN_BUNDLE_META, run_dir, exc)) from exc
    missing = [name for name in _expected_parts(cfg) if name not in parts]
    if missing:
        raise UntrainedError("%s lists no %s checkpoint" % (RUN_BUNDLE_META, ", ".join(missing)))
    bundle = init_bundle(cfg, env, np.random.default_rng(0), with_baseline="baseline" in parts)
    for name in _PARTS:
        part = getattr(bundle, name)
        if part is not None:
            nx.restore_checkpoint(part.params, os.path.join(run_dir, name))
    nx.restore_checkpoint(bundle.inverse.params, os.path.join(run_dir, "inverse"))
    nx.restore_checkpoint(bundle.inverse.stats, os.path.join(run_dir, "inverse_stats"))
    nx.restore_checkpoint(bundle.scaler, os.path.join(run_dir, "scaler"))
    bundle.normalizer = normalizer
    bundle.dataset_checksum = checksum
    bundle.reference = meta.get("reference")
    bundle.trained = True
    return bundle


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as f_out:
        f_out.write(text)


def write_run_dir(run_dir, bundle, log=None, result=None):
    """
    Complete run directory: bundle files plus, when given, the
    frequency-shift tables and the evaluation report.
    """

    save_bundle(bundle, run_dir)
    if log is not None:
        _write_text(os.path.join(run_dir, RUN_FREQUENCY_SHIFT), render_frequency_shift(log))
        _write_text(os.path.join(run_dir, RUN_LOSS_SPECTRUM), render_loss_spectrum(log))
    if result is not None:
        _write_text(os.path.join(run_dir, RUN_EVAL), render_eval(result, bundle.env, bundle.checksums()))
    return run_dir


# }}}
