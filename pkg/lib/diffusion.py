"""
Conditional denoising diffusion over one sub-trajectory stream.

The same machinery serves the low-frequency model, the high-frequency
model and the time-domain baseline; they differ only in their parameters
and in the length of the sequences they see.

Indexing: the forward process and the denoiser use 0-based timestep
indices i in [0, N). The reverse update works with the 1-based step
i in [1, N], which reads schedule entry i - 1.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse

import cache
import numerics as nx
from errors import ShapeError

logger = logging.getLogger(__name__)

TIME_EMBED_DIM = 32
DENOISER_WIDTH = 64
DENOISER_BLOCKS = 4
DENOISER_KERNEL = 3

DEFAULT_STEPS = 100
BETA_START = 1e-4
BETA_END = 2e-2
P_NULL = 0.25
OMEGA = 1.2
TEMPERATURE = 0.5


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self):
        return len(self.betas)


def make_schedule(betas):
    """
    Schedule from explicit betas: strictly positive, strictly increasing,
    below 1.
    """

    betas = np.asarray(betas, dtype=np.float64).reshape(-1)
    if betas.size == 0:
        raise ShapeError("schedule needs at least one step")
    if np.any(betas <= 0.0) or np.any(betas >= 1.0):
        raise ValueError("betas must lie in (0, 1)")
    if betas.size > 1 and np.any(np.diff(betas) <= 0.0):
        raise ValueError("betas must be strictly increasing")
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


def linear_schedule(steps=DEFAULT_STEPS, beta_start=BETA_START, beta_end=BETA_END):
    if steps == 1:
        return make_schedule([beta_start])
    return make_schedule(np.linspace(beta_start, beta_end, steps))


@dataclass(frozen=True)
class GuidanceConfig:
    omega: float = OMEGA
    temp: float = TEMPERATURE
    literal_update: bool = False

    def __post_init__(self):
        if self.omega < 0.0:
            raise ValueError("guidance weight must be >= 0")
        if not 0.0 <= self.temp <= 1.0:
            raise ValueError("sampling temperature must lie in [0, 1]")


# constant operators {{{


def _timestep_embedding(step, dim):
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = step * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])[None, :]


def timestep_embedding(step, dim=TIME_EMBED_DIM):
    "Sinusoidal embedding of the 0-based timestep, 1 x dim"

    return cache.cached("temb", _timestep_embedding, int(step), dim)


def _shift_matrix(batch, length, offset):
    rows = []
    cols = []
    for r in range(batch * length):
        position = r % length + offset
        if 0 <= position < length:
            rows.append(r)
            cols.append(r + offset)
    size = batch * length
    return scipy.sparse.csr_matrix(
        (np.ones(len(rows)), (rows, cols)), shape=(size, size)
    )


def shift_matrix(batch, length, offset):
    """
    Sparse operator taking row t of every item to row t + offset of the
    same item, zero outside.
    """

    return cache.cached("shift", _shift_matrix, batch, length, offset)


def _repeat_matrix(batch, length):
    rows = np.arange(batch * length)
    return scipy.sparse.csr_matrix(
        (np.ones(batch * length), (rows, rows // length)), shape=(batch * length, batch)
    )


def repeat_matrix(batch, length):
    "Sparse operator copying item rows (batch x c) to every time step"

    return cache.cached("repeat", _repeat_matrix, batch, length)


# }}}
# denoiser {{{


class DenoiserParams:
    """
    Shape-preserving temporal residual convolution stack, aware of the
    diffusion timestep and of a condition vector.
    """

    def __init__(self, params, d_s, cond_dim, width, blocks, kernel):
        self.params = params
        self.d_s = d_s
        self.cond_dim = cond_dim
        self.width = width
        self.blocks = blocks
        self.kernel = kernel

    @property
    def null(self):
        return self.params["null"]

    def __getitem__(self, name):
        return self.params[name]


def init_denoiser(
    d_s,
    cond_dim,
    rng,
    width=DENOISER_WIDTH,
    blocks=DENOISER_BLOCKS,
    kernel=DENOISER_KERNEL,
    name="denoiser",
):
    if kernel % 2 == 0:
        raise ValueError("kernel size must be odd")
    params = nx.ParameterSet(name)
    params.add("in.w", nx.uniform_init(rng, d_s, (d_s, width)))
    params.add("in.b", np.zeros((1, width)))
    params.add("time.w", nx.uniform_init(rng, TIME_EMBED_DIM, (TIME_EMBED_DIM, width)))
    params.add("time.b", np.zeros((1, width)))
    params.add("cond.w", nx.uniform_init(rng, cond_dim, (cond_dim, width)))
    params.add("cond.b", np.zeros((1, width)))
    params.add("null", rng.normal(0.0, 0.1, size=(1, cond_dim)))
    for j in range(blocks):
        prefix = "block%d" % j
        params.add(prefix + ".conv1.w", nx.uniform_init(rng, kernel * width, (kernel * width, width)))
        params.add(prefix + ".conv1.b", np.zeros((1, width)))
        params.add(prefix + ".emb.w", nx.uniform_init(rng, width, (width, width)))
        params.add(prefix + ".emb.b", np.zeros((1, width)))
        params.add(prefix + ".conv2.w", nx.uniform_init(rng, kernel * width, (kernel * width, width)))
        params.add(prefix + ".conv2.b", np.zeros((1, width)))
    params.add("out.w", nx.uniform_init(rng, width, (width, d_s)) * 0.1)
    params.add("out.b", np.zeros((1, d_s)))
    return DenoiserParams(params, d_s, cond_dim, width, blocks, kernel)


def conv1d(h, w, b, batch, length, kernel):
    """
    Zero-padded 'same' convolution over the time axis of every item
    """

    reach = kernel // 2
    taps = [nx.const_matmul(shift_matrix(batch, length, offset), h) for offset in range(-reach, reach + 1)]
    return nx.linear(nx.concat_cols(taps), w, b)


def apply_denoiser(p, x, steps, y):
    """
    Predict the noise for a stack of `len(steps)` items.

    x      Tensor (batch * length) x d_s, items stacked along rows
    steps  0-based timestep per item
    y      Tensor batch x cond_dim
    """

    batch = len(steps)
    if x.rows % batch:
        raise ShapeError("%d rows do not split into %d items" % (x.rows, batch))
    if y.shape != (batch, p.cond_dim):
        raise ShapeError("condition %s, expected %s" % (y.shape, (batch, p.cond_dim)))
    length = x.rows // batch

    temb = nx.constant(np.concatenate([timestep_embedding(s) for s in steps], axis=0))
    emb = nx.add(
        nx.relu(nx.linear(temb, p["time.w"], p["time.b"])),
        nx.linear(y, p["cond.w"], p["cond.b"]),
    )
    expand = repeat_matrix(batch, length)

    h = nx.linear(x, p["in.w"], p["in.b"])
    for j in range(p.blocks):
        prefix = "block%d" % j
        u = conv1d(nx.relu(h), p[prefix + ".conv1.w"], p[prefix + ".conv1.b"], batch, length, p.kernel)
        film = nx.const_matmul(expand, nx.linear(emb, p[prefix + ".emb.w"], p[prefix + ".emb.b"]))
        u = nx.relu(nx.add(u, film))
        h = nx.add(h, conv1d(u, p[prefix + ".conv2.w"], p[prefix + ".conv2.b"], batch, length, p.kernel))
    return nx.linear(nx.relu(h), p["out.w"], p["out.b"])


def epsilon(p, x, step, y):
    """
    eps_theta(x, y, step) for a single item given as arrays; y None means
    the null condition.
    """

    cond = p.null if y is None else nx.constant(np.asarray(y).reshape(1, -1))
    return apply_denoiser(p, nx.constant(x), [step], cond).data


# }}}
# diffusion process {{{


def _check_step(step, sched):
    if not 0 <= step < sched.steps:
        raise ShapeError("timestep %d outside [0, %d)" % (step, sched.steps))


def forward_noise(x0, step, eps, sched):
    """
    x_i = sqrt(alpha_bar_i) x0 + sqrt(1 - alpha_bar_i) eps
    """

    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    _check_step(step, sched)
    if eps.shape != x0.shape:
        raise ShapeError("noise %s for sample %s" % (eps.shape, x0.shape))
    alpha_bar = sched.alpha_bars[step]
    return math.sqrt(alpha_bar) * x0 + math.sqrt(1.0 - alpha_bar) * eps


def guided_epsilon(x, y, step, cfg, p, denoiser=None):
    """
    eps(x, null) + omega * (eps(x, y) - eps(x, null))

    With y None both branches are the null evaluation.
    """

    if y is None:
        if denoiser is not None:
            return denoiser(x, None, step)
        return apply_denoiser(p, nx.constant(x), [step], p.null).data
    if denoiser is not None:
        uncond = denoiser(x, None, step)
        cond = denoiser(x, y, step)
    else:
        x_t = nx.constant(np.concatenate([x, x], axis=0))
        y_t = nx.concat_rows([p.null, nx.constant(np.asarray(y).reshape(1, -1))])
        both = apply_denoiser(p, x_t, [step, step], y_t).data
        uncond, cond = both[: x.shape[0]], both[x.shape[0] :]
    return uncond + cfg.omega * (cond - uncond)


def posterior_mean(x, eps_hat, step, sched):
    """
    (x - beta_i / sqrt(1 - alpha_bar_i) eps_hat) / sqrt(alpha_i), 1-based step
    """

    beta = sched.betas[step - 1]
    alpha = sched.alphas[step - 1]
    alpha_bar = sched.alpha_bars[step - 1]
    return (x - beta / math.sqrt(1.0 - alpha_bar) * eps_hat) / math.sqrt(alpha)


def denoise_step(x, eps_hat, step, sched, cfg, rng, projector=None):
    """
    One reverse update at 1-based `step`. `projector`, when given, maps
    the pre-noise mean before noise is added.
    """

    if step < 1:
        raise ShapeError("reverse step index starts at 1")
    if cfg.literal_update:
        mean = x - eps_hat
    else:
        mean = posterior_mean(x, eps_hat, step, sched)
    if projector is not None:
        mean = projector(mean)
    if step > 1 and not cfg.literal_update:
        noise = rng.standard_normal(x.shape)
        return mean + cfg.temp * math.sqrt(sched.betas[step - 1]) * noise
    return mean


def sample(y, sched, cfg, p, rng, shape, denoiser=None, projector=None):
    """
    Reverse process from standard normal noise of `shape` down to step 1.
    """

    x = rng.standard_normal(shape)
    for step in range(sched.steps, 0, -1):
        eps_hat = guided_epsilon(x, y, step - 1, cfg, p, denoiser=denoiser)
        x = denoise_step(x, eps_hat, step, sched, cfg, rng, projector=projector)
    return x


@dataclass
class LossResult:
    loss: nx.Tensor
    residuals: list
    steps: list
    nulled: list


def training_loss(batch, sched, p, p_null, rng, denoiser=None):
    """
    Noise-prediction MSE over `batch`, a list of (x0, y) pairs where y is
    a 1 x cond_dim Tensor or None (always null).

    Per item, in order: timestep, condition dropout, noise.
    Residuals (prediction - eps) are returned per item.
    """

    if not batch:
        raise ShapeError("training batch is empty")
    noisy = []
    noises = []
    conds = []
    steps = []
    nulled = []
    for x0, y in batch:
        x0 = np.asarray(x0, dtype=np.float64)
        step = int(rng.integers(sched.steps))
        drop = bool(rng.random() < p_null)
        eps = rng.standard_normal(x0.shape)
        use_null = y is None or drop
        noisy.append(forward_noise(x0, step, eps, sched))
        noises.append(eps)
        conds.append(p.null if use_null else y)
        steps.append(step)
        nulled.append(use_null)

    eps_all = nx.constant(np.concatenate(noises, axis=0))
    if denoiser is None:
        x_all = nx.constant(np.concatenate(noisy, axis=0))
        prediction = apply_denoiser(p, x_all, steps, nx.concat_rows(conds))
    else:
        prediction = denoiser(noisy, steps, conds)
    residual = nx.sub(prediction, eps_all)
    loss = nx.mean_all(nx.square(residual))

    length = noises[0].shape[0]
    residuals = [
        residual.data[k * length : (k + 1) * length].copy() for k in range(len(batch))
    ]
    return LossResult(loss=loss, residuals=residuals, steps=steps, nulled=nulled)


# }}}
