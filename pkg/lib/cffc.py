"""
Cross Fourier Fusion Conditioner.

Each sub-trajectory is enhanced in the frequency domain (residual FFNs on
its amplitude and phase), then a single-head cross attention lets the
high-frequency stream query the low-frequency one. The two outputs,
Con_low and Con_high, condition the low- and high-frequency diffusion
models.

Amplitude and phase are taken over the non-redundant half of the spectrum
(bins 0 .. n/2). The negative bins mirror it, and the self-conjugate bins
(0 and n/2) keep only their real part, so the enhanced spectrum is always
the spectrum of a real sequence and the synthesis is real by construction.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

import cache
import numerics as nx
from errors import ShapeError
from spectral import SubTrajectoryPair

logger = logging.getLogger(__name__)

D_MODEL = 64


@dataclass
class BranchParams:
    gain: nx.Tensor
    shift: nx.Tensor
    ffn: nx.FFNParams


@dataclass
class FourierEnhancerParams:
    amplitude: BranchParams
    phase: BranchParams


@dataclass
class CrossAttentionParams:
    q: nx.FFNParams
    k: nx.FFNParams
    v_low: nx.FFNParams
    v_high: nx.FFNParams

    @property
    def d_k(self):
        return self.q.d_out


@dataclass
class ConditionPair:
    con_low: nx.Tensor
    con_high: nx.Tensor
    pooled_low: nx.Tensor
    pooled_high: nx.Tensor
    attention: np.ndarray


class CFFCParams:
    """
    All conditioner weights, registered in one ParameterSet
    """

    def __init__(self, params, d_s, d_model):
        self.params = params
        self.d_s = d_s
        self.d_model = d_model
        self.enhance_low = _enhancer_view(params, "enhance_low")
        self.enhance_high = _enhancer_view(params, "enhance_high")
        self.attention = CrossAttentionParams(
            q=nx.ffn_view(params, "attend.q"),
            k=nx.ffn_view(params, "attend.k"),
            v_low=nx.ffn_view(params, "attend.v_low"),
            v_high=nx.ffn_view(params, "attend.v_high"),
        )


def _enhancer_view(params, prefix):
    def branch(name):
        return BranchParams(
            gain=params["%s.%s.norm.gain" % (prefix, name)],
            shift=params["%s.%s.norm.shift" % (prefix, name)],
            ffn=nx.ffn_view(params, "%s.%s.ffn" % (prefix, name)),
        )

    return FourierEnhancerParams(amplitude=branch("amp"), phase=branch("phase"))


def init_cffc(d_s, rng, d_model=D_MODEL, hidden=nx.FFN_HIDDEN):
    """
    Fresh conditioner for d_s-dimensional states. Enhancer FFN output
    layers start at zero, so the Fourier module starts as the identity.
    """

    params = nx.ParameterSet("cffc")
    for stream in ("enhance_low", "enhance_high"):
        for branch in ("amp", "phase"):
            prefix = "%s.%s" % (stream, branch)
            params.add(prefix + ".norm.gain", np.ones((1, d_s)))
            params.add(prefix + ".norm.shift", np.zeros((1, d_s)))
            nx.init_ffn(params, prefix + ".ffn", d_s, d_s, rng, hidden=hidden, zero_output=True)
    for head in ("q", "k", "v_low", "v_high"):
        nx.init_ffn(params, "attend." + head, d_s, d_model, rng, hidden=hidden)
    return CFFCParams(params, d_s, d_model)


def restore_cffc(params, d_s, d_model):
    "CFFCParams over an already populated ParameterSet"

    return CFFCParams(params, d_s, d_model)


# half-spectrum operators {{{


def _half_spectrum_ops(n):
    half = n // 2 + 1
    k = np.arange(half)[:, None]
    i = np.arange(n)[None, :]
    angle = 2.0 * np.pi * ((k * i) % n) / n
    cos_op = np.cos(angle)
    sin_op = np.sin(angle)
    sin_op[0] = 0.0
    if n % 2 == 0:
        sin_op[n // 2] = 0.0
    weights = np.full(half, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    synth_cos = (cos_op.T * weights) / n
    synth_sin = (sin_op.T * weights) / n
    for op in (cos_op, sin_op, synth_cos, synth_sin):
        op.flags.writeable = False
    return cos_op, sin_op, synth_cos, synth_sin


def half_spectrum_ops(n):
    """
    (analysis cos, analysis sin, synthesis cos, synthesis sin) for length n
    """

    return cache.cached("half_dft", _half_spectrum_ops, n)


# }}}


def _branch(x, p):
    return nx.add(x, nx.ffn_apply(nx.layer_norm(x, p.gain, p.shift), p.ffn))


def fourier_enhance(sub, p):
    """
    tau' = IDFT(A + FFN(Norm(A)), P + FFN(Norm(P))) with (A, P) = DFT(sub)
    """

    if not isinstance(sub, nx.Tensor):
        sub = nx.constant(sub)
    n = sub.rows
    if n < 2:
        raise ShapeError("fourier_enhance needs at least 2 rows, got %d" % n)
    cos_op, sin_op, synth_cos, synth_sin = half_spectrum_ops(n)

    re = nx.const_matmul(cos_op, sub)
    im = nx.scale(nx.const_matmul(sin_op, sub), -1.0)
    amplitude = nx.hypot(re, im)
    phase = nx.atan2(im, re)

    amplitude = _branch(amplitude, p.amplitude)
    phase = _branch(phase, p.phase)

    re_out = nx.mul(amplitude, nx.cos(phase))
    im_out = nx.mul(amplitude, nx.sin(phase))
    return nx.sub(nx.const_matmul(synth_cos, re_out), nx.const_matmul(synth_sin, im_out))


def attention_matrix(q, k):
    "Softmax(Q K^T / sqrt(d_k))"

    return nx.softmax_rows(nx.scale(nx.matmul(q, nx.transpose(k)), 1.0 / math.sqrt(q.cols)))


def cross_attend(tlow, thigh, p):
    """
    Queries from the high stream, keys from the low stream; one attention
    matrix is applied to both value projections.
    """

    if not isinstance(tlow, nx.Tensor):
        tlow = nx.constant(tlow)
    if not isinstance(thigh, nx.Tensor):
        thigh = nx.constant(thigh)
    if tlow.shape != thigh.shape:
        raise ShapeError("cross_attend: %s vs %s" % (tlow.shape, thigh.shape))

    q = nx.ffn_apply(thigh, p.q)
    k = nx.ffn_apply(tlow, p.k)
    v_low = nx.ffn_apply(tlow, p.v_low)
    v_high = nx.ffn_apply(thigh, p.v_high)

    weights = attention_matrix(q, k)
    con_low = nx.matmul(weights, v_low)
    con_high = nx.matmul(weights, v_high)
    return ConditionPair(
        con_low=con_low,
        con_high=con_high,
        pooled_low=nx.row_mean(con_low),
        pooled_high=nx.row_mean(con_high),
        attention=weights.data,
    )


def cffc_forward(pair, cffc):
    """
    cross_attend(fourier_enhance(low), fourier_enhance(high))
    """

    if isinstance(pair, SubTrajectoryPair):
        low, high = pair.low, pair.high
    else:
        low, high = pair
    low_shape = getattr(low, "shape", None)
    high_shape = getattr(high, "shape", None)
    if low_shape != high_shape:
        raise ShapeError("sub-trajectory shapes differ: %s vs %s" % (low_shape, high_shape))
    enhanced_low = fourier_enhance(low, cffc.enhance_low)
    enhanced_high = fourier_enhance(high, cffc.enhance_high)
    return cross_attend(enhanced_low, enhanced_high, cffc.attention)
