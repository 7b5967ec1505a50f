"""
Wavelet analysis/synthesis of state trajectories and Fourier diagnostics.

A state sequence is a float64 matrix, T rows (time) by d columns (state
dimensions); every transform works column by column.

    dwt / idwt          one-level orthonormal filter bank (periodic boundary)
    dft / idft          full-length transform in amplitude/phase form
    energy_density      centered power spectrum in percent (per dimension)
    loss_spectrum       one-sided power with low/high band totals
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

import cache
from errors import NonFiniteError, ShapeError, SpectrumError

logger = logging.getLogger(__name__)

PHASE_EPS = 1e-12
IMAG_DISCARD = 1e-9
IMAG_REJECT = 1e-6


class WaveletKind(Enum):
    HAAR = "haar"
    DAUBECHIES2 = "db2"
    DAUBECHIES3 = "db3"


def _daubechies3():
    r10 = math.sqrt(10.0)
    root = math.sqrt(5.0 + 2.0 * r10)
    taps = [
        1.0 + r10 + root,
        5.0 + r10 + 3.0 * root,
        10.0 - 2.0 * r10 + 2.0 * root,
        10.0 - 2.0 * r10 - 2.0 * root,
        5.0 + r10 - 3.0 * root,
        1.0 + r10 - root,
    ]
    return np.array(taps) / (16.0 * math.sqrt(2.0))


_R3 = math.sqrt(3.0)
_LOW_PASS = {
    WaveletKind.HAAR: np.array([1.0, 1.0]) / math.sqrt(2.0),
    WaveletKind.DAUBECHIES2: np.array([1.0 + _R3, 3.0 + _R3, 3.0 - _R3, 1.0 - _R3])
    / (4.0 * math.sqrt(2.0)),
    WaveletKind.DAUBECHIES3: _daubechies3(),
}


@dataclass(frozen=True)
class WaveletFilterPair:
    kind: WaveletKind
    low_pass: np.ndarray
    high_pass: np.ndarray

    @property
    def length(self):
        return len(self.low_pass)


@dataclass(frozen=True)
class SubTrajectoryPair:
    low: np.ndarray
    high: np.ndarray
    source_len: int


@dataclass(frozen=True)
class SpectrumFrame:
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def n(self):
        return self.amplitude.shape[0]


@dataclass(frozen=True)
class EnergyDensity:
    frequencies: np.ndarray
    density: np.ndarray


@dataclass(frozen=True)
class LossSpectrumReport:
    one_sided_power: np.ndarray
    low_band_power: float
    high_band_power: float
    ratio: Optional[float]


def parse_wavelet(name):
    """
    Map a wavelet name ("haar", "db2", "daubechies2", ...) to WaveletKind
    """

    key = str(name).strip().lower().replace("_", "")
    aliases = {
        "haar": WaveletKind.HAAR,
        "db1": WaveletKind.HAAR,
        "db2": WaveletKind.DAUBECHIES2,
        "daubechies2": WaveletKind.DAUBECHIES2,
        "daubechies": WaveletKind.DAUBECHIES2,
        "db3": WaveletKind.DAUBECHIES3,
        "daubechies3": WaveletKind.DAUBECHIES3,
    }
    if key not in aliases:
        raise ValueError("unknown mother wavelet: %s" % name)
    return aliases[key]


def filter_bank(kind=WaveletKind.HAAR):
    """
    Orthonormal analysis filters for `kind`.
    The high-pass filter is the quadrature mirror of the low-pass one.
    """

    if not isinstance(kind, WaveletKind):
        kind = parse_wavelet(kind)
    low = _LOW_PASS[kind]
    signs = np.array([(-1.0) ** m for m in range(len(low))])
    high = signs * low[::-1]
    return WaveletFilterPair(kind=kind, low_pass=low.copy(), high_pass=high)


def as_sequence(values, name="sequence", min_rows=1):
    """
    Validate and return `values` as a float64 T x d matrix.
    A 1-D input is read as a single column.
    """

    seq = np.asarray(values, dtype=np.float64)
    if seq.ndim == 1:
        seq = seq[:, None]
    if seq.ndim != 2:
        raise ShapeError("%s must be a matrix, got %d dims" % (name, seq.ndim))
    if seq.shape[0] < min_rows:
        raise ShapeError(
            "%s needs at least %d rows, got %d" % (name, min_rows, seq.shape[0])
        )
    if not np.all(np.isfinite(seq)):
        raise NonFiniteError("%s has non-finite entries" % name, name=name)
    return seq


def _analysis_matrices(kind_value, length):
    bank = filter_bank(WaveletKind(kind_value))
    half = length // 2
    low = np.zeros((half, length))
    high = np.zeros((half, length))
    for k in range(half):
        for m in range(bank.length):
            low[k, (2 * k + m) % length] += bank.low_pass[m]
            high[k, (2 * k + m) % length] += bank.high_pass[m]
    return low, high


def analysis_matrices(bank, length):
    """
    Periodic analysis operators (T/2 x T each) for `bank`.
    Stacked, they form an orthogonal T x T matrix.
    """

    return cache.cached("dwt", _analysis_matrices, bank.kind.value, length)


def _check_length(bank, length):
    if length % 2:
        raise ShapeError("wavelet transform needs an even length, got %d" % length)
    if length < max(2, bank.length):
        raise ShapeError(
            "%s needs at least %d samples, got %d"
            % (bank.kind.value, bank.length, length)
        )


def dwt(seq, bank=None):
    """
    One-level wavelet decomposition of `seq` into half-length
    low- and high-frequency sub-trajectories.
    """

    bank = bank or filter_bank(WaveletKind.HAAR)
    seq = as_sequence(seq, min_rows=2)
    _check_length(bank, seq.shape[0])
    low_op, high_op = analysis_matrices(bank, seq.shape[0])
    return SubTrajectoryPair(low=low_op @ seq, high=high_op @ seq, source_len=seq.shape[0])


def idwt(pair, bank=None):
    """
    Inverse of `dwt` under the same filter bank
    """

    bank = bank or filter_bank(WaveletKind.HAAR)
    low = as_sequence(pair.low, name="low")
    high = as_sequence(pair.high, name="high")
    if low.shape != high.shape:
        raise ShapeError(
            "low/high shapes differ: %s vs %s" % (low.shape, high.shape)
        )
    length = 2 * low.shape[0]
    _check_length(bank, length)
    low_op, high_op = analysis_matrices(bank, length)
    return low_op.T @ low + high_op.T @ high


def dft(seq):
    """
    Unnormalized forward transform of each column, in polar form.
    Phase is 0 wherever the amplitude is below 1e-12.
    """

    seq = as_sequence(seq)
    spectrum = np.fft.fft(seq, axis=0)
    amplitude = np.abs(spectrum)
    phase = np.angle(spectrum)
    phase[phase <= -np.pi] = np.pi
    phase[amplitude < PHASE_EPS] = 0.0
    return SpectrumFrame(amplitude=amplitude, phase=phase)


def idft(frame):
    """
    Inverse transform of (amplitude, phase). The result must be real:
    an imaginary residue above 1e-6 means the frame is not the spectrum
    of a real signal.
    """

    amplitude = np.asarray(frame.amplitude, dtype=np.float64)
    phase = np.asarray(frame.phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ShapeError("amplitude/phase shapes differ")
    if amplitude.ndim == 1:
        amplitude, phase = amplitude[:, None], phase[:, None]
    values = np.fft.ifft(amplitude * np.exp(1j * phase), axis=0)
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue > IMAG_REJECT:
        raise SpectrumError(
            "inverse transform has imaginary residue %.3g" % residue
        )
    if residue > IMAG_DISCARD:
        logger.warning("discarding imaginary residue %.3g", residue)
    return values.real.copy()


def energy_density(seq):
    """
    Centered squared-amplitude spectrum in percent, per dimension.
    Frequencies are normalized bins in [-0.5, 0.5).
    """

    seq = as_sequence(seq, min_rows=2)
    power = np.abs(np.fft.fft(seq, axis=0)) ** 2
    return _density_from_power(power)


def _density_from_power(power):
    total = power.sum(axis=0)
    if np.any(total <= 0.0):
        raise SpectrumError("energy density undefined for an all-zero sequence")
    n = power.shape[0]
    frequencies = np.fft.fftshift(np.fft.fftfreq(n))
    density = 100.0 * np.fft.fftshift(power, axes=0) / total
    return EnergyDensity(frequencies=frequencies, density=density)


def dataset_energy_density(windows):
    """
    Energy density pooled over equal-length `windows`, each with its
    mean removed. Power is summed over windows before normalizing.
    """

    power = None
    for window in windows:
        window = as_sequence(window, min_rows=2)
        centered = window - window.mean(axis=0)
        current = np.abs(np.fft.fft(centered, axis=0)) ** 2
        if power is None:
            power = current
        elif current.shape != power.shape:
            raise ShapeError("windows must share one shape")
        else:
            power = power + current
    if power is None:
        raise ShapeError("no windows to analyse")
    return _density_from_power(power)


def band_energy_share(density, fraction=0.2):
    """
    Percentage of energy inside the central `fraction` of the frequency
    axis (|f| <= fraction / 2), per dimension.
    """

    mask = np.abs(density.frequencies) <= fraction / 2.0 + 1e-12
    return density.density[mask].sum(axis=0)


def loss_spectrum(residuals, band_width=10):
    """
    One-sided power spectrum of `residuals` with the power of the first
    and last `band_width` bins. The ratio is None when the high band
    carries no power.
    """

    residuals = as_sequence(residuals, name="residuals", min_rows=2)
    power = np.abs(np.fft.rfft(residuals, axis=0)) ** 2
    if power.shape[0] < 2 * band_width:
        raise SpectrumError(
            "one-sided spectrum of %d bins is too short for band width %d"
            % (power.shape[0], band_width)
        )
    low = float(power[:band_width].sum())
    high = float(power[-band_width:].sum())
    ratio = low / high if high > 0.0 else None
    return LossSpectrumReport(
        one_sided_power=power, low_band_power=low, high_band_power=high, ratio=ratio
    )


def band_powers(residuals, band_width=10):
    "Return (low, high) band power of `residuals`"

    report = loss_spectrum(residuals, band_width)
    return report.low_band_power, report.high_band_power
