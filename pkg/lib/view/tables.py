"""
Rendering run artifacts as CSV tables.

Every renderer returns the complete file text; writing it is left to
the caller.
"""

import csv
import io

import numpy as np

import spectral


def _number(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _render(header, rows):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()


def render_frequency_shift(log):
    "epoch, model_ratio, baseline_ratio, losses and band powers per epoch"

    header = [
        "epoch",
        "model_ratio",
        "baseline_ratio",
        "model_loss",
        "baseline_loss",
        "model_low",
        "model_high",
        "baseline_low",
        "baseline_high",
    ]
    rows = []
    for entry in log.entries:
        rows.append(
            [
                _number(entry.epoch),
                _number(entry.model_ratio),
                _number(entry.baseline_ratio),
                _number(entry.model_loss),
                _number(entry.baseline_loss),
                _number(entry.model_bands[0]),
                _number(entry.model_bands[1]),
                _number(entry.baseline_bands[0]),
                _number(entry.baseline_bands[1]),
            ]
        )
    return _render(header, rows)


def render_loss_spectrum(log):
    """
    One-sided residual power of the final epoch, summed over the epoch's
    residuals, one column per state dimension.
    """

    final = log.final
    if final is None or final.model_power is None:
        return _render(["bin"], [])
    power = final.model_power
    header = ["bin"] + ["dim%d" % d for d in range(power.shape[1])]
    rows = [[str(k)] + [_number(v) for v in power[k]] for k in range(power.shape[0])]
    return _render(header, rows)


def render_energy_density(density, fraction=0.2):
    """
    Centered energy density in percent, then a `central` summary row with
    the share of the central `fraction` of the frequency axis.
    """

    dims = density.density.shape[1]
    header = ["frequency"] + ["dim%d" % d for d in range(dims)]
    rows = []
    for freq, values in zip(density.frequencies, density.density):
        rows.append([_number(freq)] + [_number(v) for v in values])
    share = spectral.band_energy_share(density, fraction)
    rows.append(["central%g" % fraction] + [_number(v) for v in share])
    return _render(header, rows)


def render_plan(plan):
    "Planned trajectory, one state per row"

    plan = np.asarray(plan)
    header = ["t"] + ["s%d" % d for d in range(plan.shape[1])]
    rows = [[str(t)] + [_number(v) for v in plan[t]] for t in range(plan.shape[0])]
    return _render(header, rows)


def render_suite(rows):
    "One line per suite variant: returns, final ratio, dataset checksum"

    header = ["variant", "mean", "stderr", "final_ratio", "dataset_sha256", "seeds"]
    lines = []
    for row in rows:
        lines.append(
            [
                row.name,
                _number(row.mean),
                _number(row.stderr),
                _number(row.final_ratio),
                row.dataset_checksum,
                " ".join(str(s) for s in row.seeds),
            ]
        )
    return _render(header, lines)
