"""
Human readable description of the training configuration keys:
key -> (description, type, default)
"""

DESCRIPTION = {
    # trajectory windows
    "horizon": ("Trajectory window length H (even, >= 4)", int, 96),
    "history": ("Planner history length C (even); 0 means C = H", int, 0),
    "wavelet": ("Mother wavelet: haar, db2 or db3", str, "haar"),
    # diffusion
    "diffusion_steps": ("Number of diffusion steps N", int, 100),
    "p_null": ("Condition dropout probability during training", float, 0.25),
    "omega": ("Classifier-free guidance weight", float, 1.2),
    "temp": ("Reverse-noise temperature in [0, 1]", float, 0.5),
    "literal_update": ("Use the bare x - eps reverse update", bool, False),
    "clamp_first_state": ("Anchor the first planned state to the observation", bool, True),
    # optimisation
    "learning_rate": ("Adam learning rate", float, 2e-4),
    "epochs": ("Training epochs", int, 200),
    "batch_size": ("Windows per minibatch", int, 32),
    "batches_per_epoch": ("Minibatches per epoch; 0 means a full pass", int, 8),
    "inverse_epochs": ("Inverse-dynamics training epochs", int, 200),
    "inverse_lr": ("Inverse-dynamics learning rate", float, 1e-3),
    # model sizes
    "d_model": ("Conditioner feature width (d_k = d_model)", int, 64),
    "hidden": ("Hidden width of every two-layer FFN", int, 512),
    "denoiser_width": ("Channel width of the temporal denoiser", int, 64),
    "denoiser_blocks": ("Residual blocks in the temporal denoiser", int, 4),
    "kernel": ("Temporal convolution kernel size (odd)", int, 3),
    # variants and diagnostics
    "mode": (
        "full, low_freq_only, high_freq_only, none_freq or baseline_time_domain",
        str,
        "full",
    ),
    "track_baseline": ("Also train the time-domain baseline in train", bool, False),
    "band_width": ("Frequency modes per band in the loss spectrum", int, 10),
    "seed": ("Random seed", int, 0),
}


def defaults():
    "Return {key: default} for every configuration key"

    return {key: value[2] for key, value in DESCRIPTION.items()}


def help_text():
    "One line per key, for --help output"

    lines = []
    for key, (description, kind, default) in DESCRIPTION.items():
        lines.append("  %-18s %-5s %-8s %s" % (key, kind.__name__, default, description))
    return "\n".join(lines)
