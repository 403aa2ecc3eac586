"""Reproduction presets: one per benchmark figure configuration.

Each preset expands to the full config-file dictionary of one benchmark
figure; `--desk-scale` halves the path count and keeps only the four
largest h_max values for laptop-sized runs.
"""


def _pow2(exponents):
    return [2.0**e for e in exponents]


PRESETS = {
    "fig1-additive": {
        "problem": "1d-add",
        "sigma": 0.2,
        "lambda": 2.0,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-14, -13, -12, -11, -10]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig1-multiplicative": {
        "problem": "1d-mult",
        "sigma": 0.2,
        "lambda": 2.0,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-14, -13, -12, -11, -10]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig2-lambda25": {
        "problem": "1d-mult",
        "sigma": 0.2,
        "lambda": 25.0,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-14, -13, -12, -11, -10]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig2-lambda250": {
        "problem": "1d-mult",
        "sigma": 0.2,
        "lambda": 250.0,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-14, -13, -12, -11, -10]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig3-diagonal": {
        "problem": "2d-g1",
        "sigma": 0.2,
        "lambda": 2.5,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-9, -8, -7, -6, -5]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig3-commutative": {
        "problem": "2d-g2",
        "sigma": 0.2,
        "lambda": 2.5,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-9, -8, -7, -6, -5]),
        "h_ref": 2.0**-18,
        "M": 500,
    },
    "fig3-noncom": {
        "problem": "2d-g3",
        "sigma": 0.2,
        "lambda": 2.5,
        "rho": 2.0**7,
        "kappa": 1.0,
        "h_max": _pow2([-6, -5, -4, -3, -2, -1]),
        "h_ref": 2.0**-9,
        "M": 100,
    },
}


def apply_desk_scale(config):
    """Halve M and keep only the 4 largest h_max values."""
    scaled = dict(config)
    scaled["M"] = max(1, int(config["M"]) // 2)
    hs = sorted(config["h_max"])
    if len(hs) > 4:
        scaled["h_max"] = [h for h in config["h_max"] if h in hs[-4:]]
    return scaled
