"""
Default settings for advbench.

These are the values a run uses when neither the config file nor a flag
sets a key. Empty strings and empty lists mean "not set".
"""

ATTACK_METHODS = ["fgsm", "i-fgsm", "pgd", "mi-fgsm", "ni-fgsm", "ai-fgm"]

DEFAULT_SETTINGS = {
    # Shared
    "seed": 0,
    "jobs": 1,
    "log_level": "INFO",
    "log_file": "",
    "timestamp": "",  # pinned report timestamp; empty means current UTC time

    # Data
    "data": "",
    "n": 1000,

    # Model training
    "arch": "",
    "epochs": 5,
    "lr": 0.05,
    "batch": 64,
    "adversarial": False,
    "adv_eps": 0.3,
    "adv_frac": 0.5,

    # Attack hyperparameters
    "method": "",
    "sources": [],
    "ensemble_weights": [],
    "ensemble": False,
    "eps": 0.3,
    "iters": 10,
    "mu": 1.0,
    "beta1": 0.99,
    "beta2": 0.999,
    "delta": 1e-8,

    # Evaluation and reports
    "adv": "",
    "targets": [],
    "attacks": list(ATTACK_METHODS),
    "out": "",
    "format": "csv",

    # Sweeps
    "kind": "beta",
    "sweep_attacks": ["i-fgsm", "mi-fgsm", "ai-fgm"],
    "beta1_values": [0.01, 0.1, 0.5, 0.9, 0.99],
    "beta2_values": [0.01, 0.1, 0.5, 0.9, 0.999],
    "iteration_values": list(range(1, 21)),
    "epsilon_values": [0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5],

    # Top-k inspection
    "model": "",
    "k": 10,
    "count": 5,
}

# Element types of the list-valued settings.
LIST_SETTINGS = {
    "sources": str,
    "targets": str,
    "attacks": str,
    "sweep_attacks": str,
    "ensemble_weights": float,
    "beta1_values": float,
    "beta2_values": float,
    "iteration_values": int,
    "epsilon_values": float,
}

# One top-level seed fans out to one seed per purpose.
SEED_OFFSETS = {
    "model": 0,
    "shuffle": 1000,
    "candidates": 2000,
    "attack": 3000,
}

SWEEP_KINDS = ["beta", "iterations", "epsilon"]

# Published ImageNet-scale black-box success rates (percent), printed
# beside measured rates for context only.
REFERENCE_RATES = {
    "single-source": {
        "fgsm": 32.1,
        "i-fgsm": 27.5,
        "pgd": 18.9,
        "mi-fgsm": 54.3,
        "ai-fgm": 60.7,
    },
    "ensemble": {
        "fgsm": 15.1,
        "i-fgsm": 16.1,
        "mi-fgsm": 39.5,
        "ni-fgsm": 37.1,
        "ai-fgm": 46.6,
    },
}
