import os

from dotenv import load_dotenv

load_dotenv()

VERBOSE = os.getenv("FCHC_VERBOSE", "").lower() in ("1", "true", "yes")

# The "fchc-gat" preset: two GAT layers with two heads, hidden width 32,
# ReLU + dropout 0.2 between layers and a logistic output.
DEFAULT_CONFIG = {
    "taxonomy": {
        "preset": "fc-deep",
        "spec": None,
        "names": {},
    },

    "network": {
        "kind": "gat",
        "nb_layers": 2,
        "hidden_dim": 32,
        "num_heads": 2,
        "out_heads": 2,
        "input_dim": 12,
        "output_dim": None,
        "dropout": 0.2,
        "attn_dropout": [0.4, 0.2],
        "leaky_slope": 0.2,
        "hidden_activation": "relu",
        "self_loops": True,
    },

    "models": ["gat", "sage", "gcn", "mlp"],

    "loss": "mcloss",
    "loss_reduction": "sum",
    "use_constraint_at_inference": True,

    "graph": {
        "k": 7,
        "standardization": "zscore",
        "cache_dir": None,
    },

    "threshold": 0.5,

    "optimizer": {
        "kind": "adam",
        "learning_rate": 1e-3,
        "epochs": 200,
    },

    "seeds": [0, 1, 2, 3],

    "folds": {
        "outer": 7,
        "inner": 4,
        "seed": 0,
        "cv": True,
        "tune": True,
        "grid": {
            "thresholds": [0.3, 0.5, 0.7],
            "learning_rates": [1e-3, 1e-2],
            "epochs": None,
        },
    },

    "data": {
        "cells_path": None,
        "manifest_path": None,
        "synth": {
            "preset": "fc-deep",
            "patients": 19,
            "cells_per_patient": 5000,
            "proportions": None,
            "covariance_scale": 0.35,
            "coupling": 0.9,
            "informative_features": None,
            "patient_shift": 0.1,
            "seed": 0,
        },
    },

    "metric_collectors": [
        {"module_name": "hierarchical_metric_collector", "settings": {}},
        {"module_name": "class_recall_metric_collector", "settings": {}},
        {"module_name": "flat_metric_collector", "settings": {}},
        {"module_name": "violation_metric_collector", "settings": {}},
        {"module_name": "efficiency_metric_collector", "settings": {}},
    ],

    "importance_shuffles": 5,
    "output_dir": os.getenv("OUTPUT_DIR_PATH", "results"),
    "debug": os.getenv("FCHC_DEBUG", "").lower() in ("1", "true", "yes"),
}

PRESETS = {
    "fchc-gat": {},
    "fchc-gcn": {"network": {"kind": "gcn"}},
    "fchc-sage": {"network": {"kind": "sage"}},
    "fchc-dnn": {"network": {"kind": "mlp"}},
    "flat-gat": {"loss": "bce", "use_constraint_at_inference": False},
}

# older names of the four constrained presets
PRESET_ALIASES = {
    "paper-gat": "fchc-gat",
    "paper-gcn": "fchc-gcn",
    "paper-sage": "fchc-sage",
    "paper-dnn": "fchc-dnn",
}
