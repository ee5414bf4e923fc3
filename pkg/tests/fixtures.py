"""Small experiment configs that keep end-to-end tests quick."""

from pathlib import Path

from langcl.core.config import ExperimentConfig, dump_config, from_dict

FAST = {
    "model": {"d_model": 8, "n_layers": 1, "context": 2},
    "data": {"n_base": 2, "n_new": 2, "splits": [12, 4, 4], "max_frames": 16, "max_tokens": 4},
    "training": {"base_epochs": 2, "epochs_per_task": 1, "batch_size": 4, "lr": 0.01},
}


def fast_config(cache: Path, **sections: dict) -> ExperimentConfig:
    raw = {name: dict(values) for name, values in FAST.items()}
    for name, values in sections.items():
        raw.setdefault(name, {}).update(values)
    raw.setdefault("experiment", {})["cache_dir"] = str(cache)
    return from_dict(raw, "toy")


def fast_yaml(cache: Path, **sections: dict) -> str:
    return dump_config(fast_config(cache, **sections))
