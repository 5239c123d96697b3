"""Self-describing model checkpoints.

A checkpoint is a single ``.npz`` file holding every parameter array plus a
JSON header with the format version, layer metadata (widths, mean-function
kind, whitening flag, parameter transforms) and the training seed. Arrays are
stored as raw float64, so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json

import jax.numpy as jnp
import numpy as np

from .dgp import DgpModel, LayerState

CHECKPOINT_VERSION = 1
_LAYER_ARRAYS = ("z", "m", "s_raw", "log_signal_variance", "log_lengthscales", "projection")
_TRANSFORMS = {
    "log_signal_variance": "log",
    "log_lengthscales": "log",
    "s_raw": "cholesky factor, softplus diagonal",
    "log_noise_variance": "log",
}


def save_checkpoint(path, model: DgpModel, seed: int, extra: dict | None = None):
    header = {
        "version": CHECKPOINT_VERSION,
        "seed": int(seed),
        "transforms": _TRANSFORMS,
        "layers": [
            {
                "mean_fn": layer.mean_fn,
                "whiten": layer.whiten,
                "input_dim": layer.input_dim,
                "output_dim": layer.output_dim,
                "num_inducing": layer.num_inducing,
            }
            for layer in model.layers
        ],
        "extra": extra or {},
    }
    arrays = {"log_noise_variance": np.asarray(model.log_noise_variance)}
    for i, layer in enumerate(model.layers):
        for name in _LAYER_ARRAYS:
            arrays[f"layer{i}/{name}"] = np.asarray(getattr(layer, name))
    np.savez(path, __header__=np.asarray(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Returns (model, header_dict)."""
    with np.load(path, allow_pickle=False) as archive:
        header = json.loads(str(archive["__header__"]))
        if header["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header['version']}")
        layers = []
        for i, meta in enumerate(header["layers"]):
            fields = {
                name: jnp.asarray(archive[f"layer{i}/{name}"]) for name in _LAYER_ARRAYS
            }
            layers.append(
                LayerState(mean_fn=meta["mean_fn"], whiten=meta["whiten"], **fields)
            )
        model = DgpModel(
            layers=tuple(layers),
            log_noise_variance=jnp.asarray(archive["log_noise_variance"]),
        )
    return model, header
