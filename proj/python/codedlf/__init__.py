"""Coded light-field capture and continuous reconstruction.

Scenes, patterns, configs and reports are plain dicts; images and light
fields are float64 numpy arrays ([H, W] and [U, V, H, W]).
"""

import json as _json

from . import _core
from ._core import Error, Reconstruction, load_lightfield, psnr, save_lightfield, ssim

__all__ = [
    "Error",
    "Reconstruction",
    "default_train_config",
    "encode",
    "eval_grid",
    "gradcheck",
    "load_lightfield",
    "make_default_pattern",
    "psnr",
    "random_scene",
    "save_lightfield",
    "ssim",
    "synth_lightfield",
    "synth_view",
    "train",
]


def random_scene(seed):
    return _json.loads(_core.random_scene(seed))


def synth_lightfield(scene, grid=(5, 5), size=(48, 48), seed=0):
    return _core.synth_lightfield(_json.dumps(scene), grid[0], grid[1], size[0], size[1], seed)


def synth_view(scene, u, v, size=(48, 48), seed=0):
    return _core.synth_view(_json.dumps(scene), u, v, size[0], size[1], seed)


def make_default_pattern(k=4, grid=(5, 5), size=(48, 48), tile=4, seed=7):
    return _json.loads(_core.make_default_pattern(k, grid[0], grid[1], size[0], size[1], tile, seed))


def encode(field, mode="joint", pattern=None):
    """Returns (raw coded image, gain); divide by gain for the network input."""
    return _core.encode(field, mode, None if pattern is None else _json.dumps(pattern))


def gradcheck(seed=0, eps=1e-5):
    return _json.loads(_core.gradcheck(seed, eps))


def default_train_config():
    return _json.loads(_core.default_train_config())


def train(config, base_dir=""):
    """Trains per `config` (must set checkpoint_path); returns the per-step losses."""
    return list(_core.train(_json.dumps(config), str(base_dir)))


def eval_grid(checkpoint, scene, m=13, step=0.5):
    return _json.loads(_core.eval_grid(str(checkpoint), _json.dumps(scene), m, step))
