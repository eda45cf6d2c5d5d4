"""Python front-end for the temporal-lulc C++ core."""

import json as _json

from . import _core
from ._core import ConfigError, Error, bce_loss, cli, code_version, focal_loss, kl_loss, micro_f1

__all__ = [
    "ConfigError",
    "Error",
    "aggregate",
    "bce_loss",
    "change_detect",
    "cli",
    "code_version",
    "evaluate",
    "focal_loss",
    "kl_loss",
    "load_manifest",
    "micro_f1",
    "ontology",
    "predict_map",
    "synth",
    "train_mono",
    "train_temporal",
]


def _config_text(config):
    if config is None:
        return ""
    if isinstance(config, str):
        with open(config) as fh:
            return fh.read()
    return _json.dumps(config)


def ontology():
    return _json.loads(_core.ontology_json())


def aggregate(probs, source="LEVEL2", target="LEVEL1"):
    return _core.aggregate(list(probs), source, target)


def synth(out_dir, tiles=10, seed=0, grid_n=40, patch_px=8, classes=15, change_pair=True):
    return _json.loads(_core.synth(str(out_dir), tiles, seed, grid_n, patch_px, classes, change_pair))


def load_manifest(path, strict=False):
    return _json.loads(_core.load_manifest(str(path), strict))


def train_mono(manifest, out_dir, config=None, level="LEVEL2"):
    """Trains the single-date model; config is a dict, a JSON path or None."""
    return _json.loads(_core.train_mono(str(manifest), _config_text(config), level, str(out_dir)))


def train_temporal(manifest, encoder_dir, out_dir, config=None):
    return _json.loads(_core.train_temporal(str(manifest), _config_text(config), str(encoder_dir), str(out_dir)))


def evaluate(model_dir, manifest, level="", tau=0.1):
    return _json.loads(_core.evaluate(str(model_dir), str(manifest), level, tau))


def predict_map(model_dir, tile):
    return _json.loads(_core.predict_map(str(model_dir), str(tile)))


def change_detect(model_dir, tile_a, tile_b, floor=0.5):
    return _json.loads(_core.change_detect(str(model_dir), str(tile_a), str(tile_b), floor))
