"""Model checkpoints: one ``.npz`` holding the flat weight vector and a JSON header."""

import json

import numpy as np

from rots import __version__
from rots.errors import ArchError
from rots.net import ArchSpec, Model

FORMAT_VERSION = 1


class CheckpointError(ArchError):
    """The checkpoint cannot be loaded, or does not match the expected architecture."""


def save_checkpoint(path, model, hyper=None, iteration=None, method=None):
    meta = {
        "format": FORMAT_VERSION,
        "version": __version__,
        "layers": [list(l) for l in model.arch.layers],
        "input_shape": list(model.arch.input_shape),
        "seed": model.seed,
        "method": method,
        "iteration": iteration,
        "hyper": hyper,
    }
    with open(path, "wb") as fh:
        np.savez(fh, weights=model.weights, meta=np.array(json.dumps(meta, sort_keys=True)))


def load_checkpoint(path, expect_arch=None):
    """Returns ``(model, meta)``; raises ``CheckpointError`` on an arch mismatch."""
    try:
        with np.load(path, allow_pickle=False) as data:
            weights = data["weights"]
            meta = json.loads(str(data["meta"]))
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from None
    if meta.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    arch = ArchSpec(tuple(tuple(l) for l in meta["layers"]), tuple(meta["input_shape"]))
    if expect_arch is not None and (arch.layers != expect_arch.layers
                                    or arch.input_shape != expect_arch.input_shape):
        raise CheckpointError(
            f"{path}: checkpoint architecture {arch.layers} on {arch.input_shape} does not "
            f"match the configured {expect_arch.layers} on {expect_arch.input_shape}")
    return Model(arch, weights, meta.get("seed")), meta
