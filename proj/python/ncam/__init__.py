"""Neural cellular automata manifold.

Images are encoded to a continuous vector or a DNA-like letter code, mapped to
per-image cellular automaton parameters, and grown back from a single seed
cell. Heavy lifting happens in the C++ extension ``ncam._ncam``; this module
adds dict-based configuration and JSON service bodies.
"""

from __future__ import annotations

import copy
import json
from typing import Any, Optional

from . import _ncam
from ._ncam import (
    CheckpointError,
    ConfigError,
    DataError,
    Dataset,
    DivergenceError,
    GeneLabError,
    ImageError,
    decode_png,
    discretize,
    encode_gif,
    encode_png,
    format_dna,
    from_letters,
    gen_glyphs,
    load_dataset,
    mean_encoding,
    mutate,
    parse_cifar10,
    parse_dna,
    splice,
    to_letters,
    to_rgba8,
)

__all__ = [
    "CheckpointError", "ConfigError", "DataError", "Dataset", "DivergenceError", "GeneLabError", "ImageError",
    "Model", "Service", "Trainer", "decode_png", "default_config", "discretize", "encode_gif", "encode_png",
    "format_dna", "from_letters", "gen_glyphs", "load_dataset", "mean_encoding", "model_config", "mutate",
    "new_model", "parse_cifar10",
    "parse_dna", "splice", "to_letters", "to_rgba8",
]

_DEFAULT_CONFIG = json.loads(_ncam.default_config_json())


def default_config() -> dict[str, Any]:
    """The full training configuration with default values, as a nested dict."""
    return copy.deepcopy(_DEFAULT_CONFIG)


def _config_for(dataset: Dataset, config: Optional[dict[str, Any]]) -> str:
    cfg = default_config() if config is None else copy.deepcopy(config)
    model = cfg["model"]
    model["height"], model["width"] = dataset.height, dataset.width
    model["nca"]["visible"] = dataset.channels
    if not cfg.get("dataset"):
        cfg["dataset"] = dataset.name
    return json.dumps(cfg)


Model = _ncam.Model  # a model plus its training state (the content of a checkpoint)


def new_model(dataset: Dataset, config: Optional[dict[str, Any]] = None) -> Model:
    """A freshly initialized model shaped for `dataset`."""
    return Model(_config_for(dataset, config))


def model_config(model: Model) -> dict[str, Any]:
    """The training configuration stored with a model."""
    return json.loads(model.config_json)


class Trainer(_ncam.Trainer):
    """Synchronous single-process trainer over an in-memory dataset."""

    def __init__(self, dataset: Dataset, config: Optional[dict[str, Any]] = None, *, model: Optional[_ncam.Model] = None):
        if model is not None:
            super().__init__(dataset, model)
        else:
            super().__init__(dataset, _config_for(dataset, config))

    def run(self, steps: int) -> list[dict[str, float]]:
        """Runs `steps` optimizer steps and returns the per-step statistics."""
        return [self.step() for _ in range(steps)]


class Service:
    """The HTTP API as an in-process call: handle(method, path, body) -> (status, body)."""

    def __init__(self, model: _ncam.Model, dataset: Dataset, seed: int = 0):
        self._service = _ncam.Service(model, dataset, seed)

    def handle(self, method: str, path: str, body: Any = None) -> tuple[int, dict[str, Any]]:
        text = "" if body is None else body if isinstance(body, str) else json.dumps(body)
        status, out = self._service.handle(method, path, text)
        return status, json.loads(out)
