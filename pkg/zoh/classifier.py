"""Frozen toy classifier used behind the black-box attack objective.

Weight file layout (JSON, ``"format": "zoh-mlp-v1"``)::

    {
      "format": "zoh-mlp-v1",
      "layer_sizes": [d, h1, ..., K],
      "activation": "relu",
      "layers": [
        {"weights": [row-major, len = out * in], "bias": [len = out]},
        ...
      ]
    }

``layer_sizes[0]`` is the input dimension and ``layer_sizes[-1]`` the number of
classes. The activation sits between layers; the last layer returns raw logits.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import ObjectiveError

WEIGHT_FORMAT = "zoh-mlp-v1"


@dataclass(frozen=True)
class DenseLayer:
    weights: NDArray[np.float64]  # (out, in)
    bias: NDArray[np.float64]  # (out,)


class ToyClassifier:
    """Small ReLU network that only exposes logits to the attacker."""

    def __init__(self, layers: Sequence[DenseLayer]) -> None:
        if not layers:
            raise ObjectiveError("classifier needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weights.shape[0] != nxt.weights.shape[1]:
                raise ObjectiveError("classifier layer sizes do not chain")
        for layer in layers:
            layer.weights.setflags(write=False)
            layer.bias.setflags(write=False)
        self._layers = tuple(layers)

    @property
    def input_dim(self) -> int:
        return int(self._layers[0].weights.shape[1])

    @property
    def num_classes(self) -> int:
        return int(self._layers[-1].weights.shape[0])

    def logits(self, x: NDArray[np.float64]) -> NDArray[np.float64]:
        return self.logits_batch(np.atleast_2d(x))[0]

    def logits_batch(self, inputs: NDArray[np.float64]) -> NDArray[np.float64]:
        """Logits for every row of ``inputs`` (n, d) -> (n, K)."""
        h = np.asarray(inputs, dtype=float)
        last = len(self._layers) - 1
        for k, layer in enumerate(self._layers):
            h = h @ layer.weights.T + layer.bias
            if k < last:
                h = np.maximum(h, 0.0)
        return h

    def input_gradient(self, x: NDArray[np.float64], coeffs: NDArray[np.float64]) -> NDArray[np.float64]:
        """Gradient of ``coeffs · logits(x)`` with respect to ``x``."""
        activations = [np.asarray(x, dtype=float)]
        pre: List[NDArray[np.float64]] = []
        last = len(self._layers) - 1
        h = activations[0]
        for k, layer in enumerate(self._layers):
            z = layer.weights @ h + layer.bias
            pre.append(z)
            h = np.maximum(z, 0.0) if k < last else z
            activations.append(h)

        grad = np.asarray(coeffs, dtype=float)
        for k in range(last, -1, -1):
            if k < last:
                grad = grad * (pre[k] > 0.0)
            grad = self._layers[k].weights.T @ grad
        return grad

    def to_dict(self) -> Dict[str, Any]:
        sizes = [self.input_dim] + [int(layer.weights.shape[0]) for layer in self._layers]
        return {
            "format": WEIGHT_FORMAT,
            "layer_sizes": sizes,
            "activation": "relu",
            "layers": [
                {"weights": layer.weights.ravel().tolist(), "bias": layer.bias.tolist()}
                for layer in self._layers
            ],
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ToyClassifier":
        if payload.get("format") != WEIGHT_FORMAT:
            raise ObjectiveError(f"unsupported classifier format: {payload.get('format')!r}")
        sizes = [int(s) for s in payload.get("layer_sizes", [])]
        raw_layers = payload.get("layers", [])
        if len(sizes) < 2 or len(raw_layers) != len(sizes) - 1:
            raise ObjectiveError("layer_sizes and layers disagree")

        layers = []
        for (n_in, n_out), raw in zip(zip(sizes, sizes[1:]), raw_layers):
            weights = np.asarray(raw["weights"], dtype=float)
            bias = np.asarray(raw["bias"], dtype=float)
            if weights.size != n_in * n_out or bias.size != n_out:
                raise ObjectiveError(f"layer {n_in}->{n_out} has wrong weight count")
            layers.append(DenseLayer(weights=weights.reshape(n_out, n_in), bias=bias))
        return cls(layers)

    @classmethod
    def from_json(cls, path: str | Path) -> "ToyClassifier":
        with Path(path).open("r", encoding="utf-8") as f:
            try:
                payload = json.load(f)
            except json.JSONDecodeError as e:
                raise ObjectiveError(f"classifier file {path} is not valid JSON: {e}") from e
        return cls.from_dict(payload)
