"""Sinusoidal MLP distance field: inference, weight files, and a small fitter.

The network maps a point to a signed distance::

    h0 = (p - input_center) * input_scale
    h_{k+1} = sin(omega0 * (W_k h_k + b_k))      for every hidden layer
    d = W_out h_L + b_out

Gradients with respect to ``p`` are exact (reverse-mode chain rule through
the sine layers), not finite differences.

Weight file layout (text, UTF-8)::

    SIRENMLP <format_version>
    {"omega0": ..., "input_center": [...], "input_scale": ..., "layers": [{"rows": r, "cols": c}, ...], ...}
    <r lines of c weights>            # layer 0, row-major
    <1 line of r biases>
    ...                               # repeated per layer

Numbers are written with ``repr`` so a save/load round trip is bit-exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sdf import AnalyticScene, SdfError, SdfProvider, _points

log = logging.getLogger(__name__)

MAGIC = "SIRENMLP"
FORMAT_VERSION = 1
DEFAULT_OMEGA0 = 30.0


class SirenFormatError(SdfError):
    pass


class TrainingError(SdfError):
    pass


@dataclass(eq=False)
class SirenMlp(SdfProvider):
    layers: list  # [(W (out, in), b (out,)), ...]
    omega0: float = DEFAULT_OMEGA0
    input_center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    input_scale: float = 1.0
    metadata: dict = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        self.layers = [(np.asarray(W, dtype=float), np.asarray(b, dtype=float)) for W, b in self.layers]
        self.input_center = np.asarray(self.input_center, dtype=float).reshape(3)
        _check_structure(self.layers)
        if not self.omega0 > 0:
            raise ValueError("omega0 must be > 0")

    @classmethod
    def random(cls, hidden_width: int = 256, hidden_layers: int = 4, *, omega0: float = DEFAULT_OMEGA0,
               seed: int = 0, input_center=(0.0, 0.0, 0.0), input_scale: float = 1.0) -> SirenMlp:
        """SIREN-style initialization.

        First layer ``U(-1/in, 1/in)``; later layers
        ``U(-sqrt(6/in)/omega0, sqrt(6/in)/omega0)``.
        """
        rng = np.random.default_rng(seed)
        widths = [3] + [hidden_width] * hidden_layers + [1]
        layers = []
        for k, (n_in, n_out) in enumerate(zip(widths[:-1], widths[1:])):
            bound = 1.0 / n_in if k == 0 else np.sqrt(6.0 / n_in) / omega0
            W = rng.uniform(-bound, bound, size=(n_out, n_in))
            b = rng.uniform(-1.0 / np.sqrt(n_in), 1.0 / np.sqrt(n_in), size=n_out)
            layers.append((W, b))
        return cls(layers, omega0=omega0, input_center=np.asarray(input_center, float),
                   input_scale=float(input_scale))

    @property
    def hidden_widths(self) -> list[int]:
        return [W.shape[0] for W, _ in self.layers[:-1]]

    def copy(self) -> SirenMlp:
        return SirenMlp([(W.copy(), b.copy()) for W, b in self.layers], self.omega0,
                        self.input_center.copy(), self.input_scale, dict(self.metadata), self.workers)

    def _forward(self, p):
        h = (p - self.input_center) * self.input_scale
        cache = []
        for W, b in self.layers[:-1]:
            z = self.omega0 * (h @ W.T + b)
            cache.append(z)
            h = np.sin(z)
        W, b = self.layers[-1]
        return (h @ W.T + b)[:, 0], cache

    def distance(self, points) -> np.ndarray:
        return self._forward(_points(points))[0]

    def distance_and_gradient(self, points):
        p = _points(points)
        d, cache = self._forward(p)
        g = np.broadcast_to(self.layers[-1][0], (len(p), self.layers[-1][0].shape[1]))
        for (W, _), z in zip(reversed(self.layers[:-1]), reversed(cache)):
            g = (g * self.omega0 * np.cos(z)) @ W
        return d, g * self.input_scale

    def parameters_equal(self, other: SirenMlp) -> bool:
        if len(self.layers) != len(other.layers):
            return False
        same = all(np.array_equal(W1, W2) and np.array_equal(b1, b2)
                   for (W1, b1), (W2, b2) in zip(self.layers, other.layers))
        return (same and self.omega0 == other.omega0 and self.input_scale == other.input_scale
                and np.array_equal(self.input_center, other.input_center))


def _check_structure(layers) -> None:
    if len(layers) < 2:
        raise SirenFormatError("network needs at least one hidden layer")
    expected_in = 3
    for k, (W, b) in enumerate(layers):
        if W.ndim != 2 or W.shape[1] != expected_in:
            raise SirenFormatError(f"layer {k}: weight shape {W.shape} does not take {expected_in} inputs")
        if b.shape != (W.shape[0],):
            raise SirenFormatError(f"layer {k}: bias shape {b.shape} != ({W.shape[0]},)")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise SirenFormatError(f"layer {k}: non-finite parameter")
        expected_in = W.shape[0]
    if expected_in != 1:
        raise SirenFormatError(f"layer {len(layers) - 1}: output width {expected_in} != 1")


# -- weight files -------------------------------------------------------------

def save_siren(mlp: SirenMlp, path) -> None:
    header = {
        "omega0": mlp.omega0,
        "input_center": [float(x) for x in mlp.input_center],
        "input_scale": mlp.input_scale,
        "layers": [{"rows": int(W.shape[0]), "cols": int(W.shape[1])} for W, _ in mlp.layers],
        "metadata": mlp.metadata,
    }
    lines = [f"{MAGIC} {FORMAT_VERSION}", json.dumps(header)]
    for W, b in mlp.layers:
        lines.extend(" ".join(repr(float(x)) for x in row) for row in W)
        lines.append(" ".join(repr(float(x)) for x in b))
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_row(line: str, n: int, where: str) -> np.ndarray:
    try:
        vals = np.array([float(tok) for tok in line.split()])
    except ValueError as exc:
        raise SirenFormatError(f"{where}: {exc}") from exc
    if vals.size != n:
        raise SirenFormatError(f"{where}: expected {n} values, got {vals.size}")
    return vals


def load_siren(path) -> SirenMlp:
    lines = Path(path).read_text().splitlines()
    if len(lines) < 2:
        raise SirenFormatError(f"{path}: missing header")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != MAGIC:
        raise SirenFormatError(f"{path}: not a {MAGIC} file")
    if magic[1] != str(FORMAT_VERSION):
        raise SirenFormatError(f"{path}: unsupported format version {magic[1]}")
    try:
        header = json.loads(lines[1])
        shapes = [(int(s["rows"]), int(s["cols"])) for s in header["layers"]]
        omega0 = float(header["omega0"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise SirenFormatError(f"{path}: bad header: {exc}") from exc

    cursor = 2
    layers = []
    for k, (rows, cols) in enumerate(shapes):
        if cursor + rows + 1 > len(lines):
            raise SirenFormatError(f"{path}: layer {k}: file truncated")
        W = np.stack([_parse_row(lines[cursor + r], cols, f"layer {k} row {r}") for r in range(rows)])
        b = _parse_row(lines[cursor + rows], rows, f"layer {k} bias")
        cursor += rows + 1
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise SirenFormatError(f"{path}: layer {k}: non-finite parameter")
        layers.append((W, b))
    if any(line.strip() for line in lines[cursor:]):
        raise SirenFormatError(f"{path}: trailing data after layer {len(shapes) - 1}")
    return SirenMlp(layers, omega0=omega0,
                    input_center=np.asarray(header.get("input_center", [0, 0, 0]), float),
                    input_scale=float(header.get("input_scale", 1.0)),
                    metadata=header.get("metadata", {}))


# -- fitting ------------------------------------------------------------------

def _uniform(rng, lo, hi, n):
    return lo + (hi - lo) * rng.random((n, 3))


def _loss_and_grads(mlp: SirenMlp, p: np.ndarray, target: np.ndarray):
    h = (p - mlp.input_center) * mlp.input_scale
    acts, zs = [h], []
    for W, b in mlp.layers[:-1]:
        z = mlp.omega0 * (h @ W.T + b)
        h = np.sin(z)
        zs.append(z)
        acts.append(h)
    W_out, b_out = mlp.layers[-1]
    err = (h @ W_out.T + b_out)[:, 0] - target
    loss = float(np.mean(err**2))
    n = len(p)
    delta = (2.0 / n) * err[:, None]
    grads = [None] * len(mlp.layers)
    grads[-1] = (delta.T @ acts[-1], delta.sum(axis=0))
    back = delta @ W_out
    for k in range(len(mlp.layers) - 2, -1, -1):
        dz = back * mlp.omega0 * np.cos(zs[k])
        W, _ = mlp.layers[k]
        grads[k] = (dz.T @ acts[k], dz.sum(axis=0))
        back = dz @ W
    return loss, grads


def fit_siren(scene: AnalyticScene, sample_count: int = 20_000, iterations: int = 2000,
              step_size: float = 1e-4, seed: int = 0, *, hidden_width: int = 256,
              hidden_layers: int = 4, omega0: float = DEFAULT_OMEGA0, batch_size: int = 512,
              heldout_count: int = 5000) -> SirenMlp:
    """Fit a sinusoidal MLP to ``scene`` by Adam on uniformly drawn samples.

    Inputs are rescaled so the scene bounds map onto ``[-1, 1]^3``.  The
    held-out RMS error (meters) is stored in ``metadata['heldout_rms']``.
    """
    if sample_count < 1000:
        raise ValueError("sample_count must be >= 1000")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds
    center = (lo + hi) / 2
    scale = 2.0 / float(np.max(hi - lo))
    mlp = SirenMlp.random(hidden_width, hidden_layers, omega0=omega0, seed=int(rng.integers(2**31)),
                          input_center=center, input_scale=scale)

    train_p = _uniform(rng, lo, hi, sample_count)
    train_d = scene.distance_and_gradient(train_p)[0]
    test_p = _uniform(rng, lo, hi, heldout_count)
    test_d = scene.distance_and_gradient(test_p)[0]

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in mlp.layers]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in mlp.layers]
    for it in range(1, iterations + 1):
        idx = rng.integers(0, sample_count, size=min(batch_size, sample_count))
        loss, grads = _loss_and_grads(mlp, train_p[idx], train_d[idx])
        if not np.isfinite(loss):
            raise TrainingError(f"loss became non-finite at iteration {it}")
        new_layers = []
        for k, ((W, b), (gW, gb)) in enumerate(zip(mlp.layers, grads)):
            mW, mb = m[k]
            vW, vb = v[k]
            mW = beta1 * mW + (1 - beta1) * gW
            mb = beta1 * mb + (1 - beta1) * gb
            vW = beta2 * vW + (1 - beta2) * gW**2
            vb = beta2 * vb + (1 - beta2) * gb**2
            m[k], v[k] = (mW, mb), (vW, vb)
            c1, c2 = 1 - beta1**it, 1 - beta2**it
            W = W - step_size * (mW / c1) / (np.sqrt(vW / c2) + eps)
            b = b - step_size * (mb / c1) / (np.sqrt(vb / c2) + eps)
            new_layers.append((W, b))
        mlp.layers = new_layers
        if it % 500 == 0:
            log.info("fit_siren iteration %d loss %.3e", it, loss)

    if not all(np.all(np.isfinite(W)) and np.all(np.isfinite(b)) for W, b in mlp.layers):
        raise TrainingError("parameters became non-finite")
    rms = float(np.sqrt(np.mean((mlp.distance(test_p) - test_d) ** 2)))
    mlp.metadata = {"heldout_rms": rms, "iterations": iterations, "sample_count": sample_count,
                    "seed": seed, "step_size": step_size}
    return mlp
