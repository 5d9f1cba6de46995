"""World construction from specs and HR/LR pair generation.

Pair i is a pure function of (seed, i), so datasets regenerate identically
regardless of how the generation loop is ordered or parallelized.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .model import GmmWorld
from .rng import generator
from .tensorio import read_tensor, write_tensor


def texture_mean(spec, shape: tuple[int, int, int] | None, dim: int) -> np.ndarray:
    """A component mean: literal values or a named generator.

    Named kinds: constant, gradient (diagonal ramp), checker (alternating
    +/- amplitude), smooth-noise (seeded Gaussian field, two smoothing
    passes, rescaled to the amplitude).
    """
    if isinstance(spec, (list, tuple, np.ndarray)):
        arr = np.asarray(spec, dtype=np.float64).ravel()
        if arr.size != dim:
            raise ValidationError(f"literal mean has {arr.size} values, want {dim}")
        return arr
    if isinstance(spec, dict) and "sum" in spec:
        parts = spec["sum"]
        if not parts:
            raise ValidationError("texture sum needs at least one term")
        return sum(texture_mean(p, shape, dim) for p in parts)
    if not isinstance(spec, dict) or "texture" not in spec:
        raise ValidationError("mean must be a value list or a texture object")
    kind = spec["texture"]
    amp = float(spec.get("amplitude", 1.0))
    if kind == "constant":
        return np.full(dim, amp)
    if shape is None:
        raise ValidationError(f"texture {kind!r} needs an image-shaped world")
    h, w, c = shape
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    if kind == "gradient":
        ramp = (ii + jj) / max(h + w - 2, 1) - 0.5
        field = np.repeat(ramp[:, :, None], c, axis=2) * amp
    elif kind == "checker":
        field = np.where((ii + jj) % 2 == 0, amp, -amp)
        field = np.repeat(field[:, :, None], c, axis=2)
    elif kind == "smooth-noise":
        rng = generator(int(spec.get("seed", 0)), 0)
        field = rng.standard_normal((h, w, c))
        kernel = np.array([0.25, 0.5, 0.25])
        for _ in range(2):
            for axis in (0, 1):
                pad = [(0, 0)] * 3
                pad[axis] = (1, 1)
                padded = np.pad(field, pad, mode="edge")
                field = sum(
                    k * np.take(padded, np.arange(field.shape[axis]) + off, axis=axis)
                    for off, k in enumerate(kernel)
                )
        field *= amp / max(field.std(), 1e-12)
    else:
        raise ValidationError(f"unknown texture kind {kind!r}")
    return field.ravel()


def world_from_spec(spec: dict) -> GmmWorld:
    if "components" not in spec:
        raise ValidationError("world spec needs a components list")
    shape = tuple(spec["shape"]) if spec.get("shape") else None
    if shape is not None and len(shape) != 3:
        raise ValidationError("world shape must be [height, width, channels]")
    dim = int(np.prod(shape)) if shape else int(spec.get("dim", 0))
    if dim <= 0:
        raise ValidationError("world spec needs shape or a positive dim")
    comps = spec["components"]
    weights = np.array([float(c["weight"]) for c in comps])
    stds = np.array([float(c["std"]) for c in comps])
    means = np.stack([texture_mean(c["mean"], shape, dim) for c in comps])
    return GmmWorld(
        weights=weights,
        means=means,
        stds=stds,
        tau=float(spec.get("tau", 0.05)),
        block=int(spec.get("block", 1)),
        shape=shape,
    )


def sample_pair(world: GmmWorld, seed: int, index: int):
    """The (z, y) pair for one index; pure in (seed, index)."""
    rng = generator(seed, index)
    j = int(rng.choice(world.n_components, p=world.weights))
    z = world.means[j] + world.stds[j] * rng.standard_normal(world.dim)
    y = world.degrade(z) + world.tau * rng.standard_normal(world.obs_dim)
    return z, y


def sample_pairs(world: GmmWorld, n: int, seed: int):
    if n < 1:
        raise ValidationError("need n >= 1 pairs")
    return [sample_pair(world, seed, i) for i in range(n)]


def split(pairs, ratio: float, seed: int):
    """Seeded shuffle, then cut at round-half-up of ratio * len."""
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError("split ratio must lie in [0, 1]")
    order = generator(seed, 0).permutation(len(pairs))
    cut = int(np.floor(ratio * len(pairs) + 0.5))
    reference = [pairs[i] for i in order[:cut]]
    holdout = [pairs[i] for i in order[cut:]]
    return reference, holdout


def save_pairs(directory, pairs, seed: int) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (z, y) in enumerate(pairs):
        z_name, y_name = f"z_{i:06d}.t", f"y_{i:06d}.t"
        write_tensor(directory / z_name, z)
        write_tensor(directory / y_name, y)
        rows.append((i, z_name, y_name, seed))
    with open(directory / "pairs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "z_path", "y_path", "seed"])
        writer.writerows(rows)


def load_pairs(directory):
    directory = Path(directory)
    pairs = []
    with open(directory / "pairs.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            pairs.append((
                read_tensor(directory / row["z_path"]),
                read_tensor(directory / row["y_path"]),
            ))
    return pairs
