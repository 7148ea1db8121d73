"""Distributional and per-sample metrics over sets of field states.

A sample set is a (S, N, C) array of S states on one graph; lists of
FieldState and SampleSet objects are accepted wherever a set is expected.
"""

import logging
from dataclasses import dataclass
from typing import Literal, Optional, Sequence, Union

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from mesh_sar.exceptions import NumericalError, ValidationError
from mesh_sar.meshgraph.meshgraph import FieldState

logger = logging.getLogger(__name__)

Provenance = Literal["generated", "ground-truth"]


@dataclass(frozen=True)
class SampleSet:
    values: np.ndarray
    provenance: Provenance = "generated"

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[0] == 0:
            raise ValidationError(f"A sample set must be a nonempty (S, N, C) array, got {self.values.shape}")

    @classmethod
    def from_states(cls, states: Sequence[FieldState], provenance: Provenance = "generated") -> "SampleSet":
        if not states:
            raise ValidationError("A sample set needs at least one state.")
        shapes = {s.values.shape for s in states}
        if len(shapes) != 1:
            raise ValidationError(f"States disagree on shape: {sorted(shapes)}")
        return cls(np.stack([s.values for s in states]), provenance)

    @property
    def num_samples(self) -> int:
        return int(self.values.shape[0])


Samples = Union[SampleSet, np.ndarray, Sequence[FieldState]]


def as_array(samples: Samples) -> np.ndarray:
    """(S, N, C) float array of ``samples``."""
    if isinstance(samples, SampleSet):
        return samples.values
    if isinstance(samples, np.ndarray):
        values = samples
    elif len(samples) and isinstance(samples[0], FieldState):
        values = SampleSet.from_states(samples).values
    else:
        values = np.asarray(samples, dtype=np.float64)
    if values.ndim == 2:
        values = values[:, :, None]
    if values.ndim != 3 or values.shape[0] == 0:
        raise ValidationError(f"Expected a nonempty (S, N, C) sample set, got shape {values.shape}")
    return values.astype(np.float64, copy=False)


def w2_distance(set_a: Samples, set_b: Samples) -> float:
    """Empirical Wasserstein-2 distance between two sets of flattened states.

    Equal set sizes are matched exactly with the Hungarian algorithm; otherwise
    the transport plan between uniform weights is solved as a linear program.

    Raises:
        ValidationError: the states of the two sets differ in shape.
    """
    a, b = as_array(set_a), as_array(set_b)
    if a.shape[1:] != b.shape[1:]:
        raise ValidationError(f"Sample sets have state shapes {a.shape[1:]} and {b.shape[1:]}")
    cost = cdist(a.reshape(len(a), -1), b.reshape(len(b), -1), "sqeuclidean")

    if len(a) == len(b):
        rows, cols = linear_sum_assignment(cost)
        mean_cost = float(cost[rows, cols].mean())
    else:
        m, n = cost.shape
        rows = sp.kron(sp.identity(m), np.ones((1, n)))
        cols = sp.kron(np.ones((1, m)), sp.identity(n))
        result = linprog(
            cost.reshape(-1),
            A_eq=sp.vstack([rows, cols]).tocsr(),
            b_eq=np.concatenate([np.full(m, 1.0 / m), np.full(n, 1.0 / n)]),
            bounds=(0, None),
            method="highs",
        )
        if not result.success:
            raise NumericalError(f"Transport problem failed: {result.message}")
        mean_cost = float(result.fun)
    return float(np.sqrt(max(mean_cost, 0.0)))


def coefficient_of_determination(sample: np.ndarray, reference: np.ndarray) -> float:
    """1 - SS_res / SS_tot with ``reference`` as the truth."""
    total = float(np.sum((reference - reference.mean()) ** 2))
    return 1.0 - float(np.sum((sample - reference) ** 2)) / total


def r2_best_match(sample: Union[np.ndarray, FieldState], trajectory: Samples) -> float:
    """R^2 of ``sample`` against the trajectory state it correlates with best.

    Constant trajectory states are skipped.

    Raises:
        ValidationError: shape mismatch, or every trajectory state is constant.
    """
    x = sample.values if isinstance(sample, FieldState) else np.asarray(sample, dtype=np.float64)
    states = as_array(trajectory)
    x = x.reshape(-1)
    flat = states.reshape(len(states), -1)
    if flat.shape[1] != x.size:
        raise ValidationError(f"Sample has {x.size} values, trajectory states have {flat.shape[1]}")

    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    valid = norms > 0
    if not np.any(valid):
        raise ValidationError("Every trajectory state is constant; R^2 is undefined.")
    x_centered = x - x.mean()
    x_norm = np.linalg.norm(x_centered)
    corr = np.full(len(flat), -np.inf)
    corr[valid] = centered[valid] @ x_centered / (norms[valid] * (x_norm if x_norm > 0 else 1.0))
    best = int(np.argmax(corr))
    return coefficient_of_determination(x, flat[best])


def per_node_stats(samples: Samples) -> dict[str, np.ndarray]:
    """Per-node, per-channel mean and unbiased (n - 1) standard deviation.

    Returns:
        dict: {"mean": (N, C), "std": (N, C)}
    """
    values = as_array(samples)
    if len(values) < 2:
        raise ValidationError("Per-node standard deviation needs at least two samples.")
    return {"mean": values.mean(axis=0), "std": values.std(axis=0, ddof=1)}


def sign_agreement(samples: Samples, node_mask: Optional[np.ndarray] = None, channel: int = 0) -> float:
    """Fraction of node pairs whose values share a sign, averaged over states.

    1.0 means every state flips all nodes together; independent signs give about 0.5.

    Args:
        samples: Sample set.
        node_mask: Nodes to consider, defaults to all. Needs at least two nodes.
        channel: Channel whose sign is compared.
    """
    values = as_array(samples)[:, :, channel]
    if node_mask is not None:
        values = values[:, node_mask]
    n = values.shape[1]
    if n < 2:
        raise ValidationError("Sign agreement needs at least two nodes.")
    positive = np.sum(values > 0, axis=1).astype(np.float64)
    negative = n - positive
    pairs = (positive * (positive - 1) + negative * (negative - 1)) / (n * (n - 1))
    return float(pairs.mean())


def positive_mode_fraction(samples: Samples, channel: int = 0) -> float:
    """Fraction of states whose node-mean is positive."""
    values = as_array(samples)[:, :, channel]
    return float(np.mean(values.mean(axis=1) > 0))


def _velocity_channels(samples: Samples, u_channel: int, v_channel: int) -> tuple[np.ndarray, np.ndarray]:
    values = as_array(samples)
    channels = values.shape[2]
    for c in (u_channel, v_channel):
        if not 0 <= c < channels:
            raise ValidationError(f"Channel {c} does not exist in {channels}-channel states.")
    if len(values) < 2:
        raise ValidationError("Fluctuation statistics need at least two samples.")
    u, v = values[:, :, u_channel], values[:, :, v_channel]
    return u - u.mean(axis=0), v - v.mean(axis=0)


def tke(samples: Samples, u_channel: int = 0, v_channel: int = 1) -> np.ndarray:
    """(N,) turbulent kinetic energy 0.5 (var u + var v), population variances."""
    du, dv = _velocity_channels(samples, u_channel, v_channel)
    return 0.5 * (np.mean(du**2, axis=0) + np.mean(dv**2, axis=0))


def rss(samples: Samples, u_channel: int = 0, v_channel: int = 1) -> np.ndarray:
    """(N,) Reynolds shear stress cov(u, v), population covariance."""
    du, dv = _velocity_channels(samples, u_channel, v_channel)
    return np.mean(du * dv, axis=0)


def pdf_histogram(samples: Samples, node: int, channel: int = 0, bins: int = 30) -> pd.DataFrame:
    """Normalized histogram of one node's values across the set.

    Returns:
        pd.DataFrame: columns left, right, density; sum(density * width) == 1.
    """
    if bins < 2:
        raise ValidationError(f"bins must be >= 2, got {bins}")
    values = as_array(samples)
    density, edges = np.histogram(values[:, node, channel], bins=bins, density=True)
    return pd.DataFrame({"left": edges[:-1], "right": edges[1:], "density": density})
