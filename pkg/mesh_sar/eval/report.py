import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from mesh_sar.api.utils import show_progress
from mesh_sar.eval.metrics import (
    Samples,
    as_array,
    pdf_histogram,
    per_node_stats,
    positive_mode_fraction,
    r2_best_match,
    rss,
    sign_agreement,
    tke,
    w2_distance,
)
from mesh_sar.exceptions import NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricReport:
    """One metric: a scalar or per-node values, with the counts and settings that produced it."""

    name: str
    values: Union[float, np.ndarray]
    sample_counts: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise NumericalError(f"Metric {self.name} has non-finite values.")

    @property
    def is_scalar(self) -> bool:
        return np.ndim(self.values) == 0

    def to_frame(self) -> pd.DataFrame:
        """Long-format rows (metric, node, channel, value); node and channel are -1 for scalars."""
        if self.is_scalar:
            return pd.DataFrame([{"metric": self.name, "node": -1, "channel": -1, "value": float(self.values)}])
        values = np.asarray(self.values)
        if values.ndim == 1:
            values = values[:, None]
        nodes, channels = np.meshgrid(np.arange(values.shape[0]), np.arange(values.shape[1]), indexing="ij")
        return pd.DataFrame(
            {"metric": self.name, "node": nodes.ravel(), "channel": channels.ravel(), "value": values.ravel()}
        )

    def to_dict(self) -> dict:
        values = float(self.values) if self.is_scalar else np.asarray(self.values).tolist()
        return {"name": self.name, "values": values, "sample_counts": self.sample_counts, "config": self.config}


def summary_frame(reports: Sequence[MetricReport]) -> pd.DataFrame:
    """One row per report: scalars as is, per-node values as their mean."""
    return pd.DataFrame(
        [
            {"metric": r.name, "value": float(np.mean(r.values)), **{f"n_{k}": v for k, v in r.sample_counts.items()}}
            for r in reports
        ]
    )


def write_reports(reports: Sequence[MetricReport], prefix: str, logger: logging.Logger = logger) -> dict:
    """Writes ``<prefix>.csv`` (long format) and ``<prefix>.json``.

    Returns:
        dict: {"csv": path, "json": path}
    """
    os.makedirs(os.path.dirname(os.path.abspath(prefix)), exist_ok=True)
    pd.concat([r.to_frame() for r in reports], ignore_index=True).to_csv(prefix + ".csv", index=False)
    with open(prefix + ".json", "w") as f:
        json.dump([r.to_dict() for r in reports], f, indent=1)
    logger.info(f"Wrote {len(reports)} metric reports to {prefix}.csv")
    return {"csv": prefix + ".csv", "json": prefix + ".json"}


def evaluate_samples(
    generated: Samples,
    reference: Samples,
    trajectory: Optional[Samples] = None,
    bins: int = 30,
    threads: int = 1,
    logger: logging.Logger = logger,
) -> tuple[list[MetricReport], pd.DataFrame]:
    """Metric suite of generated states against reference states.

    Args:
        generated: Generated sample set.
        reference: Ground-truth set for distributional metrics (e.g. held-out states).
        trajectory: States searched by best-match R^2; defaults to ``reference``.
        bins: Histogram bins of the PDF curves.
        threads: Workers for the per-sample R^2 search.
        logger: Logger for progress messages.

    Returns:
        tuple: (reports, histogram curves of the highest-variance node per channel
        with columns source, node, channel, left, right, density)
    """
    gen, ref = as_array(generated), as_array(reference)
    traj = ref if trajectory is None else as_array(trajectory)
    counts = {"generated": len(gen), "reference": len(ref)}
    reports = [MetricReport("w2", w2_distance(gen, ref), counts, {"cost_exponent": 2})]

    def best_match(i: int) -> float:
        show_progress(i + 1, len(gen), "R2", f"Sample {i + 1}/{len(gen)}")
        return r2_best_match(gen[i], traj)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            r2 = list(pool.map(best_match, range(len(gen))))
    else:
        r2 = [best_match(i) for i in range(len(gen))]
    reports.append(MetricReport("r2_best_match", float(np.mean(r2)), dict(counts, trajectory=len(traj))))
    logger.info(f"W2={reports[0].values:.6g}, mean best-match R2={reports[1].values:.6g}")

    if len(gen) >= 2 and len(ref) >= 2:
        gen_stats, ref_stats = per_node_stats(gen), per_node_stats(ref)
        for key in ("mean", "std"):
            reports.append(MetricReport(f"{key}_generated", gen_stats[key], counts))
            reports.append(MetricReport(f"{key}_reference", ref_stats[key], counts))
            reports.append(MetricReport(f"{key}_abs_error", np.abs(gen_stats[key] - ref_stats[key]), counts))
        if gen.shape[2] >= 2:
            for name, fn in (("tke", tke), ("rss", rss)):
                reports.append(MetricReport(f"{name}_generated", fn(gen, 0, 1), counts, {"channels": [0, 1]}))
                reports.append(MetricReport(f"{name}_reference", fn(ref, 0, 1), counts, {"channels": [0, 1]}))

    if gen.shape[1] >= 2:
        for source, values in (("generated", gen), ("reference", ref)):
            coherence = {"channel": 0}
            reports.append(MetricReport(f"sign_agreement_{source}", sign_agreement(values), counts, coherence))
            reports.append(MetricReport(f"positive_fraction_{source}", positive_mode_fraction(values), counts, coherence))

    curves = []
    for channel in range(gen.shape[2]):
        node = int(np.argmax(ref[:, :, channel].var(axis=0)))
        for source, values in (("generated", gen), ("reference", ref)):
            curve = pdf_histogram(values, node, channel, bins)
            curves.append(curve.assign(source=source, node=node, channel=channel))
    columns = ["source", "node", "channel", "left", "right", "density"]
    return reports, pd.concat(curves, ignore_index=True)[columns]
