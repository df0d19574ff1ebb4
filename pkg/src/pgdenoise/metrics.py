"""Evaluation metrics used throughout the benchmark tables: RMSE, MAE, R2, SNR."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, MetricUndefinedError


def _check(y_ref, y_pred):
    y_ref = np.asarray(y_ref, dtype=np.float64).ravel()
    y_pred = np.asarray(y_pred, dtype=np.float64).ravel()
    if y_ref.shape != y_pred.shape:
        raise ConfigurationError(
            f"length mismatch: {y_ref.shape} vs {y_pred.shape}"
        )
    if y_ref.size < 2:
        raise ConfigurationError("metrics need at least two samples")
    return y_ref, y_pred


def rmse(y_ref, y_pred) -> float:
    y_ref, y_pred = _check(y_ref, y_pred)
    return float(np.sqrt(np.mean((y_ref - y_pred) ** 2)))


def mae(y_ref, y_pred) -> float:
    y_ref, y_pred = _check(y_ref, y_pred)
    return float(np.mean(np.abs(y_ref - y_pred)))


def r2(y_ref, y_pred) -> float:
    y_ref, y_pred = _check(y_ref, y_pred)
    ss_tot = float(np.sum((y_ref - y_ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise MetricUndefinedError("R2 undefined: reference has zero variance")
    ss_res = float(np.sum((y_ref - y_pred) ** 2))
    return 1.0 - ss_res / ss_tot

def snr_db(y_ref, y_pred, mean_removed: bool = False) -> float:
    """10 log10(signal power / error power).

    Signal power uses the raw reference by default; ``mean_removed`` switches
    to the centered signal.
    """
    y_ref, y_pred = _check(y_ref, y_pred)
    sig = y_ref - y_ref.mean() if mean_removed else y_ref
    err_power = float(np.sum((y_ref - y_pred) ** 2))
    if err_power == 0.0:
        return float("inf")
    return float(10.0 * np.log10(np.sum(sig**2) / err_power))


@dataclass
class MetricsReport:
    rmse: float
    mae: float
    r2: float
    snr_db: float
    n: int
    model: str = ""
    noise_level: float = float("nan")
    seed: int = -1
    extras: dict = field(default_factory=dict)

    @staticmethod
    def compute(y_ref, y_pred, model="", noise_level=float("nan"), seed=-1) -> "MetricsReport":
        y_ref = np.asarray(y_ref, dtype=np.float64).ravel()
        rep = MetricsReport(
            rmse=rmse(y_ref, y_pred),
            mae=mae(y_ref, y_pred),
            r2=r2(y_ref, y_pred),
            snr_db=snr_db(y_ref, y_pred),
            n=int(y_ref.size),
            model=model,
            noise_level=noise_level,
            seed=seed,
        )
        assert rep.rmse >= rep.mae >= 0.0
        assert rep.r2 <= 1.0
        return rep

    def as_dict(self) -> dict:
        return {
            "model": self.model,
            "noise_level": self.noise_level,
            "seed": self.seed,
            "n": self.n,
            "rmse": self.rmse,
            "mae": self.mae,
            "r2": self.r2,
            "snr_db": self.snr_db,
            **self.extras,
        }
