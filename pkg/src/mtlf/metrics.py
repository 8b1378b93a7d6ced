"""Forecast evaluation: APE-family statistics, RMSE and signed-error moments.

Sign convention: PE = 100 * (y - y_hat) / y, so a positive PE means the
forecast came in below the actual (an under-forecast).  Kurtosis is the
plain fourth standardized moment (normal = 3), not excess kurtosis.
"""

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats

__all__ = ["SeriesScore", "EvalReport", "ape", "evaluate", "report_json", "report_table",
           "write_per_series_csv", "write_per_month_csv", "PE_SIGN_CONVENTION"]

PE_SIGN_CONVENTION = "pe = 100 * (y - y_hat) / y; positive means under-forecast"


def ape(y, y_hat):
    """Absolute percentage error, in percent."""
    y = np.asarray(y, dtype=float)
    if np.any(y == 0):
        raise ValueError("APE undefined for zero actuals")
    return 100.0 * np.abs(y - np.asarray(y_hat, dtype=float)) / np.abs(y)


@dataclass(frozen=True)
class SeriesScore:
    mape: float
    median_ape: float
    iqr_ape: float
    rmse: float


@dataclass(frozen=True)
class EvalReport:
    per_series: dict  # id -> SeriesScore
    mape: float  # mean of per-series MAPEs
    median_ape: float  # over the pooled APE distribution
    iqr_ape: float
    rmse: float  # pooled over all (series, month) pairs
    pe_mean: float
    pe_median: float
    pe_std: float
    pe_skewness: float
    pe_kurtosis: float
    per_month_mape: tuple  # MAPE per horizon position, length = horizon


def evaluate(forecasts, actuals):
    """Score per-series forecast vectors against matching actuals."""
    if set(forecasts) != set(actuals):
        raise ValueError("forecast and actual series ids differ")
    ids = sorted(forecasts)
    horizon = None
    per_series = {}
    all_apes = []
    all_sq = []
    all_pe = []
    ape_matrix = []
    for sid in ids:
        f = np.asarray(forecasts[sid], dtype=float)
        a = np.asarray(actuals[sid], dtype=float)
        if f.shape != a.shape or f.ndim != 1:
            raise ValueError(f"series {sid}: forecast/actual shapes differ")
        if horizon is None:
            horizon = len(f)
        elif len(f) != horizon:
            raise ValueError(f"series {sid}: horizon {len(f)} differs from {horizon}")
        apes = ape(a, f)
        per_series[sid] = SeriesScore(
            mape=float(apes.mean()),
            median_ape=float(np.median(apes)),
            iqr_ape=float(np.percentile(apes, 75) - np.percentile(apes, 25)),
            rmse=float(np.sqrt(np.mean((a - f) ** 2))),
        )
        ape_matrix.append(apes)
        all_apes.append(apes)
        all_sq.append((a - f) ** 2)
        all_pe.append(100.0 * (a - f) / a)
    pool = np.concatenate(all_apes)
    pe = np.concatenate(all_pe)
    if np.ptp(pe) == 0.0:
        skew = kurt = float("nan")  # undefined for a degenerate distribution
    else:
        skew = float(stats.skew(pe))
        kurt = float(stats.kurtosis(pe, fisher=False))
    ape_matrix = np.stack(ape_matrix)
    return EvalReport(
        per_series=per_series,
        mape=float(np.mean([s.mape for s in per_series.values()])),
        median_ape=float(np.median(pool)),
        iqr_ape=float(np.percentile(pool, 75) - np.percentile(pool, 25)),
        rmse=float(np.sqrt(np.mean(np.concatenate(all_sq)))),
        pe_mean=float(pe.mean()),
        pe_median=float(np.median(pe)),
        pe_std=float(pe.std()),
        pe_skewness=skew,
        pe_kurtosis=kurt,
        per_month_mape=tuple(float(v) for v in ape_matrix.mean(axis=0)),
    )


def report_json(report):
    payload = asdict(report)
    payload["per_series"] = {sid: asdict(s) for sid, s in report.per_series.items()}
    payload["per_month_mape"] = list(report.per_month_mape)
    payload["pe_sign_convention"] = PE_SIGN_CONVENTION
    return json.dumps(payload, indent=2, sort_keys=True)


def report_table(report):
    lines = []
    header = f"{'series':<10}{'MAPE':>10}{'MedAPE':>10}{'IQR':>10}{'RMSE':>12}"
    lines.append(header)
    lines.append("-" * len(header))
    for sid in sorted(report.per_series):
        s = report.per_series[sid]
        lines.append(f"{sid:<10}{s.mape:>10.2f}{s.median_ape:>10.2f}{s.iqr_ape:>10.2f}{s.rmse:>12.2f}")
    lines.append("-" * len(header))
    lines.append(
        f"{'pooled':<10}{report.mape:>10.2f}{report.median_ape:>10.2f}"
        f"{report.iqr_ape:>10.2f}{report.rmse:>12.2f}"
    )
    lines.append("")
    lines.append(
        "PE: mean {:.2f}  median {:.2f}  std {:.2f}  skewness {:.2f}  kurtosis {:.2f}".format(
            report.pe_mean, report.pe_median, report.pe_std, report.pe_skewness, report.pe_kurtosis
        )
    )
    lines.append(f"({PE_SIGN_CONVENTION})")
    return "\n".join(lines)


def write_per_series_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "mape"])
        for sid in sorted(report.per_series):
            writer.writerow([sid, repr(report.per_series[sid].mape)])


def write_per_month_csv(report, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["month", "mape"])
        for month, value in enumerate(report.per_month_mape, start=1):
            writer.writerow([month, repr(value)])
