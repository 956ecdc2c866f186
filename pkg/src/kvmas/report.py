"""Machine-readable experiment reports: canonical JSON plus a flat CSV view.

JSON is the canonical schema (config echo, engine fingerprint, rows); CSV
carries the rows only. Both round-trip losslessly for the fields they
carry: floats serialize via repr so parsing returns identical values.
Wall-clock columns are the one non-reproducible quantity; strip_timing
zeroes them so reports become byte-comparable across runs.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, replace

SCHEMA = "kvmas-report/v1"

_CSV_COLUMNS = [
    "condition",
    "accuracy",
    "injection_compliance",
    "mean_decoded_tokens",
    "mean_prefill_tokens",
    "mean_total_tokens",
    "mean_relay_tokens",
    "mean_latency_s",
    "p95_latency_s",
    "trials",
]


@dataclass(frozen=True)
class ReportRow:
    condition: str
    accuracy: float
    mean_decoded_tokens: float
    mean_prefill_tokens: float
    mean_relay_tokens: float
    mean_latency_s: float
    p95_latency_s: float
    trials: int
    injection_compliance: float | None = None

    @property
    def mean_total_tokens(self) -> float:
        # defined as the sum of the two means so the accounting identity is exact
        return self.mean_prefill_tokens + self.mean_decoded_tokens


@dataclass(frozen=True)
class ExperimentReport:
    kind: str
    config: dict
    engine_fingerprint: str
    rows: tuple = ()

    def stripped(self) -> "ExperimentReport":
        """Timing zeroed: everything left is a pure function of (config,
        seeds, weights)."""
        return replace(
            self,
            rows=tuple(replace(r, mean_latency_s=0.0, p95_latency_s=0.0) for r in self.rows),
        )

    def to_json(self) -> str:
        doc = {
            "schema": SCHEMA,
            "kind": self.kind,
            "config": self.config,
            "engine_fingerprint": self.engine_fingerprint,
            "rows": [dict(asdict(r), mean_total_tokens=r.mean_total_tokens) for r in self.rows],
        }
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ExperimentReport":
        doc = json.loads(text)
        rows = []
        for r in doc["rows"]:
            r = dict(r)
            r.pop("mean_total_tokens", None)
            rows.append(ReportRow(**r))
        return cls(
            kind=doc["kind"],
            config=doc["config"],
            engine_fingerprint=doc["engine_fingerprint"],
            rows=tuple(rows),
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_CSV_COLUMNS)
        for r in self.rows:
            writer.writerow([
                r.condition,
                repr(r.accuracy),
                "" if r.injection_compliance is None else repr(r.injection_compliance),
                repr(r.mean_decoded_tokens),
                repr(r.mean_prefill_tokens),
                repr(r.mean_total_tokens),
                repr(r.mean_relay_tokens),
                repr(r.mean_latency_s),
                repr(r.p95_latency_s),
                r.trials,
            ])
        return buf.getvalue()

    @classmethod
    def rows_from_csv(cls, text: str) -> tuple:
        reader = csv.DictReader(io.StringIO(text))
        rows = []
        for rec in reader:
            rows.append(
                ReportRow(
                    condition=rec["condition"],
                    accuracy=float(rec["accuracy"]),
                    injection_compliance=(
                        None if rec["injection_compliance"] == "" else float(rec["injection_compliance"])
                    ),
                    mean_decoded_tokens=float(rec["mean_decoded_tokens"]),
                    mean_prefill_tokens=float(rec["mean_prefill_tokens"]),
                    mean_relay_tokens=float(rec["mean_relay_tokens"]),
                    mean_latency_s=float(rec["mean_latency_s"]),
                    p95_latency_s=float(rec["p95_latency_s"]),
                    trials=int(rec["trials"]),
                )
            )
        return tuple(rows)


def emit_report(report: ExperimentReport, path, fmt: str = "json",
                strip_timing: bool = False) -> None:
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    if strip_timing:
        report = report.stripped()
    payload = report.to_json() if fmt == "json" else report.to_csv()
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(payload)
    except OSError as exc:
        raise OSError(f"cannot write report to {path}: {exc}") from exc


def summarize_trials(condition: str, grades: list[bool], decoded: list[int],
                     prefilled: list[int], relayed: list[int], latencies: list[float],
                     compliance: list[bool] | None = None) -> ReportRow:
    """Aggregate per-trial records into one row (trial-count-weighted means)."""
    n = len(grades)
    if n == 0:
        raise ValueError("cannot summarize zero trials")
    mean = lambda xs: sum(xs) / n
    ordered = sorted(latencies)
    p95 = ordered[min(n - 1, math.ceil(0.95 * n) - 1)]
    return ReportRow(
        condition=condition,
        accuracy=sum(grades) / n,
        injection_compliance=None if compliance is None else sum(compliance) / n,
        mean_decoded_tokens=mean(decoded),
        mean_prefill_tokens=mean(prefilled),
        mean_relay_tokens=mean(relayed),
        mean_latency_s=mean(latencies),
        p95_latency_s=p95,
        trials=n,
    )
