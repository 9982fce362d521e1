"""Export utilities for evaluation reports (CSV tables and JSON records)."""

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

from core.fusion import SearchResult
from core.metrics import MetricsReport, RocSweep
from core.scoring import GridRow
from core.storage import atomic_write


class ReportExporter:
    """Writes grid tables, fusion traces, DET points and metric records."""

    def __init__(self, export_dir: Optional[str] = None):
        """Initialize exporter with export directory.

        If export_dir is None, uses ~/.verifica/exports as default. Absolute
        file names passed to the export methods ignore the directory.
        """
        if export_dir is None:
            self.export_dir = Path.home() / ".verifica" / "exports"
        else:
            self.export_dir = Path(export_dir)

    def _target(self, filename: str) -> Path:
        return self.export_dir / filename

    def export_grid_to_csv(self, rows: Sequence[GridRow], filename: str) -> Path:
        """
        Export the cohort grid table.

        Args:
            rows: One row per evaluated (N, X) cell
            filename: Output file name or path

        Returns:
            Path to exported file
        """
        filepath = self._target(filename)
        with atomic_write(filepath, "w") as csvfile:
            writer = csv.writer(csvfile, lineterminator="\n")
            writer.writerow(["N", "X", "eer_mean", "eer_std", "dcf_mean", "dcf_std"])
            for row in rows:
                writer.writerow([
                    row.N,
                    row.X,
                    self._format_float(row.eer_mean),
                    self._format_float(row.eer_std),
                    self._format_float(row.dcf_mean),
                    self._format_float(row.dcf_std),
                ])
        return filepath

    def export_trace_to_csv(self, result: SearchResult, filename: str) -> Path:
        """
        Export every weight vector visited by the fusion search.

        Args:
            result: Search result carrying the trace
            filename: Output file name or path

        Returns:
            Path to exported file
        """
        filepath = self._target(filename)
        system_ids = list(result.weights.weights)
        with atomic_write(filepath, "w") as csvfile:
            writer = csv.writer(csvfile, lineterminator="\n")
            writer.writerow([f"w_{s}" for s in system_ids] + ["eer", "dcf"])
            for entry in result.trace:
                writer.writerow(
                    [self._format_weight(w) for w in entry.weights]
                    + [self._format_float(entry.eer), self._format_float(entry.dcf)]
                )
        return filepath

    def export_det_to_csv(self, sweep: RocSweep, filename: str) -> Path:
        """Export the operating points of a sweep (threshold, E_miss, E_fa)."""
        filepath = self._target(filename)
        with atomic_write(filepath, "w") as csvfile:
            writer = csv.writer(csvfile, lineterminator="\n")
            writer.writerow(["threshold", "e_miss", "e_fa"])
            for threshold, e_miss, e_fa in zip(sweep.thresholds, sweep.e_miss, sweep.e_fa):
                writer.writerow([
                    self._format_float(threshold),
                    self._format_float(e_miss),
                    self._format_float(e_fa),
                ])
        return filepath

    def export_metrics_to_json(
        self,
        report: MetricsReport,
        filename: str,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Path:
        """Export a MetricsReport as one JSON object, keys sorted."""
        filepath = self._target(filename)
        record: Dict[str, Any] = dict(extra or {})
        record.update({k: self._json_value(v) for k, v in report.as_dict().items()})
        with atomic_write(filepath, "w") as handle:
            handle.write(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return filepath

    def _format_float(self, value: float) -> str:
        """Shortest round-trip text, 'inf' for the all-reject threshold."""
        value = float(value)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)

    def _format_weight(self, value: float) -> str:
        return f"{value:.4f}"

    def _json_value(self, value: Any) -> Any:
        if isinstance(value, float) and not math.isfinite(value):
            return str(value)
        return value
