"""Plain-text rendering of results for the terminal."""

from typing import Iterable, List, Optional, Sequence, Tuple

from core.fusion import FusionWeights
from core.metrics import MetricsReport
from core.scoring import GridRow
from core.errors import ToolkitError


def format_metrics(report: MetricsReport, system_id: str = "") -> str:
    """One summary line plus trial counts, e.g. ``sys1: EER=4.7770% minDCF=0.0140``."""
    prefix = f"{system_id}: " if system_id else ""
    return (
        f"{prefix}{report.summary_line()} "
        f"(minDCF normalizado={report.min_dcf_norm:.4f}, "
        f"{report.n_target} alvos, {report.n_nontarget} impostores)"
    )


def format_grid(rows: Sequence[GridRow], selected: Optional[GridRow] = None, notes: Iterable[str] = ()) -> str:
    """Grid table with mean +- std per cell; the selected cell is starred."""
    lines: List[str] = [f"{'N':>6} {'X':>6}  {'EER (%)':>18}  {'DCF':>18}"]
    for row in rows:
        mark = " *" if selected is not None and (row.N, row.X) == (selected.N, selected.X) else ""
        lines.append(
            f"{row.N:>6} {row.X:>6}  "
            f"{row.eer_mean:>8.4f} +- {row.eer_std:<6.4f}  "
            f"{row.dcf_mean:>8.4f} +- {row.dcf_std:<6.4f}{mark}"
        )
    for note in notes:
        lines.append(f"nota: {note}")
    if selected is not None:
        lines.append(f"Selecionado: N={selected.N} X={selected.X} (menor DCF médio)")
    return "\n".join(lines)


def format_weights(weights: FusionWeights) -> str:
    return "Pesos: " + ", ".join(f"{system}={value:.2f}" for system, value in weights.weights.items())


def format_failures(failures: Sequence[Tuple[str, ToolkitError]], total: int) -> str:
    """Summary of a batch command: how many items failed and why."""
    if not failures:
        return f"{total} arquivo(s) processado(s) sem erros"
    lines = [f"{len(failures)} de {total} arquivo(s) falharam:"]
    lines.extend(f"  {key}: {error}" for key, error in failures)
    return "\n".join(lines)
