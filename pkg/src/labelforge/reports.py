"""Report rendering: versioned JSON and Markdown tables.

Values are kept at full precision internally; rendering shows percentages
with one decimal place. Undefined values render as "n/a" rather than 0.
"""

from __future__ import annotations

from typing import Any

from .metrics import ConfusionMatrix, CrossTab, MetricsReport, UNPARSED

__all__ = ["SCHEMA_VERSION", "format_percent", "report_to_json", "report_to_markdown"]

SCHEMA_VERSION = 1


def format_percent(x: float | None) -> str:
    return "n/a" if x is None else f"{100 * x:.1f}"


def _crosstab_json(ct: CrossTab) -> dict:
    return {
        "sizes": list(ct.sizes),
        "size_fraction": [list(row) for row in ct.size_fraction],
        "diagonal_exact": list(ct.diagonal_exact),
        "exact_match_accuracy": ct.exact_match_accuracy,
    }


def _confusion_json(c: ConfusionMatrix) -> dict:
    return {
        "labels": list(c.taxonomy.label_ids),
        "columns": list(c.taxonomy.label_ids) + [UNPARSED],
        "counts": c.counts.tolist(),
    }


def report_to_json(report: MetricsReport, metadata: dict | None = None) -> dict:
    doc: dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "mode": report.mode,
        "n": report.n,
        "m": report.m,
        "accuracy": report.accuracy,
        "macro_balanced_accuracy": report.macro_balanced_accuracy,
        "macro_f1": report.macro_f1,
        "weighted_f1": report.weighted_f1,
        "hamming_loss": report.hamming_loss,
        "jaccard_standard": report.jaccard_standard,
        "jaccard_paper": report.jaccard_paper,
        "at_least_one_correct": report.at_least_one_correct,
        "excluded": report.excluded or {},
    }
    if report.per_class is not None:
        doc["per_class"] = {
            label_id: {
                "precision": pc.precision,
                "recall": pc.recall,
                "specificity": pc.specificity,
                "balanced_accuracy": pc.balanced_accuracy,
                "f1": pc.f1,
                "support": pc.support,
            }
            for label_id, pc in report.per_class.items()
        }
    if report.crosstab is not None:
        doc["crosstab"] = _crosstab_json(report.crosstab)
    if report.confusion is not None:
        doc["confusion"] = _confusion_json(report.confusion)
    if metadata:
        doc["metadata"] = metadata
    return doc


def _exclusive_markdown(report: MetricsReport) -> list[str]:
    lines = [
        "| Metric | Value (%) |",
        "| --- | --- |",
        f"| Accuracy | {format_percent(report.accuracy)} |",
        f"| Macro F1 | {format_percent(report.macro_f1)} |",
        f"| Weighted F1 | {format_percent(report.weighted_f1)} |",
        f"| Balanced Accuracy (macro) | {format_percent(report.macro_balanced_accuracy)} |",
        f"| Hamming Loss | {format_percent(report.hamming_loss)} |",
        "",
        "## Per-class",
        "",
        "| Class | Precision | Sensitivity | Specificity | Balanced Accuracy | F1 | Support |",
        "| --- | --- | --- | --- | --- | --- | --- |",
    ]
    assert report.per_class is not None
    for label_id, pc in report.per_class.items():
        lines.append(
            f"| {label_id} | {format_percent(pc.precision)} | {format_percent(pc.recall)} "
            f"| {format_percent(pc.specificity)} | {format_percent(pc.balanced_accuracy)} "
            f"| {format_percent(pc.f1)} | {pc.support} |"
        )
    excluded = report.excluded or {}
    noted = {k: v for k, v in excluded.items() if v}
    if noted:
        lines.append("")
        for key, count in noted.items():
            lines.append(f"Excluded from {key}: {count} class(es) with undefined value.")
    return lines


def _multilabel_markdown(report: MetricsReport) -> list[str]:
    lines = [
        "| Metric | Value (%) |",
        "| --- | --- |",
        f"| Hamming Loss | {format_percent(report.hamming_loss)} |",
        f"| Jaccard (standard) | {format_percent(report.jaccard_standard)} |",
        f"| Jaccard (intersection/M) | {format_percent(report.jaccard_paper)} |",
        f"| At least one correct | {format_percent(report.at_least_one_correct)} |",
    ]
    ct = report.crosstab
    if ct is not None and ct.sizes:
        lines += [
            "",
            "## Label-count cross-tab (% of documents)",
            "",
            "| True \\ Predicted | " + " | ".join(str(s) for s in ct.sizes) + " |",
            "| --- |" + " --- |" * len(ct.sizes),
        ]
        for r, row in zip(ct.sizes, ct.size_fraction):
            cells = " | ".join(format_percent(v) for v in row)
            lines.append(f"| {r} | {cells} |")
        lines += [
            "",
            "Diagonal (exact set match) by size: "
            + ", ".join(
                f"{s}: {format_percent(v)}" for s, v in zip(ct.sizes, ct.diagonal_exact)
            ),
            "",
            f"Exact-match accuracy: {format_percent(ct.exact_match_accuracy)}%",
        ]
    return lines


def report_to_markdown(report: MetricsReport, title: str = "Evaluation report") -> str:
    lines = [f"# {title}", "", f"Mode: {report.mode}. Documents: {report.n}. Labels: {report.m}.", ""]
    if report.mode == "exclusive":
        lines += _exclusive_markdown(report)
    else:
        lines += _multilabel_markdown(report)
    return "\n".join(lines) + "\n"
