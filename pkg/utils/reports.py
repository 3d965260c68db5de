import json
import os
import sys
from datetime import datetime
from pathlib import Path

from openpyxl import Workbook
from openpyxl.styles import Font, PatternFill

from helpers import ensure_dir

HEADER_FONT = Font(bold=True, color="FFFFFF")
HEADER_FILL = PatternFill(start_color="4F46E5", end_color="4F46E5", fill_type="solid")


def _jsonable(value):
    if hasattr(value, 'to_dict'):
        return value.to_dict()
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, 'tolist'):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dump_report(report):
    return json.dumps(report, indent=2, sort_keys=True, default=_jsonable)


def emit_report(report, out=None, name='report.json'):
    """JSON report to stdout; with `out`, also to <out>/<name>. Returns the file path or None."""
    text = dump_report(report)
    sys.stdout.write(text + '\n')
    if out is None:
        return None
    path = ensure_dir(out) / name
    path.write_text(text + '\n', encoding='utf-8')
    return path


def _cell(value):
    if isinstance(value, (list, tuple)):
        return ', '.join(map(str, value))
    return value


def _header(ws, titles):
    ws.append(titles)
    for cell in ws[1]:
        cell.font = HEADER_FONT
        cell.fill = HEADER_FILL


def write_benchmark_workbook(report, path):
    """Overview sheet plus one sheet per task (headline metric, P/R/F1, per-label rows)."""
    wb = Workbook()

    # --- Sheet 1: Overview ---
    ws_overview = wb.active
    ws_overview.title = "Overview"
    _header(ws_overview, ["Task", "Metric", "Value", "Precision", "Recall", "F1", "Documents"])
    tasks = report.get('tasks', {})
    for task, entry in sorted(tasks.items()):
        metrics = entry.get('metrics', {})
        ws_overview.append([
            task,
            metrics.get('metric'),
            metrics.get('value'),
            metrics.get('precision'),
            metrics.get('recall'),
            metrics.get('f1'),
            metrics.get('extra', {}).get('documents'),
        ])
    ws_overview.append([])
    ws_overview.append(["Seed", report.get('seed')])
    ws_overview.append(["Report Generated", datetime.now().strftime("%Y-%m-%d %H:%M:%S")])
    ws_overview.column_dimensions['A'].width = 20
    for col in ['B', 'C', 'D', 'E', 'F', 'G']:
        ws_overview.column_dimensions[col].width = 14

    # --- One sheet per task ---
    for task, entry in sorted(tasks.items()):
        ws = wb.create_sheet(title=task[:31])
        metrics = entry.get('metrics', {})
        _header(ws, ["Label", "Precision", "Recall", "F1", "Support"])
        support = metrics.get('support', {})
        for label, scores in sorted(metrics.get('per_label', {}).items()):
            ws.append([label, scores.get('precision'), scores.get('recall'), scores.get('f1'), support.get(label)])
        ws.append([])
        for key, value in sorted(metrics.get('extra', {}).items()):
            if isinstance(value, dict):
                ws.append([key, _cell(value.get('precision')), _cell(value.get('recall')), _cell(value.get('f1'))])
            else:
                ws.append([key, _cell(value)])
        for col in ['A', 'B', 'C', 'D', 'E']:
            ws.column_dimensions[col].width = 18

    path = Path(path)
    if not os.path.exists(path.parent):
        os.makedirs(path.parent)
    wb.save(path)
    return path
