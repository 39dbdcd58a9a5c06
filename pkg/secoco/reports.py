"""Report writers: JSON, CSV and an optional Excel workbook."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import pandas as pd

try:
    import openpyxl
    from openpyxl.utils import get_column_letter
    from openpyxl.worksheet.worksheet import Worksheet
    OPENPYXL_OK = True
except Exception:
    OPENPYXL_OK = False

Table = Union[pd.DataFrame, Sequence[Dict[str, Any]]]


def ensure_outdir(outdir: Path) -> Path:
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def write_json(path: Path, obj: Any) -> Path:
    ensure_outdir(path.parent)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, rows: List[Dict[str, Any]], fieldnames: List[str]) -> None:
    ensure_outdir(path.parent)
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=fieldnames)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in fieldnames})


def _rows(table: Table) -> Tuple[List[str], List[Dict[str, Any]]]:
    if isinstance(table, pd.DataFrame):
        return [str(c) for c in table.columns], table.to_dict(orient="records")
    rows = list(table)
    headers: List[str] = []
    for r in rows:
        headers.extend(k for k in r if k not in headers)
    return headers, rows


def autosize(ws: "Worksheet", max_width: int = 60) -> None:
    for col in ws.columns:
        max_len = 0
        col_letter = get_column_letter(col[0].column)
        for cell in col:
            v = "" if cell.value is None else str(cell.value)
            max_len = max(max_len, max((len(line) for line in v.split("\n")), default=0))
        ws.column_dimensions[col_letter].width = min(max_width, max(10, max_len + 2))


def write_excel_report(xlsx_path: Path, overview: Sequence[Tuple[str, Any]], sheets: Dict[str, Table]) -> bool:
    """One Overview sheet of (metric, value) pairs, then one sheet per table. False if openpyxl is missing."""
    if not OPENPYXL_OK:
        return False
    wb = openpyxl.Workbook()
    wb.remove(wb.active)

    ws = wb.create_sheet(title="Overview")
    ws.append(["Metric", "Value"])
    for k, v in overview:
        ws.append([k, v])
    autosize(ws)

    for name, table in sheets.items():
        headers, rows = _rows(table)
        ws = wb.create_sheet(title=name[:31])
        ws.append(headers)
        for r in rows:
            ws.append([r.get(h, "") for h in headers])
        autosize(ws)

    ensure_outdir(xlsx_path.parent)
    wb.save(xlsx_path)
    return True
