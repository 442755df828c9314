from __future__ import annotations

import csv
import json
import os
from pathlib import Path
from typing import Any, List

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from zoh.bench import read_summary
from zoh.errors import ConfigError

APP = FastAPI(title="zoh results API")

RESULTS_ENV = "ZOH_RESULTS_DIR"
DEFAULT_RESULTS = Path(__file__).resolve().parents[1] / "out"


def results_dir() -> Path:
    value = os.environ.get(RESULTS_ENV)
    return Path(value) if value else DEFAULT_RESULTS


@APP.get("/api/summary")
def get_summary() -> Any:
    """Return the rows of summary.csv. Never starts a run."""
    path = results_dir() / "summary.csv"
    if not path.exists():
        raise HTTPException(status_code=503, detail="Results not available: summary.csv missing")
    try:
        header, rows = read_summary(path)
    except (ConfigError, UnicodeDecodeError, csv.Error) as e:
        raise HTTPException(status_code=502, detail=f"Results corrupted: {e}")
    return JSONResponse(content={"header": header, "rows": rows})


@APP.get("/api/diagnostics")
def get_diagnostics() -> Any:
    """Return every emitted bound report."""
    folder = results_dir() / "diagnostics"
    if not folder.is_dir():
        raise HTTPException(status_code=503, detail="Results not available: diagnostics/ missing")
    reports: List[Any] = []
    for path in sorted(folder.glob("report_*.json")):
        try:
            with path.open("r", encoding="utf-8") as f:
                report = json.load(f)
        except json.JSONDecodeError:
            raise HTTPException(status_code=502, detail=f"Results corrupted: invalid JSON in {path.name}")
        if not isinstance(report, dict) or "checks" not in report:
            raise HTTPException(status_code=502, detail=f"Results corrupted: {path.name} is not a bound report")
        reports.append(report)
    return JSONResponse(content=reports)


if __name__ == "__main__":
    # Simple dev runner
    import uvicorn

    uvicorn.run(APP, host="127.0.0.1", port=8000)
