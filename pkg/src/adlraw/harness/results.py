"""Result records and their CSV/JSON emission."""

import csv
import json
import os
from dataclasses import dataclass

from ..errors import ContractViolation

CSV_HEADER = ["method", "target", "seed", "tadp_size", "psnr_db", "ssim", "accept_rate", "wall_s"]


@dataclass
class ResultRecord:
    method: str
    target: str
    seed: int
    tadp_size: int
    psnr_db: float
    ssim: float
    accept_rate: float | None  # None for methods without an accept/reject loop
    wall_s: float


def _fmt(x):
    return "" if x is None else f"{x:.4f}"


def emit_results(records, outdir):
    """Write results.csv and a lossless results.json mirror, rows ordered by
    (method, target, seed)."""
    if not records:
        raise ContractViolation("emit_results with no records")
    rows = sorted(records, key=lambda r: (r.method, r.target, r.seed))
    os.makedirs(outdir, exist_ok=True)
    csv_path = os.path.join(outdir, "results.csv")
    json_path = os.path.join(outdir, "results.json")
    try:
        with open(csv_path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for r in rows:
                w.writerow([r.method, r.target, r.seed, r.tadp_size,
                            _fmt(r.psnr_db), _fmt(r.ssim), _fmt(r.accept_rate), _fmt(r.wall_s)])
        with open(json_path, "w", encoding="utf-8") as f:
            json.dump([
                {
                    "method": r.method,
                    "target": r.target,
                    "seed": r.seed,
                    "tadp_size": r.tadp_size,
                    "psnr_db": _fmt(r.psnr_db),
                    "ssim": _fmt(r.ssim),
                    "accept_rate": _fmt(r.accept_rate),
                    "wall_s": _fmt(r.wall_s),
                }
                for r in rows
            ], f, indent=1)
            f.write("\n")
    except OSError as exc:
        raise IOError(f"cannot write results under {outdir}: {exc}") from exc
    return csv_path, json_path


def read_results_json(path):
    with open(path, encoding="utf-8") as f:
        data = json.load(f)
    out = []
    for d in data:
        out.append(ResultRecord(
            method=d["method"], target=d["target"], seed=int(d["seed"]),
            tadp_size=int(d["tadp_size"]), psnr_db=float(d["psnr_db"]),
            ssim=float(d["ssim"]),
            accept_rate=float(d["accept_rate"]) if d["accept_rate"] != "" else None,
            wall_s=float(d["wall_s"]),
        ))
    return out
