"""Run records and table files.

A run writes the table as CSV in wide layout (one row per design and
basis pair, one column per ``K`` rule x ``sigma_bar`` x statistic) and a JSON
sidecar holding the configuration, its hash, the seed and the long-form rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    kind: str
    config: dict
    rows: list[dict]
    seed: int
    config_hash: str = ""
    created: str | None = None
    version: str = ""
    extra: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        # store JSON-native values (tuples become lists) so a save/load round trip is lossless
        self.config = json.loads(json.dumps(self.config))
        self.rows = json.loads(json.dumps(self.rows))
        self.extra = json.loads(json.dumps(self.extra))
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunRecord:
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> RunRecord:
        return cls.from_json(Path(path).read_text())


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _wide(rows: Sequence[dict], stats: Sequence[str], column_keys: Sequence[str]) -> tuple[list[str], list[list[str]]]:
    """Pivot long rows into one line per ``(design, r_J, r_K)``."""
    lines: dict[tuple, dict[str, str]] = {}
    header_tail: list[str] = []
    for row in rows:
        key = (row["design"], row["n"], row["r_J"], row["r_K"])
        prefix = " ".join(f"{k}={_fmt(row[k]) if k != 'sigma_bar' else format(row[k], 'g')}" for k in column_keys)
        for s in stats:
            col = f"{prefix} {s}".strip()
            if col not in header_tail:
                header_tail.append(col)
            lines.setdefault(key, {})[col] = _fmt(row[s])
    header = ["design", "n", "r_J", "r_K", *header_tail]
    body = [[str(k) for k in key] + [vals.get(c, "") for c in header_tail] for key, vals in lines.items()]
    return header, body


def write_csv(path: str | Path, header: Sequence[str], body: Sequence[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(header)
        wr.writerows(body)


def write_lepski_tables(rows: Sequence[dict], out_dir: str | Path, stem: str = "lepski") -> list[Path]:
    """``<stem>_ratios.csv`` (sup and L2 ratios) and ``<stem>_errors.csv`` (sup and L2 errors)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for suffix, stats in (("ratios", ("sup_ratio", "l2_ratio")), ("errors", ("sup_err", "l2_err"))):
        header, body = _wide(rows, stats, ("K_rule", "sigma_bar"))
        p = out / f"{stem}_{suffix}.csv"
        write_csv(p, header, body)
        paths.append(p)
    return paths


def write_coverage_table(rows: Sequence[dict], out_dir: str | Path, stem: str = "coverage") -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats = [k for k in rows[0] if k.startswith("cov_")] if rows else []
    header, body = _wide(rows, stats, ("K_rule",))
    p = out / f"{stem}.csv"
    write_csv(p, header, body)
    return p
