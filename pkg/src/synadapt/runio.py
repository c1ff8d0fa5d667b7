"""Run-directory I/O: append-only JSONL metric streams and versioned
checkpoint containers.

Metric streams start with a header record carrying a magic tag and format
version; records serialize with sorted keys so identical runs produce
byte-identical files. Checkpoints are .npz containers with a JSON metadata
entry (magic, version, stage, full config echo) plus one array per named
parameter leaf.
"""

from __future__ import annotations

import json
import os

import numpy as np

METRICS_MAGIC = "synadapt-metrics"
CKPT_MAGIC = "synadapt-ckpt"
FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class MetricsWriter:
    """Append-only line-delimited metric records."""

    def __init__(self, path: str, stage: str):
        self.path = path
        new = not os.path.exists(path)
        self._f = open(path, "a")
        if new:
            self._write({"magic": METRICS_MAGIC, "version": FORMAT_VERSION,
                         "stage": stage})

    def _write(self, record: dict) -> None:
        self._f.write(json.dumps(record, sort_keys=True) + "\n")
        self._f.flush()

    def write(self, record: dict) -> None:
        self._write({k: (float(v) if isinstance(v, (np.floating, np.integer)) else v)
                     for k, v in record.items()})

    def close(self) -> None:
        self._f.close()


def read_metrics(path: str):
    """Returns (header, records). Raises on a missing/foreign stream."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    if not lines or lines[0].get("magic") != METRICS_MAGIC:
        raise ValueError(f"{path} is not a metrics stream")
    return lines[0], lines[1:]


def save_checkpoint(path: str, stage: str, params: dict, meta: dict = None) -> None:
    payload = {"magic": CKPT_MAGIC, "version": FORMAT_VERSION, "stage": stage,
               "meta": meta or {}}
    arrays = {f"param/{k}": np.asarray(v) for k, v in params.items()}
    np.savez(path, __meta__=np.array(json.dumps(payload, sort_keys=True)),
             **arrays)


def load_checkpoint(path: str):
    """Returns (stage, params, meta); raises CheckpointError naming the file."""
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        data = np.load(path, allow_pickle=False)
        payload = json.loads(str(data["__meta__"]))
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if payload.get("magic") != CKPT_MAGIC:
        raise CheckpointError(f"corrupt checkpoint {path}: bad magic")
    if payload.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version in {path}: {payload.get('version')}")
    params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
    return payload["stage"], params, payload.get("meta", {})
