"""Line-delimited protocol for scoring candidates with an external process.

Request, one line per candidate::

    <request_id>\t<item_id_vec0>\t<item_id_vec1>...\t<features_csv_vec0>\t<features_csv_vec1>...\n

Response, one line per request, any order::

    <request_id>\t<score>\n

The scorer is launched once per batch, reads requests until EOF, and must
answer every request before exiting.
"""

from __future__ import annotations

import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from typing import Sequence

import numpy as np

from salsa.oracle import Objective, OracleError
from salsa.space import ProductSpace


class ScorerError(OracleError):
    pass


class ScorerTimeout(ScorerError):
    pass


class MalformedResponse(ScorerError):
    pass


class CountMismatch(ScorerError):
    pass


def format_request(request_id: int, item_ids: Sequence[str], features: Sequence[np.ndarray]) -> str:
    csvs = [",".join(repr(float(x)) for x in f) for f in features]
    return "\t".join([str(request_id), *item_ids, *csvs]) + "\n"


def parse_request(line: str, n_vectors: int) -> tuple[int, list[str], list[np.ndarray]]:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 1 + 2 * n_vectors:
        raise MalformedResponse(f"request has {len(parts)} fields, expected {1 + 2 * n_vectors}")
    ids = parts[1 : 1 + n_vectors]
    feats = [np.array([float(x) for x in p.split(",")]) if p else np.zeros(0) for p in parts[1 + n_vectors :]]
    return int(parts[0]), ids, feats


def parse_response(text: str, n_requests: int) -> list[float]:
    scores: dict[int, float] = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    for ln in lines:
        parts = ln.split("\t")
        if len(parts) != 2:
            raise MalformedResponse(f"response line {ln!r} does not have 2 tab-separated fields")
        try:
            rid, score = int(parts[0]), float(parts[1])
        except ValueError:
            raise MalformedResponse(f"unparseable response line {ln!r}") from None
        if not math.isfinite(score):
            raise MalformedResponse(f"non-finite score in {ln!r}")
        if not 0 <= rid < n_requests:
            raise MalformedResponse(f"unknown request id {rid}")
        if rid in scores:
            raise MalformedResponse(f"request id {rid} answered twice")
        scores[rid] = score
    if len(scores) != n_requests:
        raise CountMismatch(f"scorer answered {len(scores)} of {n_requests} requests")
    return [scores[i] for i in range(n_requests)]


def external_score_batch(cmd: str | Sequence[str], space: ProductSpace, index_rows: np.ndarray,
                         timeout: float = 600.0) -> list[float]:
    """Score ``index_rows`` with one invocation of ``cmd``; output follows input order."""
    argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
    index_rows = np.asarray(index_rows, dtype=np.int64).reshape(-1, space.n_vectors)
    if len(index_rows) == 0:
        return []
    payload = []
    for rid, row in enumerate(index_rows):
        ids = [s.item_ids[i] for s, i in zip(space.sets, row)]
        feats = [s.features[i] for s, i in zip(space.sets, row)]
        payload.append(format_request(rid, ids, feats))
    try:
        proc = subprocess.run(argv, input="".join(payload), capture_output=True, text=True, timeout=timeout)
    except subprocess.TimeoutExpired:
        raise ScorerTimeout(f"scorer {argv[0]!r} did not finish within {timeout}s") from None
    except OSError as exc:
        raise ScorerError(f"cannot launch scorer {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        raise ScorerError(f"scorer exited with code {proc.returncode}: {proc.stderr.strip()[:500]}")
    return parse_response(proc.stdout, len(index_rows))


class ExternalScorer(Objective):
    """Objective backed by an external scorer process.

    With ``workers > 1`` a batch is split into contiguous chunks scored by
    concurrent processes; results are stitched back in input order.
    """

    descriptor = "external"

    def __init__(self, space: ProductSpace, cmd: str | Sequence[str], timeout: float = 600.0, workers: int = 1):
        super().__init__()
        self.space = space
        self.cmd = cmd
        self.timeout = timeout
        self.workers = max(1, int(workers))

    def evaluate(self, index_rows):
        index_rows = np.asarray(index_rows, dtype=np.int64)
        if self.workers == 1 or len(index_rows) < 2 * self.workers:
            return np.asarray(external_score_batch(self.cmd, self.space, index_rows, self.timeout))
        chunks = np.array_split(index_rows, self.workers)
        with ThreadPoolExecutor(self.workers) as pool:
            parts = list(pool.map(lambda c: external_score_batch(self.cmd, self.space, c, self.timeout), chunks))
        return np.concatenate([np.asarray(p) for p in parts])
