"""Client for driving an external subprocess as a denoising model.

Transport: one JSON object per line over the child's stdin/stdout, UTF-8,
"\n" terminated. Requests carry a monotonically increasing id the response
must echo; there is no pipelining, one request is in flight at a time.

    -> {"id": 0, "kind": "hello"}
    <- {"id": 0, "kind": "hello_ack", "vocab_size": 8}
    -> {"id": 1, "kind": "predict", "tokens": [8, 0, 3]}
    <- {"id": 1, "kind": "dists", "dists": [[...], [...], [...]]}
    <- {"id": 1, "kind": "error", "message": "..."}   (failure case)

Masked positions are sent as the MASK id (= vocab_size). Each dists row
must have vocab_size nonnegative entries summing to 1 within RENORM_TOL;
rows inside the tolerance are renormalized, anything worse is rejected.
"""

from __future__ import annotations

import json
import queue
import shlex
import subprocess
import threading
from typing import Sequence

import numpy as np

from .core import MaskedSequence, PositionDistributions, VocabSpec
from .errors import ConfigError, ModelUnavailableError, ProtocolError
from .models import DenoisingModel

# Softmax outputs carry float error; beyond this the model is misbehaving.
RENORM_TOL = 1e-6

DEFAULT_TIMEOUT = 30.0


class ExternalModel(DenoisingModel):
    """Spawn a model-server command and use it as a DenoisingModel."""

    def __init__(self, command: str | Sequence[str], vocab: VocabSpec,
                 timeout: float = DEFAULT_TIMEOUT):
        super().__init__()
        self._vocab = vocab
        self.timeout = timeout
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, text=True, encoding="utf-8",
                bufsize=1)
        except OSError as err:
            raise ModelUnavailableError(f"cannot start {argv[0]!r}: {err}") from err
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 0
        self._io_lock = threading.Lock()
        self._handshake()

    @property
    def vocab(self) -> VocabSpec:
        return self._vocab

    def _pump(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(None)  # EOF sentinel

    def _roundtrip(self, request: dict) -> dict:
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as err:
            raise ModelUnavailableError(f"model process is gone: {err}") from err
        try:
            line = self._lines.get(timeout=self.timeout)
        except queue.Empty:
            raise ModelUnavailableError(
                f"no response within {self.timeout}s for request {request['id']}")
        if line is None:
            raise ModelUnavailableError("model process closed its output stream")
        try:
            response = json.loads(line)
        except json.JSONDecodeError as err:
            raise ProtocolError(f"response is not valid JSON: {err}") from err
        if not isinstance(response, dict):
            raise ProtocolError("response must be a JSON object")
        if response.get("id") != request["id"]:
            raise ProtocolError(
                f"response id {response.get('id')!r} does not echo "
                f"request id {request['id']}")
        if response.get("kind") == "error":
            raise ProtocolError(f"model error: {response.get('message')!r}")
        return response

    def _handshake(self) -> None:
        with self._io_lock:
            request = {"id": self._next_id, "kind": "hello"}
            self._next_id += 1
            response = self._roundtrip(request)
        if response.get("kind") != "hello_ack":
            raise ProtocolError(f"expected hello_ack, got {response.get('kind')!r}")
        declared = response.get("vocab_size")
        if declared != self._vocab.size:
            raise ConfigError(
                f"model declares vocab_size {declared!r}, run expects "
                f"{self._vocab.size}")

    def _predict(self, seq: MaskedSequence) -> PositionDistributions:
        with self._io_lock:
            request = {"id": self._next_id, "kind": "predict",
                       "tokens": list(seq.tokens)}
            self._next_id += 1
            response = self._roundtrip(request)
        if response.get("kind") != "dists":
            raise ProtocolError(f"expected dists, got {response.get('kind')!r}")
        dists = response.get("dists")
        if not isinstance(dists, list) or len(dists) != len(seq):
            raise ProtocolError(
                f"expected {len(seq)} distribution rows, got "
                f"{len(dists) if isinstance(dists, list) else type(dists).__name__}")
        rows = np.empty((len(seq), self._vocab.size), dtype=np.float64)
        for i, row in enumerate(dists):
            if not isinstance(row, list) or len(row) != self._vocab.size:
                raise ProtocolError(f"position {i}: row must have "
                                    f"{self._vocab.size} entries")
            arr = np.asarray(row, dtype=np.float64)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ProtocolError(f"position {i}: invalid probabilities")
            total = float(arr.sum())
            if abs(total - 1.0) > RENORM_TOL:
                raise ProtocolError(
                    f"position {i}: probabilities sum to {total!r}, not 1")
            rows[i] = arr / total
        return PositionDistributions(rows)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "ExternalModel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
