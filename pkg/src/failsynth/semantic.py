"""Semantic-verifier and judge clients: mock, subprocess pipe, and HTTP.

Wire protocol (shared by the semantic verifier and the eval judge): one
JSON object per line in, one JSON object per line out. Semantic requests are
{"instruction", "reference_clip_ref", "candidate_clip_ref"} and responses
are {"valid_failure": bool, "visual_ok": bool, "rationale": str}.

Transport failures raise TransportError; callers quarantine the affected
rollout instead of counting it as rejected.
"""

from __future__ import annotations

import json
import subprocess
import threading
from typing import Optional

from .errors import TransportError

DEFAULT_VISUAL_FLOORS = {
    "jitter_px": 0.5,
    "flicker_rate": 0.05,
    "topo_warp": 0.02,
    "affine_jitter": 0.02,
    "joint_spike": 0.05,
}


def mock_judgment(request: dict, floors: Optional[dict] = None) -> dict:
    """Ground-truth judgment rule shared by the in-process and pipe mocks."""
    floors = dict(DEFAULT_VISUAL_FLOORS, **(floors or {}))
    cand = request.get("candidate_clip_ref") or {}
    valid_failure = cand.get("outcome") == "fail"
    artifacts = cand.get("artifacts") or {}
    offending = [k for k, v in artifacts.items()
                 if k in floors and v >= floors[k]]
    visual_ok = not offending
    rationale = ("clean clip" if visual_ok
                 else "artifact floor exceeded: " + ", ".join(sorted(offending)))
    return {"valid_failure": bool(valid_failure), "visual_ok": bool(visual_ok),
            "rationale": rationale}


class MockSemanticVerifier:
    """Answers from simulator ground truth carried in the clip descriptors."""

    def __init__(self, floors: Optional[dict] = None):
        self.floors = floors

    def judge(self, request: dict) -> dict:
        return mock_judgment(request, self.floors)


class PipeClient:
    """Line-delimited JSON over a subprocess pipe.

    Bounds concurrent use with a lock; the judge process is expected to
    answer one line per request line.
    """

    def __init__(self, cmd: list[str]):
        try:
            self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE,
                                         stdout=subprocess.PIPE, text=True)
        except OSError as exc:
            raise TransportError(f"cannot start judge process: {exc}") from exc
        self._lock = threading.Lock()

    def judge(self, request: dict) -> dict:
        with self._lock:
            try:
                self.proc.stdin.write(json.dumps(request) + "\n")
                self.proc.stdin.flush()
                line = self.proc.stdout.readline()
            except (OSError, ValueError, BrokenPipeError) as exc:
                raise TransportError(f"judge pipe failed: {exc}") from exc
        if not line:
            raise TransportError("judge process closed the pipe")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise TransportError(f"judge sent invalid JSON: {line!r}") from exc

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            self.proc.wait(timeout=5)


class HttpClient:
    """POSTs each request as JSON to a fixed endpoint."""

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def judge(self, request: dict) -> dict:
        import urllib.error
        import urllib.request
        data = json.dumps(request).encode()
        req = urllib.request.Request(self.url, data=data,
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"judge endpoint failed: {exc}") from exc


def client_from_endpoint(endpoint: str, floors: Optional[dict] = None):
    """Build a client from a config endpoint string.

    "mock" -> in-process ground-truth mock; "pipe:<cmd>" -> subprocess;
    "http:<url>" / "https:<url>" -> HTTP endpoint.
    """
    if endpoint == "mock":
        return MockSemanticVerifier(floors)
    if endpoint.startswith("pipe:"):
        return PipeClient(endpoint[5:].split())
    if endpoint.startswith(("http:", "https:")):
        return HttpClient(endpoint)
    raise ValueError(f"unknown endpoint spec {endpoint!r}")
