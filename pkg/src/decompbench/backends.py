"""Decompiler backends behind one interface.

Kinds:
  ghidra       traditional decompiler via the headless analyzer
  llm_end2end  completion endpoint fed normalized assembly
  llm_refine   Ghidra pseudo-code refined by a completion endpoint
  identity     returns the ground-truth source (harness 100% calibration)
  null         returns an empty candidate (harness 0% calibration)
"""

from __future__ import annotations

import logging
import os
import re
import subprocess
import tempfile
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .config import ENV_API_BASE, ENV_API_KEY, ENV_GHIDRA_HOME, ENV_MODEL
from .corpus import CompiledUnit, DecompPair
from .errors import (
    ApiError,
    BackendTimeout,
    KindMismatch,
    MissingTool,
    SymbolNotFound,
    ToolFailure,
    TransportError,
)
from .prompts import PromptRecord, render_end2end, render_refine

logger = logging.getLogger(__name__)

BACKEND_KINDS = ("ghidra", "llm_end2end", "llm_refine", "identity", "null")

GHIDRA_SCRIPT_DIR = Path(__file__).parent / "ghidra_scripts"
GHIDRA_SCRIPT = "export_decompiled.py"


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    ghidra_home: str = ""
    max_input_tokens: int = 8192
    request_timeout_s: float = 60.0
    max_retries: int = 3
    retry_base_delay_s: float = 0.5
    temperature: float = 0.0
    max_new_tokens: int = 2048
    ghidra_timeout_s: float = 120.0

    @classmethod
    def from_env(cls, **overrides) -> "BackendConfig":
        env = {
            "endpoint": os.environ.get(ENV_API_BASE, ""),
            "model": os.environ.get(ENV_MODEL, ""),
            "api_key": os.environ.get(ENV_API_KEY, ""),
            "ghidra_home": os.environ.get(ENV_GHIDRA_HOME, ""),
        }
        env.update(overrides)
        return cls(**env)


@dataclass(frozen=True)
class Backend:
    id: str
    kind: str
    config: BackendConfig = field(default_factory=BackendConfig)

    def __post_init__(self):
        if self.kind not in BACKEND_KINDS:
            raise ValueError(f"kind must be one of {BACKEND_KINDS}, got {self.kind!r}")
        if self.kind.startswith("llm_") and not (self.config.endpoint and self.config.model):
            raise MissingTool(
                f"{ENV_API_BASE}/{ENV_MODEL}",
                f"backend kind {self.kind} needs an endpoint and model",
            )


@dataclass(frozen=True)
class Candidate:
    source_id: str
    opt_level: str
    backend_id: str
    code: str
    latency_ms: int
    truncated: bool = False


# ---------------------------------------------------------------------------
# Ghidra headless
# ---------------------------------------------------------------------------

def _ghidra_headless(config: BackendConfig) -> Path:
    home = config.ghidra_home or os.environ.get(ENV_GHIDRA_HOME, "")
    if not home:
        raise MissingTool(ENV_GHIDRA_HOME, "set it to the Ghidra install directory")
    headless = Path(home) / "support" / "analyzeHeadless"
    if not headless.exists():
        raise MissingTool(str(headless))
    return headless


def ghidra_decompile(
    unit: CompiledUnit, symbol: str, config: BackendConfig | None = None
) -> str:
    """Decompile one function of `unit` and return its pseudo-code.

    Each job runs the headless analyzer in a private project directory; the
    bundled post-script writes `<symbol>.decompiled.c` into an export dir.
    """
    config = config or BackendConfig.from_env()
    headless = _ghidra_headless(config)
    with tempfile.TemporaryDirectory(prefix="ghidra-") as scratch:
        project_dir = Path(scratch) / "project"
        export_dir = Path(scratch) / "export"
        project_dir.mkdir()
        export_dir.mkdir()
        cmd = [
            str(headless), str(project_dir), "job",
            "-import", str(unit.artifact_path),
            "-scriptPath", str(GHIDRA_SCRIPT_DIR),
            "-postScript", GHIDRA_SCRIPT, symbol, str(export_dir),
            "-deleteProject",
        ]
        try:
            proc = subprocess.run(
                cmd, capture_output=True, text=True, timeout=config.ghidra_timeout_s
            )
        except subprocess.TimeoutExpired:
            raise BackendTimeout(
                f"ghidra exceeded {config.ghidra_timeout_s}s on {unit.source_id}"
            ) from None
        if proc.returncode != 0:
            raise ToolFailure(
                f"ghidra exited {proc.returncode} on {unit.source_id}",
                log=proc.stdout + proc.stderr,
            )
        out_file = export_dir / f"{symbol}.decompiled.c"
        if not out_file.exists():
            raise SymbolNotFound(symbol)
        return out_file.read_text()


# ---------------------------------------------------------------------------
# Completion endpoint
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Completion:
    text: str
    truncated: bool
    request_id: str


def llm_complete(
    prompt: PromptRecord,
    config: BackendConfig,
    temperature: float | None = None,
    max_new_tokens: int | None = None,
) -> Completion:
    """POST the prompt to an OpenAI-style completion endpoint.

    Temperature defaults to 0 (greedy). Transient transport errors and 5xx
    responses are retried with exponential backoff up to max_retries; 4xx
    responses are not retried.
    """
    if prompt.kind.endswith("_train") or prompt.loss_span is not None:
        raise KindMismatch(f"completion needs an inference prompt, got {prompt.kind}")
    request_id = uuid.uuid4().hex[:12]
    payload = {
        "model": config.model,
        "prompt": prompt.text,
        "temperature": config.temperature if temperature is None else temperature,
        "max_tokens": config.max_new_tokens if max_new_tokens is None else max_new_tokens,
    }
    headers = {"Content-Type": "application/json"}
    if config.api_key:
        headers["Authorization"] = f"Bearer {config.api_key}"
    url = config.endpoint.rstrip("/") + "/completions"

    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        if attempt:
            delay = config.retry_base_delay_s * 2 ** (attempt - 1)
            logger.info("[%s] retry %d after %.2fs", request_id, attempt, delay)
            time.sleep(delay)
        try:
            resp = requests.post(
                url, json=payload, headers=headers, timeout=config.request_timeout_s
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if 400 <= resp.status_code < 500:
            raise ApiError(
                f"[{request_id}] endpoint rejected request: {resp.status_code}",
                status_code=resp.status_code,
                body=resp.text[:2000],
            )
        if resp.status_code != 200:
            last_error = TransportError(f"HTTP {resp.status_code}")
            continue
        try:
            body = resp.json()
            choice = body["choices"][0]
            text = choice["text"]
        except (ValueError, KeyError, IndexError) as exc:
            raise ApiError(
                f"[{request_id}] malformed completion response: {exc}",
                body=resp.text[:2000],
            ) from None
        truncated = choice.get("finish_reason") == "length"
        logger.info(
            "[%s] completion ok after %d retries (%d chars%s)",
            request_id, attempt, len(text), ", truncated" if truncated else "",
        )
        return Completion(text=text, truncated=truncated, request_id=request_id)
    raise TransportError(
        f"[{request_id}] completion failed after {config.max_retries} retries: {last_error}"
    )


# ---------------------------------------------------------------------------
# Candidate post-processing and dispatch
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[A-Za-z0-9+_-]*\n(.*?)```", re.DOTALL)


def extract_code(completion: str) -> str:
    """Strip markdown code fences when present; never fabricates content."""
    m = _FENCE_RE.search(completion)
    if m:
        return m.group(1).strip()
    return completion.strip()


def decompile(
    backend: Backend,
    unit: CompiledUnit | None = None,
    pair: DecompPair | None = None,
    symbol: str = "",
) -> Candidate:
    """Produce one decompilation candidate for (unit, pair).

    ghidra-family backends need `unit` and `symbol`; LLM and oracle backends
    need `pair`. Errors propagate to the caller, which records them as
    backend failures.
    """
    if pair is not None and unit is not None and (
        pair.source_id != unit.source_id or pair.opt_level != unit.opt_level
    ):
        raise ValueError("pair and unit identify different samples")
    source_id = pair.source_id if pair is not None else unit.source_id
    opt_level = pair.opt_level if pair is not None else unit.opt_level

    start = time.perf_counter()
    truncated = False
    if backend.kind == "identity":
        code = pair.target_text
    elif backend.kind == "null":
        code = ""
    elif backend.kind == "ghidra":
        if unit is None or not symbol:
            raise ValueError("ghidra backend needs a compiled unit and symbol")
        code = ghidra_decompile(unit, symbol, backend.config)
    elif backend.kind == "llm_end2end":
        completion = llm_complete(render_end2end(pair, "infer"), backend.config)
        code = completion.text
        truncated = completion.truncated
    else:  # llm_refine
        if unit is None or not symbol:
            raise ValueError("llm_refine backend needs a compiled unit and symbol")
        pseudo = ghidra_decompile(unit, symbol, backend.config)
        completion = llm_complete(render_refine(pseudo, "infer"), backend.config)
        code = completion.text
        truncated = completion.truncated
    latency_ms = int((time.perf_counter() - start) * 1000)

    return Candidate(
        source_id=source_id,
        opt_level=opt_level,
        backend_id=backend.id,
        code=extract_code(code),
        latency_ms=latency_ms,
        truncated=truncated,
    )
