"""Toolchain, sandbox-limit, and config-file handling."""

from __future__ import annotations

import json
import shutil
import subprocess
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from .errors import MissingTool

ENV_GHIDRA_HOME = "GHIDRA_HOME"
ENV_API_BASE = "LLM_API_BASE"
ENV_API_KEY = "LLM_API_KEY"
ENV_MODEL = "LLM_MODEL"

OPT_LEVELS = ("O0", "O1", "O2", "O3")

# Keys a JSON config file may define; flags override these, env is used
# only for secrets and tool homes (see README).
CONFIG_KEYS = (
    "compiler",
    "objdump",
    "ghidra_home",
    "llm_api_base",
    "llm_model",
    "max_input_tokens",
    "compile_timeout_s",
    "run_timeout_s",
    "memory_mb",
    "jobs",
)


@lru_cache(maxsize=None)
def tool_version(executable: str) -> str:
    """First line of `<executable> --version`, or '' when unavailable."""
    try:
        out = subprocess.run(
            [executable, "--version"], capture_output=True, text=True, timeout=15
        )
    except (OSError, subprocess.TimeoutExpired):
        return ""
    return out.stdout.splitlines()[0].strip() if out.stdout else ""


@dataclass(frozen=True)
class Toolchain:
    """Compiler/disassembler pair used for every build and eval step."""

    compiler: str = "gcc"
    objdump: str = "objdump"
    extra_compile_flags: tuple[str, ...] = ()
    # benchmark programs rely only on standard C libraries; libm needs an
    # explicit link flag with gcc
    extra_link_flags: tuple[str, ...] = ("-lm",)

    def require(self) -> None:
        for tool in (self.compiler, self.objdump):
            if shutil.which(tool) is None:
                raise MissingTool(tool, "expected on PATH or via --compiler/--objdump")

    def compiler_id(self) -> str:
        ident = tool_version(self.compiler)
        if not ident:
            raise MissingTool(self.compiler)
        return ident


@dataclass(frozen=True)
class Limits:
    """Sandbox limits for one eval case."""

    compile_timeout_s: float = 30.0
    run_timeout_s: float = 10.0
    memory_mb: int = 512


@dataclass
class RunConfig:
    """Merged config-file + flag settings carried through a CLI run."""

    toolchain: Toolchain = field(default_factory=Toolchain)
    limits: Limits = field(default_factory=Limits)
    jobs: int = 1


def load_config_file(path: str | Path) -> dict:
    """Load a JSON config file, rejecting unknown keys early."""
    data = json.loads(Path(path).read_text())
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    return data
