import json
import os
import shutil
import stat
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from minibench import materialize  # noqa: E402

from decompbench.config import Toolchain  # noqa: E402
from decompbench.corpus import build_pairs, ingest_sources  # noqa: E402

SMALL_SET = ("array_sum", "gcd_euclid", "is_prime", "string_length")


def pytest_collection_modifyitems(config, items):
    if shutil.which("gcc") is None or shutil.which("objdump") is None:
        skip = pytest.mark.skip(reason="gcc/objdump not on PATH")
        for item in items:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def toolchain():
    return Toolchain()


@pytest.fixture(scope="session")
def minibench_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("minibench")
    materialize(root)
    return root


@pytest.fixture(scope="session")
def small_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    materialize(root, names=SMALL_SET)
    return root


@pytest.fixture(scope="session")
def small_sources(small_dir, toolchain):
    return ingest_sources(small_dir, "executable", toolchain)


@pytest.fixture(scope="session")
def small_pairs(small_sources, toolchain):
    return list(build_pairs(small_sources, ("O0", "O1", "O2", "O3"), "asm", toolchain))


@pytest.fixture
def bad_mix_dir(tmp_path):
    """Three valid functions plus one that does not compile."""
    root = tmp_path / "src"
    materialize(root, names=("array_sum", "gcd_euclid", "is_prime"))
    broken = root / "broken"
    broken.mkdir()
    (broken / "func.c").write_text("int broken(int x) { return y + ; }\n")
    (broken / "headers.h").write_text("#include <assert.h>\n")
    (broken / "driver.c").write_text("int main(void) { return 0; }\n")
    return root


# ---------------------------------------------------------------------------
# Fake Ghidra: a stand-in analyzeHeadless for exercising the driver logic
# ---------------------------------------------------------------------------

FAKE_HEADLESS = """#!/usr/bin/env python3
import os, sys, time

mode = os.environ.get("FAKE_GHIDRA_MODE", "ok")
args = sys.argv[1:]
i = args.index("-postScript")
symbol, outdir = args[i + 2], args[i + 3]
artifact = args[args.index("-import") + 1]
if mode == "sleep":
    time.sleep(30)
if mode == "fail":
    sys.stderr.write("fake ghidra: analysis exploded\\n")
    sys.exit(3)
if mode == "missing_symbol":
    sys.exit(0)
if not os.path.exists(artifact):
    sys.stderr.write("fake ghidra: no artifact\\n")
    sys.exit(4)
pseudo = (
    "undefined4 %s(void)\\n\\n{\\n  undefined4 uVar1;\\n  uVar1 = 0;\\n  return uVar1;\\n}\\n"
    % symbol
)
with open(os.path.join(outdir, symbol + ".decompiled.c"), "w") as fh:
    fh.write(pseudo)
"""


@pytest.fixture
def fake_ghidra_home(tmp_path, monkeypatch):
    home = tmp_path / "ghidra"
    support = home / "support"
    support.mkdir(parents=True)
    script = support / "analyzeHeadless"
    script.write_text(FAKE_HEADLESS)
    script.chmod(script.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    monkeypatch.setenv("GHIDRA_HOME", str(home))
    monkeypatch.delenv("FAKE_GHIDRA_MODE", raising=False)
    return home


# ---------------------------------------------------------------------------
# Mock completion endpoint
# ---------------------------------------------------------------------------

class MockLLM:
    """Scriptable OpenAI-style /completions endpoint.

    `script` is a queue of (status, payload) pairs; payload may be a dict,
    raw text, or a callable taking the request body. An empty queue echoes
    a default completion.
    """

    def __init__(self):
        self.requests = []
        self.script = []
        mock = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length) or b"{}")
                mock.requests.append({"path": self.path, "body": body})
                if mock.script:
                    status, payload = mock.script.pop(0)
                else:
                    status, payload = 200, {"choices": [{"text": "int f() { return 0; }"}]}
                if callable(payload):
                    payload = payload(body)
                if isinstance(payload, dict):
                    data = json.dumps(payload).encode()
                else:
                    data = str(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @staticmethod
    def completion(text, finish_reason="stop"):
        return {"choices": [{"text": text, "finish_reason": finish_reason}]}

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_llm():
    mock = MockLLM()
    yield mock
    mock.close()


# ---------------------------------------------------------------------------
# Fake obfuscating compilers
# ---------------------------------------------------------------------------

PASSTHROUGH_OBF_CC = """#!/usr/bin/env python3
# Accepts obfuscation pass flags, strips them, and calls gcc: an
# "obfuscator" that does not obfuscate, for exercising the pipeline.
import os, sys

args = sys.argv[1:]
out = []
skip = False
for a in args:
    if skip:
        skip = False
        continue
    if a == "-mllvm":
        skip = True
        continue
    out.append(a)
os.execvp("gcc", ["gcc"] + out)
"""

BREAKING_OBF_CC = """#!/usr/bin/env python3
# Produces binaries that fail their own assertions: every -o target is
# compiled from a constant exit-1 main. Exercises the semantic gate.
import os, subprocess, sys, tempfile

args = sys.argv[1:]
if "-o" not in args:
    sys.exit(1)
target = args[args.index("-o") + 1]
with tempfile.TemporaryDirectory() as d:
    src = os.path.join(d, "broken.c")
    with open(src, "w") as fh:
        fh.write("int main(void) { return 1; }\\n")
    sys.exit(subprocess.call(["gcc", src, "-o", target]))
"""


def _write_script(path, body):
    path.write_text(body)
    path.chmod(path.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
    return path


@pytest.fixture(scope="session")
def passthrough_obf_cc(tmp_path_factory):
    return _write_script(tmp_path_factory.mktemp("obfcc") / "fake-obf-cc", PASSTHROUGH_OBF_CC)


@pytest.fixture(scope="session")
def breaking_obf_cc(tmp_path_factory):
    return _write_script(tmp_path_factory.mktemp("obfcc") / "breaking-obf-cc", BREAKING_OBF_CC)
