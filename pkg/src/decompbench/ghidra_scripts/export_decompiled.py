# Ghidra headless post-script: decompile one named function and write its
# pseudo-code to <output_dir>/<symbol>.decompiled.c.
#
# Usage (as analyzeHeadless arguments):
#   -postScript export_decompiled.py <symbol> <output_dir>
#
# Runs under Ghidra's bundled Jython; not importable as part of the package.

import os

from ghidra.app.decompiler import DecompInterface
from ghidra.util.task import ConsoleTaskMonitor

DECOMPILE_TIMEOUT_S = 60


def export():
    args = getScriptArgs()  # noqa: F821 - injected by Ghidra
    if len(args) != 2:
        raise RuntimeError("expected args: <symbol> <output_dir>")
    symbol, out_dir = args[0], args[1]

    program = currentProgram  # noqa: F821 - injected by Ghidra
    target = None
    for fn in program.getFunctionManager().getFunctions(True):
        if fn.getName() == symbol:
            target = fn
            break
    if target is None:
        return

    ifc = DecompInterface()
    ifc.openProgram(program)
    result = ifc.decompileFunction(target, DECOMPILE_TIMEOUT_S, ConsoleTaskMonitor())
    if not result.decompileCompleted():
        return
    code = result.getDecompiledFunction().getC()

    out_path = os.path.join(out_dir, symbol + ".decompiled.c")
    handle = open(out_path, "w")
    try:
        handle.write(code)
    finally:
        handle.close()


export()
