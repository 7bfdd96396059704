"""Smoke test for the `affine_bv_py` extension.

Build the library first:

    cargo build --release -p affine-bv-python --features extension-module

then run `python3 python/smoke_test.py`. The script copies the built shared
library into a temporary directory under the module's import name.
"""

import importlib
import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load_module():
    candidates = [
        os.environ.get("AFFINE_BV_PY_LIB", ""),
        os.path.join(ROOT, "target", "release", "libaffine_bv_py.so"),
        os.path.join(ROOT, "target", "debug", "libaffine_bv_py.so"),
        os.path.join(ROOT, "target", "release", "libaffine_bv_py.dylib"),
    ]
    lib = next((p for p in candidates if p and os.path.exists(p)), None)
    if lib is None:
        sys.exit("built library not found; run cargo build -p affine-bv-python --features extension-module")
    staging = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(staging, "affine_bv_py.so"))
    sys.path.insert(0, staging)
    return importlib.import_module("affine_bv_py")


def main():
    bv = load_module()

    c = bv.constants(2)
    assert abs(c["sharp_sobolev"] - 2.0 * math.sqrt(math.pi)) < 1e-14, c

    square = json.dumps({"shape": "square"})
    e = bv.indicator_energy(square, grid=128, dirs=256, backend="face-atoms")
    assert abs(e / c["alpha_n"] - 1.0) < 0.03, e

    report = json.loads(bv.minimize("cA", 1.0, square, grid=32, dirs=64, starts=2, max_iters=60))
    assert report["norm_residual"] < 1e-8, report["norm_residual"]
    assert report["level"] > 0.0

    verify = json.loads(bv.verify("superadditivity", grid=64, dirs=64, corpus=3))
    assert verify["passed"], verify

    try:
        bv.indicator_energy(json.dumps({"shape": "hexagon"}))
    except ValueError:
        pass
    else:
        raise AssertionError("unknown shape accepted")

    print(f"ok: E(square)={e:.6f} cA={report['level']:.6f}")


if __name__ == "__main__":
    main()
