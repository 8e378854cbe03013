"""Builds the extension, loads it as `stagefair` and runs a short pipeline.

Usage: python3 python/smoke_test.py  (from the repository root)
"""

import json
import pathlib
import random
import shutil
import subprocess
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def build():
    subprocess.run(
        ["cargo", "build", "-p", "stagefair-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    lib = ROOT / "target" / "debug" / "libstagefair_py.so"
    if not lib.exists():
        sys.exit(f"built library not found at {lib}")
    dest = pathlib.Path(tempfile.mkdtemp())
    shutil.copy(lib, dest / "stagefair.so")
    sys.path.insert(0, str(dest))


def main():
    build()
    import stagefair

    print("stagefair", stagefair.__version__)

    precision, unfairness = stagefair.logging_benchmark(20_000, seed=5)
    assert 0.6 < precision < 0.8, precision
    assert 0.0 <= unfairness < 0.2, unfairness

    policy = stagefair.train_synthetic(200, seed=1, time_limit=60.0)
    exported = json.loads(policy)
    assert len(exported["stages"]) == 2
    assert exported["report"]["strict"]["upper_ok"] == [True, True]

    report = json.loads(stagefair.evaluate_synthetic(policy, n_test=5_000, seed=2))
    assert 0.0 <= report["precision"] <= 1.0
    assert report["fractions_after"][1] <= 0.35 + 1e-12
    print("test precision", round(report["precision"], 4))

    rng = random.Random(3)
    xs = [[rng.gauss(0, 1)] for _ in range(4000)]
    ys = [rng.random() < 1 / (1 + 2.718281828 ** -(2 * x[0] - 1)) for x in xs]
    theta = stagefair.fit_logistic(xs, ys, l2=0.0)
    assert abs(theta[0] - 2) < 0.3 and abs(theta[1] + 1) < 0.3, theta

    try:
        stagefair.train_synthetic(50, eta=-1.0)
    except stagefair.StagefairError as e:
        print("rejected bad spec:", e)
    else:
        raise AssertionError("negative eta accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
