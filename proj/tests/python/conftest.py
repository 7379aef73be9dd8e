import os
import shutil
import subprocess
import time
from pathlib import Path

import pytest

SOURCE_DIR = Path(os.environ.get("LBS_SOURCE_DIR", Path(__file__).resolve().parents[2]))


def _cli_path():
    p = os.environ.get("LBS_CLI") or shutil.which("lbs") or str(SOURCE_DIR / "build" / "lbs")
    if not Path(p).exists():
        pytest.skip("lbs executable not found (set LBS_CLI)")
    return p


@pytest.fixture(scope="session")
def cli():
    exe = _cli_path()

    def run(*args, check=True):
        r = subprocess.run([exe, *map(str, args)], capture_output=True, text=True)
        if check and r.returncode != 0:
            raise AssertionError(f"lbs {' '.join(map(str, args))} exited {r.returncode}: {r.stderr}")
        return r

    return run


@pytest.fixture(scope="session")
def fixtures_dir():
    d = os.environ.get("LBS_FIXTURES")
    if not d or not (Path(d) / "constant.ckpt").exists():
        pytest.skip("constant fixture not built (set LBS_FIXTURES)")
    return Path(d)


@pytest.fixture(scope="session")
def smoke_run(cli, tmp_path_factory):
    """Synthetic series plus a checkpoint trained with the bundled smoke config."""
    d = tmp_path_factory.mktemp("smoke")
    data = d / "series.jsonl"
    cli("synth", "--out", data, "--steps", 500, "--seed", 1)
    ckpt = d / "model.ckpt"
    start = time.monotonic()
    r = cli("train", "--data", data, "--config", SOURCE_DIR / "configs" / "smoke.cfg", "--out", ckpt)
    return {"dir": d, "data": data, "ckpt": ckpt, "train": r, "seconds": time.monotonic() - start}
