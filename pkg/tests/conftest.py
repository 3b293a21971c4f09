import sys
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

ROOT_DIR = Path(__file__).parent.parent
sys.path.insert(0, str(ROOT_DIR))

from src.transport.transmission import TransmissionCurve  # noqa: E402
from src.waveguide.geometry import WaveguideGeometry  # noqa: E402

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def single_mode():
    return WaveguideGeometry(4.0, 2.0)


@pytest.fixture
def multimode():
    return WaveguideGeometry(8.0, 8.0)


def make_curve(lengths, t_mean, stderr=None, geomean=None, log_stderr=None, n=10) -> TransmissionCurve:
    lengths = np.asarray(lengths, dtype=float)
    t_mean = np.asarray(t_mean, dtype=float)
    columns = {
        "L": lengths,
        "T_mean": t_mean,
        "T_stderr": np.zeros_like(t_mean) if stderr is None else np.asarray(stderr, dtype=float),
        "T_geomean": t_mean if geomean is None else np.asarray(geomean, dtype=float),
        "n_realizations": n,
        "n_failed": 0,
        "failed": False,
    }
    if log_stderr is not None:
        columns["lnT_stderr"] = np.asarray(log_stderr, dtype=float)
    return TransmissionCurve(pd.DataFrame(columns))
