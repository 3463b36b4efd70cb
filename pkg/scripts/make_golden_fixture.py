"""Write the small golden container used to pin the on-disk format."""

import sys
from pathlib import Path

import numpy as np

from lucie3d.data import FieldContainer, VarInfo, write_container

VARIABLES = [
    VarInfo("T", 2, "prognostic"),
    VarInfo("TP", 1, "diagnostic"),
    VarInfo("co2", 1, "forcing"),
    VarInfo("land_sea_mask", 1, "static"),
]


def golden() -> FieldContainer:
    # exactly representable values: index arithmetic only
    t, c, i, j = np.meshgrid(np.arange(3), np.arange(5), np.arange(4), np.arange(8), indexing="ij")
    data = 1000.0 * t + 100.0 * c + 10.0 * i + j + 0.25
    return FieldContainer(4, 8, (0.25, 0.75), 86400, 21600, VARIABLES, data.astype(np.float64))


if __name__ == "__main__":
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parents[1] / "tests/fixtures/golden.luc3"
    write_container(out, golden())
    print(out)
