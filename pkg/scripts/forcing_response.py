"""Train on a synthetic CO2 ramp and compare emulated trends with the generator's."""

import argparse
import dataclasses
import logging

from lucie3d.study import StudyConfig, run_study


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="forcing_response")
    for f in dataclasses.fields(StudyConfig):
        p.add_argument("--" + f.name.replace("_", "-"), type=type(f.default), default=f.default)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = StudyConfig(**{f.name: getattr(a, f.name) for f in dataclasses.fields(StudyConfig)})
    res = run_study(cfg, a.out)
    print(res.summary())
    for k, v in res.seconds.items():
        print(f"{k}: {v:.0f} s")


if __name__ == "__main__":
    main()
