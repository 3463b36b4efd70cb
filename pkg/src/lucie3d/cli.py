"""Command-line driver: ``lucie3d {synth,stats,train,rollout,diag,experiment}``.

Any subcommand accepts ``--config FILE`` with flat ``key = value`` lines whose
keys are flag names (dashes or underscores). Flags given on the command line
win over the file. Exit status is 0 on success, 1 on errors, 2 on bad
arguments and 3 when a run completed but flagged a problem.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics as dg
from . import experiments, sfno
from .data import NormStats, compute_norm_stats, read_container
from .grid import build_grid
from .rollout import (
    RolloutConfig,
    co2_series_from_container,
    forcings_from_container,
    initial_state,
    run_rollout,
)

log = logging.getLogger("lucie3d")

EXIT_ERROR, EXIT_USAGE, EXIT_FLAGGED = 1, 2, 3
DIAG_KINDS = ("clim", "change", "trend", "wk", "eof", "ssw", "pdf")


class FlaggedRun(Exception):
    """The command finished but reported problems."""


def read_config_file(path) -> dict[str, str]:
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"{path}:{n}: expected key = value")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Install file values as parser defaults so explicit flags still override them."""
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in values.items():
        a = actions.get(key)
        if a is None or key in ("help", "config"):
            sub.error(f"unknown config key {key!r}")
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = _bool(value)
        else:
            try:
                defaults[key] = a.type(value) if a.type else value
            except (TypeError, ValueError):
                sub.error(f"bad value for config key {key!r}: {value!r}")
            if a.choices is not None and defaults[key] not in a.choices:
                sub.error(f"config key {key!r} must be one of {list(a.choices)}")
    sub.set_defaults(**defaults)


# ---------------------------------------------------------------- subcommands


def cmd_synth(a) -> None:
    from .synth import SynthConfig, generate_synthetic_climate

    cfg = SynthConfig(seed=a.seed, years=a.years, co2_start=a.co2_start, co2_end=a.co2_end,
                      forcing_sensitivity=a.sensitivity, noise_amplitude=a.noise, include_sst=not a.no_sst)
    grid = build_grid(a.truncation)
    c = generate_synthetic_climate(cfg, grid, a.out)
    print(f"wrote {a.out}: {c.t_count} steps on {grid}")


def cmd_stats(a) -> None:
    stats = compute_norm_stats(read_container(a.data, mmap=True))
    stats.save(a.out)
    if stats.degenerate:
        log.warning("degenerate channels: %s", ", ".join(stats.degenerate))
    print(f"wrote {a.out}")


def cmd_train(a) -> None:
    from . import train as tr

    c = read_container(a.data, mmap=True)
    stats = NormStats.load(a.stats) if a.stats else compute_norm_stats(c)
    grid = build_grid(a.truncation, c.nlat, c.nlon, c.sigma_levels)
    mc = sfno.ModelConfig(num_blocks=a.blocks, latent_dim=a.latent, truncation=a.truncation,
                          nlevels=len(c.sigma_levels), use_sst=a.use_sst)
    tc = tr.TrainConfig(total_epochs=a.epochs, finetune_epochs=a.finetune_epochs, batch_size=a.batch_size,
                        lr_max=a.lr_max, lr_min=a.lr_min, weight_decay=a.weight_decay, seed=a.seed,
                        val_fraction=a.val_fraction, adaptive_weights=not a.no_adaptive,
                        samples_per_epoch=a.samples_per_epoch, sample_stride=a.sample_stride)
    data = tr.TrainingData(c, stats, mc.layout, tc.val_fraction, tc.sample_stride)
    res = tr.train(data, tc, mc, grid, sfno.init_params(mc, a.seed), log=print if a.verbose else None)
    sfno.save_checkpoint(a.out, sfno.Checkpoint(mc, res.params, stats, grid, {"seed": a.seed}))
    if a.history:
        Path(a.history).write_text(res.history_text())
    print(f"wrote {a.out}")
    errors = [f for f in res.flags if "excluded" not in f]
    for f in res.flags:
        log.warning("%s", f)
    if errors:
        raise FlaggedRun(f"{len(errors)} training flags")


def parse_co2(s: str) -> tuple[str, int | None]:
    if s == "observed":
        return "observed", None
    head, _, year = s.partition(":")
    if head == "stationary" and year.lstrip("-").isdigit():
        return "stationary", int(year)
    raise argparse.ArgumentTypeError("expected observed or stationary:YEAR")


def parse_sst(s: str) -> tuple[str, float]:
    if s in ("none", "observed"):
        return s, 0.0
    head, _, k = s.partition(":")
    if head in ("biased", "smoothed"):
        try:
            return head, float(k)
        except ValueError:
            pass
    raise argparse.ArgumentTypeError("expected none, observed, biased:K or smoothed:K")


def parse_init(s: str) -> tuple[str, int]:
    head, _, idx = s.partition(":")
    if head not in ("state", "climatology", "zero") or (idx and not idx.isdigit()):
        raise argparse.ArgumentTypeError("expected state[:INDEX], climatology or zero")
    return head, int(idx or 0)


def cmd_rollout(a) -> None:
    ckpt = sfno.load_checkpoint(a.checkpoint)
    c = read_container(a.data, mmap=True)
    co2_mode, co2_year = a.co2
    sst_mode, delta = a.sst
    init_mode, index = a.init
    horizon = a.horizon if a.horizon is not None else c.t_count - 1 - index
    rc = RolloutConfig(horizon=horizon, co2_mode=co2_mode, co2_year=co2_year, sst_mode=sst_mode, sst_delta=delta,
                       init_mode=init_mode, init_index=index, stride=a.stride)
    forcings = forcings_from_container(c, ckpt.grid, rc, co2=co2_series_from_container(c))
    traj = run_rollout(ckpt, initial_state(c, ckpt.layout, rc), forcings, rc, a.out)
    print(f"wrote {a.out}: {traj.t_count} records")


def _container_grid(c):
    lats, _ = dg.gaussian_lats(c.nlat)
    return lats


def cmd_diag(a) -> None:
    model = read_container(a.model, mmap=True)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    lats = _container_grid(model)
    spd = max(1, 86400 // model.t_step)
    surface = f"T_{len(model.sigma_levels) - 1}"
    var = a.variable
    flags: list[str] = []
    if a.kind == "clim":
        if not a.reference:
            raise ValueError("clim needs --reference")
        maps = dg.climatology_bias(model, read_container(a.reference, mmap=True), tuple((var or "T,U,SH").split(",")))
        dg.write_zonal_maps(out / "clim_bias.luc3", maps, model.sigma_levels, model.nlat)
    elif a.kind == "change":
        half = model.t_count // 2
        maps = {v: dg.climate_change_map(model, v, (0, half), (half, 2 * half)) for v in (var or "T,U").split(",")}
        dg.write_zonal_maps(out / "change.luc3", maps, model.sigma_levels, model.nlat)
    elif a.kind == "trend":
        rows = experiments.trend_rows(model, (var or f"{surface},T_0").split(","))
        dg.write_table(out / "trend.txt", "trend", ["channel", "slope_per_decade", "intercept", "residual_var", "n"],
                       rows, {"source": Path(a.model).name})
    elif a.kind == "wk":
        spec = dg.wheeler_kiladis(np.asarray(model.channel(var or "U_7")), lats, spd)
        rows = [[int(k), float(f), spec.symmetric[i, j], spec.antisymmetric[i, j],
                 spec.background[i, j] if spec.background is not None else float("nan")]
                for i, k in enumerate(spec.wavenumbers) for j, f in enumerate(spec.frequencies)]
        dg.write_table(out / "wk.txt", "wk", ["k", "freq_cpd", "symmetric", "antisymmetric", "background"], rows,
                       {"segments": spec.n_segments, "segment_days": spec.segment_days,
                        "overlap_days": spec.overlap_days, "lat_band": spec.lat_band})
    elif a.kind == "eof":
        for hemi in ("north", "south"):
            res = dg.leading_eof(np.asarray(model.channel(var or "logP")), model.times(), lats, hemi)
            rows = [[float(la), *map(float, row)] for la, row in zip(res.lats, res.pattern)]
            dg.write_table(out / f"eof_{hemi}.txt", "eof", ["lat", *(f"lon{i}" for i in range(model.nlon))], rows,
                           {"explained": repr(res.explained), "degenerate": res.degenerate, "seasons": res.seasons})
            if res.degenerate:
                flags.append(f"degenerate leading EOF pair ({hemi})")
    elif a.kind == "ssw":
        res = dg.ssw_diagnostics(np.asarray(model.channel("U_0")), np.asarray(model.channel("T_0")), model.times(),
                                 lats, spd)
        dg.write_table(out / "ssw_events.txt", "ssw", ["onset_day", "duration_days", "peak_t_anomaly"],
                       [[e.onset, e.duration, e.peak_temperature_anomaly] for e in res.events],
                       {"flags": ",".join(res.flags) or "none"})
    elif a.kind == "pdf":
        ch = var or surface
        field = np.asarray(model.channel(ch))
        edges = np.linspace(field.min(), field.max(), a.bins + 1) if field.max() > field.min() else \
            np.array([field.min() - 0.5, field.min() + 0.5])
        if a.reference:
            ref = np.asarray(read_container(a.reference, mmap=True).channel(ch))
            lo, hi = min(field.min(), ref.min()), max(field.max(), ref.max())
            edges = np.linspace(lo, hi, a.bins + 1)
        res = dg.field_log_pdf(field, edges)
        dg.write_table(out / "pdf.txt", "pdf", ["lower", "upper", "log10_density"],
                       [[lo, hi, d] for lo, hi, d in zip(edges[:-1], edges[1:], res.log_density)],
                       {"channel": ch, "flags": ",".join(res.flags) or "none"})
        flags += list(res.flags)
    print(f"wrote {a.kind} diagnostics to {out}")
    if flags:
        raise FlaggedRun("; ".join(flags))


def cmd_experiment(a) -> None:
    if a.preset not in experiments.PRESETS:
        raise experiments.ExperimentError(
            f"unknown preset {a.preset!r}; choose from {', '.join(sorted(experiments.PRESETS))}")
    ckpt = sfno.load_checkpoint(a.checkpoint)
    data = read_container(a.data, mmap=True)
    path = experiments.run_experiment(a.preset, ckpt, data, a.out, a.horizon, a.stride)
    print(f"wrote {path}")


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lucie3d", description="Desk-scale spectral climate emulator pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value file; command-line flags win")
        sp.add_argument("--seed", type=int, default=0, help="seed for every random choice (default 0)")
        sp.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS,
                        help="log progress to stderr")
        return sp

    s = common(sub.add_parser("synth", help="generate a synthetic training dataset"))
    s.add_argument("--out", required=True, help="output container path")
    s.add_argument("--years", type=int, default=1, help="synthetic 360-day years to generate")
    s.add_argument("--truncation", type=int, default=15, help="spectral truncation of the grid")
    s.add_argument("--co2-start", type=float, default=340.0, help="CO2 at the start of the ramp (ppm)")
    s.add_argument("--co2-end", type=float, default=400.0, help="CO2 at the end of the ramp (ppm)")
    s.add_argument("--sensitivity", type=float, default=0.01, help="surface warming per ppm (K)")
    s.add_argument("--noise", type=float, default=0.3, help="weather-noise amplitude multiplier")
    s.add_argument("--no-sst", action="store_true", help="omit the SST channel")
    s.set_defaults(func=cmd_synth)

    s = common(sub.add_parser("stats", help="compute normalization statistics"))
    s.add_argument("--in", "--data", dest="data", required=True, help="input container")
    s.add_argument("--out", required=True, help="statistics text file")
    s.set_defaults(func=cmd_stats)

    s = common(sub.add_parser("train", help="train an emulator checkpoint"))
    s.add_argument("--data", required=True, help="training container")
    s.add_argument("--stats", help="statistics file (computed from the data when absent)")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--history", help="write the per-epoch loss/weight history here")
    s.add_argument("--truncation", type=int, default=15, help="model truncation; must match the data grid")
    s.add_argument("--blocks", type=int, default=2, help="number of SFNO blocks")
    s.add_argument("--latent", type=int, default=32, help="latent channel width")
    s.add_argument("--use-sst", action="store_true", help="feed SST as an extra forcing")
    s.add_argument("--epochs", type=int, default=40, help="total epochs including fine-tuning")
    s.add_argument("--finetune-epochs", type=int, default=3, help="final epochs with the spectral regularizer")
    s.add_argument("--batch-size", type=int, default=32, help="samples per optimizer step")
    s.add_argument("--lr-max", type=float, default=5e-4, help="peak learning rate")
    s.add_argument("--lr-min", type=float, default=1e-8, help="final learning rate")
    s.add_argument("--weight-decay", type=float, default=1e-5, help="decoupled weight decay")
    s.add_argument("--val-fraction", type=float, default=0.1, help="final fraction held out for validation")
    s.add_argument("--samples-per-epoch", type=int, default=0, help="random samples per epoch (0: all)")
    s.add_argument("--sample-stride", type=int, default=1, help="use every k-th time index")
    s.add_argument("--no-adaptive", action="store_true", help="keep the initial loss weights")
    s.set_defaults(func=cmd_train)

    s = common(sub.add_parser("rollout", help="autoregressive inference from a checkpoint"))
    s.add_argument("--checkpoint", required=True, help="trained checkpoint")
    s.add_argument("--data", required=True, help="container supplying initial state and forcings")
    s.add_argument("--init", type=parse_init, default=("state", 0), help="state[:INDEX], climatology or zero")
    s.add_argument("--horizon", type=int, help="steps to integrate (default: to the end of the data)")
    s.add_argument("--co2", type=parse_co2, default=("observed", None), help="observed or stationary:YEAR")
    s.add_argument("--sst", type=parse_sst, default=("none", 0.0), help="none, observed, biased:K or smoothed:K")
    s.add_argument("--stride", type=int, default=1, help="store every k-th step")
    s.add_argument("--out", required=True, help="trajectory container path")
    s.set_defaults(func=cmd_rollout)

    s = common(sub.add_parser("diag", help="diagnose a trajectory"))
    s.add_argument("kind", choices=DIAG_KINDS, help="diagnostic to compute")
    s.add_argument("--model", required=True, help="trajectory container")
    s.add_argument("--reference", help="reference container (clim, pdf)")
    s.add_argument("--variable", help="variable or channel list, comma separated")
    s.add_argument("--bins", type=int, default=50, help="histogram bins for pdf")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_diag)

    s = common(sub.add_parser("experiment", help="run a named experiment preset"))
    s.add_argument("preset", help="one of: " + ", ".join(sorted(experiments.PRESETS)))
    s.add_argument("--checkpoint", required=True, help="trained checkpoint")
    s.add_argument("--data", required=True, help="container supplying initial state and forcings")
    s.add_argument("--horizon", type=int, help="rollout steps (default: to the end of the data)")
    s.add_argument("--stride", type=int, default=1, help="store every k-th step")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        cmd = next((x for x in argv if not x.startswith("-")), None)
        subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        if cmd not in subs.choices:
            parser.error("--config needs a subcommand")
        try:
            apply_config(subs.choices[cmd], read_config_file(known.config))
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
    args = parser.parse_args(argv)
    if args.command == "experiment" and args.preset not in experiments.PRESETS:
        parser.error(f"unknown preset {args.preset!r}; choose from {', '.join(sorted(experiments.PRESETS))}")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except FlaggedRun as exc:
        print(f"flagged: {exc}", file=sys.stderr)
        return EXIT_FLAGGED
    except (ValueError, RuntimeError, OSError, KeyError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return 0


if __name__ == "__main__":
    sys.exit(main())
