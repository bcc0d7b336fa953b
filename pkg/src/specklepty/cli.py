"""Command-line entry point: simulate, estimate-shifts, reconstruct, evaluate.

Settings come from an optional JSON config file with one object per
section (``sim``, ``scene``, ``diffuser``, ``trajectory``, ``recon``,
``registration``, ``evaluate``) and are overridden by dotted-key flags such
as ``--trajectory.J 9`` or ``--recon.alpha_obj=0.8``. Values are parsed as
JSON when possible and kept as strings otherwise.

Exit codes: 0 success, 1 threshold failure, 2 usage or validation error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import operator
import re
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import io, metrics
from .recon import NonFiniteStateError, ReconConfig, reconstruct
from .register import (DEFAULT_BANDLIMIT, UnreliableRegistrationError, estimate_trajectory,
                       read_trajectory, write_trajectory)
from .simulate import (DiffuserSpec, SceneSpec, SimulationConfig, TrajectorySpec,
                       bar_chart_layout, simulate_dataset)

logger = logging.getLogger("specklepty")

EXIT_OK = 0
EXIT_THRESHOLD = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


@dataclass
class RegistrationSettings:
    mode: str = "chain"
    window: bool = True
    bandlimit: float | None = DEFAULT_BANDLIMIT

    def __post_init__(self):
        if self.mode not in ("chain", "reference", "to-reference"):
            raise ValueError(f"registration mode must be 'chain' or 'reference', got {self.mode!r}")
        if self.bandlimit is not None and not 0 < self.bandlimit <= 0.75:
            raise ValueError(f"bandlimit must lie in (0, 0.75], got {self.bandlimit}")


@dataclass
class EvalSettings:
    mask_fraction: float = 0.5
    delta_n: float = 1.0

    def __post_init__(self):
        if not 0 < self.mask_fraction <= 1:
            raise ValueError(f"mask_fraction must lie in (0, 1], got {self.mask_fraction}")
        if self.delta_n == 0:
            raise ValueError("delta_n must be nonzero")


_SIM_KEYS = ("frame_size", "upsampling", "wavelength", "detector_pitch", "distance", "photons",
             "read_sigma", "noise_seed")

SECTIONS = {
    "sim": (SimulationConfig, _SIM_KEYS),
    "scene": (SceneSpec, None),
    "diffuser": (DiffuserSpec, None),
    "trajectory": (TrajectorySpec, None),
    "recon": (ReconConfig, None),
    "registration": (RegistrationSettings, None),
    "evaluate": (EvalSettings, None),
}

ALIASES = {
    "trajectory.J": "trajectory.count",
    "recon.N": "recon.iterations",
    "sim.M": "sim.frame_size",
    "sim.s": "sim.upsampling",
    "recon.s": "recon.upsampling",
}

SEED_KEYS = ("scene.seed", "diffuser.seed", "trajectory.seed", "sim.noise_seed", "recon.order_seed")


def _section_keys(section):
    cls, keys = SECTIONS[section]
    return keys if keys is not None else tuple(f.name for f in dataclasses.fields(cls))


def _coerce(value):
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def _tuples(values):
    return {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}


@dataclass
class RunConfig:
    """Fully resolved settings of one command.

    ``explicit`` holds the dotted keys that were set by the config file or
    on the command line, so dataset metadata can fill in the rest.
    """

    values: dict = dc_field(default_factory=lambda: {name: {} for name in SECTIONS})
    explicit: set = dc_field(default_factory=set)

    def set(self, key, value):
        key = ALIASES.get(key, key)
        section, _, name = key.partition(".")
        if section not in SECTIONS or not name:
            raise ValueError(f"unknown config key {key!r}; sections are {', '.join(SECTIONS)}")
        if name not in _section_keys(section):
            raise ValueError(f"unknown config key {key!r}")
        self.values[section][name] = _coerce(value)
        self.explicit.add(key)

    def update(self, doc, origin="config"):
        if not isinstance(doc, dict):
            raise ValueError(f"{origin}: top level must be a JSON object")
        for section, entries in doc.items():
            if not isinstance(entries, dict):
                raise ValueError(f"{origin}: section {section!r} must be a JSON object")
            for name, value in entries.items():
                self.set(f"{section}.{name}", value)

    def build(self, section):
        cls, _ = SECTIONS[section]
        values = _tuples(self.values[section])
        try:
            return cls(**values)
        except TypeError as exc:
            raise ValueError(f"invalid [{section}] settings: {exc}") from exc

    def simulation(self):
        return SimulationConfig(**_tuples(self.values["sim"]), scene=self.build("scene"),
                                diffuser=self.build("diffuser"),
                                trajectory=self.build("trajectory"))

    def recon(self, **defaults):
        values = {**defaults, **_tuples(self.values["recon"])}
        try:
            return ReconConfig(**values)
        except TypeError as exc:
            raise ValueError(f"invalid [recon] settings: {exc}") from exc

    def validate(self):
        """Construct every section once so bad values fail before any compute."""
        self.simulation()
        self.recon()
        self.build("registration")
        self.build("evaluate")
        return self


def _split_overrides(extra):
    pairs = []
    i = 0
    while i < len(extra):
        token = extra[i]
        if not token.startswith("--") or "." not in token.split("=", 1)[0]:
            raise ValueError(f"unrecognized argument {token!r}")
        if "=" in token:
            key, value = token[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ValueError(f"{token} needs a value")
            key, value = token[2:], extra[i + 1]
            i += 2
        pairs.append((key, value))
    return pairs


def resolve_config(config_file=None, seed=None, overrides=(), threads=None):
    """Merge config file, ``--seed``, ``--threads`` and dotted overrides (in that order)."""
    cfg = RunConfig()
    if config_file is not None:
        path = Path(config_file)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from exc
        cfg.update(doc, str(path))
    if seed is not None:
        for key in SEED_KEYS:
            cfg.set(key, int(seed))
    if threads is not None:
        cfg.set("recon.threads", int(threads))
    for key, value in overrides:
        cfg.set(key, value)
    return cfg.validate()


# --------------------------------------------------------------------------- commands

def cmd_simulate(args, cfg):
    out = Path(args.out)
    sim = cfg.simulation()
    data = simulate_dataset(sim)
    truth = None
    if not args.no_truth:
        truth = (data.obj, data.probe, data.realized_trajectory)
    io.write_dataset(data.frames, out, sim.upsampling, truth=truth)
    m = sim.frame_size
    n = sim.scene.grid
    print(f"wrote {len(data.frames)} frames of {m}x{m} to {out} "
          f"(object grid {n}x{n}, upsampling {sim.upsampling})")
    print(f"seeds: scene={sim.scene.seed} diffuser={sim.diffuser.seed} "
          f"trajectory={sim.trajectory.seed} noise={sim.noise_seed}")
    return EXIT_OK


def cmd_estimate_shifts(args, cfg):
    reg = cfg.build("registration")
    mode = args.mode or reg.mode
    stack, _ = io.read_dataset(args.dataset)
    traj = estimate_trajectory(stack.frames, mode=mode, window=reg.window,
                               bandlimit=reg.bandlimit)
    write_trajectory(traj, args.out, mode=mode)
    bad = int(np.count_nonzero(~traj.reliable[1:]))
    if bad:
        logger.warning("%d of %d frame pairs gave weak correlation peaks", bad, len(traj) - 1)
    print(f"estimated {len(traj)} shifts ({mode}); min sharpness {traj.sharpness[1:].min():.1f}")
    return EXIT_OK


def _probe_option(args):
    if args.probe is None:
        return None, None
    kind, path = args.probe
    if kind not in ("fixed", "init"):
        raise ValueError(f"--probe expects 'fixed FILE' or 'init FILE', got {kind!r}")
    return kind, io.read_spty(path)


def cmd_reconstruct(args, cfg):
    stack, manifest = io.read_dataset(args.dataset)
    traj = read_trajectory(args.trajectory)
    if len(traj) != len(stack):
        raise ValueError(f"{args.trajectory} has {len(traj)} shifts but the dataset has "
                         f"{len(stack)} frames")
    defaults = {}
    if "recon.upsampling" not in cfg.explicit:
        defaults["upsampling"] = int(manifest.get("upsampling_hint", 3))
    if args.iterations is not None:
        defaults["iterations"] = args.iterations
        cfg.values["recon"].pop("iterations", None)
    if args.autofocus is not None:
        defaults["autofocus_range"] = tuple(args.autofocus)
        cfg.values["recon"].pop("autofocus_range", None)
    kind, probe = _probe_option(args)
    if kind == "fixed":
        defaults["probe_mode"] = "fixed"
        cfg.values["recon"].pop("probe_mode", None)
    config = cfg.recon(**defaults)
    t0 = time.perf_counter()
    result = reconstruct(stack, traj, config, probe=probe)
    wall = time.perf_counter() - t0
    report = {
        "dataset": str(Path(args.dataset)),
        "frame_count": len(stack),
        "frame_size": stack.frame_size,
        "upsampling": config.upsampling,
        "iterations": config.iterations,
        "probe_mode": config.probe_mode,
        "threads": config.threads,
        "fft_backend": config.fft_backend,
        "precision": config.precision,
        "wall_time_s": wall,
        "config": {k: list(v) if isinstance(v, tuple) else v
                   for k, v in dataclasses.asdict(config).items()},
    }
    io.write_result(result, args.out, report)
    print(f"reconstructed {len(stack)} frames in {wall:.2f} s at d = {result.distance:.2f} um; "
          f"final residual {result.residual:.4e}")
    return EXIT_OK


_ASSERT = re.compile(r"^\s*([A-Za-z_][\w.]*)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*$")
_OPS = {"<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge}


def parse_assertion(text):
    """Split ``'rmse<0.1'`` into ``('rmse', '<', 0.1)``."""
    match = _ASSERT.match(text)
    if not match:
        raise ValueError(f"cannot parse threshold {text!r}; expected e.g. 'rmse<0.1'")
    name, op, value = match.groups()
    return name, op, float(value)


def _lookup(report, name):
    doc = report.to_dict()
    flat = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    flat.update({f"contrast_{k}": v for k, v in doc["bar_contrast"].items()})
    flat.update(doc["extra"])
    if name not in flat:
        raise ValueError(f"unknown metric {name!r} in threshold; available: {', '.join(sorted(flat))}")
    if flat[name] is None:
        raise ValueError(f"metric {name!r} was not computed for this run")
    return float(flat[name])


def _truth_dir(path):
    path = Path(path)
    if (path / "truth").is_dir() and not (path / "object.spty").exists():
        return path / "truth"
    return path


def cmd_evaluate(args, cfg):
    settings = cfg.build("evaluate")
    obj_true, _, traj_true = io.read_truth(_truth_dir(args.truth))
    checks = [parse_assertion(a) for a in args.assertions or ()]
    if args.self_check:
        recovered, report_doc = obj_true, {}
    else:
        recovered, _, report_doc = io.read_result(args.result)
    shifts = report_doc.get("shifts")
    bars = None
    if args.bars:
        bars = bar_chart_layout(cfg.simulation().scene)
    report = metrics.evaluate(recovered, obj_true, settings.mask_fraction, bars=bars,
                              trajectory=shifts, true_trajectory=traj_true if shifts else None)
    if "wall_time_s" in report_doc:
        report.extra["wall_time_s"] = float(report_doc["wall_time_s"])
    if "distance_um" in report_doc:
        report.extra["distance_um"] = float(report_doc["distance_um"])
    if args.profile is not None:
        if args.line is None:
            raise ValueError("--profile needs --line R0 C0 R1 C1")
        wavelength = float(report_doc.get("wavelength_um", cfg.simulation().wavelength))
        pitch = float(report_doc.get("pitch_um", cfg.simulation().scene.pitch))
        mask = metrics.central_mask(obj_true.shape, settings.mask_fraction)
        aligned = metrics.align_gauge(recovered, obj_true, mask)
        profile = metrics.phase_height_profile(aligned, args.line[:2], args.line[2:], wavelength,
                                               settings.delta_n, pitch)
        metrics.write_profile_csv(profile, args.profile)
    outcomes = []
    for name, op, value in checks:
        actual = _lookup(report, name)
        outcomes.append({"metric": name, "op": op, "threshold": value, "value": actual,
                         "passed": bool(_OPS[op](actual, value))})
    report.extra["assertions"] = outcomes
    report.to_json(args.out)
    print(f"rmse {report.rmse:.4f}  amplitude {report.amplitude_rmse:.4f}  "
          f"phase {report.phase_rms:.4f} rad")
    for o in outcomes:
        print(f"{'PASS' if o['passed'] else 'FAIL'} {o['metric']} = {o['value']:.6g} "
              f"{o['op']} {o['threshold']:g}")
    failed = [o for o in outcomes if not o["passed"]]
    if failed:
        o = failed[0]
        print(f"threshold failed: {o['metric']} = {o['value']:.6g} is not {o['op']} "
              f"{o['threshold']:g}", file=sys.stderr)
        return EXIT_THRESHOLD
    return EXIT_OK


# --------------------------------------------------------------------------- parser

def _global_flags(suppress):
    parent = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    parent.add_argument("--config", default=default, help="JSON config file")
    parent.add_argument("--seed", type=int, default=default, help="seed for every random stream")
    parent.add_argument("--threads", type=int, default=default, help="FFT worker threads")
    parent.add_argument("--verbose", "-v", action="count", default=argparse.SUPPRESS if suppress else 0,
                        help="more logging (repeat for debug output)")
    return parent


def build_parser():
    parser = argparse.ArgumentParser(
        prog="specklepty",
        description="Lensless speckle-scanning microscopy: simulation and reconstruction.",
        epilog="Any config value can be overridden as --section.key VALUE.",
        parents=[_global_flags(False)])
    sub = parser.add_subparsers(dest="command", required=True)
    common = [_global_flags(True)]

    p = sub.add_parser("simulate", parents=common, help="synthesize a dataset")
    p.add_argument("out", help="output dataset directory")
    p.add_argument("--no-truth", action="store_true", help="do not write the truth sidecar")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate-shifts", parents=common, help="register frames")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("out", help="output trajectory JSON")
    p.add_argument("--mode", choices=("chain", "reference"), default=None)
    p.set_defaults(func=cmd_estimate_shifts)

    p = sub.add_parser("reconstruct", parents=common, help="recover object and probe")
    p.add_argument("dataset", help="dataset directory")
    p.add_argument("trajectory", help="trajectory JSON")
    p.add_argument("out", help="output result directory")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--autofocus", nargs=2, type=float, metavar=("D_MIN", "D_MAX"), default=None)
    p.add_argument("--probe", nargs=2, metavar=("fixed|init", "FILE"), default=None,
                   help="known probe (.spty); 'fixed' keeps it unchanged")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", parents=common, help="compare a result with ground truth")
    p.add_argument("result", help="result directory ('-' with --self-check)")
    p.add_argument("truth", help="truth sidecar directory or dataset directory")
    p.add_argument("out", help="output report JSON")
    p.add_argument("--assert", dest="assertions", action="append", metavar="EXPR",
                   help="threshold such as 'rmse<0.1'; repeatable")
    p.add_argument("--self-check", action="store_true", help="evaluate the truth against itself")
    p.add_argument("--bars", action="store_true", help="measure bar contrast of the scene layout")
    p.add_argument("--profile", default=None, help="write a height profile CSV")
    p.add_argument("--line", nargs=4, type=float, metavar=("R0", "C0", "R1", "C1"), default=None)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _setup_logging(level):
    fmt = "%(levelname)s %(name)s: %(message)s"
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(level, 2)],
                        format=fmt, stream=sys.stderr, force=True)


def main(argv=None):
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    _setup_logging(args.verbose or 0)
    try:
        cfg = resolve_config(args.config, args.seed, _split_overrides(extra), args.threads)
        return args.func(args, cfg)
    except (NonFiniteStateError, FloatingPointError, UnreliableRegistrationError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
