"""Command-line front end: ``run``, ``sweep``, ``verify`` and ``defaults``.

Exit codes: 0 ok, 1 verification failure, 2 usage/config error, 3 infeasible action.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Any, Optional, Sequence

import jsonschema
import numpy as np

from . import __version__, engine, verify
from .channel import write_trace
from .engine import Policy, RunConfig
from .leese import BcdConfig
from .model import (ChannelParams, InvalidParameterError, SystemParams, WdParams, dbm_to_watt, linear_distances,
                    resolve_capacities)
from .physics import InfeasibleActionError

log = logging.getLogger("wpmec")

OUTPUT_ENV = "WPMEC_OUTPUT_DIR"
DEFAULT_OUTPUT = "wpmec-out"

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

ALIASES = {
    "T": "slot_duration_s",
    "W": "bandwidth_hz",
    "N0": "noise_power_w",
    "p0max": "hap_max_tx_power_w",
    "f0max": "hap_max_cpu_hz",
    "e0th": "hap_avg_energy_budget_j",
    "r_max": "max_sense_bits",
    "V": "lyapunov_v",
    "lambda_e": "energy_scale",
    "lambda_c": "deficit_scale",
    "B_min": "min_battery_j",
    "K": "num_devices",
    "sigma": "pathloss_exponent",
    "slots": "num_slots",
}

_SYSTEM_KEYS = [f.name for f in fields(SystemParams)]
_CHANNEL_KEYS = ["wpt_carrier_hz", "comms_carrier_hz", "antenna_gain", "pathloss_exponent"]
# device keys map config name -> WdParams field; all devices share them
_DEVICE_KEYS = {
    "weight": "weight",
    "wd_max_cpu_hz": "max_cpu_hz",
    "wd_cpu_energy_coeff": "cpu_energy_coeff",
    "wd_cycles_per_bit": "cycles_per_bit",
    "eh_a1": "eh_a1",
    "eh_a2": "eh_a2",
    "eh_a3": "eh_a3",
    "battery_capacity": "battery_capacity",
    "unsafe_capacity": "unsafe_capacity",
}


def default_config() -> dict:
    sp, wd, cp = SystemParams(), WdParams(), ChannelParams()
    cfg: dict[str, Any] = {k: getattr(sp, k) for k in _SYSTEM_KEYS}
    cfg.update({k: getattr(wd, v) for k, v in _DEVICE_KEYS.items()})
    cfg["wd_max_tx_power_dbm"] = 5.0
    cfg["distances_m"] = None
    cfg.update({k: getattr(cp, k) for k in _CHANNEL_KEYS})
    bcd = BcdConfig()
    rc = RunConfig()
    cfg.update({"num_slots": rc.num_slots, "policy": rc.policy.value, "seed": rc.seed,
                "moving_average_window": rc.moving_average_window, "bcd_tol": bcd.tol,
                "bcd_max_iters": bcd.max_iters, "bcd_tau_init": bcd.tau_init, "bcd_refine_iters": bcd.refine_iters})
    return cfg


def _schema() -> dict:
    num = {"type": "number"}
    pos = {"type": "number", "exclusiveMinimum": 0}
    count = {"type": "integer", "minimum": 1}
    props: dict[str, Any] = {k: pos for k in _SYSTEM_KEYS}
    props.update({"num_devices": count, "energy_scale": {"type": "number", "minimum": 1},
                  "eh_times_T": {"type": "boolean"}})
    props.update({k: num for k in _DEVICE_KEYS})
    props.update({"weight": pos, "wd_cycles_per_bit": pos, "eh_a3": pos,
                  "wd_max_cpu_hz": {"type": "number", "minimum": 0},
                  "wd_cpu_energy_coeff": {"type": "number", "minimum": 0},
                  "battery_capacity": {"type": ["number", "null"], "exclusiveMinimum": 0},
                  "unsafe_capacity": {"type": "boolean"},
                  "wd_max_tx_power_dbm": num,
                  "distances_m": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0.1}}})
    props.update({k: pos for k in _CHANNEL_KEYS})
    props["pathloss_exponent"] = {"type": "number", "minimum": 2}
    props.update({"num_slots": count, "policy": {"enum": [p.value for p in Policy]},
                  "seed": {"type": "integer", "minimum": 0}, "moving_average_window": count,
                  "bcd_tol": pos, "bcd_max_iters": count, "bcd_tau_init": {"type": ["number", "null"], "minimum": 0},
                  "bcd_refine_iters": {"type": "integer", "minimum": 0}})
    return {"type": "object", "properties": props, "additionalProperties": False}


CONFIG_SCHEMA = _schema()


class ConfigError(ValueError):
    pass


def _canonical(key: str) -> str:
    return ALIASES.get(key, key)


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: Optional[str], overrides: Sequence[str] = ()) -> dict:
    """Defaults, then the JSON file, then ``key=value`` overrides; validated against the schema."""
    cfg = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})")
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg.update({_canonical(k): v for k, v in user.items()})
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        cfg[_canonical(key.strip())] = _parse_value(value.strip())
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"config error at '{where}': {err.message}")
    if cfg["distances_m"] is not None and len(cfg["distances_m"]) != cfg["num_devices"]:
        raise ConfigError(f"config error at 'distances_m': expected {cfg['num_devices']} entries, "
                          f"got {len(cfg['distances_m'])}")
    return cfg


def build(cfg: dict):
    """(SystemParams, devices, ChannelParams, RunConfig) from a validated config."""
    params = SystemParams(**{k: cfg[k] for k in _SYSTEM_KEYS})
    distances = cfg["distances_m"] or linear_distances(params.num_devices)
    dev = {v: cfg[k] for k, v in _DEVICE_KEYS.items()}
    dev["max_tx_power_w"] = dbm_to_watt(cfg["wd_max_tx_power_dbm"])
    wds = resolve_capacities(params, [WdParams(distance_m=d, **dev) for d in distances])
    channel = ChannelParams(**{k: cfg[k] for k in _CHANNEL_KEYS}, rng_seed=cfg["seed"])
    bcd = BcdConfig(tol=cfg["bcd_tol"], max_iters=cfg["bcd_max_iters"], tau_init=cfg["bcd_tau_init"],
                    refine_iters=cfg["bcd_refine_iters"])
    run_cfg = RunConfig(num_slots=cfg["num_slots"], policy=Policy(cfg["policy"]), seed=cfg["seed"],
                        moving_average_window=cfg["moving_average_window"], bcd=bcd)
    return params, wds, channel, run_cfg


def _output_dir(arg: Optional[str]) -> Path:
    out = Path(arg or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _header(cfg: dict) -> str:
    return "config " + json.dumps(cfg, sort_keys=True)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"not serialisable: {type(x).__name__}")


SERIES_COLUMNS = ("slot", "q0_bits", "mean_qi_bits", "max_qi_bits", "min_battery", "min_battery_j", "max_battery",
                  "max_battery_j", "mean_battery", "mean_battery_j", "e0_j", "z0", "z0_j", "weighted_sensed_bits")


def write_series(path: Path, metrics: engine.RunMetrics, params: SystemParams, cfg: dict) -> None:
    """Per-slot CSV; scaled battery and deficit columns are repeated in Joules."""
    s = metrics.downsampled_series(cfg["moving_average_window"])
    lam_e, lam_c = params.energy_scale, params.deficit_scale
    cols = {
        "slot": s["slot"], "q0_bits": s["q0_bits"], "mean_qi_bits": s["mean_qi_bits"], "max_qi_bits": s["max_qi_bits"],
        "min_battery": s["min_battery"], "min_battery_j": s["min_battery"] / lam_e,
        "max_battery": s["max_battery"], "max_battery_j": s["max_battery"] / lam_e,
        "mean_battery": s["mean_battery"], "mean_battery_j": s["mean_battery"] / lam_e,
        "e0_j": s["e0_j"], "z0": s["z0"], "z0_j": s["z0"] / lam_c, "weighted_sensed_bits": s["weighted_sensed_bits"],
    }
    with open(path, "w", newline="") as fh:
        fh.write(f"# {_header(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(SERIES_COLUMNS)
        for row in zip(*(cols[c] for c in SERIES_COLUMNS)):
            writer.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def cmd_run(args) -> int:
    cfg = load_config(args.config, _shortcut_overrides(args))
    params, wds, channel, run_cfg = build(cfg)
    if args.channel_trace:
        run_cfg = replace(run_cfg, keep_channel_trace=True)
    try:
        m = engine.run(params, wds, channel, run_cfg)
    except InfeasibleActionError as err:
        print(f"infeasible action at slot {err.slot}: constraint={err.constraint} device={err.device} "
              f"detail={err.detail}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = _output_dir(args.out)
    doc = {
        "config": cfg,
        "version": __version__,
        "battery_capacity": [wd.battery_capacity for wd in wds],
        "metrics": m.summary(),
        "deficit_queue_final_j": m.final_deficit_queue / params.deficit_scale,
        "windows": {"final_q0": m.final_window_q0, "prev_q0": m.prev_window_q0,
                    "final_qi": m.final_window_qi, "prev_qi": m.prev_window_qi},
        "final_state": {"hap_queue_bits": m.final_state.hap_queue_bits,
                        "deficit_queue": m.final_state.deficit_queue,
                        "wd_queue_bits": m.final_state.wd_queue_bits, "battery": m.final_state.battery,
                        "battery_j": m.final_state.battery / params.energy_scale},
    }
    with open(out / "metrics.json", "w") as fh:
        json.dump(doc, fh, indent=2, default=_jsonable)
    write_series(out / "series.csv", m, params, cfg)
    if args.channel_trace:
        write_trace(out / "channel_trace.csv", m.channel_trace, _header(cfg))
    print(f"R={m.sensing_rate:.1f} bits/slot  e0={m.avg_hap_energy_j:.4f} J  max Qi={m.max_wd_queue_bits:.0f} bits  "
          f"violations={sum(m.violations.values())}  -> {out}")
    return EXIT_OK


SWEEP_COLUMNS = ("policy", "axis", "value", "seed", "placement", "sensing_rate_bits", "avg_hap_energy_j",
                 "avg_hap_queue_bits", "avg_wd_queue_bits", "max_wd_queue_bits", "final_deficit_queue",
                 "final_deficit_queue_j", "violations", "decide_time_mean_s")


def _csv_list(text: str, conv) -> list:
    items = [t.strip() for t in text.split(",") if t.strip()]
    try:
        return [conv(t) for t in items]
    except ValueError as err:
        raise ConfigError(f"bad list {text!r}: {err}")


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _shortcut_overrides(args))
    values = _csv_list(args.values, int if args.axis == "K" else float)
    if not values:
        raise ConfigError("--values must list at least one value")
    seeds = _csv_list(args.seeds, int)
    if not seeds:
        raise ConfigError("--seeds must list at least one seed")
    try:
        policies = [Policy(p) for p in _csv_list(args.policies, str)]
    except ValueError as err:
        raise ConfigError(str(err))
    params, wds, channel, run_cfg = build(cfg)
    try:
        rows = engine.sweep(params, wds, channel, run_cfg, args.axis, values, seeds, policies,
                            placements=args.placements, jobs=args.jobs)
    except InfeasibleActionError as err:
        print(f"infeasible action at slot {err.slot}: {err}", file=sys.stderr)
        return EXIT_INFEASIBLE
    out = _output_dir(args.out)
    with open(out / "sweep.csv", "w", newline="") as fh:
        fh.write(f"# {_header(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(SWEEP_COLUMNS)
        for row in rows:
            # the deficit queue is divided by the scale of the run that produced it
            row = dict(row, final_deficit_queue_j=row["final_deficit_queue"] / params.deficit_scale)
            writer.writerow([row[c] for c in SWEEP_COLUMNS])
    for (pol, value), rate in sorted(engine.aggregate(rows).items(), key=lambda kv: (kv[0][1], kv[0][0])):
        print(f"{args.axis}={value:<10g} {pol:<7} R={rate:.1f}")
    print(f"{len(rows)} runs -> {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_level(args.level, lambda r: print(r.line(), flush=True))
    failed = [r for r in results if not r.passed]
    if failed:
        print("FAILED: " + ", ".join(f"{r.number} ({r.name})" for r in failed))
        return EXIT_VERIFY
    print(f"all {len(results)} criteria passed")
    return EXIT_OK


def cmd_defaults(args) -> int:
    json.dump(default_config(), sys.stdout, indent=2)
    print()
    return EXIT_OK


def _shortcut_overrides(args) -> list[str]:
    out = []
    for name in ("policy", "slots", "seed"):
        value = getattr(args, name, None)
        if value is not None:
            out.append(f"{name}={json.dumps(value)}")
    return out + list(args.override or [])


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wpmec", description="Online control of a wireless-powered edge-computing system.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="JSON config (defaults are used for missing keys)")
        p.add_argument("--override", action="append", metavar="KEY=VALUE", help="override one config key")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
        p.add_argument("--slots", type=int, help="number of slots per run")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("run", help="simulate one policy")
    common(p)
    p.add_argument("--policy", choices=[x.value for x in Policy])
    p.add_argument("--channel-trace", action="store_true", help="also write channel_trace.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep one parameter over values x seeds x policies")
    common(p)
    p.add_argument("--axis", required=True, choices=engine.SWEEP_AXES)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seeds", default="0", help="comma-separated seeds")
    p.add_argument("--policies", default=",".join(x.value for x in Policy))
    p.add_argument("--placements", type=int, default=4, help="device placements per seed (K sweeps only)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check the acceptance criteria")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("defaults", help="print the default config as JSON")
    p.set_defaults(func=cmd_defaults)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = make_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, InvalidParameterError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
