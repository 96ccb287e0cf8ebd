"""Command-line entry point: ``tinydrone <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import glob
import os
import sys
from dataclasses import replace

import numpy as np

from .link import LinkTimeout
from .mission.runner import (
    ConfigError,
    export_batch,
    export_report,
    load_config,
    reseed,
    run_batch,
    run_mission,
    SUMMARY_HEADER,
)
from .mission.scene import LABELS, FRAME, to_input
from .nn.graph import GraphError, run_inference
from .nn.serialize import ParseError, load_model, save_model
from .sim import FlightState, PayloadConfig, SimError, SimParams, simulate_endurance
from .tensor import QuantError


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _out_dir(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def cmd_train(args):
    from .pipeline import train_classifier

    trained = train_classifier(args.n_train, args.seed, args.lr, args.epochs)
    path = os.path.join(_out_dir(args), "model_real32.twng")
    size = save_model(trained.model, path)
    print(f"train_accuracy={trained.train_accuracy:.4f} bytes={size} model={path}")


def cmd_quantize(args):
    from .nn.footprint import memory_footprint
    from .pipeline import quantize_classifier
    from .quantizer import weight_payload_bytes

    model = _load(args.model)
    q = quantize_classifier(model, args.calib, args.seed)
    path = os.path.join(_out_dir(args), "model_int8.twng")
    save_model(q, path)
    fr, fq = memory_footprint(model), memory_footprint(q)
    print(f"flash_real32={fr.flash_bytes} flash_int8={fq.flash_bytes} "
          f"flash_ratio={fq.flash_bytes / fr.flash_bytes:.4f} "
          f"weight_ratio={weight_payload_bytes(q) / weight_payload_bytes(model):.4f} "
          f"ram_peak_real32={fr.ram_peak_bytes} ram_peak_int8={fq.ram_peak_bytes} model={path}")


def _load(path):
    try:
        return load_model(path)
    except OSError as exc:
        raise CliError("io", f"cannot read model {path}: {exc.strerror}") from None


def cmd_infer(args):
    from .mission.vision import classify_target, detect_face

    model = _load(args.model)
    try:
        image = np.load(args.frame)
    except (OSError, ValueError) as exc:
        raise CliError("io", f"cannot read frame {args.frame}: {exc}") from None
    if image.shape != (FRAME, FRAME, 3):
        raise CliError("frame", f"frame must be {FRAME}x{FRAME}x3, got {image.shape}")
    image = image.astype(np.uint8)
    det = None if args.no_crop else detect_face(image)
    result = classify_target(model, image, det) if det is not None else None
    if result is None:
        probs = run_inference(model, to_input(image))
        result = int(np.argmax(probs)), float(np.max(probs))
    label, conf = result
    print(f"label={LABELS[label]} confidence={conf:.4f} cropped={int(det is not None)}")


def cmd_simulate(args):
    params = SimParams()
    e, used = simulate_endurance(PayloadConfig(args.payload), FlightState(args.state), args.dt, params=params)
    print(f"endurance_s={e:.0f} energy_j={used:.0f} payload={args.payload} state={args.state} "
          f"endurance_exact_s={e:.3f}")


def cmd_mission(args):
    cfg = load_config(args.config)
    if args.seed_given:
        cfg = reseed(cfg, args.seed)
    if args.dt_given:
        cfg = replace(cfg, dt=args.dt)
    runs = args.runs if args.runs is not None else 1
    out = _out_dir(args)
    if runs == 1:
        report = run_mission(cfg)
        export_report(report, out)
        reports = [report]
    else:
        reports = run_batch(cfg, runs)
        export_batch(reports, out, name=cfg.run_id.rsplit("-s", 1)[0])
    for r in reports:
        print(f"run_id={r.run_id} outcome={r.outcome} flight_time_s={r.flight_time:.3f} "
              f"energy_j={r.energy_used:.3f} decisions={r.decisions} correct={r.correct} "
              f"decision_period_s={r.decision_period:.3f}")


def cmd_report(args):
    files = sorted(glob.glob(os.path.join(args.dir, "*_summary.csv")))
    if not files:
        raise CliError("io", f"no summary CSVs in {args.dir}")
    groups: dict[tuple, list] = {}
    for path in files:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["run_id"] == "mean":
                    continue
                groups.setdefault((row["payload"], row["mode"]), {})[row["run_id"]] = row
    rows = []
    for (payload, mode), runs in sorted(groups.items()):
        vals = list(runs.values())
        decisions = sum(int(r["targets"]) for r in vals)
        correct = sum(int(r["correct"]) for r in vals)
        rows.append([f"mean_of_{len(vals)}", payload, mode,
                     f"{np.mean([float(r['flight_time_s']) for r in vals]):.3f}",
                     f"{np.mean([float(r['energy_j']) for r in vals]):.3f}",
                     decisions, correct, f"{(correct / decisions if decisions else 0.0):.4f}"])
    out = os.path.join(args.out if args.out_given else args.dir, "aggregate.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(rows)
    for r in rows:
        print(",".join(map(str, r)))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="run seed (default 0)")
    common.add_argument("--dt", type=float, default=argparse.SUPPRESS, help="simulation step in s (default 0.05)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default ./out)")

    parser = argparse.ArgumentParser(prog="tinydrone", parents=[common],
                                     description="Tiny mask-classifier drone: model, simulator and missions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="build the network and train its head")
    p.add_argument("--n-train", type=int, default=1000)
    p.add_argument("--lr", type=float, default=2.0)
    p.add_argument("--epochs", type=int, default=50)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("quantize", parents=[common], help="calibrate and convert a model to int8")
    p.add_argument("model")
    p.add_argument("--calib", type=int, default=100, help="calibration frames")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("infer", parents=[common], help="classify one 96x96x3 uint8 .npy frame")
    p.add_argument("model")
    p.add_argument("frame")
    p.add_argument("--no-crop", action="store_true", help="classify the whole frame")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", parents=[common], help="constant-state endurance check")
    p.add_argument("--payload", choices=[c.value for c in PayloadConfig], default="openmv")
    p.add_argument("--state", choices=["idle", "hover", "maneuver"], default="hover")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("mission", parents=[common], help="fly a mission from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, default=None, help="seeded repetitions (default 1)")
    p.set_defaults(func=cmd_mission)

    p = sub.add_parser("report", parents=[common], help="aggregate summary CSVs in a directory")
    p.add_argument("dir")
    p.set_defaults(func=cmd_report)
    return parser


def _error(code: str, message: str) -> int:
    message = " ".join(str(message).split())
    print(f'error code={code} message="{message}"', file=sys.stderr)
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    ns = vars(args)
    args.seed_given, args.dt_given, args.out_given = "seed" in ns, "dt" in ns, "out" in ns
    ns.setdefault("seed", 0)
    ns.setdefault("dt", 0.05)
    ns.setdefault("out", "out")
    try:
        args.func(args)
    except CliError as exc:
        return _error(exc.code, exc)
    except ConfigError as exc:
        return _error("config", exc)
    except ParseError as exc:
        return _error("model", exc)
    except LinkTimeout as exc:
        return _error("link", exc)
    except (SimError, QuantError, GraphError) as exc:
        return _error("runtime", exc)
    except OSError as exc:
        return _error("io", f"{exc.filename}: {exc.strerror}")
    except ValueError as exc:
        return _error("value", exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
