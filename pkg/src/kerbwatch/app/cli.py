"""Command-line entry point: ``kerbwatch <command> [options]``.

Exit status is 0 on success, 1 on usage errors and 2 on runtime errors.
Any option below can also be set through an environment variable named
``KERBWATCH_<OPTION>`` (for example ``KERBWATCH_MQTT_URL``), which takes
precedence over the command line.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ..exceptions import ConfigError, KerbwatchError
from ..geo import BoundingBox
from ..ingest_io import JsonlSink, load_config
from ..ingest_io.config import build_geoframe, parse_correspondences, validate_config
from ..metrics import ScoredBox, TruthBox, ZoneMap, eval_curves, read_ras_rad_csv
from .bench import DEFAULT_BUDGET_S, bench, latency_stats
from .pipeline import Pipeline

ENV_PREFIX = "KERBWATCH_"
ENV_OPTIONS = ("config", "input", "mqtt_url", "csv_dir", "seed", "fixture", "budget_ms", "window_s", "mu")

log = logging.getLogger("kerbwatch")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, *names):
    if "config" in names:
        p.add_argument("--config", help="pipeline configuration (JSON)")
    if "input" in names:
        p.add_argument("--input", default="-", help="detection stream file, or - for stdin")
    if "sinks" in names:
        p.add_argument("--mqtt-url", help="publish telemetry to this broker, e.g. mqtt://host:1883")
        p.add_argument("--csv-dir", help="write objects/pairs/alerts/road_state CSV files here")
    if "tuning" in names:
        p.add_argument("--window-s", type=float, help="road-state rolling window in seconds")
        p.add_argument("--mu", type=float, help="tyre-road friction coefficient")
    if "fixture" in names:
        p.add_argument("--fixture", help="built-in scenario name")
        p.add_argument("--seed", type=int, help="override the scenario's noise seed")


def build_parser() -> argparse.ArgumentParser:
    from ..sim import FIXTURES

    parser = _Parser(prog="kerbwatch", description="Roadside camera traffic-risk pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run the pipeline over a detection stream")
    _common(p, "config", "input", "sinks", "tuning")
    p.add_argument("--mode", choices=("replay", "live"), default="replay")
    p.add_argument("--jsonl", help="also append every published message to this file")

    p = sub.add_parser("simulate", help="render a scenario into detection and ground-truth streams")
    _common(p, "fixture")
    p.add_argument("--scenario", help="scenario script (JSON) instead of a built-in fixture")
    p.add_argument("--noise-sigma", type=float, help="override pixel noise (px)")
    p.add_argument("--out", required=True, help="output directory")
    p.epilog = "fixtures: " + ", ".join(FIXTURES)

    p = sub.add_parser("calibrate", help="solve the pixel-to-geo mapping and print residuals")
    _common(p, "config", "input")

    p = sub.add_parser("eval", help="precision/recall/F1 per confidence threshold")
    _common(p, "input")
    p.add_argument("--truth", required=True, help="labelled boxes (NDJSON)")
    p.add_argument("--thresholds", default="0.05:0.95:0.05", help="start:stop:step or comma list")
    p.add_argument("--iou", type=float, default=0.5, help="match IoU")
    p.add_argument("--out", help="CSV output (default stdout)")

    p = sub.add_parser("bench", help="per-stage latency against the alert budget")
    _common(p, "config", "fixture", "sinks")
    p.add_argument("--repetitions", type=int, default=3)
    p.add_argument("--budget-ms", type=float, default=DEFAULT_BUDGET_S * 1e3)

    p = sub.add_parser("report", help="plot-ready CSV of road state, latency or RAS/RAD zones")
    _common(p, "config", "input", "tuning")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--ras-rad", help="road-state history CSV: fit zones and label every row")
    g.add_argument("--latency", help="CSV of latency samples with a 'seconds' column")
    g.add_argument("--road-state", action="store_true", help="run --input through --config and emit road state")
    p.add_argument("--stage", default="end_to_end", help="with --latency: rows to keep when a 'stage' column exists")
    p.add_argument("--bins", type=int, default=20, help="zone histogram bins per axis")
    p.add_argument("--out", help="CSV output (default stdout)")
    return parser


def _apply_env(parser, args, environ):
    """Environment variables win over flags for the documented options."""
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for name in ENV_OPTIONS:
        raw = environ.get(ENV_PREFIX + name.upper())
        if raw is None or name not in actions:
            continue
        conv = actions[name].type or str
        try:
            setattr(args, name, conv(raw))
        except ValueError:
            raise UsageError(f"{ENV_PREFIX}{name.upper()}: invalid value {raw!r}") from None


@contextlib.contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        with open(path, encoding="utf-8") as fh:
            yield fh


@contextlib.contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _config(args, required=True):
    if not getattr(args, "config", None):
        if required:
            raise UsageError("--config is required")
        return None
    cfg = load_config(args.config)
    for attr, name in (("mqtt_url", "mqtt_url"), ("csv_dir", "csv_dir"), ("window_s", "window_s"), ("mu", "mu")):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, attr, val)
    validate_config(cfg)
    return cfg


def cmd_run(args) -> int:
    cfg = _config(args)
    if cfg.csv_dir:
        os.makedirs(cfg.csv_dir, exist_ok=True)
    extra = [JsonlSink(args.jsonl)] if args.jsonl else []
    pipe = Pipeline.from_config(cfg, extra_sinks=extra, mode=args.mode)
    try:
        with _open_in(args.input) as fh:
            summary = pipe.run(fh)
    finally:
        pipe.close()
    print(json.dumps(summary.to_dict(), sort_keys=True))
    return 0


def _scenario(args):
    from ..sim import FIXTURES, load_scenario

    if getattr(args, "scenario", None):
        s = load_scenario(args.scenario)
    else:
        name = args.fixture or "crosswalk"
        if name not in FIXTURES:
            raise UsageError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
        s = FIXTURES[name]()
    if args.seed is not None:
        s = dataclasses.replace(s, seed=args.seed)
    if getattr(args, "noise_sigma", None) is not None:
        s = dataclasses.replace(s, pixel_noise_sigma=args.noise_sigma)
    return s


def cmd_simulate(args) -> int:
    from ..ingest_io import write_detection_stream
    from ..sim import run_scenario, save_scenario, scenario_config_dict, write_ground_truth

    s = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dets, truth = run_scenario(s)
    clean, _ = run_scenario(dataclasses.replace(s, pixel_noise_sigma=0.0, drop_probability=0.0, distortion=None))
    with open(out / "detections.ndjson", "w", encoding="utf-8") as fh:
        write_detection_stream(fh, dets)
    with open(out / "truth.ndjson", "w", encoding="utf-8") as fh:
        write_ground_truth(fh, truth)
    with open(out / "boxes.ndjson", "w", encoding="utf-8") as fh:
        for d in clean:
            rec = d.to_record()
            fh.write(json.dumps({k: rec[k] for k in ("frame_id", "x_min", "y_min", "x_max", "y_max", "class_label")}) + "\n")
    with open(out / "config.json", "w", encoding="utf-8") as fh:
        json.dump(scenario_config_dict(s), fh, indent=2)
        fh.write("\n")
    save_scenario(s, out / "scenario.json")
    print(f"{s.name}: {len(dets)} detections, {len(s.frame_times())} frames -> {out}")
    return 0


def _load_correspondences(args):
    path = args.config if args.config else args.input
    with _open_in(path) as fh:
        doc = json.load(fh)
    items = doc["correspondences"] if isinstance(doc, dict) and "correspondences" in doc else doc
    return parse_correspondences(items)


def cmd_calibrate(args) -> int:
    gf = build_geoframe(_load_correspondences(args))
    np.set_printoptions(precision=12, suppress=False)
    print("homography (pixel -> lat, lon):")
    for row in gf.H:
        print("  " + "  ".join(f"{v: .12e}" for v in row))
    print("residuals (deg):")
    for (p, g), r in zip(gf.correspondences, gf.residuals()):
        print(f"  ({p.u:g}, {p.v:g}) -> ({g.lat:.8f}, {g.lon:.8f})  {r:.3e}")
    return 0


def _thresholds(text: str):
    if ":" in text:
        a, b, step = (float(x) for x in text.split(":"))
        n = int(round((b - a) / step))
        return [round(a + k * step, 10) for k in range(n + 1)]
    return [float(x) for x in text.split(",") if x.strip()]


def _box(rec):
    return (float(rec["x_min"]), float(rec["y_min"]), float(rec["x_max"]), float(rec["y_max"]))


def cmd_eval(args) -> int:
    from ..ingest_io import read_detection_stream

    try:
        thresholds = _thresholds(args.thresholds)
    except ValueError:
        raise UsageError(f"bad --thresholds {args.thresholds!r}") from None
    with _open_in(args.input) as fh:
        dets = [ScoredBox(d.frame_id, d.bbox, d.confidence, d.class_label)
                for batch in read_detection_stream(fh) for d in batch.detections]
    truths = []
    with open(args.truth, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                truths.append(TruthBox(rec["frame_id"], BoundingBox(*_box(rec)), rec.get("class_label")))
    curves = eval_curves(dets, truths, thresholds, args.iou)
    with _open_out(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "f1"])
        w.writerows(curves.rows())
    best = curves.best_threshold()
    k = curves.thresholds.index(best)
    print(f"{len(dets)} detections, {len(truths)} labelled boxes; best F1 {curves.f1[k]:.4f} at "
          f"threshold {best:g} (precision {curves.precision[k]:.4f}, recall {curves.recall[k]:.4f})",
          file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args, required=False)
    s = _scenario(argparse.Namespace(fixture=args.fixture or "busy", seed=args.seed))
    res = bench(cfg, s, args.repetitions, args.budget_ms / 1e3)
    print(res.report.text())
    if args.csv_dir:
        os.makedirs(args.csv_dir, exist_ok=True)
        with open(os.path.join(args.csv_dir, "latency_stats.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(res.stats_csv())
        with open(os.path.join(args.csv_dir, "latency_hist.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(res.histogram_csv())
        with open(os.path.join(args.csv_dir, "latency_samples.csv"), "w", encoding="utf-8", newline="") as fh:
            fh.write(res.samples_csv())
    return 0


def cmd_report(args) -> int:
    if args.ras_rad:
        X = read_ras_rad_csv(args.ras_rad)
        zm = ZoneMap(bins=args.bins).fit(X)
        zones = zm.predict(X)
        with _open_out(args.out) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["ras", "rad", "zone"])
            for (ras, rad), z in zip(X, zones):
                w.writerow([float(ras), float(rad), z])
        counts = {z: int((zones == z).sum()) for z in sorted(set(zones))}
        print(f"{len(X)} rows; zones {counts}", file=sys.stderr)
    elif args.latency:
        with open(args.latency, encoding="utf-8", newline="") as fh:
            samples = [float(r["seconds"]) for r in csv.DictReader(fh)
                       if r.get("stage", args.stage) == args.stage]
        st = latency_stats(samples)
        with _open_out(args.out) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_lo", "bin_hi", "pdf", "cdf"])
            for k in range(len(st.pdf)):
                w.writerow([st.bin_edges[k], st.bin_edges[k + 1], st.pdf[k], st.cdf[k]])
        print(json.dumps({k: v for k, v in st.summary_row().items()}), file=sys.stderr)
    else:
        if args.out is None:
            raise UsageError("--road-state needs --out")
        cfg = _config(args)
        pipe = Pipeline(cfg, road_state_csv=args.out)
        try:
            with _open_in(args.input) as fh:
                summary = pipe.run(fh)
        finally:
            pipe.close()
        print(json.dumps(summary.to_dict(), sort_keys=True), file=sys.stderr)
    return 0


COMMANDS = {
    "run": cmd_run,
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "report": cmd_report,
}


def main(argv=None, environ=None) -> int:
    parser = build_parser()
    environ = os.environ if environ is None else environ
    try:
        args = parser.parse_args(argv)
        _apply_env(parser, args, environ)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (KerbwatchError, ValueError, ArithmeticError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry_point():
    sys.exit(main())


if __name__ == "__main__":
    entry_point()
