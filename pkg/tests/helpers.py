"""Shared plumbing for simulator-driven tests."""

import io

from kerbwatch.app.pipeline import Pipeline
from kerbwatch.ingest_io import InMemorySink, TelemetryPublisher, config_from_dict, read_detection_stream
from kerbwatch.ingest_io import write_detection_stream
from kerbwatch.sim import run_scenario, scenario_config_dict


def render(scenario):
    dets, truth = run_scenario(scenario)
    buf = io.StringIO()
    write_detection_stream(buf, dets)
    return buf.getvalue(), truth


def pipeline_frames(scenario, sink=None, **overrides):
    """Run ``scenario`` through a fresh pipeline; return (frame results, truth, sink)."""
    text, truth = render(scenario)
    cfg = config_from_dict(scenario_config_dict(scenario, **overrides))
    sink = sink if sink is not None else InMemorySink()
    pipe = Pipeline(cfg, [TelemetryPublisher(sink)])
    results = [pipe.process(b) for b in read_detection_stream(io.StringIO(text))]
    pipe.close()
    return results, truth, sink


def truth_by_frame(truth):
    out = {}
    for r in truth:
        out.setdefault(r.frame_id, {})[r.actor_id] = r
    return out


def frame_alert_agreement(results, truth):
    """Fraction of frames where 'any pipeline alert' equals 'any oracle alert'."""
    tf = truth_by_frame(truth)
    by_frame = {r.batch.frame_id: r for r in results}
    agree = 0
    for fid, recs in tf.items():
        want = any(v for r in recs.values() for v in r.collision_imminent.values())
        res = by_frame.get(fid)
        got = bool(res.alerts) if res is not None else False
        agree += want == got
    return agree / len(tf), len(tf)
