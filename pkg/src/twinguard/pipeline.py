"""End-to-end drivers behind the command-line interface.

* :func:`prepare` balances and merges the two source datasets;
* :func:`run_detection` bootstraps router twins, replays the attack
  schedule through the twin graph and the brain, and writes event logs
  plus a deterministic ``report.json``;
* :func:`autofs_bench` repeats AutoFS over several seeds;
* :func:`build_report` turns a run directory into plot-ready CSVs;
* :func:`cross_validate` scores the full pipeline by stratified k-fold.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataprep, mlp, selection, synthetic
from .brain import METRICS, NearestCentroid, RouterBrain, confusion, metrics_from_confusion
from .errors import LogFormatError, MissingLogs
from .labels import DDOS, NOT_DDOS, Label
from .twin_graph import TwinGraph, canonical_json
from .config import write_config
from .yang import extract_features, load_manifest, load_module

log = logging.getLogger(__name__)

PREPARED_LABELS = {"DDoS": "DDoS", "NotDDoS": "NotDDoS"}
REFERENCE_NOTE = ("online metrics use ensemble pseudo-labels as references; "
                  "replay ground truth is used only in harness mode and for the aggregate scores")


def manifest_for(cfg):
    m = cfg["manifest"]
    modules = [load_module(cfg.path(p)) for p in m["modules"]] or None
    return load_manifest(cfg.path(m["spec"]), modules)


def _as_pool(ds, manifest):
    cols = tuple(manifest.source_columns)
    return dataprep.Dataset(ds.columns(cols), ds.labels, cols)


# ------------------------------------------------------------------ prepare

def prepare(cfg, out_dir, row_cap=None):
    """Apply both balancing recipes and merge onto the manifest columns."""
    data = cfg["data"]
    row_cap = row_cap if row_cap is not None else data["row_cap"]
    seed = cfg.seed
    loaded, balanced, stats = [], [], {"sources": {}}
    for key, recipe in (("d1", "undersample+smote"), ("d2", "near_miss")):
        src = data[key]
        ds = dataprep.load_csv(cfg.path(src["path"]), src["label_column"], src["label_mapping"],
                               row_cap=row_cap, seed=selection.subseed(seed, 1), drop_columns=src["drop_columns"])
        if key == "d1":
            out = dataprep.balance_undersample_smote(ds, seed, data["keep_fraction"], data["ddos_share"])
        else:
            out = dataprep.balance_near_miss(ds, seed, data["ddos_share"])
        loaded.append(ds)
        balanced.append(out)
        stats["sources"][key] = {
            "path": str(src["path"]), "recipe": recipe, "columns": len(ds.column_names),
            "rows_in": len(ds), "ddos_in": ds.count(DDOS), "notddos_in": ds.count(NOT_DDOS),
            "rows_out": len(out), "ddos_out": out.count(DDOS), "notddos_out": out.count(NOT_DDOS),
            "imbalance_ratio_out": dataprep.imbalance_ratio(out),
        }
    manifest = manifest_for(cfg)
    merged = dataprep.merge_on_columns(balanced, manifest.source_columns)
    stats.update({
        "rows": len(merged), "ddos": merged.count(DDOS), "notddos": merged.count(NOT_DDOS),
        "ddos_share": merged.count(DDOS) / len(merged),
        "imbalance_ratio": dataprep.imbalance_ratio(merged), "columns": len(merged.column_names),
    })
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    merged.to_csv(out_dir / "prepared.csv")
    (out_dir / "prepare_stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    return merged, stats


def load_prepared(path, row_cap=None, seed=0):
    return dataprep.load_csv(path, "label", PREPARED_LABELS, row_cap=row_cap, seed=seed)


def _prepared_path(cfg, out_dir):
    p = cfg["data"]["prepared"]
    return cfg.path(p) if p is not None else Path(out_dir) / "prepared.csv"


# ---------------------------------------------------------------------- run

def attack_latencies(alarms, schedule, ticks_per_minute):
    """Per attack interval: first alarm opening inside it and its delay."""
    out = []
    for start, end in schedule.intervals:
        hit = next((a for a in alarms if start <= a.onset_tick < end), None)
        out.append({
            "start_tick": start, "end_tick": end, "detected": hit is not None,
            "onset_tick": hit.onset_tick if hit else None,
            "latency_minutes": (hit.onset_tick - start) / ticks_per_minute if hit else None,
        })
    return out


def _metrics(pred, ref):
    return metrics_from_confusion(*confusion(pred, ref)).as_dict()


def run_detection(cfg, out_dir, ground_truth_metrics=None, row_cap=None):
    """Replay the configured schedule and write all run artefacts to ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = cfg.seed
    rp = cfg["replay"]
    R = int(rp["ticks_per_minute"])
    gt_mode = cfg["brain"]["ground_truth_metrics"] if ground_truth_metrics is None else ground_truth_metrics
    manifest = manifest_for(cfg)
    pool = _as_pool(load_prepared(_prepared_path(cfg, out_dir), row_cap, selection.subseed(seed, 2)), manifest)
    segments = []
    if cfg["data"]["drift"]:
        d = cfg["data"]["drift"]
        drift_ds = _as_pool(load_prepared(cfg.path(d["path"])), manifest)
        segments.append((int(round(d["at_minute"] * R)), drift_ds))
    schedule = dataprep.AttackSchedule.from_minutes(rp["schedule_minutes"], R)
    n_ticks = int(round(rp["duration_minutes"] * R))

    graph = TwinGraph({"kpi": manifest})
    names = list(rp["twins"])
    ids = [graph.register_router(n, "kpi") for n in names]
    for a, b in zip(ids, ids[1:]):
        graph.relate(a, b, "peer")
    thresholds, autofs_cfg = cfg.thresholds(), cfg.autofs()
    brains, replays = [], []
    for i, tid in enumerate(ids):
        log.info("bootstrapping %s", names[i])
        brains.append(RouterBrain.bootstrap(tid, pool, seed=selection.subseed(seed, 10, i), thresholds=thresholds,
                                            autofs=autofs_cfg, ground_truth=gt_mode,
                                            n_features=len(manifest.sensors)))
        replays.append(dataprep.Replay(pool, manifest, schedule, int(rp["rate"]), selection.subseed(seed, 20, i),
                                       n_ticks, 0, segments))
    reference = NearestCentroid(pool.features, pool.labels)
    paths = tuple(manifest.paths)

    verdict_fh = (out_dir / "verdicts.ndjson").open("w")
    telemetry_fh = (out_dir / "telemetry.ndjson").open("w") if cfg["telemetry"]["ndjson"] else None
    streams = [iter(r) for r in replays]
    preds = {tid: [] for tid in ids}
    base_preds = {tid: [] for tid in ids}
    truths = {tid: [] for tid in ids}
    try:
        for tick in range(n_ticks):
            for i, tid in enumerate(ids):
                batch = next(streams[i])
                if telemetry_fh is not None:
                    telemetry_fh.writelines(line + "\n" for line in batch.wire_lines(names[i]))
                for row in batch.rows:
                    graph.ingest_row(tid, paths, row, tick)
                    fv = extract_features(manifest, graph.snapshot(tid))
                    v = brains[i].on_feature_vector(fv, truth=batch.label)
                    b = reference.predict(fv.values)
                    preds[tid].append(v.cls)
                    base_preds[tid].append(b)
                    truths[tid].append(batch.label)
                    verdict_fh.write(json.dumps({
                        "twin": names[i], "ts": tick, "class": Label(v.cls).text, "confidence": v.confidence,
                        "model_version": v.model_version, "baseline": Label(b).text,
                    }, separators=(",", ":")) + "\n")
                brains[i].maintain(tick)
    finally:
        verdict_fh.close()
        if telemetry_fh is not None:
            telemetry_fh.close()

    twins_report = []
    with (out_dir / "alarms.ndjson").open("w") as fh:
        for i, tid in enumerate(ids):
            for a in brains[i].alarms.alarms:
                fh.write(json.dumps({"twin": names[i], "onset_tick": a.onset_tick, "cleared_tick": a.cleared_tick},
                                    separators=(",", ":")) + "\n")
    for i, (tid, br) in enumerate(zip(ids, brains)):
        dataprep.write_ground_truth(out_dir / f"ground_truth_{names[i]}.csv", replays[i].ground_truth)
        series = _write_metrics_csv(out_dir / f"metrics_{names[i]}.csv", br, gt_mode)
        twins_report.append({
            "twin": names[i], "twin_id": tid,
            "bootstrap": br.bootstrap_outcome.to_json(),
            "final_model_version": br.active.version,
            "final_method": br.active.method,
            "final_indices": list(br.active.indices),
            "alarms": [{"onset_tick": a.onset_tick, "cleared_tick": a.cleared_tick,
                        "onset_minute": a.onset_tick / R,
                        "cleared_minute": None if a.cleared_tick is None else a.cleared_tick / R}
                       for a in br.alarms.alarms],
            "attacks": attack_latencies(br.alarms.alarms, schedule, R),
            "triggers": [{"tick": e.tick, "model_version": e.version, "breached": e.reason, "autofs": e.outcome}
                         for e in br.triggers],
            "autofs_failures": br.failures,
            "metrics": series,
            "aggregate": {"pipeline": _metrics(preds[tid], truths[tid]),
                          "nearest_centroid": _metrics(base_preds[tid], truths[tid])},
            "ops_per_verdict": br.ops_per_verdict(),
        })
    all_pred = np.concatenate([preds[t] for t in ids])
    all_base = np.concatenate([base_preds[t] for t in ids])
    all_truth = np.concatenate([truths[t] for t in ids])
    report = {
        "seed": seed,
        "config": cfg.as_dict(),
        "reference_labels": "ground_truth" if gt_mode else "pseudo_labels",
        "note": REFERENCE_NOTE,
        "ticks": n_ticks,
        "ticks_per_minute": R,
        "schedule_ticks": [list(iv) for iv in schedule.intervals],
        "relations": graph.export_graph()["relations"],
        "twins": twins_report,
        "aggregate": {"pipeline": _metrics(all_pred, all_truth),
                      "nearest_centroid": _metrics(all_base, all_truth),
                      "verdicts": int(all_truth.size)},
        "traffic_guidance": {m.value: g for m, g in selection.TRAFFIC_GUIDANCE.items()},
    }
    (out_dir / "report.json").write_text(canonical_json(_clean(report)) + "\n")
    return report


def _clean(obj):
    """Replace non-finite floats so the report stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _write_metrics_csv(path, brain, gt_mode):
    series = []
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tick", "model_version", *METRICS, "n", "status", "action", "reference"])
        for tick, version, snap, action in brain.metrics_log:
            status = "insufficient" if snap.insufficient else "ok"
            act = "triggered" if hasattr(action, "outcome") else action.reason
            ref = "ground_truth" if gt_mode else "pseudo_labels"
            w.writerow([tick, version, *[repr(getattr(snap, m)) for m in METRICS], snap.n, status, act, ref])
            series.append({"tick": tick, "model_version": version, **snap.as_dict(), "action": act})
    return series


# -------------------------------------------------------------------- bench

def autofs_bench(cfg, out_dir, seeds=None, row_cap=None):
    """Run AutoFS over several seeds on windows drawn from the prepared pool.

    The windows are treated as unlabelled; the pseudo-labelling space is the
    ANOVA top-10 of the labelled pool.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = manifest_for(cfg)
    pool = _as_pool(load_prepared(_prepared_path(cfg, out_dir), row_cap, selection.subseed(cfg.seed, 2)), manifest)
    n_seeds = int(cfg["bench"]["seeds"] if seeds is None else seeds)
    n_window = int(cfg["bench"]["window_rows"])
    active = selection.anova_f_select(pool.features, pool.labels).indices
    autofs_cfg = cfg.autofs()
    rows = []
    for s in range(n_seeds):
        seed = cfg.seed + s
        rng = np.random.default_rng(selection.subseed(seed, 30))
        win = np.sort(rng.choice(len(pool), n_window, replace=False))
        rest = pool.take(np.setdiff1d(np.arange(len(pool)), win))
        outcome = selection.run_autofs(pool.features[win], rest, active, seed, autofs_cfg)
        for c in outcome.candidates:
            rows.append({"seed": seed, "method": c.method.value, "recall": c.recall, "time": c.detection_time,
                         "wall_time": c.wall_time, "winner": int(c is outcome.winner)})
    with (out_dir / "autofs_bench.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["seed", "method", "recall", "time", "wall_time", "winner"])
        w.writeheader()
        w.writerows(rows)
    with (out_dir / "autofs_bench_summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "runs", "recall_mean", "recall_min", "recall_max", "time_mean", "wins",
                    "traffic_guidance"])
        for m in selection.FsMethod:
            sel = [r for r in rows if r["method"] == m.value]
            if not sel:
                continue
            rec = np.array([r["recall"] for r in sel])
            w.writerow([m.value, len(sel), rec.mean(), rec.min(), rec.max(),
                        float(np.mean([r["time"] for r in sel])), sum(r["winner"] for r in sel),
                        selection.TRAFFIC_GUIDANCE[m]])
    return rows


# ------------------------------------------------------------------- report

def read_verdicts(path):
    path = Path(path)
    out = []
    with path.open() as fh:
        for no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append((obj["twin"], int(obj["ts"]), Label.parse(obj["class"]), Label.parse(obj["baseline"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise LogFormatError(path, no, f"bad verdict line: {exc}") from None
    return out


def read_ground_truth(path):
    path = Path(path)
    out = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["tick", "label"]:
            raise LogFormatError(path, 1, "expected header tick,label")
        for no, row in enumerate(reader, 2):
            try:
                out[int(row[0])] = int(Label.parse(row[1]))
            except (ValueError, IndexError) as exc:
                raise LogFormatError(path, no, f"bad ground-truth row: {exc}") from None
    return out


def detection_rate_rows(verdicts, truth_by_twin, ticks_per_minute):
    """Per twin and minute: share of DDoS verdicts and whether an attack was active."""
    acc = {}
    for twin, ts, cls, _ in verdicts:
        key = (twin, ts // ticks_per_minute)
        n, d, a = acc.get(key, (0, 0, 0))
        attack = truth_by_twin[twin].get(ts, NOT_DDOS) == DDOS
        acc[key] = (n + 1, d + (cls == DDOS), a or attack)
    return [{"twin": t, "minute": m, "ddos_verdict_rate": d / n, "attack_active": int(a)}
            for (t, m), (n, d, a) in sorted(acc.items())]


def build_report(run_dir):
    run_dir = Path(run_dir)
    vpath, rpath = run_dir / "verdicts.ndjson", run_dir / "report.json"
    for p in (vpath, rpath):
        if not p.exists():
            raise MissingLogs(f"run directory {run_dir} lacks {p.name}")
    try:
        report = json.loads(rpath.read_text())
    except json.JSONDecodeError as exc:
        raise LogFormatError(rpath, exc.lineno, exc.msg) from None
    verdicts = read_verdicts(vpath)
    truth = {}
    for t in report["twins"]:
        gpath = run_dir / f"ground_truth_{t['twin']}.csv"
        if not gpath.exists():
            raise MissingLogs(f"run directory {run_dir} lacks {gpath.name}")
        truth[t["twin"]] = read_ground_truth(gpath)
    rate_rows = detection_rate_rows(verdicts, truth, report["ticks_per_minute"])
    with (run_dir / "detection_rate.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["twin", "minute", "ddos_verdict_rate", "attack_active"])
        w.writeheader()
        w.writerows(rate_rows)

    ref = np.array([truth[tw][ts] for tw, ts, _, _ in verdicts])
    comparison = [
        {"method": "twinguard-mlp", "source": "stream",
         **_metrics(np.array([v[2] for v in verdicts]), ref)},
        {"method": "nearest-centroid", "source": "stream",
         **_metrics(np.array([v[3] for v in verdicts]), ref)},
    ]
    for t in report["twins"]:
        for c in t["bootstrap"]["candidates"]:
            comparison.append({"method": f"autofs:{c['method']}", "source": f"bootstrap:{t['twin']}",
                               "accuracy": c["test_accuracy"], "recall": c["recall"],
                               "detection_time": c["detection_time"]})
    with (run_dir / "method_comparison.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, ["method", "source", *METRICS, "detection_time"], extrasaction="ignore")
        w.writeheader()
        w.writerows(comparison)
    return rate_rows, comparison


# ---------------------------------------------------------- cross-validate

def cross_validate(ds, k: int = 10, seed: int = 0, autofs_cfg=selection.AutoFsConfig()):
    """Stratified k-fold score of AutoFS feature selection plus the MLP.

    On each fold, supervised AutoFS on the training part picks the features;
    the MLP is then retrained on the whole training part with them.
    """
    plan = dataprep.stratified_kfold(ds, k, seed)
    pred = np.empty(len(ds), dtype=int)
    folds = []
    for f in range(k):
        train, test = plan.split(f)
        part = ds.take(train)
        outcome = selection.bootstrap_autofs(part, selection.subseed(seed, 50, f), autofs_cfg)
        idx = list(outcome.winner.selected)
        model = mlp.init_model(selection.subseed(seed, 51, f), (len(idx),) + mlp.LAYER_SIZES[1:])
        tc = replace(autofs_cfg.train, seed=selection.subseed(seed, 52, f))
        model, _ = mlp.train(model, (part.features[:, idx], part.labels), tc)
        pred[test] = mlp.predict_batch(model, ds.features[test][:, idx])
        folds.append({"fold": f, "method": outcome.winner.method.value, "indices": idx,
                      **_metrics(pred[test], ds.labels[test])})
    return _metrics(pred, ds.labels), folds


# ----------------------------------------------------------------- fixtures

def drift_schedule(duration_minutes=200, pulse_minutes=5):
    """Alternating attack pulses so every window holds both classes."""
    return [[a, a + pulse_minutes] for a in range(pulse_minutes, duration_minutes, 2 * pulse_minutes)]


def make_fixtures(out_dir, seed: int = 0):
    """Write mini-D1/mini-D2, drift regimes and ready-to-run configs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    synthetic.write_mini_d1(out_dir / "mini_d1.csv", seed)
    synthetic.write_mini_d2(out_dir / "mini_d2.csv", seed + 1)
    before, after = synthetic.drift_regimes()
    rng = np.random.default_rng(selection.subseed(seed, 60))
    before.sample(3000, 3000, rng).to_csv(out_dir / "drift_pre.csv")
    after.sample(3000, 3000, rng).to_csv(out_dir / "drift_post.csv")
    write_config(out_dir / "config.yaml", {
        "seed": seed,
        "data": {"d1": {"path": "mini_d1.csv"}, "d2": {"path": "mini_d2.csv"}},
        "replay": {"twins": ["core-1"], "schedule_minutes": [[60, 290]], "duration_minutes": 330},
    })
    write_config(out_dir / "drift.yaml", {
        "seed": seed,
        "data": {"prepared": "drift_pre.csv", "drift": {"path": "drift_post.csv", "at_minute": 100}},
        "replay": {"twins": ["core-1"], "schedule_minutes": drift_schedule(200), "duration_minutes": 200},
    })
    return sorted(p.name for p in out_dir.iterdir())
