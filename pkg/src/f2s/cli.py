"""Command-line entry point: synth, train, sample, eval, analyze, ablate.

All outputs are deterministic given the seeds on the command line: reruns
produce byte-identical files. F2S_THREADS caps the per-subject worker count
used by sampling and evaluation; results do not depend on it.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 divergence.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .conndata import (
    GROUPS,
    SubjectRecord,
    load_connectome,
    load_dataset,
    load_timeseries,
    load_volume,
    parcellate,
    save_matrix,
    synth_dataset,
    write_dataset,
)
from .errors import ConfigError, DataError, DivergenceError
from .graphmetrics import METRIC_NAMES, metric_errors
from .netarch import Generator, load_checkpoint
from .symdiffusion import build_schedule, sample_connectome
from .trainer import TrainConfig, split_dataset, train

Array = np.ndarray


def worker_count() -> int:
    raw = os.environ.get("F2S_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"F2S_THREADS must be an integer, got {raw!r}")


def subject_rng(seed: int, subject_id: str) -> np.random.Generator:
    """Per-subject stream derived from (seed, subject id); order-independent."""
    digest = hashlib.sha256(subject_id.encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


# synth ------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 240
    n: int = 16
    s: int = 64
    seed: int = 0

    @classmethod
    def load(cls, path) -> "SynthConfig":
        if path is None:
            return cls()
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown synth config fields: {sorted(unknown)}")
        return cls(**obj)


def cmd_synth(args) -> int:
    cfg = SynthConfig.load(args.config)
    records = synth_dataset(cfg.n_subjects, cfg.n, cfg.s, cfg.seed)
    manifest = write_dataset(
        records,
        args.out,
        meta={"n": cfg.n, "s": cfg.s, "seed": cfg.seed, "n_subjects": cfg.n_subjects},
    )
    print(f"wrote {len(records)} subjects to {manifest.parent}")
    return 0


# train ------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = TrainConfig.load(args.config)
    records = load_dataset(args.data)
    ckpt = train(records, cfg, args.out, resume=args.resume)
    print(f"trained to epoch {ckpt.epoch}; checkpoint in {args.out}")
    return 0


# sample -----------------------------------------------------------------------


def _load_features(path) -> Array:
    path = Path(path)
    if path.suffix == ".f2sv":
        return parcellate(load_volume(path)).values
    return load_timeseries(path).values


def make_predictor(checkpoint_path):
    """(features, rng) -> predicted connectome, from a stored checkpoint."""
    ckpt = load_checkpoint(checkpoint_path)
    cfg = TrainConfig.from_json(ckpt.config)
    sched = build_schedule(cfg.T, cfg.beta_1, cfg.beta_T)
    gen = Generator(ckpt.spec, ckpt.gen, sched)

    def predict(feats: Array, rng: np.random.Generator):
        return sample_connectome(gen, feats, sched, cfg.d, rng)

    return predict, ckpt, cfg


def cmd_sample(args) -> int:
    predict, _, _ = make_predictor(args.checkpoint)
    feats = _load_features(args.subject)
    rng = subject_rng(args.seed, Path(args.subject).stem)
    pred = predict(feats, rng)
    save_matrix(args.out, pred)
    print(f"wrote predicted matrix to {args.out}")
    return 0


# eval -------------------------------------------------------------------------


def evaluate_records(
    records: list[SubjectRecord],
    predict,
    density: float,
    seed: int,
    threads: int = 1,
) -> tuple[list[dict], dict[str, Array]]:
    """Predict every record and compare against its empirical matrix."""
    for rec in records:
        if rec.empirical_sc is None:
            raise DataError(f"subject {rec.id} has no empirical matrix to evaluate")

    def one(rec: SubjectRecord):
        pred = predict(rec.features(), subject_rng(seed, rec.id))
        report = metric_errors(pred, rec.empirical_sc, density)
        return rec.id, pred.values, report

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, records))
    else:
        results = [one(rec) for rec in records]
    rows = []
    preds = {}
    for sid, pred_values, report in results:
        preds[sid] = pred_values
        row = {"subject": sid}
        row.update(report.as_dict())
        rows.append(row)
    return rows, preds


def _write_metrics_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", *METRIC_NAMES])
        for row in rows:
            writer.writerow(
                [row["subject"]]
                + [format(row[name], ".17g") for name in METRIC_NAMES]
            )


def _write_scatter_csv(path, records, preds) -> None:
    """Group-mean empirical vs predicted entries, vectorized upper triangle."""
    emp = np.mean([r.empirical_sc.values for r in records], axis=0)
    pred = np.mean([preds[r.id] for r in records], axis=0)
    iu = np.triu_indices(emp.shape[0], 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["empirical", "predicted"])
        for e, p in zip(emp[iu], pred[iu]):
            writer.writerow([format(e, ".17g"), format(p, ".17g")])


def run_eval(checkpoint_path, data_path, out_dir, predictor=None) -> list[dict]:
    out = Path(out_dir)
    (out / "pred").mkdir(parents=True, exist_ok=True)
    if predictor is None:
        predict, _, cfg = make_predictor(checkpoint_path)
    else:
        predict, cfg = predictor
    records = load_dataset(data_path)
    _, val_records = split_dataset(records, cfg.seed)
    rows, preds = evaluate_records(
        val_records, predict, cfg.density, cfg.seed, threads=worker_count()
    )
    for sid, values in preds.items():
        save_matrix(out / "pred" / f"{sid}.csv", values)
    _write_metrics_csv(out / "metrics.csv", rows)
    _write_scatter_csv(out / "scatter.csv", val_records, preds)
    summary = {
        name: float(np.mean([row[name] for row in rows])) for name in METRIC_NAMES
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return rows


def cmd_eval(args) -> int:
    rows = run_eval(args.checkpoint, args.data, args.out)
    print(f"evaluated {len(rows)} held-out subjects; reports in {args.out}")
    return 0


# analyze ----------------------------------------------------------------------


@dataclass
class AnalysisReport:
    roi_changes: list[tuple[int, float]]  # (roi, |change| sum), descending
    top10_rois: list[int]
    top20_rois: list[int]
    increased: list[tuple[int, int, float]]  # (i, j, delta), most positive first
    reduced: list[tuple[int, int, float]]  # (i, j, delta), most negative first


def analyze_groups(sc_by_group: dict[str, list[Array]]) -> AnalysisReport:
    """Group difference analysis: MCI mean minus NC mean.

    Per-ROI absolute strength changes are ranked descending (ties broken by
    ROI index); the increased/reduced lists keep the ten strongest strictly
    positive/negative difference edges over symmetric-deduplicated pairs.
    """
    for group in GROUPS:
        if not sc_by_group.get(group):
            raise DataError(f"group {group} has no subjects")
    mean_nc = np.mean(sc_by_group["NC"], axis=0)
    mean_mci = np.mean(sc_by_group["MCI"], axis=0)
    diff = mean_mci - mean_nc
    n = diff.shape[0]
    change = np.abs(diff).sum(axis=1)
    ranking = sorted(range(n), key=lambda i: (-change[i], i))
    k10 = max(1, round(0.10 * n))
    k20 = max(1, round(0.20 * n))
    iu = np.triu_indices(n, 1)
    edges = sorted(
        zip(iu[0].tolist(), iu[1].tolist(), diff[iu].tolist()),
        key=lambda e: (-e[2], e[0], e[1]),
    )
    increased = [e for e in edges if e[2] > 0][:10]
    reduced = [e for e in edges[::-1] if e[2] < 0][:10]
    return AnalysisReport(
        roi_changes=[(i, float(change[i])) for i in ranking],
        top10_rois=sorted(ranking[:k10]),
        top20_rois=sorted(ranking[:k20]),
        increased=increased,
        reduced=reduced,
    )


def _collect_group_scs(sc_dir, manifest_path, suffix) -> dict[str, list[Array]]:
    records = json.loads(Path(manifest_path).read_text())["subjects"]
    sc_dir = Path(sc_dir)
    out: dict[str, list[Array]] = {g: [] for g in GROUPS}
    for entry in records:
        path = sc_dir / f"{entry['id']}{suffix}"
        if not path.exists():
            continue
        out[entry["group"]].append(load_connectome(path).values)
    return out


def write_analysis(report: AnalysisReport, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "roi_changes.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "roi", "strength_change"])
        for rank, (roi, value) in enumerate(report.roi_changes, start=1):
            writer.writerow([rank, roi, format(value, ".17g")])
    for name, edges in (("increased", report.increased), ("reduced", report.reduced)):
        with open(out / f"edges_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["roi_i", "roi_j", "delta"])
            for i, j, delta in edges:
                writer.writerow([i, j, format(delta, ".17g")])
    lines = [
        "Group difference analysis (MCI mean - NC mean)",
        "",
        f"Top 10% ROIs by strength change: {report.top10_rois}",
        f"Top 20% ROIs by strength change: {report.top20_rois}",
        "",
        "Top increased connections (i, j, delta):",
    ]
    lines += [f"  {i:3d} {j:3d} {delta:+.6f}" for i, j, delta in report.increased]
    lines.append("Top reduced connections (i, j, delta):")
    lines += [f"  {i:3d} {j:3d} {delta:+.6f}" for i, j, delta in report.reduced]
    (out / "report.txt").write_text("\n".join(lines) + "\n")


def cmd_analyze(args) -> int:
    if (args.pred_dir is None) == (args.emp_dir is None):
        raise ConfigError("exactly one of --pred-dir / --emp-dir is required")
    if args.pred_dir is not None:
        groups = _collect_group_scs(args.pred_dir, args.manifest, ".csv")
    else:
        groups = _collect_group_scs(args.emp_dir, args.manifest, "_sc.csv")
    report = analyze_groups(groups)
    write_analysis(report, args.out)
    print(f"analysis written to {args.out}")
    return 0


# ablate -----------------------------------------------------------------------


def run_ablation(config_path, data_path, out_dir) -> dict[str, dict[str, tuple]]:
    base_cfg = TrainConfig.load(config_path)
    records = load_dataset(data_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results: dict[str, dict[str, tuple]] = {}
    for variant in ("full", "no_gan", "no_scc"):
        cfg = replace(base_cfg, ablation=variant)
        run_dir = out / variant
        train(records, cfg, run_dir)
        rows = run_eval(run_dir / "checkpoint.ckpt", data_path, run_dir / "eval")
        results[variant] = {
            name: (
                float(np.mean([r[name] for r in rows])),
                float(np.std([r[name] for r in rows])),
            )
            for name in METRIC_NAMES
        }
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", *METRIC_NAMES])
        for variant, metrics in results.items():
            writer.writerow(
                [variant]
                + [f"{m:.6f}±{s:.6f}" for m, s in metrics.values()]
            )
    with open(out / "ablation_raw.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["variant"]
        for name in METRIC_NAMES:
            header += [f"{name}_mean", f"{name}_std"]
        writer.writerow(header)
        for variant, metrics in results.items():
            row = [variant]
            for name in METRIC_NAMES:
                m, s = metrics[name]
                row += [format(m, ".17g"), format(s, ".17g")]
            writer.writerow(row)
    return results


def cmd_ablate(args) -> int:
    run_ablation(args.config, args.data, args.out)
    print(f"ablation table written to {args.out}")
    return 0


# parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="f2s",
        description="Functional-to-structural connectivity prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--config", default=None, help="JSON synth config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train on a dataset manifest")
    p.add_argument("--config", required=True, help="JSON training config")
    p.add_argument("--data", required=True, help="dataset dir or manifest path")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="predict one subject's connectivity")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--subject", required=True, help="time-series CSV or .f2sv volume")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="evaluate on the held-out split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="group-difference connection analysis")
    p.add_argument("--pred-dir", default=None, help="dir of <id>.csv predictions")
    p.add_argument("--emp-dir", default=None, help="dataset dir of <id>_sc.csv files")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="train and evaluate the loss ablations")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
