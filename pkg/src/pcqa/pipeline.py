"""Batch pipeline over reproducible manifests: dataset building, metric
scoring, pseudo-MOS annotation, training, evaluation and reports.

All randomness flows from one dataset seed recorded in the manifest
header; job seeds are derived by hashing (seed, reference, distortion,
level) so builds are reproducible at any parallelism.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import annotate as ann
from . import frmetrics as fr
from .distort import (
    REGISTRY, NATIVE_IDS, AdapterConfig, AdapterError, DistortionError,
    DistortionSpec, apply_distortion,
)
from .pcio import PointCloud, load_ply, save_ply
from .sparsenn import (
    Model, ModelConfig, TrainConfig, TrainSample,
    init_model, load_checkpoint, param_count, predict, save_checkpoint, train,
)

__all__ = [
    "ValidationError", "ManifestRow", "Manifest", "SplitSpec", "Config",
    "job_seed", "cmd_build", "cmd_score", "cmd_annotate", "cmd_train",
    "cmd_eval", "run_ablation", "EvalReport",
    "format_overall_table", "format_pertype_table",
    "format_depth_table", "format_residual_table",
    "RESIDUAL_DESCRIPTIONS",
]

log = logging.getLogger(__name__)

MANIFEST_KIND = "pcqa-manifest"
MANIFEST_VERSION = 1


class ValidationError(ValueError):
    """Bad inputs or contract violations; maps to CLI exit code 1."""


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------


@dataclass
class ManifestRow:
    sample_id: str
    reference_id: str
    distortion_id: int
    level: int
    seed: int
    path: str | None = None
    status: str = "ok"  # ok | failed
    error: str | None = None
    pseudo_mos: float | None = None
    mos: float | None = None
    source_metric: str | None = None
    provenance: dict | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in dataclasses.asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestRow":
        return cls(**d)


@dataclass
class Manifest:
    seed: int
    label_scale: tuple[float, float]
    references: dict[str, str]  # reference id -> PLY path
    rows: list[ManifestRow] = field(default_factory=list)
    psnr_cap: float = fr.PSNR_CAP_DB

    def header(self) -> dict:
        return {
            "kind": MANIFEST_KIND,
            "version": MANIFEST_VERSION,
            "seed": self.seed,
            "label_scale": list(self.label_scale),
            "psnr_cap": self.psnr_cap,
            "references": dict(sorted(self.references.items())),
        }

    def save(self, path: str | Path) -> None:
        lines = [json.dumps(self.header(), sort_keys=True, separators=(",", ":"))]
        lines += [r.to_json() for r in sorted(self.rows, key=lambda r: r.sample_id)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValidationError(f"empty manifest {path}")
        header = json.loads(lines[0])
        if header.get("kind") != MANIFEST_KIND:
            raise ValidationError(f"{path} is not a dataset manifest")
        rows = [ManifestRow.from_dict(json.loads(ln)) for ln in lines[1:] if ln.strip()]
        return cls(
            seed=header["seed"],
            label_scale=tuple(header["label_scale"]),
            references=header["references"],
            rows=rows,
            psnr_cap=header.get("psnr_cap", fr.PSNR_CAP_DB),
        )

    def validate(self, base_dir: str | Path | None = None) -> None:
        base = Path(base_dir) if base_dir else Path(".")
        seen = set()
        lo, hi = self.label_scale
        for row in self.rows:
            if row.sample_id in seen:
                raise ValidationError(f"duplicate sample_id {row.sample_id}")
            seen.add(row.sample_id)
            if row.reference_id not in self.references:
                raise ValidationError(f"{row.sample_id}: unknown reference {row.reference_id}")
            for label in (row.pseudo_mos, row.mos):
                if label is not None and not lo <= label <= hi:
                    raise ValidationError(
                        f"{row.sample_id}: label {label} outside scale [{lo}, {hi}]")
            if row.status == "ok":
                if not row.path:
                    raise ValidationError(f"{row.sample_id}: ok row without a path")
                if not (base / row.path).exists():
                    raise ValidationError(f"{row.sample_id}: missing file {row.path}")

    def ok_rows(self) -> list[ManifestRow]:
        return [r for r in self.rows if r.status == "ok"]


@dataclass(frozen=True)
class SplitSpec:
    """Partition of reference ids; by-reference so content never overlaps."""

    train: tuple[str, ...]
    test: tuple[str, ...]

    def __post_init__(self):
        overlap = set(self.train) & set(self.test)
        if overlap:
            raise ValidationError(f"train/test reference overlap: {sorted(overlap)}")

    @classmethod
    def parse(cls, spec: str, all_refs: list[str]) -> "SplitSpec":
        """Either a JSON file path or an inline 'test=ref1,ref2' rule."""
        if spec.startswith("test="):
            test = tuple(s for s in spec[5:].split(",") if s)
            unknown = set(test) - set(all_refs)
            if unknown:
                raise ValidationError(f"unknown test references: {sorted(unknown)}")
            train = tuple(r for r in all_refs if r not in test)
            return cls(train=train, test=test)
        path = Path(spec)
        if not path.exists():
            raise ValidationError(f"split spec file not found: {spec}")
        d = json.loads(path.read_text())
        return cls(train=tuple(d["train"]), test=tuple(d["test"]))


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------


@dataclass
class Config:
    seed: int = 0
    distortions: tuple[int, ...] = NATIVE_IDS
    metrics: tuple[str, ...] = fr.BUILTIN_METRICS
    label_scale: tuple[float, float] = (1.0, 5.0)
    adapters: dict[int, AdapterConfig] = field(default_factory=dict)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_file(cls, path: str | Path) -> "Config":
        d = json.loads(Path(path).read_text())
        return cls.from_dict(d)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        cfg = cls()
        if "seed" in d:
            cfg.seed = int(d["seed"])
        if "distortions" in d:
            cfg.distortions = tuple(int(i) for i in d["distortions"])
            unknown = [i for i in cfg.distortions if i not in REGISTRY]
            if unknown:
                raise ValidationError(f"unknown distortion ids {unknown}")
        if "metrics" in d:
            cfg.metrics = tuple(d["metrics"])
        if "label_scale" in d:
            lo, hi = d["label_scale"]
            if not lo < hi:
                raise ValidationError("label scale must satisfy min < max")
            cfg.label_scale = (float(lo), float(hi))
        if "adapters" in d:
            cfg.adapters = {
                int(k): AdapterConfig.from_dict(v) for k, v in d["adapters"].items()}
        if "model" in d:
            cfg.model = ModelConfig(**d["model"])
        if "train" in d:
            t = dict(d["train"])
            for key in ("scale_range", "rotation_range", "label_scale"):
                if key in t:
                    t[key] = tuple(t[key])
            cfg.train = TrainConfig(**t)
        return cfg


def load_adapters(path: str | Path) -> dict[int, AdapterConfig]:
    d = json.loads(Path(path).read_text())
    return {int(k): AdapterConfig.from_dict(v) for k, v in d.items()}


def job_seed(dataset_seed: int, reference_id: str, distortion_id: int) -> int:
    """Stable 64-bit job key derived from the dataset seed and coordinates.

    The level deliberately stays out of the hash (the distortion generator
    spawns per-level streams itself); this keeps local-distortion anchors
    nested across the levels of one built dataset.
    """
    text = f"{dataset_seed}|{reference_id}|{distortion_id}"
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


# ---------------------------------------------------------------------------
# build
# ---------------------------------------------------------------------------

_REF_CACHE: dict[str, PointCloud] = {}


def _load_ref(path: str) -> PointCloud:
    cloud = _REF_CACHE.get(path)
    if cloud is None:
        cloud = load_ply(path)
        _REF_CACHE[path] = cloud
    return cloud


def _build_worker(args: tuple) -> dict:
    ref_path, ref_id, did, level, seed, out_path, adapters_raw = args
    adapters = {int(k): AdapterConfig.from_dict(v) for k, v in adapters_raw.items()}
    row: dict = {
        "sample_id": Path(out_path).stem, "reference_id": ref_id,
        "distortion_id": did, "level": level, "seed": seed,
    }
    try:
        cloud = _load_ref(ref_path)
        spec = DistortionSpec(distortion_id=did, level=level, seed=seed)
        out = apply_distortion(cloud, spec, adapters=adapters)
        save_ply(out, out_path, mode="binary_le")
        row["status"] = "ok"
        row["path"] = str(Path(out_path).name)
        info = REGISTRY[did]
        if info.category == "external":
            raw = info.param(level)
            params = list(raw) if isinstance(raw, tuple) else [raw]
            row["provenance"] = {"tool": adapters[did].command, "params": params}
    except (DistortionError, AdapterError, OSError, ValueError) as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def cmd_build(
    refs_dir: str | Path,
    out_dir: str | Path,
    config: Config,
    jobs: int = 1,
) -> Manifest:
    """One distorted cloud + manifest row per (reference, distortion, level)."""
    refs_dir = Path(refs_dir)
    out_dir = Path(out_dir)
    ref_paths = sorted(refs_dir.glob("*.ply"))
    if not ref_paths:
        raise ValidationError(f"no reference PLY files in {refs_dir}")
    clouds_dir = out_dir / "clouds"
    clouds_dir.mkdir(parents=True, exist_ok=True)

    adapters_raw = {
        str(k): {"command": v.command, "args": list(v.args), "serialize": v.serialize}
        for k, v in config.adapters.items()}
    tasks = []
    references = {}
    for ref_path in ref_paths:
        ref_id = ref_path.stem
        references[ref_id] = str(ref_path)
        for did in sorted(config.distortions):
            for level in range(1, 8):
                seed = job_seed(config.seed, ref_id, did)
                sample_id = f"{ref_id}__d{did:02d}_l{level}"
                out_path = str(clouds_dir / f"{sample_id}.ply")
                tasks.append((str(ref_path), ref_id, did, level, seed, out_path, adapters_raw))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows_raw = list(pool.map(_build_worker, tasks, chunksize=4))
    else:
        rows_raw = [_build_worker(t) for t in tasks]

    rows = [ManifestRow.from_dict(r) for r in rows_raw]
    failures = [r for r in rows if r.status == "failed"]
    if failures:
        log.warning("%d/%d build jobs failed; first: %s (%s)",
                    len(failures), len(rows), failures[0].sample_id, failures[0].error)
    manifest = Manifest(seed=config.seed, label_scale=config.label_scale,
                        references=references, rows=rows)
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

_REF_NORMALS_CACHE: dict[str, PointCloud] = {}


def _score_worker(args: tuple) -> list[tuple[str, str, str, float]]:
    ref_path, ref_id, degraded_path, degraded_id, did, metrics = args
    reference = _load_ref(ref_path)
    degraded = load_ply(degraded_path)
    out = []
    for metric in metrics:
        if not fr.metric_applicable(metric, did):
            continue
        value = fr.compute_metric(metric, reference, degraded)
        out.append((metric, ref_id, degraded_id, value))
    return out


def cmd_score(
    manifest_path: str | Path,
    out_csv: str | Path,
    metrics: tuple[str, ...] = fr.BUILTIN_METRICS,
    jobs: int = 1,
) -> int:
    """One score row per applicable (metric, sample); returns the row count."""
    manifest_path = Path(manifest_path)
    manifest = Manifest.load(manifest_path)
    base = manifest_path.parent
    manifest.validate(base_dir=base / "clouds")
    unknown = [m for m in metrics if m not in fr.BUILTIN_METRICS]
    if unknown:
        raise ValidationError(f"unknown builtin metrics: {unknown}")

    tasks = []
    skipped = 0
    for row in manifest.ok_rows():
        applicable = tuple(m for m in metrics if fr.metric_applicable(m, row.distortion_id))
        skipped += len(metrics) - len(applicable)
        tasks.append((
            manifest.references[row.reference_id], row.reference_id,
            str(base / "clouds" / row.path), row.sample_id,
            row.distortion_id, applicable))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_score_worker, tasks, chunksize=4))
    else:
        chunks = [_score_worker(t) for t in tasks]

    scores = sorted(
        (s for chunk in chunks for s in chunk),
        key=lambda s: (fr.metric_order_key(s[0]), s[2]))
    lines = ["metric_name,reference_id,degraded_id,value"]
    lines += [f"{m},{r},{d},{v!r}" for m, r, d, v in scores]
    Path(out_csv).write_text("\n".join(lines) + "\n")
    if skipped:
        log.info("skipped %d inapplicable (metric, sample) pairs", skipped)
    return len(scores)


# ---------------------------------------------------------------------------
# annotate
# ---------------------------------------------------------------------------


@dataclass
class AnnotateResult:
    manifest: Manifest
    selection: dict[int, str]
    fit_srocc: float
    fit_plcc: float
    holdout_srocc: float | None
    holdout_plcc: float | None
    holdout_refs: tuple[str, ...]
    fit_stats: ann.ErrorStats | None
    holdout_stats: ann.ErrorStats | None


def _read_scores(path: str | Path) -> dict[tuple[str, str], float]:
    return {(s.metric, s.degraded_id): s.value for s in fr.ingest_external_scores(path)}


def cmd_annotate(
    manifest_path: str | Path,
    scores_csv: str | Path,
    subjective_csv: str | Path,
    out_manifest: str | Path,
    report_dir: str | Path | None = None,
    holdout_refs: tuple[str, ...] | None = None,
) -> AnnotateResult:
    """Screen subjects, compute MOS, select the best FR metric per
    distortion type, fit the 5-parameter logistic per type and write
    pseudo-MOS for every scored sample. A by-reference holdout of the
    labeled data measures annotation fidelity."""
    manifest = Manifest.load(manifest_path)
    if not Path(subjective_csv).exists():
        raise ValidationError(f"subjective score file not found: {subjective_csv}")
    scores = _read_scores(scores_csv)
    ratings = ann.RatingMatrix.from_csv(subjective_csv)

    screening = ann.screen_subjects(ratings)
    if not screening.kept:
        raise ValidationError("all subjects rejected by screening")
    mos = ann.compute_mos(ratings, screening.kept)

    rows = manifest.ok_rows()
    known = {r.sample_id for r in rows}
    orphan = sorted(set(mos) - known)
    if orphan:
        raise ValidationError(f"subjective stimuli missing from manifest: {orphan[:5]}")
    labeled = [r for r in rows if r.sample_id in mos]
    labeled_refs = sorted({r.reference_id for r in labeled})
    if holdout_refs is None:
        n_hold = len(labeled_refs) // 4 if len(labeled_refs) > 1 else 0
        holdout_refs = tuple(labeled_refs[len(labeled_refs) - n_hold:])
    else:
        unknown = set(holdout_refs) - set(labeled_refs)
        if unknown:
            raise ValidationError(f"holdout references carry no labels: {sorted(unknown)}")
    holdout_set = set(holdout_refs)
    fit_rows = [r for r in labeled if r.reference_id not in holdout_set]

    present_types = sorted({r.distortion_id for r in rows})
    fit_types = {r.distortion_id for r in fit_rows}
    uncovered = [d for d in present_types if d not in fit_types]
    if uncovered:
        raise ValidationError(f"distortion types without labeled fit samples: {uncovered}")

    # per-type score vectors over the fit rows, restricted to metrics
    # scored for every sample of that type
    scores_by_type: dict[int, dict[str, list[float]]] = {}
    mos_by_type: dict[int, list[float]] = {}
    for did in present_types:
        type_rows = sorted((r for r in fit_rows if r.distortion_id == did),
                           key=lambda r: r.sample_id)
        type_ids = {r.sample_id for r in type_rows}
        metrics_here = sorted(
            {m for (m, s) in scores if s in type_ids}, key=fr.metric_order_key)
        table: dict[str, list[float]] = {}
        for metric in metrics_here:
            vals = [scores.get((metric, r.sample_id)) for r in type_rows]
            if all(v is not None for v in vals):
                table[metric] = [float(v) for v in vals]
        if not table:
            raise ValidationError(f"no scored metric covers distortion type {did}")
        scores_by_type[did] = table
        mos_by_type[did] = [mos[r.sample_id] for r in type_rows]

    selection = ann.select_best_metric(scores_by_type, mos_by_type)
    fits: dict[int, tuple[str, ann.RegressionModel]] = {}
    for did in present_types:
        metric = selection[did]
        model = ann.fit_regression(
            "logistic5", scores_by_type[did][metric], mos_by_type[did])
        fits[did] = (metric, model)

    samples = []
    for r in rows:
        metric = selection[r.distortion_id]
        if (metric, r.sample_id) not in scores:
            raise ValidationError(
                f"{r.sample_id}: no score for selected metric {metric}")
        samples.append(ann.ScoredSample(
            degraded_id=r.sample_id, distortion_id=r.distortion_id, level=r.level,
            scores={metric: scores[(metric, r.sample_id)]},
            mos=mos.get(r.sample_id)))
    records = ann.generate_pseudo_mos(fits, samples, scale=manifest.label_scale)
    by_id = {rec.degraded_id: rec for rec in records}

    for r in manifest.rows:
        rec = by_id.get(r.sample_id)
        if rec is not None:
            r.pseudo_mos = round(rec.pseudo_mos, 10)
            r.source_metric = rec.source_metric
            if rec.mos is not None:
                r.mos = round(rec.mos, 10)
    manifest.save(out_manifest)

    def correlate(recs: list[ann.AnnotationRecord]) -> tuple[float, float]:
        m = [r.mos for r in recs]
        p = [r.pseudo_mos for r in recs]
        try:
            return ann.srocc(m, p), ann.plcc(m, p)
        except ann.DegenerateCorrelationError:
            return float("nan"), float("nan")

    fit_recs = [by_id[r.sample_id] for r in fit_rows]
    fit_srocc, fit_plcc = correlate(fit_recs)
    fit_stats = ann.annotation_error_stats(fit_recs) if len(fit_recs) >= 2 else None

    hold_recs = [by_id[r.sample_id] for r in labeled if r.reference_id in holdout_set]
    if hold_recs:
        holdout_srocc, holdout_plcc = correlate(hold_recs)
        holdout_stats = ann.annotation_error_stats(hold_recs) if len(hold_recs) >= 2 else None
    else:
        log.warning("no holdout references; holdout report degenerates to the fit set")
        holdout_srocc = holdout_plcc = None
        holdout_stats = None

    result = AnnotateResult(
        manifest=manifest, selection=selection,
        fit_srocc=fit_srocc, fit_plcc=fit_plcc,
        holdout_srocc=holdout_srocc, holdout_plcc=holdout_plcc,
        holdout_refs=tuple(holdout_refs), fit_stats=fit_stats,
        holdout_stats=holdout_stats)
    if report_dir is not None:
        _write_annotate_reports(Path(report_dir), result, scores_by_type, mos_by_type)
    return result


def _write_annotate_reports(report_dir, result, scores_by_type, mos_by_type):
    report_dir.mkdir(parents=True, exist_ok=True)
    lines = ["distortion_id,name,metric,srocc,plcc"]
    txt = [f"{'id':>3} {'type':<28} {'metric':<12} {'SROCC':>10} {'PLCC':>10}"]
    for did in sorted(result.selection):
        metric = result.selection[did]
        s = ann.srocc(mos_by_type[did], scores_by_type[did][metric])
        p = ann.plcc(mos_by_type[did], scores_by_type[did][metric])
        name = REGISTRY[did].name
        lines.append(f"{did},{name},{metric},{s!r},{p!r}")
        txt.append(f"{did:>3} {name:<28} {metric:<12} {s:>10.6f} {p:>10.6f}")
    (report_dir / "selection.csv").write_text("\n".join(lines) + "\n")
    (report_dir / "selection.txt").write_text("\n".join(txt) + "\n")

    rep = ["pseudo-MOS fidelity (95% quantile is of absolute errors)"]
    rep.append(f"fit set     : SROCC {result.fit_srocc:.6f}  PLCC {result.fit_plcc:.6f}")
    if result.holdout_srocc is not None:
        rep.append(
            f"holdout set : SROCC {result.holdout_srocc:.6f}  PLCC {result.holdout_plcc:.6f}"
            f"  (references: {', '.join(result.holdout_refs)})")
    else:
        rep.append("holdout set : EMPTY (all labeled references used in the fit)")
    for tag, stats in (("fit", result.fit_stats), ("holdout", result.holdout_stats)):
        if stats is not None:
            rep.append(f"{tag} errors  : mean {stats.mean:.4f}  stddev {stats.stddev:.4f}"
                       f"  q95|e| {stats.q95_abs:.4f}")
    (report_dir / "annotation_report.txt").write_text("\n".join(rep) + "\n")

    if result.fit_stats is not None:
        hist = ["bin_left,bin_right,count"]
        stats = result.fit_stats
        for i, c in enumerate(stats.hist_counts):
            hist.append(f"{stats.hist_edges[i]!r},{stats.hist_edges[i + 1]!r},{c}")
        (report_dir / "annotation_errors.csv").write_text("\n".join(hist) + "\n")


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------


def _labeled_samples(manifest: Manifest, base: Path, refs: set[str]) -> list[TrainSample]:
    samples = []
    for row in manifest.ok_rows():
        if row.reference_id not in refs:
            continue
        label = row.pseudo_mos if row.pseudo_mos is not None else row.mos
        if label is None:
            raise ValidationError(f"{row.sample_id}: no label for training/eval")
        cloud = load_ply(base / "clouds" / row.path)
        samples.append(TrainSample(sample_id=row.sample_id, cloud=cloud, label=float(label)))
    return samples


def cmd_train(
    manifest_path: str | Path,
    split: SplitSpec,
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_checkpoint: str | Path,
    loss_csv: str | Path | None = None,
) -> Model:
    manifest_path = Path(manifest_path)
    manifest = Manifest.load(manifest_path)
    manifest.validate(base_dir=manifest_path.parent / "clouds")
    samples = _labeled_samples(manifest, manifest_path.parent, set(split.train))
    if not samples:
        raise ValidationError("training split is empty")
    samples.sort(key=lambda s: s.sample_id)
    model = init_model(model_config, seed=train_config.seed)
    log.info("training %d samples, %d parameters", len(samples), param_count(model))
    result = train(model, samples, train_config)
    save_checkpoint(model, out_checkpoint)
    if loss_csv is not None:
        lines = ["step,epoch,lr,loss"]
        lines += [f"{p.step},{p.epoch},{p.lr!r},{p.loss!r}" for p in result.losses]
        Path(loss_csv).write_text("\n".join(lines) + "\n")
    return model


@dataclass
class EvalReport:
    overall_plcc: float
    overall_srocc: float
    per_type: dict[int, tuple[float, float]]  # did -> (plcc, srocc)
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "overall": {"plcc": self.overall_plcc, "srocc": self.overall_srocc,
                        "n": self.n_samples},
            "per_type": {str(k): {"plcc": v[0], "srocc": v[1]}
                         for k, v in sorted(self.per_type.items())},
        }


def _safe_corr(labels: list[float], preds: list[float]) -> tuple[float, float]:
    try:
        p = ann.plcc(labels, preds)
    except (ann.DegenerateCorrelationError, ValueError):
        p = float("nan")
    try:
        s = ann.srocc(labels, preds)
    except (ann.DegenerateCorrelationError, ValueError):
        s = float("nan")
    return p, s


def cmd_eval(
    manifest_path: str | Path,
    split: SplitSpec,
    checkpoint_path: str | Path,
    out_dir: str | Path,
    model_config: ModelConfig | None = None,
) -> EvalReport:
    """Predict the test split and report PLCC/SROCC overall and per type."""
    manifest_path = Path(manifest_path)
    manifest = Manifest.load(manifest_path)
    manifest.validate(base_dir=manifest_path.parent / "clouds")
    model = load_checkpoint(checkpoint_path)
    if model_config is not None and model_config != model.config:
        raise ValidationError("checkpoint/config mismatch")
    test_rows = [r for r in manifest.ok_rows() if r.reference_id in set(split.test)]
    if not test_rows:
        raise ValidationError("evaluation split is empty")
    test_rows.sort(key=lambda r: r.sample_id)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels, preds, types = [], [], []
    pred_lines = ["sample_id,distortion_id,level,label,prediction"]
    for row in test_rows:
        label = row.pseudo_mos if row.pseudo_mos is not None else row.mos
        if label is None:
            raise ValidationError(f"{row.sample_id}: no label for evaluation")
        cloud = load_ply(manifest_path.parent / "clouds" / row.path)
        q = predict(model, cloud)
        labels.append(float(label))
        preds.append(q)
        types.append(row.distortion_id)
        pred_lines.append(
            f"{row.sample_id},{row.distortion_id},{row.level},{label!r},{q!r}")
    (out_dir / "predictions.csv").write_text("\n".join(pred_lines) + "\n")

    overall_plcc, overall_srocc = _safe_corr(labels, preds)
    per_type = {}
    for did in sorted(set(types)):
        sel = [i for i, t in enumerate(types) if t == did]
        per_type[did] = _safe_corr([labels[i] for i in sel], [preds[i] for i in sel])
    report = EvalReport(overall_plcc=overall_plcc, overall_srocc=overall_srocc,
                        per_type=per_type, n_samples=len(labels))
    (out_dir / "eval_report.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")
    (out_dir / "eval_report.txt").write_text(
        format_overall_table([("model", overall_plcc, overall_srocc)])
        + "\n" + format_pertype_table(per_type) + "\n")
    return report


# ---------------------------------------------------------------------------
# report formatting (plain text tables + CSV)
# ---------------------------------------------------------------------------


def _cell(x: float) -> str:
    return "NaN" if math.isnan(x) else f"{x:.4f}"


def format_overall_table(rows: list[tuple[str, float, float]]) -> str:
    """Overall metric performance: one row per metric, PLCC and SROCC columns."""
    out = [f"{'metric':<24} {'PLCC':>8} {'SROCC':>8}"]
    out += [f"{name:<24} {_cell(p):>8} {_cell(s):>8}" for name, p, s in rows]
    return "\n".join(out)


def format_pertype_table(per_type: dict[int, tuple[float, float]]) -> str:
    """Per-distortion-type breakdown, one row per type."""
    out = [f"{'id':>3} {'distortion':<32} {'PLCC':>8} {'SROCC':>8}"]
    for did in sorted(per_type):
        p, s = per_type[did]
        out.append(f"{did:>3} {REGISTRY[did].name:<32} {_cell(p):>8} {_cell(s):>8}")
    return "\n".join(out)


def format_depth_table(results: dict[int, tuple[float, float]]) -> str:
    """Network-depth ablation: columns per block count, PLCC/SROCC rows."""
    depths = sorted(results)
    header = f"{'':<8}" + "".join(f"{f'{d} block' + ('s' if d > 1 else ''):>12}" for d in depths)
    plcc_row = f"{'PLCC':<8}" + "".join(f"{_cell(results[d][0]):>12}" for d in depths)
    srocc_row = f"{'SROCC':<8}" + "".join(f"{_cell(results[d][1]):>12}" for d in depths)
    return "\n".join([header, plcc_row, srocc_row])


RESIDUAL_DESCRIPTIONS = {
    "A": "Without residual connection",
    "B": "1, 2-layers residual connection",
    "C": "1, 3-layers residual connection",
    "D": "2, 3-layers residual connection",
}


def format_residual_table(results: dict[str, tuple[float, float]]) -> str:
    """Residual-scheme ablation: one row per variant."""
    out = [f"{'variant':<40} {'PLCC':>8} {'SROCC':>8}"]
    for v in sorted(results):
        p, s = results[v]
        out.append(f"{v}: {RESIDUAL_DESCRIPTIONS[v]:<38} {_cell(p):>8} {_cell(s):>8}")
    return "\n".join(out)


def run_ablation(
    manifest_path: str | Path,
    split: SplitSpec,
    base_model: ModelConfig,
    train_config: TrainConfig,
    kind: str,
    out_dir: str | Path,
) -> dict:
    """Train/eval once per configuration in the ablation axis and emit the
    depth- or residual-shaped report (CSV + aligned text)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "depth":
        variants = [(b, dataclasses.replace(base_model, blocks=b)) for b in range(1, 6)]
    elif kind == "residual":
        variants = [(v, dataclasses.replace(base_model, residual=v)) for v in "ABCD"]
    else:
        raise ValidationError(f"unknown ablation kind '{kind}'")

    results = {}
    for key, cfg in variants:
        ckpt = out_dir / f"ablation_{kind}_{key}.ckpt"
        cmd_train(manifest_path, split, cfg, train_config, ckpt)
        report = cmd_eval(manifest_path, split, ckpt, out_dir / f"eval_{kind}_{key}")
        results[key] = (report.overall_plcc, report.overall_srocc)

    if kind == "depth":
        text = format_depth_table(results)
    else:
        text = format_residual_table(results)
    (out_dir / f"ablation_{kind}.txt").write_text(text + "\n")
    lines = ["config,plcc,srocc"]
    lines += [f"{k},{results[k][0]!r},{results[k][1]!r}" for k in sorted(results)]
    (out_dir / f"ablation_{kind}.csv").write_text("\n".join(lines) + "\n")
    return results
