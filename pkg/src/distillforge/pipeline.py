"""End-to-end run orchestration.

A run is a RunConfig executed over several seeds.  Every stage reads its
inputs from the artifact directory and writes its outputs back there, so
running stages one at a time through the CLI produces byte-identical files
to a single pipeline invocation.  All artifacts are text (JSON or CSV).

Per-seed layout under <out>/seed_<s>/:

    split.json          row indices for train / calibration / test
    folds.json          fold assignment over the training rows
    softlabels_t<i>.csv out-of-fold probabilities per teacher
    softlabels.csv      teacher average, the student's soft targets
    teach.json          audit outcome and teacher test AUC
    targets.csv         per-row logits, temperature, weight, hard label
    model.json          trained student (format-dispatched)
    report.json         evaluation metrics
    latency.json        single-thread benchmark (opt-in)

The run root holds config.json (the config echo) and aggregate.json, or
ablation.json for ablation runs.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import LogRegModel, fit_logreg
from .bench import LatencyReport, measure
from .dataset import (
    Dataset,
    DatasetError,
    FeatureEncoder,
    FoldAssignment,
    Schema,
    SynthSpec,
    encode_dataset,
    impute,
    load_csv,
    split_indices,
    stratified_kfold,
    stratified_subsample,
    synth_generate,
)
from .distill import DistillTargets, LossConfig, build_targets
from .gbdt import BoostedModel, GbdtConfig, fit_distilled
from .ioutil import read_json, write_json
from .metrics import EvalReport, aggregate_reports, evaluate, macro_auc
from .mlp import MlpModel, TrainSchedule, fit_mlp
from .stats import wilcoxon_signed_rank
from .teacher import (
    LeakageError,
    SoftLabelSet,
    TeacherSpec,
    average_labels,
    export_soft_labels,
    fit_teacher,
    import_soft_labels,
    leakage_audit,
    oof_label,
)

SPLIT_JSON = "split.json"
FOLDS_JSON = "folds.json"
SOFT_AVG_CSV = "softlabels.csv"
TEACH_JSON = "teach.json"
TEACHER_TEST_CSV = "teacher_test.csv"
TARGETS_CSV = "targets.csv"
MODEL_JSON = "model.json"
REPORT_JSON = "report.json"
LATENCY_JSON = "latency.json"
CONFIG_JSON = "config.json"
AGGREGATE_JSON = "aggregate.json"
ABLATION_JSON = "ablation.json"

STUDENT_KINDS = ("gbdt", "mlp", "logreg")

# order matters: this is the ablation table's row order
ABLATION_CONFIGS = (
    "full",
    "no_adaptive_temperature",
    "no_confidence_weighting",
    "no_augmentation",
    "hard_labels_only",
    "soft_labels_only",
    "fixed_t1",
    "fixed_t5",
)


class ConfigError(ValueError):
    """Invalid run configuration; the CLI maps this to exit code 2."""


class MissingArtifactError(FileNotFoundError):
    """A stage was invoked before its upstream stage produced its files."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def _sub_config(cls, obj: dict | None):
    if obj is None:
        return cls()
    known = set(cls.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} fields: {sorted(unknown)}")
    return cls(**obj)


@dataclass
class RunConfig:
    """Everything a run needs; serializable so runs can be replayed."""

    dataset_csv: str | None = None
    dataset_schema: str | None = None
    synth: dict | None = None
    max_rows: int | None = None
    test_fraction: float = 0.2
    calib_fraction: float = 0.15
    k_folds: int = 5
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    teachers: list[TeacherSpec] = field(default_factory=lambda: [TeacherSpec("bagged_tree", {})])
    student: str = "gbdt"
    loss: LossConfig = field(default_factory=LossConfig)
    gbdt: GbdtConfig = field(default_factory=GbdtConfig)
    mlp: TrainSchedule = field(default_factory=TrainSchedule)
    logreg: dict = field(default_factory=dict)
    teacher_auc: float | None = None   # retention reference when teachers are files
    out: str = "runs/latest"

    def validate(self) -> None:
        if (self.dataset_csv is None) == (self.synth is None):
            raise ConfigError("configure exactly one of dataset_csv or synth")
        if self.dataset_csv is not None and self.dataset_schema is None:
            raise ConfigError("dataset_csv needs dataset_schema")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must be in (0, 1), got {self.test_fraction}")
        if not 0.0 < self.calib_fraction < 1.0:
            raise ConfigError(f"calib_fraction must be in (0, 1), got {self.calib_fraction}")
        if self.k_folds < 2:
            raise ConfigError(f"k_folds must be >= 2, got {self.k_folds}")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be distinct")
        if self.student not in STUDENT_KINDS:
            raise ConfigError(f"student must be one of {STUDENT_KINDS}, got {self.student!r}")
        if not self.teachers:
            raise ConfigError("need at least one teacher")
        if self.max_rows is not None and self.max_rows < 1:
            raise ConfigError(f"max_rows must be positive, got {self.max_rows}")
        try:
            for spec in self.teachers:
                spec.validate()
            self.loss.validate()
            self.gbdt.validate()
            self.mlp.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "dataset_csv": self.dataset_csv,
            "dataset_schema": self.dataset_schema,
            "synth": self.synth,
            "max_rows": self.max_rows,
            "test_fraction": self.test_fraction,
            "calib_fraction": self.calib_fraction,
            "k_folds": self.k_folds,
            "seeds": list(self.seeds),
            "teachers": [t.to_dict() for t in self.teachers],
            "student": self.student,
            "loss": dataclasses.asdict(self.loss),
            "gbdt": dataclasses.asdict(self.gbdt),
            "mlp": dataclasses.asdict(self.mlp),
            "logreg": dict(self.logreg),
            "teacher_auc": self.teacher_auc,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        cfg = cls(
            dataset_csv=obj.get("dataset_csv"),
            dataset_schema=obj.get("dataset_schema"),
            synth=obj.get("synth"),
            max_rows=obj.get("max_rows"),
            test_fraction=obj.get("test_fraction", 0.2),
            calib_fraction=obj.get("calib_fraction", 0.15),
            k_folds=obj.get("k_folds", 5),
            seeds=tuple(int(s) for s in obj.get("seeds", (0, 1, 2, 3, 4))),
            teachers=[TeacherSpec.from_dict(t) for t in
                      obj.get("teachers", [{"kind": "bagged_tree"}])],
            student=obj.get("student", "gbdt"),
            loss=_sub_config(LossConfig, obj.get("loss")),
            gbdt=_sub_config(GbdtConfig, obj.get("gbdt")),
            mlp=_sub_config(TrainSchedule, obj.get("mlp")),
            logreg=dict(obj.get("logreg") or {}),
            teacher_auc=obj.get("teacher_auc"),
            out=obj.get("out", "runs/latest"),
        )
        return cfg

    @classmethod
    def from_json_file(cls, path) -> "RunConfig":
        return cls.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# dataset resolution
# ---------------------------------------------------------------------------

def resolve_dataset(cfg: RunConfig, seed: int) -> Dataset:
    """Materialize the run's dataset for one seed.

    CSV data is fixed across seeds (seeds only move the splits); synthetic
    data is drawn fresh per seed so multi-seed runs average over independent
    simulations.  Missing values are zero-imputed here, once, so every
    downstream consumer sees the same matrix.
    """
    if cfg.dataset_csv is not None:
        ds = load_csv(cfg.dataset_csv, Schema.from_json_file(cfg.dataset_schema))
    else:
        base = SynthSpec.from_dict(cfg.synth or {})
        ds = synth_generate(dataclasses.replace(base, seed=base.seed + seed))
    ds = impute(ds, "zero")
    if cfg.max_rows is not None and ds.n_rows > cfg.max_rows:
        ds = stratified_subsample(ds, cfg.max_rows, seed)
    return ds


def seed_dir(base, seed: int) -> Path:
    return Path(base) / f"seed_{seed}"


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"missing artifact {path.name} in {path.parent}; run the {producer!r} stage first"
        )
    return path


# ---------------------------------------------------------------------------
# stage: split
# ---------------------------------------------------------------------------

def run_split(cfg: RunConfig, seed: int, base=None) -> dict:
    """Carve test and calibration slices off the data and fold the rest.

    The calibration slice is held out of distillation entirely; it exists
    only to fit the temperature-scaling constant at evaluation time.
    """
    ds = resolve_dataset(cfg, seed)
    sdir = seed_dir(base or cfg.out, seed)
    sdir.mkdir(parents=True, exist_ok=True)

    rest_idx, test_idx = split_indices(ds.labels, cfg.test_fraction, seed)
    inner, calib_rel = split_indices(ds.labels[rest_idx], cfg.calib_fraction, seed + 1)
    train_idx = rest_idx[inner]
    calib_idx = rest_idx[calib_rel]

    folds = stratified_kfold(ds.subset(train_idx), cfg.k_folds, seed)

    split = {
        "seed": seed,
        "n_rows": ds.n_rows,
        "class_count": ds.class_count,
        "test_fraction": cfg.test_fraction,
        "calib_fraction": cfg.calib_fraction,
        "train_rows": train_idx.tolist(),
        "calib_rows": calib_idx.tolist(),
        "test_rows": test_idx.tolist(),
    }
    write_json(sdir / SPLIT_JSON, split)
    write_json(sdir / FOLDS_JSON, {
        "k": folds.k,
        "seed": folds.seed,
        "fold_of": folds.fold_of.tolist(),
    })
    return split


def _load_split(cfg: RunConfig, seed: int, base=None):
    sdir = seed_dir(base or cfg.out, seed)
    split = read_json(_require(sdir / SPLIT_JSON, "split"))
    fobj = read_json(_require(sdir / FOLDS_JSON, "split"))
    ds = resolve_dataset(cfg, seed)
    if split["n_rows"] != ds.n_rows or split["class_count"] != ds.class_count:
        raise DatasetError(
            f"{sdir / SPLIT_JSON} was made for a different dataset "
            f"({split['n_rows']} rows vs {ds.n_rows})"
        )
    train_idx = np.asarray(split["train_rows"], dtype=np.int64)
    calib_idx = np.asarray(split["calib_rows"], dtype=np.int64)
    test_idx = np.asarray(split["test_rows"], dtype=np.int64)
    folds = FoldAssignment(np.asarray(fobj["fold_of"], dtype=np.int64),
                           int(fobj["k"]), int(fobj["seed"]))
    return ds, train_idx, calib_idx, test_idx, folds


# ---------------------------------------------------------------------------
# stage: teach
# ---------------------------------------------------------------------------

def _seeded_spec(spec: TeacherSpec, seed: int) -> TeacherSpec:
    # stochastic teachers draw fresh ensembles per run seed
    if spec.kind == "bagged_tree":
        params = dict(spec.params)
        params["seed"] = int(params.get("seed", 0)) + seed
        return TeacherSpec(spec.kind, params)
    return spec


def _write_probs_csv(path, probs: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["row_id"] + [f"p{j}" for j in range(probs.shape[1])])
        for i in range(probs.shape[0]):
            writer.writerow([i] + [format(float(p), ".16e") for p in probs[i]])


def run_teach(cfg: RunConfig, seed: int, base=None) -> SoftLabelSet:
    """Produce leakage-free soft labels for every training row.

    Each in-process teacher is refit per fold on that fold's complement;
    file teachers are imported and checked against our fold assignment.
    Multiple teachers are averaged with equal weight.  The audit runs here
    and a failing set never reaches disk as softlabels.csv.
    """
    sdir = seed_dir(base or cfg.out, seed)
    ds, train_idx, calib_idx, test_idx, folds = _load_split(cfg, seed, base)
    train = ds.subset(train_idx)

    sets: list[SoftLabelSet] = []
    in_process: list[TeacherSpec] = []
    for i, spec in enumerate(cfg.teachers):
        if spec.kind == "file":
            soft = import_soft_labels(spec.params["path"], folds)
        else:
            eff = _seeded_spec(spec, seed)
            in_process.append(eff)
            soft = oof_label(train, folds, eff)
        export_soft_labels(soft, sdir / f"softlabels_t{i}.csv")
        sets.append(soft)

    merged = average_labels(sets)
    audit = leakage_audit(merged)
    if not audit.passed:
        raise LeakageError(
            f"leakage audit failed for seed {seed}: "
            f"{len(audit.offenders)} rows were seen by their own fold's teacher"
        )
    export_soft_labels(merged, sdir / SOFT_AVG_CSV)

    # teacher test AUC is only computable when every teacher is in-process:
    # refit each on all non-test rows and average the test predictions
    teacher_auc = None
    if len(in_process) == len(cfg.teachers):
        fit_rows = np.sort(np.concatenate([train_idx, calib_idx]))
        full_train = ds.subset(fit_rows)
        test = ds.subset(test_idx)
        per_teacher = [fit_teacher(spec, full_train)(test.features) for spec in in_process]
        if all(np.array_equal(p, per_teacher[0]) for p in per_teacher[1:]):
            probs = per_teacher[0]  # exact mean of identical predictions
        else:
            probs = np.mean(per_teacher, axis=0)
        _write_probs_csv(sdir / TEACHER_TEST_CSV, probs)
        teacher_auc = macro_auc(probs, test.labels)

    write_json(sdir / TEACH_JSON, {
        "teacher_ids": [s.teacher_id for s in sets],
        "audit_passed": audit.passed,
        "offender_count": len(audit.offenders),
        "teacher_auc": teacher_auc,
    })
    return merged


# ---------------------------------------------------------------------------
# stage: distill
# ---------------------------------------------------------------------------

def _write_targets_csv(path, targets: DistillTargets) -> None:
    c = targets.soft_probs.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            ["row_id"] + [f"z{j}" for j in range(c)] + ["temperature", "weight", "hard_label"]
        )
        for i in range(targets.n_rows):
            writer.writerow(
                [i]
                + [format(float(z), ".16e") for z in targets.soft_logits[i]]
                + [format(float(targets.temperature[i]), ".16e"),
                   format(float(targets.weight[i]), ".16e"),
                   int(targets.hard_label[i])]
            )


class StudentArtifact:
    """A trained student plus the feature encoder it needs at predict time.

    Trees consume raw ordinal-coded features directly; the MLP and the
    linear baseline see one-hot, z-scored inputs, so their encoder rides
    along inside the model file.
    """

    _FORMATS = {
        "distillforge-gbdt": "gbdt",
        "distillforge-mlp": "mlp",
        "distillforge-logreg": "logreg",
    }

    def __init__(self, kind: str, model, encoder: FeatureEncoder | None = None):
        if kind not in STUDENT_KINDS:
            raise ValueError(f"unknown student kind {kind!r}")
        self.kind = kind
        self.model = model
        self.encoder = encoder

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = features if self.encoder is None else self.encoder.transform(features)
        return self.model.predict_proba(x)

    def to_json_dict(self) -> dict:
        d = self.model.to_json_dict()
        if self.encoder is not None:
            d = {**d, "encoder": self.encoder.to_dict()}
        return d

    def save(self, path) -> None:
        write_json(path, self.to_json_dict())

    @classmethod
    def load(cls, path) -> "StudentArtifact":
        obj = read_json(path)
        kind = cls._FORMATS.get(obj.get("format"))
        if kind is None:
            raise ValueError(f"{path}: unknown model format {obj.get('format')!r}")
        model_cls = {"gbdt": BoostedModel, "mlp": MlpModel, "logreg": LogRegModel}[kind]
        model = model_cls.from_json_dict(obj)
        encoder = FeatureEncoder.from_dict(obj["encoder"]) if "encoder" in obj else None
        return cls(kind, model, encoder)


def _train_student(student: str, train: Dataset, targets: DistillTargets,
                   loss: LossConfig, gbdt_cfg: GbdtConfig, sched: TrainSchedule,
                   logreg_params: dict, seed: int) -> StudentArtifact:
    if student == "gbdt":
        model = fit_distilled(train.features, targets,
                              loss, dataclasses.replace(gbdt_cfg, seed=seed))
        return StudentArtifact("gbdt", model)
    encoder = FeatureEncoder().fit(train)
    encoded = encode_dataset(encoder, train)
    if student == "mlp":
        model = fit_mlp(encoded, targets, sched=dataclasses.replace(sched),
                        cfg=loss, seed=seed)
        return StudentArtifact("mlp", model, encoder)
    # linear baseline: trains on hard labels only, never sees the targets
    model = fit_logreg(encoded, **logreg_params)
    return StudentArtifact("logreg", model, encoder)


def run_distill(cfg: RunConfig, seed: int, base=None) -> StudentArtifact:
    """Build the mixed-loss targets from the stored soft labels and train
    the configured student."""
    sdir = seed_dir(base or cfg.out, seed)
    ds, train_idx, _, _, folds = _load_split(cfg, seed, base)
    train = ds.subset(train_idx)

    soft = import_soft_labels(_require(sdir / SOFT_AVG_CSV, "teach"), folds)
    targets = build_targets(soft, train.labels, cfg.loss)
    _write_targets_csv(sdir / TARGETS_CSV, targets)

    artifact = _train_student(cfg.student, train, targets, cfg.loss,
                              cfg.gbdt, cfg.mlp, cfg.logreg, seed)
    artifact.save(sdir / MODEL_JSON)
    return artifact


# ---------------------------------------------------------------------------
# stage: evaluate
# ---------------------------------------------------------------------------

def run_evaluate(cfg: RunConfig, seed: int, base=None,
                 allow_unaudited: bool = False) -> EvalReport:
    """Score the stored student on the held-out test rows.

    Refuses to evaluate when the soft labels on disk fail the leakage audit
    (or disagree with the stored folds), unless allow_unaudited is set.
    """
    sdir = seed_dir(base or cfg.out, seed)
    ds, _, calib_idx, test_idx, folds = _load_split(cfg, seed, base)

    soft_path = _require(sdir / SOFT_AVG_CSV, "teach")
    if allow_unaudited:
        import_soft_labels(soft_path, folds, strict=False)
    else:
        soft = import_soft_labels(soft_path, folds)
        audit = leakage_audit(soft)
        if not audit.passed:
            raise LeakageError(
                f"refusing to evaluate seed {seed}: soft labels fail the "
                f"leakage audit ({len(audit.offenders)} offending rows); "
                f"pass --allow-unaudited to override"
            )

    artifact = StudentArtifact.load(_require(sdir / MODEL_JSON, "distill"))
    test = ds.subset(test_idx)
    calib = ds.subset(calib_idx)

    teacher_auc = cfg.teacher_auc
    teach_path = sdir / TEACH_JSON
    if teach_path.exists():
        stored = read_json(teach_path).get("teacher_auc")
        teacher_auc = stored if stored is not None else teacher_auc

    report = evaluate(
        artifact.predict_proba(test.features), test,
        artifact.predict_proba(calib.features), calib.labels,
        teacher_auc=teacher_auc,
    )
    report.meta["student"] = artifact.kind
    report.meta["seed"] = seed
    write_json(sdir / REPORT_JSON, report.to_dict())
    return report


# ---------------------------------------------------------------------------
# stage: bench
# ---------------------------------------------------------------------------

def run_bench(cfg: RunConfig, seed: int, base=None) -> LatencyReport:
    """Single-thread latency of the stored student on the test rows."""
    sdir = seed_dir(base or cfg.out, seed)
    ds, _, _, test_idx, _ = _load_split(cfg, seed, base)
    artifact = StudentArtifact.load(_require(sdir / MODEL_JSON, "distill"))
    # the artifact encodes internally, so this times the full predict path
    report = measure(artifact, ds.features[test_idx])
    write_json(sdir / LATENCY_JSON, report.to_dict())
    return report


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

def run_pipeline(cfg: RunConfig, with_bench: bool = False) -> dict:
    """split -> teach -> distill -> evaluate for every seed, then aggregate.

    Benchmarking is opt-in because its numbers are timing-dependent; with
    it off, rerunning the same config rewrites every artifact byte for
    byte.  A failing seed is recorded in the aggregate and skipped, except
    for leakage failures, which abort the whole run.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / CONFIG_JSON, cfg.to_dict())

    reports: dict[int, EvalReport] = {}
    errors: dict[str, str] = {}
    for seed in cfg.seeds:
        try:
            run_split(cfg, seed)
            run_teach(cfg, seed)
            run_distill(cfg, seed)
            reports[seed] = run_evaluate(cfg, seed)
            if with_bench:
                run_bench(cfg, seed)
        except LeakageError:
            raise
        except Exception as exc:  # noqa: BLE001 - recorded per seed
            errors[str(seed)] = f"{type(exc).__name__}: {exc}"

    if not reports:
        raise RuntimeError(f"every seed failed: {errors}")

    agg = aggregate_reports([reports[s] for s in sorted(reports)])
    agg["seeds"] = sorted(reports)
    agg["student"] = cfg.student
    agg["errors"] = errors
    write_json(out / AGGREGATE_JSON, agg)
    return agg


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

def _ablation_variant(name: str, targets: DistillTargets, loss: LossConfig,
                      sched: TrainSchedule):
    """Return (targets, loss, sched) with one ingredient removed or pinned."""
    if name == "full":
        return targets, loss, sched
    if name == "no_adaptive_temperature":
        return targets.with_fixed_temperature((loss.t_min + loss.t_max) / 2.0), loss, sched
    if name == "no_confidence_weighting":
        return targets.with_uniform_weights(), loss, sched
    if name == "no_augmentation":
        return targets, loss, dataclasses.replace(sched, augment_sigma=0.0)
    if name == "hard_labels_only":
        out = targets.with_fixed_temperature(1.0).with_uniform_weights()
        return out, dataclasses.replace(loss, alpha=0.0), sched
    if name == "soft_labels_only":
        return targets, dataclasses.replace(loss, alpha=1.0), sched
    if name == "fixed_t1":
        return targets.with_fixed_temperature(1.0), loss, sched
    if name == "fixed_t5":
        return targets.with_fixed_temperature(5.0), loss, sched
    raise ConfigError(f"unknown ablation config {name!r}")


def run_ablation(cfg: RunConfig) -> dict:
    """Train one student per (config, seed) and compare test AUC to 'full'.

    Shares the split and soft labels across configs within a seed so the
    comparison is paired; p-values are Wilcoxon signed-rank over the
    per-seed deltas, reported only when there are at least 5 pairs.
    """
    cfg.validate()
    if cfg.student == "logreg":
        raise ConfigError("ablation varies the distillation loss; "
                          "the linear baseline never uses it")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / CONFIG_JSON, cfg.to_dict())

    auc_by_config: dict[str, list[float]] = {n: [] for n in ABLATION_CONFIGS}
    for seed in cfg.seeds:
        sdir = seed_dir(cfg.out, seed)
        run_split(cfg, seed)
        run_teach(cfg, seed)

        ds, train_idx, calib_idx, test_idx, folds = _load_split(cfg, seed)
        train = ds.subset(train_idx)
        test = ds.subset(test_idx)
        soft = import_soft_labels(sdir / SOFT_AVG_CSV, folds)
        base_targets = build_targets(soft, train.labels, cfg.loss)

        for name in ABLATION_CONFIGS:
            targets, loss, sched = _ablation_variant(name, base_targets, cfg.loss, cfg.mlp)
            artifact = _train_student(cfg.student, train, targets, loss,
                                      cfg.gbdt, sched, cfg.logreg, seed)
            artifact.save(sdir / f"model_{name}.json")
            auc_by_config[name].append(
                macro_auc(artifact.predict_proba(test.features), test.labels)
            )

    full = np.asarray(auc_by_config["full"], dtype=np.float64)
    rows: dict[str, dict] = {}
    for name in ABLATION_CONFIGS:
        aucs = np.asarray(auc_by_config[name], dtype=np.float64)
        deltas = aucs - full
        if name == "full":
            p = 1.0   # identical pairing by construction
        elif deltas.size >= 5:
            p = wilcoxon_signed_rank(deltas.tolist()).p_value
        else:
            p = None
        rows[name] = {
            "auc_per_seed": aucs.tolist(),
            "mean_auc": float(aucs.mean()),
            "delta_per_seed": deltas.tolist(),
            "mean_delta": float(deltas.mean()),
            "p_value": p,
        }

    result = {
        "student": cfg.student,
        "seeds": list(cfg.seeds),
        "configs": list(ABLATION_CONFIGS),
        "rows": rows,
    }
    write_json(out / ABLATION_JSON, result)
    return result


def format_ablation_table(result: dict) -> str:
    lines = [f"{'config':<28}{'mean AUC':>10}{'delta':>10}{'p':>10}"]
    for name in result["configs"]:
        row = result["rows"][name]
        p = row["p_value"]
        p_str = f"{p:.4f}" if p is not None else "n/a"
        lines.append(
            f"{name:<28}{row['mean_auc']:>10.4f}{row['mean_delta']:>+10.4f}{p_str:>10}"
        )
    return "\n".join(lines)
