"""End-to-end orchestration: fit, select k, train fusion, score, evaluate.

Commands are plain functions over a PipelineConfig; the CLI is a thin
argument-parsing shell around them. All outputs are deterministic in
(config, seed, input files), byte for byte.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features, model_io
from .bandwidth import KCandidateSet, select_k
from .errors import ConfigError, ValidationError
from .features import LayerFeatureSet, ReferenceSubset, subsample_indices
from .fusion import FusionModel, ScoreTable, TrainConfig, confidence_batch, train_fusion
from .kde import DistanceMetric, fit_layer, loo_scores, score_batch
from .metrics import EvalReport, evaluate

REGIME_ADVERSARIAL = "adversarial"
REGIME_HELD_OUT_OOD = "held_out_ood"
REGIMES = (REGIME_ADVERSARIAL, REGIME_HELD_OUT_OOD)

SELECT_K_SCOPE_REFERENCE = "reference"  # Eq. 4 sums over the N reference rows
SELECT_K_SCOPE_FULL = "full"  # sums over all M training rows
SELECT_K_SCOPES = (SELECT_K_SCOPE_REFERENCE, SELECT_K_SCOPE_FULL)

MODEL_FILENAME = "model.kdem"
K_SELECTION_FILENAME = "k_selection.json"


def _normalize_regime(value: str) -> str:
    return str(value).replace("-", "_").lower()


@dataclass
class PipelineConfig:
    """Resolved settings for the pipeline commands.

    Mirrors the CLI flags and the JSON config file one to one; flag values
    override file values.
    """

    in_dist: str | None = None
    perturbed: str | None = None
    ood: dict = field(default_factory=dict)  # name -> path, insertion ordered
    n: int = 1000
    seed: int = 0
    metric: DistanceMetric = DistanceMetric.L1
    k_candidates: KCandidateSet = field(default_factory=KCandidateSet)
    fusion: TrainConfig = field(default_factory=TrainConfig)
    regime: str = REGIME_ADVERSARIAL
    select_k_scope: str = SELECT_K_SCOPE_REFERENCE
    target: str | None = None
    out: str = "."

    def __post_init__(self):
        try:
            if isinstance(self.metric, str):
                self.metric = DistanceMetric.parse(self.metric)
            if not isinstance(self.k_candidates, KCandidateSet):
                self.k_candidates = KCandidateSet(tuple(self.k_candidates))
            if isinstance(self.fusion, dict):
                self.fusion = TrainConfig(**self.fusion)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.regime = _normalize_regime(self.regime)
        if self.regime not in REGIMES:
            raise ConfigError(
                f"unknown regime {self.regime!r}; expected adversarial or held-out-ood"
            )
        if self.select_k_scope not in SELECT_K_SCOPES:
            raise ConfigError(
                f"unknown select_k_scope {self.select_k_scope!r}; "
                f"expected one of {SELECT_K_SCOPES}"
            )
        if self.n < 2:
            raise ConfigError(f"reference subset size must be >= 2, got {self.n}")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError(f"seed must fit in 64 bits, got {self.seed}")
        self.seed = int(self.seed)
        self.ood = {str(k): str(v) for k, v in dict(self.ood).items()}
        if self.regime == REGIME_ADVERSARIAL and not self.perturbed:
            raise ConfigError("adversarial regime requires a perturbed feature file")
        if self.regime == REGIME_HELD_OUT_OOD and len(self.ood) < 2:
            raise ConfigError(
                "held-out-ood regime requires at least 2 OOD datasets "
                f"(got {len(self.ood)})"
            )
        if self.target is not None and self.target not in self.ood:
            raise ConfigError(
                f"target {self.target!r} is not among the OOD datasets "
                f"{tuple(self.ood)}"
            )

    @classmethod
    def from_mappings(cls, *mappings) -> "PipelineConfig":
        """Build from layered key/value mappings; later ones win."""
        merged = {}
        for mapping in mappings:
            for key, value in dict(mapping).items():
                if value is not None:
                    merged[key] = value
        known = set(cls.__dataclass_fields__)
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**merged)

    def snapshot(self) -> dict:
        """JSON-serializable copy, stored verbatim inside the model file."""
        cfg = self.fusion
        return {
            "in_dist": self.in_dist,
            "perturbed": self.perturbed,
            "ood": dict(self.ood),
            "n": self.n,
            "seed": self.seed,
            "metric": self.metric.value,
            "k_candidates": list(self.k_candidates.values),
            "fusion": {
                "learning_rate": cfg.learning_rate,
                "max_epochs": cfg.max_epochs,
                "l2_penalty": cfg.l2_penalty,
                "convergence_tol": cfg.convergence_tol,
                "seed": cfg.seed,
                "standardize": cfg.standardize,
            },
            "regime": self.regime,
            "select_k_scope": self.select_k_scope,
            "target": self.target,
            "out": self.out,
        }


@dataclass
class PipelineModel:
    """Everything needed to score new feature files."""

    layers: list  # LayerKdeModel, canonical layer order
    subset: ReferenceSubset
    m_total: int  # training-set row count the subset indexes into
    metric: DistanceMetric
    config_snapshot: dict
    fusion: FusionModel | None = None
    fusion_meta: dict | None = None
    version: int = model_io.MODEL_VERSION

    @property
    def layer_ids(self) -> list:
        return [m.layer_id for m in self.layers]

    def save(self, path) -> None:
        model_io.write_model_file(
            path, self.subset, self.m_total, self.layers, self.metric,
            self.fusion, self.fusion_meta, self.config_snapshot,
        )

    @classmethod
    def load(cls, path) -> "PipelineModel":
        parts = model_io.read_model_file(path)
        return cls(
            layers=parts["layers"],
            subset=parts["subset"],
            m_total=parts["m_total"],
            metric=parts["metric"],
            config_snapshot=parts["config_snapshot"],
            fusion=parts["fusion"],
            fusion_meta=parts["fusion_meta"],
            version=parts["version"],
        )

    def require_fusion(self) -> FusionModel:
        if self.fusion is None:
            raise ValidationError(
                "model has no fusion stage yet; run train-fusion first"
            )
        return self.fusion


def load_features(path) -> LayerFeatureSet:
    """Load a feature file, via its manifest sidecar when one exists."""
    path = Path(path)
    if features.manifest_path(path).exists():
        fset, _ = features.load_with_manifest(path)
        return fset
    return features.read_feature_file(path)


def _check_layers(fset: LayerFeatureSet, layer_ids, what: str) -> None:
    if fset.layer_ids != list(layer_ids):
        raise ValidationError(
            f"{what} layers {fset.layer_ids} do not match model layers "
            f"{list(layer_ids)}"
        )


def _safe_name(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", name) or "unnamed"


def _sample_ids(fset: LayerFeatureSet) -> tuple:
    return tuple(f"{fset.dataset_name}:{i}" for i in range(fset.n_samples))


def _plain_score_matrix(model: PipelineModel, fset: LayerFeatureSet) -> np.ndarray:
    """Per-layer Eq. 2 scores for every row, columns in model layer order."""
    _check_layers(fset, model.layer_ids, fset.dataset_name)
    out = np.empty((fset.n_samples, len(model.layers)), dtype=np.float64)
    for j, layer_model in enumerate(model.layers):
        out[:, j] = score_batch(layer_model, fset.layer(layer_model.layer_id))
    return out


def _positive_score_matrix(model: PipelineModel, train: LayerFeatureSet) -> np.ndarray:
    """Scores of the training rows, leave-one-out where the row is a reference.

    Reference membership is decided by row index via the stored subset, not
    by value.
    """
    m = train.n_samples
    if m != model.m_total:
        raise ValidationError(
            f"in-distribution file has {m} rows; model was fitted on "
            f"{model.m_total}"
        )
    _check_layers(train, model.layer_ids, train.dataset_name)
    mask = np.full(m, -1, dtype=np.int64)
    mask[model.subset.indices] = np.arange(model.subset.n, dtype=np.int64)
    plain_rows = np.nonzero(mask < 0)[0]
    ref_rows = np.nonzero(mask >= 0)[0]
    out = np.empty((m, len(model.layers)), dtype=np.float64)
    for j, layer_model in enumerate(model.layers):
        feats = train.layer(layer_model.layer_id)
        ref_from_file = np.ascontiguousarray(
            feats[model.subset.indices], dtype=np.float64
        )
        if ref_from_file.shape != layer_model.reference.shape or not np.array_equal(
            ref_from_file, layer_model.reference
        ):
            raise ValidationError(
                f"layer {layer_model.layer_id!r}: in-distribution rows at the "
                "stored reference indices do not match the fitted reference; "
                "wrong training file?"
            )
        if plain_rows.size:
            out[plain_rows, j] = score_batch(layer_model, feats[plain_rows])
        if ref_rows.size:
            out[ref_rows, j] = loo_scores(layer_model, mask[ref_rows])
    return out


def _selection_for_layers(config: PipelineConfig, train: LayerFeatureSet,
                          perturbed: LayerFeatureSet | None,
                          subset: ReferenceSubset):
    """Pick k per layer; returns (reports as dicts, chosen k per layer id)."""
    pruned = config.k_candidates.pruned(config.n)
    if perturbed is None:
        if len(pruned) > 1:
            raise ConfigError(
                "perturbed features are required to select k among "
                f"candidates {pruned}; provide --perturbed or a "
                "single-candidate k set"
            )
        k = pruned[0]
        reports = [{
            "layer_id": lid,
            "chosen_k": k,
            "candidates": [k],
            "objectives": None,
            "mode": "single_candidate",
        } for lid in train.layer_ids]
        return reports, {lid: k for lid in train.layer_ids}

    if perturbed.n_samples != train.n_samples:
        raise ValidationError(
            f"perturbed file has {perturbed.n_samples} rows; expected one "
            f"perturbed counterpart per training row ({train.n_samples})"
        )
    _check_layers(perturbed, train.layer_ids, perturbed.dataset_name)

    reports = []
    chosen = {}
    for lid in train.layer_ids:
        feats = train.layer(lid)
        reference = feats[subset.indices]
        if config.select_k_scope == SELECT_K_SCOPE_REFERENCE:
            in_eval = reference
            ref_indices = np.arange(subset.n, dtype=np.int64)
            pert_eval = perturbed.layer(lid)[subset.indices]
        else:
            in_eval = feats
            ref_indices = np.full(train.n_samples, -1, dtype=np.int64)
            ref_indices[subset.indices] = np.arange(subset.n, dtype=np.int64)
            pert_eval = perturbed.layer(lid)
        report = select_k(
            reference, in_eval, pert_eval,
            metric=config.metric,
            candidates=config.k_candidates,
            in_dist_ref_indices=ref_indices,
            layer_id=lid,
        )
        entry = report.as_dict()
        entry["mode"] = f"objective_{config.select_k_scope}"
        reports.append(entry)
        chosen[lid] = report.chosen_k
    return reports, chosen


def _write_selection_report(out_dir: Path, reports: list) -> Path:
    path = out_dir / K_SELECTION_FILENAME
    path.write_text(json.dumps({"layers": reports}, indent=2), encoding="utf-8")
    return path


def cmd_fit(config: PipelineConfig) -> dict:
    """Subsample references, select k per layer, fit, write the model file."""
    if not config.in_dist:
        raise ConfigError("fit requires an in-distribution feature file")
    train = load_features(config.in_dist)
    m = train.n_samples
    if config.n > m:
        raise ValidationError(
            f"reference subset size {config.n} exceeds training rows {m}"
        )
    indices = subsample_indices(m, config.n, config.seed)
    subset = ReferenceSubset(indices=indices, seed=config.seed)
    perturbed = load_features(config.perturbed) if config.perturbed else None

    reports, chosen = _selection_for_layers(config, train, perturbed, subset)
    layers = [
        fit_layer(train.layer(lid)[subset.indices], chosen[lid],
                  metric=config.metric, layer_id=lid)
        for lid in train.layer_ids
    ]
    model = PipelineModel(
        layers=layers,
        subset=subset,
        m_total=m,
        metric=config.metric,
        config_snapshot=config.snapshot(),
    )
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    model_path = out_dir / MODEL_FILENAME
    model.save(model_path)
    report_path = _write_selection_report(out_dir, reports)
    return {"model": model, "model_path": model_path,
            "k_selection_path": report_path, "chosen_k": chosen}


def cmd_select_k(config: PipelineConfig) -> dict:
    """Standalone k-selection report, no model written."""
    if not config.in_dist:
        raise ConfigError("select-k requires an in-distribution feature file")
    if not config.perturbed:
        raise ConfigError("select-k requires a perturbed feature file")
    train = load_features(config.in_dist)
    if config.n > train.n_samples:
        raise ValidationError(
            f"reference subset size {config.n} exceeds training rows "
            f"{train.n_samples}"
        )
    indices = subsample_indices(train.n_samples, config.n, config.seed)
    subset = ReferenceSubset(indices=indices, seed=config.seed)
    perturbed = load_features(config.perturbed)
    reports, chosen = _selection_for_layers(config, train, perturbed, subset)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = _write_selection_report(out_dir, reports)
    return {"k_selection_path": report_path, "chosen_k": chosen}


def _negative_table(model: PipelineModel, config: PipelineConfig):
    """Score the negatives for fusion training; returns (table, source names)."""
    if config.regime == REGIME_ADVERSARIAL:
        pert = load_features(config.perturbed)
        scores = _plain_score_matrix(model, pert)
        table = ScoreTable(
            sample_ids=_sample_ids(pert),
            layer_ids=tuple(model.layer_ids),
            scores=scores,
        )
        return table, [pert.dataset_name]

    if not config.target:
        raise ConfigError(
            "held-out-ood regime requires --target naming the OOD dataset "
            "to exclude from fusion training"
        )
    sources = [name for name in config.ood if name != config.target]
    id_parts = []
    score_parts = []
    for name in sources:
        fset = load_features(config.ood[name])
        score_parts.append(_plain_score_matrix(model, fset))
        id_parts.extend(f"{name}:{i}" for i in range(fset.n_samples))
    table = ScoreTable(
        sample_ids=tuple(id_parts),
        layer_ids=tuple(model.layer_ids),
        scores=np.concatenate(score_parts, axis=0),
    )
    return table, sources


def cmd_train_fusion(model_path, config: PipelineConfig) -> dict:
    """Train the fusion stage onto an existing model file, in place."""
    model = PipelineModel.load(model_path)
    if not config.in_dist:
        raise ConfigError("train-fusion requires the in-distribution feature file")
    train = load_features(config.in_dist)
    positive = ScoreTable(
        sample_ids=_sample_ids(train),
        layer_ids=tuple(model.layer_ids),
        scores=_positive_score_matrix(model, train),
    )
    negative, sources = _negative_table(model, config)
    labeled = ScoreTable.labeled(positive, negative)
    fusion = train_fusion(labeled, config.fusion)
    model.fusion = fusion
    model.fusion_meta = {
        "negative_regime": config.regime,
        "negative_sources": sources,
        "positive_source": train.dataset_name,
        "n_positive": positive.n_samples,
        "n_negative": negative.n_samples,
    }
    model.save(model_path)
    return {"model": model, "model_path": Path(model_path), "fusion": fusion}


def score_table_json(dataset_name: str, sample_ids, layer_ids,
                     scores: np.ndarray, conf: np.ndarray) -> str:
    return json.dumps({
        "dataset": dataset_name,
        "sample_ids": list(sample_ids),
        "layer_ids": list(layer_ids),
        "scores": [list(map(float, row)) for row in scores],
        "confidence": [float(c) for c in conf],
    }, indent=2)


def cmd_score(model_path, features_path, out_dir) -> dict:
    """Score a feature file: per-layer densities plus fused confidence."""
    model = PipelineModel.load(model_path)
    fusion = model.require_fusion()
    fset = load_features(features_path)
    scores = _plain_score_matrix(model, fset)
    conf = confidence_batch(fusion, scores)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"scores_{_safe_name(fset.dataset_name)}.json"
    path.write_text(
        score_table_json(fset.dataset_name, _sample_ids(fset), model.layer_ids,
                         scores, conf),
        encoding="utf-8",
    )
    return {"path": path, "scores": scores, "confidence": conf,
            "dataset": fset.dataset_name}


def cmd_evaluate(model_path, in_dist_test_path, ood_path, out_dir,
                 ood_name: str | None = None) -> dict:
    """Evaluate fused confidences: in-dist test vs one OOD dataset."""
    model = PipelineModel.load(model_path)
    fusion = model.require_fusion()
    test = load_features(in_dist_test_path)
    oodf = load_features(ood_path)
    name = ood_name if ood_name is not None else oodf.dataset_name
    meta = model.fusion_meta or {}
    if (meta.get("negative_regime") == REGIME_HELD_OUT_OOD
            and name in meta.get("negative_sources", [])):
        raise ValidationError(
            f"OOD dataset {name!r} was used to train the fusion stage; "
            "evaluating on it would leak training data"
        )
    pos = confidence_batch(fusion, _plain_score_matrix(model, test))
    neg = confidence_batch(fusion, _plain_score_matrix(model, oodf))
    report = evaluate(pos, neg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    safe = _safe_name(name)
    report_path = out_dir / f"eval_{safe}.json"
    csv_path = out_dir / f"roc_{safe}.csv"
    report_path.write_text(report.to_json(), encoding="utf-8")
    csv_path.write_text(report.roc_csv(), encoding="utf-8")
    return {"report": report, "report_path": report_path, "csv_path": csv_path,
            "ood_name": name}
