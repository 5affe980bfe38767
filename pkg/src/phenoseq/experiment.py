"""Config-driven model-comparison experiments on synthetic episode data.

A suite config names a synthetic dataset recipe, a list of models (base rate,
logistic regression, MLP, LSTM variants), optional ensembles of trained
models, and the evaluation seeds.  For each seed the suite generates data,
splits it 80/10/10, trains every model, tunes thresholds on validation,
evaluates on test, and emits a comparison table (CSV plus figure) alongside
per-model learning curves and per-label breakdowns.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import (
    DEFAULT_L2_GRID,
    fit_base_rate,
    fit_logistic,
    predict_base_rate,
    predict_logistic,
)
from .episodes import ChannelSpec, preprocess_episode, split_dataset
from .errors import ConfigError, DataError
from .features import extract_features, first_last_window
from .harness import (
    LabeledDataset,
    RunHistory,
    TrainConfig,
    dataset_from_episodes,
    ensemble,
    params_from_checkpoint,
    predict_scores,
    select_model,
    train,
    truncate_grid,
    write_history_csv,
)
from .metrics import (
    MetricReport,
    PredictionMatrix,
    ThresholdSet,
    evaluate,
    micro_auc,
    select_threshold_micro,
    select_thresholds_macro,
    write_per_label_csv,
    write_report_json,
)
from .objectives import ObjectiveConfig, mask_predictions
from .synth import SynthConfig, default_channel_specs, generate_synthetic
from . import checkpoint as ckpt
from . import reports

MODEL_KINDS = ("base_rate", "logistic", "mlp", "lstm")
INPUT_KINDS = ("grid", "features", "window")


@dataclass
class ModelSpec:
    name: str
    kind: str
    input: str = "grid"
    layers: list[int] = field(default_factory=lambda: [32, 32])
    dropout: float = 0.0
    objective_mode: str = "final_only"
    alpha: float = 0.5
    use_aux: bool = False
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-6
    clip_norm: float = 1.0
    batch_size: int = 16
    epochs: int = 100
    truncate_last_hours: int | None = None
    l2_grid: list[float] = field(default_factory=lambda: list(DEFAULT_L2_GRID))

    def validate(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"model {self.name!r}: unknown kind {self.kind!r}")
        if self.input not in INPUT_KINDS:
            raise ConfigError(f"model {self.name!r}: unknown input {self.input!r}")
        if self.kind == "lstm" and self.input != "grid":
            raise ConfigError(f"model {self.name!r}: LSTMs take grid input")
        if self.kind in ("logistic", "mlp", "base_rate") and self.input == "grid":
            raise ConfigError(
                f"model {self.name!r}: {self.kind} needs features or window input"
            )


@dataclass
class EnsembleSpec:
    name: str
    a: str  # model name or "best:lstm" / "best:mlp"
    b: str
    mode: str = "max"


@dataclass
class SuiteConfig:
    synth: SynthConfig
    seeds: list[int]
    models: list[ModelSpec]
    ensembles: list[EnsembleSpec] = field(default_factory=list)
    k: int = 10

    def validate(self) -> None:
        self.synth.validate()
        if not self.seeds:
            raise ConfigError("suite needs at least one seed")
        if not self.models:
            raise ConfigError("suite needs at least one model")
        names = [m.name for m in self.models]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate model names in suite")
        for m in self.models:
            m.validate()


@dataclass
class ModelResult:
    name: str
    kind: str
    report: MetricReport
    history: RunHistory | None
    selected_epoch: int | None
    val_pm: PredictionMatrix
    test_pm: PredictionMatrix
    val_auc_selected: float | None
    train_val_gap: float | None
    seconds: float


def _suite_config_from_dict(doc: dict) -> SuiteConfig:
    doc = dict(doc)
    synth_doc = dict(doc.pop("synth", {}))
    channels = synth_doc.pop("channels", None)
    allowed = {
        "n_episodes", "n_primary_labels", "n_aux_labels", "min_hours",
        "max_hours", "samples_per_hour", "channel_drop_prob", "noise_scale",
        "base_rate_max", "base_rate_decay", "signature_offset_scale",
        "signature_trend_scale", "signature_channel_frac",
    }
    unknown = set(synth_doc) - allowed
    if unknown:
        raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
    synth = SynthConfig(**synth_doc)
    if channels is not None:
        synth.channels = [
            ChannelSpec(c["name"], c["normal_value"], c["range_lo"], c["range_hi"])
            for c in channels
        ]
    models = []
    for mdoc in doc.pop("models", []):
        mdoc = dict(mdoc)
        allowed_m = {
            "name", "kind", "input", "layers", "dropout", "objective_mode",
            "alpha", "use_aux", "learning_rate", "momentum", "weight_decay",
            "clip_norm", "batch_size", "epochs", "truncate_last_hours", "l2_grid",
        }
        unknown = set(mdoc) - allowed_m
        if unknown:
            raise ConfigError(f"unknown model keys: {sorted(unknown)}")
        models.append(ModelSpec(**mdoc))
    ensembles = []
    for edoc in doc.pop("ensembles", []):
        edoc = dict(edoc)
        unknown = set(edoc) - {"name", "a", "b", "mode"}
        if unknown:
            raise ConfigError(f"unknown ensemble keys: {sorted(unknown)}")
        ensembles.append(EnsembleSpec(**edoc))
    seeds = doc.pop("seeds", [1])
    k = doc.pop("k", 10)
    if doc:
        raise ConfigError(f"unknown suite keys: {sorted(doc)}")
    cfg = SuiteConfig(synth=synth, seeds=seeds, models=models, ensembles=ensembles, k=k)
    cfg.validate()
    return cfg


def load_suite_config(path: str) -> SuiteConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return _suite_config_from_dict(json.load(fh))


def _train_config_for(spec: ModelSpec, suite: SuiteConfig, seed: int) -> TrainConfig:
    aux = suite.synth.n_aux_labels if spec.use_aux else 0
    objective = ObjectiveConfig(
        mode=spec.objective_mode,
        alpha=spec.alpha,
        primary_label_count=suite.synth.n_primary_labels,
        aux_label_count=aux,
    )
    return TrainConfig(
        arch_kind=spec.kind,
        layers=list(spec.layers),
        dropout=spec.dropout,
        objective=objective,
        learning_rate=spec.learning_rate,
        momentum=spec.momentum,
        weight_decay=spec.weight_decay,
        clip_norm=spec.clip_norm,
        batch_size=spec.batch_size,
        epochs=spec.epochs,
        seed=seed,
        k=suite.k,
        truncate_last_hours=spec.truncate_last_hours,
    )


def _tuned_report(
    val_pm: PredictionMatrix,
    test_pm: PredictionMatrix,
    k: int,
    label_names: list[str],
) -> MetricReport:
    thresholds = ThresholdSet(
        global_threshold=select_threshold_micro(val_pm),
        per_label_thresholds=select_thresholds_macro(val_pm),
    )
    return evaluate(test_pm, thresholds, k, label_names)


def _comparison_row(name: str, report: MetricReport, k: int) -> dict:
    return {
        "model": name,
        "micro_auc": report.micro_auc,
        "macro_auc": report.macro_auc,
        "micro_f1": report.micro_f1,
        "macro_f1": report.macro_f1,
        f"precision_at_{k}": report.precision_at_k,
    }


def _resolve_constituent(key: str, results: dict[str, ModelResult]) -> ModelResult:
    if key.startswith("best:"):
        kind = key.split(":", 1)[1]
        pool = [r for r in results.values() if r.kind == kind]
        if not pool:
            raise ConfigError(f"no trained {kind!r} model for ensemble constituent")
        scored = [r for r in pool if r.val_auc_selected is not None]
        if not scored:
            raise ConfigError(f"no {kind!r} model has a defined validation AUC")
        return max(scored, key=lambda r: r.val_auc_selected)
    if key not in results:
        raise ConfigError(f"ensemble constituent {key!r} was not trained")
    return results[key]


def run_suite(suite: SuiteConfig, out_dir: str) -> dict:
    """Run the whole comparison grid; returns {seed: {model: ModelResult}} plus
    row tables and stage timings under the "_rows"/"_timings" keys."""
    suite.validate()
    os.makedirs(out_dir, exist_ok=True)
    label_names = [f"label_{l:03d}" for l in range(suite.synth.n_primary_labels)]
    all_results: dict = {}
    all_rows: dict = {}
    timings: dict = {}

    for seed in suite.seeds:
        seed_dir = os.path.join(out_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        t0 = time.perf_counter()
        episodes = generate_synthetic(suite.synth, seed)
        by_id = {ep.episode_id: ep for ep in episodes}
        split = split_dataset([ep.episode_id for ep in episodes], seed)
        specs = suite.synth.channels
        grids = {
            ep.episode_id: preprocess_episode(ep, specs) for ep in episodes
        }
        grid_values = {eid: g.values for eid, g in grids.items()}
        feats = {eid: extract_features(g).values for eid, g in grids.items()}
        windows = {eid: first_last_window(g).values for eid, g in grids.items()}
        t_data = time.perf_counter() - t0
        timings[seed] = {"data": t_data, "models": {}}

        results: dict[str, ModelResult] = {}
        rows: list[dict] = []
        for spec in suite.models:
            t_m = time.perf_counter()
            result = _run_model(
                spec, suite, seed, seed_dir, split, by_id, grid_values, feats,
                windows, label_names,
            )
            result.seconds = time.perf_counter() - t_m
            timings[seed]["models"][spec.name] = result.seconds
            results[spec.name] = result
            rows.append(_comparison_row(spec.name, result.report, suite.k))

        for espec in suite.ensembles:
            try:
                ra = _resolve_constituent(espec.a, results)
                rb = _resolve_constituent(espec.b, results)
            except ConfigError:
                continue  # constituent missing: skip the ensemble row
            val_pm = ensemble(ra.val_pm, rb.val_pm, espec.mode)
            test_pm = ensemble(ra.test_pm, rb.test_pm, espec.mode)
            report = _tuned_report(val_pm, test_pm, suite.k, label_names)
            results[espec.name] = ModelResult(
                name=espec.name,
                kind="ensemble",
                report=report,
                history=None,
                selected_epoch=None,
                val_pm=val_pm,
                test_pm=test_pm,
                val_auc_selected=micro_auc(val_pm),
                train_val_gap=None,
                seconds=0.0,
            )
            edir = os.path.join(seed_dir, espec.name)
            os.makedirs(edir, exist_ok=True)
            write_report_json(os.path.join(edir, "report.json"), report)
            write_per_label_csv(os.path.join(edir, "per_label.csv"), report)
            rows.append(_comparison_row(espec.name, report, suite.k))

        reports.write_comparison_csv(
            os.path.join(seed_dir, "comparison.csv"), rows, suite.k
        )
        reports.render_comparison_figure(
            os.path.join(seed_dir, "comparison.png"), rows, suite.k
        )
        all_results[seed] = results
        all_rows[seed] = rows

    _write_aggregates(out_dir, suite, all_rows, timings)
    all_results["_rows"] = all_rows
    all_results["_timings"] = timings
    return all_results


def _run_model(
    spec: ModelSpec,
    suite: SuiteConfig,
    seed: int,
    seed_dir: str,
    split,
    by_id,
    grid_values,
    feats,
    windows,
    label_names,
) -> ModelResult:
    model_dir = os.path.join(seed_dir, spec.name)
    os.makedirs(model_dir, exist_ok=True)
    k = suite.k
    p = suite.synth.n_primary_labels

    if spec.kind in ("base_rate", "logistic"):
        inputs = feats if spec.input == "features" else windows
        x_train = np.asarray([inputs[i] for i in split.train])
        x_val = np.asarray([inputs[i] for i in split.validation])
        x_test = np.asarray([inputs[i] for i in split.test])
        y_train = np.asarray([by_id[i].labels[:p] for i in split.train], dtype=float)
        y_val = np.asarray([by_id[i].labels[:p] for i in split.validation], dtype=float)
        y_test = np.asarray([by_id[i].labels[:p] for i in split.test], dtype=float)
        if spec.kind == "base_rate":
            model = fit_base_rate(y_train)
            val_scores = predict_base_rate(model, x_val.shape[0])
            test_scores = predict_base_rate(model, x_test.shape[0])
        else:
            model = fit_logistic(
                x_train, y_train, x_val, y_val, l2_grid=tuple(spec.l2_grid)
            )
            val_scores = predict_logistic(model, x_val)
            test_scores = predict_logistic(model, x_test)
        val_pm = PredictionMatrix(val_scores, y_val)
        test_pm = PredictionMatrix(test_scores, y_test)
        report = _tuned_report(val_pm, test_pm, k, label_names)
        write_report_json(os.path.join(model_dir, "report.json"), report)
        write_per_label_csv(os.path.join(model_dir, "per_label.csv"), report)
        return ModelResult(
            name=spec.name,
            kind=spec.kind,
            report=report,
            history=None,
            selected_epoch=None,
            val_pm=val_pm,
            test_pm=test_pm,
            val_auc_selected=micro_auc(val_pm),
            train_val_gap=None,
            seconds=0.0,
        )

    # Trained networks: LSTM on grids, MLP on features or windows.
    config = _train_config_for(spec, suite, seed)
    if spec.kind == "lstm":
        inputs_map = {
            eid: truncate_grid(v, config.truncate_last_hours)
            for eid, v in grid_values.items()
        }
    else:
        inputs_map = feats if spec.input == "features" else windows
    train_set = dataset_from_episodes(split.train, inputs_map, by_id, config.objective)
    val_set = dataset_from_episodes(
        split.validation, inputs_map, by_id, config.objective
    )
    test_set = dataset_from_episodes(split.test, inputs_map, by_id, config.objective)

    history, _ = train(config, train_set, val_set, out_dir=model_dir)
    write_history_csv(os.path.join(model_dir, "history.csv"), history, k)
    reports.render_history_figure(
        os.path.join(model_dir, "history.png"), history, title=spec.name
    )
    selected = select_model(history)
    sel_record = history.records[selected - 1]
    sel_params = params_from_checkpoint(
        ckpt.load_checkpoint(sel_record.checkpoint_path)
    )

    val_scores = mask_predictions(
        predict_scores(spec.kind, sel_params, val_set.inputs), config.objective
    )
    test_scores = mask_predictions(
        predict_scores(spec.kind, sel_params, test_set.inputs), config.objective
    )
    val_pm = PredictionMatrix(val_scores, val_set.primary)
    test_pm = PredictionMatrix(test_scores, test_set.primary)
    report = _tuned_report(val_pm, test_pm, k, label_names)
    write_report_json(os.path.join(model_dir, "report.json"), report)
    write_per_label_csv(os.path.join(model_dir, "per_label.csv"), report)

    gap = None
    if sel_record.train_micro_auc is not None and sel_record.val_micro_auc is not None:
        gap = sel_record.train_micro_auc - sel_record.val_micro_auc
    return ModelResult(
        name=spec.name,
        kind=spec.kind,
        report=report,
        history=history,
        selected_epoch=selected,
        val_pm=val_pm,
        test_pm=test_pm,
        val_auc_selected=sel_record.val_micro_auc,
        train_val_gap=gap,
        seconds=0.0,
    )


def _write_aggregates(out_dir: str, suite: SuiteConfig, all_rows: dict, timings) -> None:
    names: list[str] = []
    for rows in all_rows.values():
        for row in rows:
            if row["model"] not in names:
                names.append(row["model"])
    metric_cols = ["micro_auc", "macro_auc", "micro_f1", "macro_f1",
                   f"precision_at_{suite.k}"]
    mean_rows = []
    for name in names:
        agg = {"model": name}
        for col in metric_cols:
            vals = [
                row[col]
                for rows in all_rows.values()
                for row in rows
                if row["model"] == name and row[col] is not None
            ]
            agg[col] = float(np.mean(vals)) if vals else None
        mean_rows.append(agg)
    reports.write_comparison_csv(
        os.path.join(out_dir, "comparison_mean.csv"), mean_rows, suite.k
    )
    reports.render_comparison_figure(
        os.path.join(out_dir, "comparison_mean.png"), mean_rows, suite.k
    )
    with open(os.path.join(out_dir, "timings.json"), "w", encoding="utf-8") as fh:
        json.dump(timings, fh, indent=2, default=float)
        fh.write("\n")


def reference_suite_config(
    seeds: list[int] | None = None,
    models: list[str] | None = None,
) -> SuiteConfig:
    """The fixed reference experiment: 2000 episodes, 16 primary + 8 auxiliary
    labels, 13 channels, seeds 1..5, with the directional model grid.

    models, when given, restricts the grid to the named entries.
    """
    synth = SynthConfig(
        n_episodes=2000,
        n_primary_labels=16,
        n_aux_labels=8,
        channels=default_channel_specs(13),
        min_hours=12,
        max_hours=48,
        samples_per_hour=1.0,
        channel_drop_prob=0.1,
        noise_scale=4.0,
        base_rate_max=0.5,
        base_rate_decay=0.7,
    )
    grid = [
        ModelSpec(
            name="base_rate", kind="base_rate", input="features",
        ),
        ModelSpec(
            name="lstm_plain", kind="lstm", input="grid", layers=[32, 32],
            objective_mode="final_only", epochs=40,
        ),
        ModelSpec(
            name="lstm_tr", kind="lstm", input="grid", layers=[32, 32],
            objective_mode="target_replication", alpha=0.5, epochs=40,
        ),
        ModelSpec(
            name="lstm_do", kind="lstm", input="grid", layers=[64, 64],
            dropout=0.5, objective_mode="final_only", epochs=40,
        ),
        ModelSpec(
            name="mlp_features", kind="mlp", input="features",
            layers=[300, 300, 300], dropout=0.5, epochs=200,
            learning_rate=0.05,
        ),
    ]
    if models is not None:
        grid = [m for m in grid if m.name in models]
    ensembles = [
        EnsembleSpec(name="ensemble_max", a="best:lstm", b="best:mlp", mode="max"),
        EnsembleSpec(name="ensemble_mean", a="best:lstm", b="best:mlp", mode="mean"),
    ]
    return SuiteConfig(
        synth=synth,
        seeds=seeds if seeds is not None else [1, 2, 3, 4, 5],
        models=grid,
        ensembles=ensembles,
        k=10,
    )
