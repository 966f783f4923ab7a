"""Metrics, the defense x attacker evaluation harness, and ablation sweeps.

Reported metrics per cell: clean accuracy on the full test split, clean
accuracy on the eval sample, accuracy under attack, attack success rate,
and mean query counts. Clean-misclassified examples are skipped by the
attacker and excluded from the success-rate denominator, which makes
   Aua/100 = (Clean_eval/100) * (1 - Suc/100)
an exact identity of counts; the harness asserts it on every row.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .attack import (
    AttackConstraints,
    AttackRecipe,
    Attacker,
    STATUS_SKIPPED,
    STATUS_SUCCESS,
    trace_record,
    write_trace_log,
)
from .certify import certify_attack
from .corpus import Dataset, Vocabulary, sample_eval, write_eval_manifest
from .defense import DefenseConfig, train_defended
from .embeddings import EmbeddingTable, SynonymIndex
from .ensemble import EnsembleConfig, EnsemblePredictor
from .victim import VictimModel, parameter_hash


class BenchError(RuntimeError):
    pass


class CertificationError(BenchError):
    """An attack outcome failed independent re-validation."""


def evaluate_clean(predictor, dataset: Dataset, chunk: int = 256) -> float:
    """Percentage of documents the predictor labels correctly."""
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    docs = dataset.documents
    correct = 0
    for start in range(0, len(docs), chunk):
        part = docs[start : start + chunk]
        probs = predictor.predict_proba_batch([list(d.tokens) for d in part])
        preds = np.argmax(probs, axis=1)
        correct += int((preds == np.array([d.label for d in part])).sum())
    return 100.0 * correct / len(docs)


@dataclass
class AttackRow:
    """One (defense, attacker) evaluation cell."""

    attacker: str
    n_eval: int
    n_skipped: int
    n_attempted: int
    n_success: int
    n_failed: int
    clean_eval_pct: float
    aua_pct: float
    suc_pct: float
    mean_queries: float
    mean_queries_all: float


def evaluate_under_attack(
    predictor,
    eval_set: Dataset,
    attacker: Attacker,
    trace_path: str | Path | None = None,
    collect_outcomes: list | None = None,
) -> AttackRow:
    """Attack every document in the eval sample and tally the metrics.

    Every outcome is re-validated by the independent certifier; a
    violation raises CertificationError rather than producing a row.
    """
    if len(eval_set) == 0:
        raise ValueError("eval set is empty")
    n_skipped = n_success = n_failed = 0
    queries_attempted: list[int] = []
    queries_all: list[int] = []
    records = []
    for doc in eval_set:
        outcome = attacker.run(predictor, doc)
        cert = certify_attack(doc, outcome, predictor, attacker.constraints, attacker.sim_table)
        if not cert.ok:
            raise CertificationError(
                f"doc {doc.id}: {'; '.join(cert.failures)}"
            )
        queries_all.append(outcome.queries_used)
        if outcome.status == STATUS_SKIPPED:
            n_skipped += 1
        else:
            queries_attempted.append(outcome.queries_used)
            if outcome.status == STATUS_SUCCESS:
                n_success += 1
            else:
                n_failed += 1
        records.append(trace_record(doc, outcome))
        if collect_outcomes is not None:
            collect_outcomes.append((doc, outcome))
    if trace_path is not None:
        write_trace_log(records, trace_path)

    n_eval = len(eval_set)
    n_attempted = n_success + n_failed
    if n_skipped + n_attempted != n_eval:
        raise BenchError("status counts do not partition the eval set")
    aua_count = n_attempted - n_success
    row = AttackRow(
        attacker=attacker.label,
        n_eval=n_eval,
        n_skipped=n_skipped,
        n_attempted=n_attempted,
        n_success=n_success,
        n_failed=n_failed,
        clean_eval_pct=100.0 * n_attempted / n_eval,
        aua_pct=100.0 * aua_count / n_eval,
        suc_pct=100.0 * n_success / n_attempted if n_attempted else 0.0,
        mean_queries=float(np.mean(queries_attempted)) if queries_attempted else 0.0,
        mean_queries_all=float(np.mean(queries_all)),
    )
    _check_metric_identity(row)
    return row


def _check_metric_identity(row: AttackRow) -> None:
    # exact as count algebra; floats only enter through the final division
    lhs = row.n_attempted - row.n_success
    rhs_counts = row.n_attempted * (1.0 - row.suc_pct / 100.0)
    if row.n_attempted and abs(lhs - rhs_counts) > 1e-9 * max(1, row.n_attempted):
        raise BenchError(f"metric identity violated: {row}")


# --- the benchmark matrix ------------------------------------------------------


@dataclass
class DefenseSetup:
    """A named defense plus the predictor used to evaluate it."""

    name: str
    defense: DefenseConfig
    ensemble: EnsembleConfig | None = None


@dataclass
class BenchContext:
    """Everything shared across benchmark cells."""

    train: Dataset
    test: Dataset
    attacker_index: SynonymIndex
    defender_index: SynonymIndex
    sim_table: EmbeddingTable
    constraints: AttackConstraints
    defender_table: EmbeddingTable | None = None
    eval_n: int = 200
    hidden: int = 32
    activation: str = "tanh"
    dataset_tag: str = "toy"

    def vocabulary(self) -> Vocabulary:
        return Vocabulary.from_dataset(self.train)


@dataclass
class ReportRow:
    defense: str
    attacker: str
    dataset: str
    seed: int
    clean_pct: float
    clean_eval_pct: float
    aua_pct: float
    suc_pct: float
    mean_queries: float
    mean_queries_all: float
    n_eval: int
    n_skipped: int
    fingerprint: str
    status: str = "ok"
    error: str = ""


REPORT_COLUMNS = [
    "defense",
    "attacker",
    "dataset",
    "seed",
    "clean_pct",
    "clean_eval_pct",
    "aua_pct",
    "suc_pct",
    "mean_queries",
    "mean_queries_all",
    "n_eval",
    "n_skipped",
    "fingerprint",
    "status",
    "error",
]


def fingerprint(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def make_victim(context: BenchContext, seed: int) -> VictimModel:
    if context.defender_table is None:
        raise BenchError("context needs a defender_table to build victims")
    return VictimModel(
        vocab=context.vocabulary(),
        dim=context.defender_table.dim,
        hidden=context.hidden,
        num_classes=context.train.num_classes,
        activation=context.activation,
        seed=seed,
        init_table=context.defender_table,
    )


def train_setup(context: BenchContext, setup: DefenseSetup, seed: int) -> VictimModel:
    """Train one defense at one seed; deterministic in its arguments."""
    model = make_victim(context, seed)
    config = replace(setup.defense, seed=seed)
    attacker = None
    if config.method == "ada":
        # the defender is not allowed the attacker's synonym set, so ADA
        # augments with examples found through the defender's own index
        attacker = Attacker(
            recipe=AttackRecipe(name="synonym-greedy"),
            constraints=context.constraints,
            index=context.defender_index,
            sim_table=context.sim_table,
        )
    train_defended(model, context.train, config, index=context.defender_index, attacker=attacker)
    return model


def setup_predictor(model: VictimModel, setup: DefenseSetup, seed: int):
    if setup.ensemble is None:
        return model
    return EnsemblePredictor(model, replace(setup.ensemble, seed=seed))


def run_benchmark(
    context: BenchContext,
    setups: list[DefenseSetup],
    recipes: list[AttackRecipe],
    seeds: list[int],
    out_dir: str | Path | None = None,
) -> list[ReportRow]:
    """Evaluate the full defense x attacker x seed matrix.

    A failing cell is recorded as a failed row and the run continues.
    Rows are sorted by fingerprint so reruns are byte-identical.
    """
    rows: list[ReportRow] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for seed in seeds:
        eval_sample = sample_eval(context.test, min(context.eval_n, len(context.test)), seed)
        eval_ids = [d.id for d in eval_sample]
        if out is not None:
            write_eval_manifest(eval_sample, out / f"eval_ids_s{seed}.txt")
        for setup in setups:
            try:
                model = train_setup(context, setup, seed)
                predictor = setup_predictor(model, setup, seed)
                clean_pct = evaluate_clean(predictor, context.test)
                model_hash = parameter_hash(model)
            except Exception as e:  # cell isolation: a broken cell must not sink the run
                for recipe in recipes:
                    rows.append(_failed_row(context, setup, recipe, seed, str(e)))
                continue
            for recipe in recipes:
                fp = fingerprint(
                    {
                        "defense": setup.defense.to_json(),
                        "ensemble": _ensemble_json(setup.ensemble),
                        "constraints": asdict(context.constraints),
                        "recipe": asdict(recipe),
                        "seed": seed,
                        "eval_ids": eval_ids,
                        "model": model_hash,
                    }
                )
                attacker = Attacker(
                    recipe=recipe,
                    constraints=context.constraints,
                    index=context.attacker_index,
                    sim_table=context.sim_table,
                    name=recipe.name,
                )
                trace_path = out / f"trace_{setup.name}_{recipe.name}_s{seed}.jsonl" if out else None
                try:
                    cell = evaluate_under_attack(predictor, eval_sample, attacker, trace_path)
                except Exception as e:
                    rows.append(_failed_row(context, setup, recipe, seed, str(e), fp))
                    continue
                rows.append(
                    ReportRow(
                        defense=setup.name,
                        attacker=recipe.name,
                        dataset=context.dataset_tag,
                        seed=seed,
                        clean_pct=clean_pct,
                        clean_eval_pct=cell.clean_eval_pct,
                        aua_pct=cell.aua_pct,
                        suc_pct=cell.suc_pct,
                        mean_queries=cell.mean_queries,
                        mean_queries_all=cell.mean_queries_all,
                        n_eval=cell.n_eval,
                        n_skipped=cell.n_skipped,
                        fingerprint=fp,
                    )
                )
    rows.sort(key=lambda r: (r.fingerprint, r.defense, r.attacker, r.seed))
    if out is not None:
        write_report(rows, out)
    return rows


def _ensemble_json(config: EnsembleConfig | None) -> dict | None:
    if config is None:
        return None
    payload = {k: getattr(config, k) for k in config.__dataclass_fields__ if k != "index"}
    payload["index"] = None if config.index is None else config.index.source
    return payload


def _failed_row(context, setup, recipe, seed, error, fp="") -> ReportRow:
    return ReportRow(
        defense=setup.name,
        attacker=recipe.name,
        dataset=context.dataset_tag,
        seed=seed,
        clean_pct=float("nan"),
        clean_eval_pct=float("nan"),
        aua_pct=float("nan"),
        suc_pct=float("nan"),
        mean_queries=float("nan"),
        mean_queries_all=float("nan"),
        n_eval=0,
        n_skipped=0,
        fingerprint=fp,
        status="failed",
        error=error,
    )


def write_report(rows: list[ReportRow], out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    json_path = out / "report.json"
    with csv_path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(asdict(row))
    json_path.write_text(
        json.dumps([asdict(r) for r in rows], indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return csv_path, json_path


# --- ablation sweeps --------------------------------------------------------------


SWEEP_PARAMS = ("k_max", "rho_max", "t", "epsilon", "ensemble_strategy")

# parameters that require retraining at every grid point
_DEFENSE_PARAMS = ("t", "epsilon")

SWEEP_METRICS = ("clean_pct", "clean_eval_pct", "aua_pct", "suc_pct", "mean_queries")


@dataclass
class SweepSpec:
    param: str
    grid: list
    seeds: list[int] = field(default_factory=lambda: [0])

    def __post_init__(self):
        if self.param not in SWEEP_PARAMS:
            raise ValueError(f"unknown sweep parameter {self.param!r}")
        if not self.grid:
            raise ValueError("sweep grid is empty")
        if not self.seeds:
            raise ValueError("sweep needs at least one seed")


@dataclass
class SweepPoint:
    param: str
    value: object
    seed: int
    metrics: dict[str, float]


def _apply_sweep_value(context: BenchContext, setup: DefenseSetup, param: str, value):
    """Return (context, setup) with one knob replaced."""
    if param == "k_max":
        return replace(context, constraints=replace(context.constraints, k_max=int(value))), setup
    if param == "rho_max":
        return replace(context, constraints=replace(context.constraints, rho_max=float(value))), setup
    if param == "t":
        return context, DefenseSetup(
            setup.name, replace(setup.defense, steps=int(value)), setup.ensemble
        )
    if param == "epsilon":
        eps = None if value in (None, "none") else float(value)
        return context, DefenseSetup(
            setup.name, replace(setup.defense, epsilon=eps), setup.ensemble
        )
    if setup.ensemble is None:
        raise BenchError("ensemble_strategy sweep needs an ensemble setup")
    return context, DefenseSetup(
        setup.name, setup.defense, replace(setup.ensemble, strategy=str(value))
    )


def sweep(
    context: BenchContext,
    setup: DefenseSetup,
    recipe: AttackRecipe,
    spec: SweepSpec,
    out_dir: str | Path | None = None,
) -> list[SweepPoint]:
    """One evaluation per grid point per seed, reusing trained models when
    the swept parameter does not affect training. Per-point failures are
    recorded and the sweep continues.
    """
    points: list[SweepPoint] = []
    for seed in spec.seeds:
        cached_model: VictimModel | None = None
        for value in spec.grid:
            ctx, stp = _apply_sweep_value(context, setup, spec.param, value)
            try:
                if spec.param in _DEFENSE_PARAMS or cached_model is None:
                    model = train_setup(ctx, stp, seed)
                    if spec.param not in _DEFENSE_PARAMS:
                        cached_model = model
                else:
                    model = cached_model
                predictor = setup_predictor(model, stp, seed)
                eval_sample = sample_eval(ctx.test, min(ctx.eval_n, len(ctx.test)), seed)
                attacker = Attacker(
                    recipe=recipe,
                    constraints=ctx.constraints,
                    index=ctx.attacker_index,
                    sim_table=ctx.sim_table,
                )
                cell = evaluate_under_attack(predictor, eval_sample, attacker)
                metrics = {
                    "clean_pct": evaluate_clean(predictor, ctx.test),
                    "clean_eval_pct": cell.clean_eval_pct,
                    "aua_pct": cell.aua_pct,
                    "suc_pct": cell.suc_pct,
                    "mean_queries": cell.mean_queries,
                }
            except Exception as e:
                metrics = {"error": str(e)}
            points.append(SweepPoint(param=spec.param, value=value, seed=seed, metrics=metrics))
    if out_dir is not None:
        write_sweep(points, spec, out_dir)
    return points


def sweep_summary(points: list[SweepPoint]) -> dict:
    """Per grid value: mean and std of every metric across seeds."""
    by_value: dict = {}
    for p in points:
        if "error" in p.metrics:
            continue
        by_value.setdefault(p.value, []).append(p.metrics)
    summary = {}
    for value, rows in by_value.items():
        summary[str(value)] = {
            metric: {
                "mean": float(np.mean([r[metric] for r in rows])),
                "std": float(np.std([r[metric] for r in rows])),
            }
            for metric in SWEEP_METRICS
        }
    return summary


def write_sweep(points: list[SweepPoint], spec: SweepSpec, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{spec.param}.csv"
    with path.open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["param", "value", "seed", "metric", "metric_value"])
        for p in points:
            for metric, metric_value in sorted(p.metrics.items()):
                writer.writerow([p.param, p.value, p.seed, metric, metric_value])
    summary_path = out / f"sweep_{spec.param}_summary.json"
    summary_path.write_text(
        json.dumps(sweep_summary(points), indent=2, sort_keys=True), encoding="utf-8"
    )
    return path
