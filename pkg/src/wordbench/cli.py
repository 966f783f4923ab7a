"""Command-line entry point.

Subcommands: train, defend, attack, bench, sweep. Values resolve with
flag > config file > built-in default precedence, and the fully resolved
configuration is echoed to ``<out>/resolved_config.json`` before any work
starts, so every run is replayable from that file alone. Seeds are
mandatory; nothing ever falls back to the wall clock.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

from .attack import AttackConstraints, AttackRecipe, Attacker
from .bench import (
    BenchContext,
    DefenseSetup,
    SweepSpec,
    evaluate_clean,
    evaluate_under_attack,
    run_benchmark,
    sweep as run_sweep,
)
from .corpus import Vocabulary, load_dataset, sample_eval, write_eval_manifest
from .defense import DefenseConfig, train_defended, write_defense_manifest
from .embeddings import build_synonym_index, load_embeddings
from .ensemble import EnsembleConfig, EnsemblePredictor
from .victim import VictimModel, checkpoint_hash, load_checkpoint, save_checkpoint, train

SUBCOMMANDS = ("train", "defend", "attack", "bench", "sweep")


class UsageError(ValueError):
    """Bad flag, missing path, or out-of-range value; names the field."""


# field name -> (type, default). None defaults mean "required if used".
_FIELDS: dict[str, tuple] = {
    "dataset": (str, None),
    "eval_dataset": (str, None),
    "num_classes": (int, None),
    "attacker_vectors": (str, None),
    "defender_vectors": (str, None),
    "sim_vectors": (str, None),
    "checkpoint": (str, None),
    "epsilon_min": (float, 0.84),
    "k_max": (int, 50),
    "rho_max": (float, 0.3),
    "queries": (str, "kxl"),
    "min_cos": (float, 0.0),
    "recipe": (str, "synonym-greedy"),
    "ordering": (str, "deletion-importance"),
    "defense": (str, "none"),
    "steps": (int, 1),
    "alpha": (float, 0.1),
    "epsilon_norm": (float, None),
    "no_projection": (bool, False),
    "mask_rate": (float, 0.15),
    "ada_rounds": (int, 2),
    "ada_mix": (float, 1.0),
    "ada_sample": (int, 128),
    "ensemble": (str, None),
    "ensemble_size": (int, 16),
    "ensemble_perturber": (str, None),
    "epochs": (int, 10),
    "lr": (float, 0.5),
    "batch_size": (int, 32),
    "hidden": (int, 32),
    "activation": (str, "tanh"),
    "eval_n": (int, 200),
    "seed": (int, None),
    "seeds": (str, None),
    "param": (str, None),
    "grid": (str, None),
    "out": (str, None),
    "jobs": (int, 1),
    "strict": (bool, False),
}


@dataclass
class RunConfig:
    subcommand: str
    values: dict

    def __getattr__(self, name):
        values = object.__getattribute__(self, "values")
        if name in values:
            return values[name]
        raise AttributeError(name)

    def to_json(self) -> dict:
        payload = {"subcommand": self.subcommand}
        payload.update({k: self.values[k] for k in sorted(self.values)})
        return payload


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wordbench",
        description="Adversarial word-substitution attack/defense benchmark.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file; flags override it")
        for key, (ftype, _) in _FIELDS.items():
            flag = "--" + key.replace("_", "-")
            if ftype is bool:
                p.add_argument(flag, action="store_const", const=True, default=None)
            else:
                p.add_argument(flag, type=str, default=None)
    return parser


def _coerce(key: str, raw, source: str):
    ftype, _ = _FIELDS[key]
    if raw is None:
        return None
    if isinstance(raw, ftype):
        return raw
    text = str(raw).strip()
    if ftype is bool:
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: cannot parse boolean {text!r} from {source}")
    if text.lower() == "none":
        return None
    try:
        return ftype(text)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {text!r} from {source}") from None


def _read_config_file(path: str) -> dict:
    if not Path(path).exists():
        raise UsageError(f"config: file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    merged: dict = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            key = key.replace("-", "_")
            if key not in _FIELDS:
                raise UsageError(f"{key}: unknown key in {path} [{section}]")
            merged[key] = _coerce(key, value, path)
    return merged


def parse_and_validate(argv) -> RunConfig:
    """Resolve flags over the config file over defaults, then validate."""
    args = _build_parser().parse_args(argv)
    values = {key: default for key, (_, default) in _FIELDS.items()}
    if args.config:
        values.update(_read_config_file(args.config))
    for key in _FIELDS:
        raw = getattr(args, key)
        if raw is not None:
            values[key] = _coerce(key, raw, "command line")
    config = RunConfig(subcommand=args.subcommand, values=values)
    _validate(config)
    return config


def _require(config: RunConfig, *keys: str) -> None:
    for key in keys:
        if config.values.get(key) is None:
            raise UsageError(f"{key}: required for '{config.subcommand}'")


def _require_paths(config: RunConfig, *keys: str) -> None:
    for key in keys:
        value = config.values.get(key)
        if value is not None and not Path(value).exists():
            raise UsageError(f"{key}: path {value} does not exist")


def _validate(config: RunConfig) -> None:
    v = config.values
    if not 0.0 <= v["epsilon_min"] <= 1.0:
        raise UsageError(f"epsilon_min: {v['epsilon_min']} not in [0, 1]")
    if not 0.0 < v["rho_max"] <= 1.0:
        raise UsageError(f"rho_max: {v['rho_max']} not in (0, 1]")
    if v["k_max"] < 1:
        raise UsageError(f"k_max: {v['k_max']} must be >= 1")
    if not 0.0 <= v["mask_rate"] <= 1.0:
        raise UsageError(f"mask_rate: {v['mask_rate']} not in [0, 1]")
    if v["jobs"] < 1:
        raise UsageError(f"jobs: {v['jobs']} must be >= 1")
    if v["eval_n"] < 1:
        raise UsageError(f"eval_n: {v['eval_n']} must be >= 1")
    if v["queries"] != "kxl" and not v["queries"].startswith("fixed:"):
        raise UsageError(f"queries: {v['queries']!r} must be 'kxl' or 'fixed:N'")
    if v["ensemble"] not in (None, "logit", "vote"):
        raise UsageError(f"ensemble: {v['ensemble']!r} must be logit or vote")
    if v["ensemble_perturber"] not in (None, "identity", "mask", "synonym"):
        raise UsageError(f"ensemble_perturber: {v['ensemble_perturber']!r} unknown")

    _require(config, "seed", "out", "num_classes", "dataset")
    sub = config.subcommand
    if sub in ("train", "defend"):
        pass
    elif sub == "attack":
        _require(config, "checkpoint", "attacker_vectors")
    elif sub in ("bench", "sweep"):
        _require(config, "eval_dataset", "attacker_vectors", "defender_vectors")
        if sub == "sweep":
            _require(config, "param", "grid")
    if sub == "defend" and v["defense"] in ("smooth_synonym", "ada"):
        _require(config, "defender_vectors")
    _require_paths(
        config,
        "dataset",
        "eval_dataset",
        "attacker_vectors",
        "defender_vectors",
        "sim_vectors",
        "checkpoint",
    )


def _seeds(config: RunConfig) -> list[int]:
    if config.values.get("seeds"):
        return [int(s) for s in str(config.values["seeds"]).split(",") if s != ""]
    return [config.seed]


def _constraints(config: RunConfig) -> AttackConstraints:
    return AttackConstraints(
        epsilon_min=config.epsilon_min,
        k_max=config.k_max,
        rho_max=config.rho_max,
        queries=config.queries,
    )


def _defense_config(config: RunConfig, method: str | None = None) -> DefenseConfig:
    epsilon = None if config.no_projection else config.epsilon_norm
    return DefenseConfig(
        method=method or config.defense,
        steps=config.steps,
        alpha=config.alpha,
        epsilon=epsilon,
        ada_rounds=config.ada_rounds,
        ada_mix=config.ada_mix,
        ada_sample=config.ada_sample,
        mask_rate=config.mask_rate,
        epochs=config.epochs,
        lr=config.lr,
        batch_size=config.batch_size,
        seed=config.seed,
    )


def _ensemble_config(config: RunConfig, method: str, defender_index) -> EnsembleConfig | None:
    strategy = config.values.get("ensemble")
    perturber = config.values.get("ensemble_perturber")
    if perturber is None:
        perturber = {"smooth_mask": "mask", "smooth_synonym": "synonym"}.get(method)
    if strategy is None and perturber is None:
        return None
    return EnsembleConfig(
        strategy=strategy or "logit",
        size=config.ensemble_size,
        perturber=perturber or "mask",
        mask_rate=config.mask_rate,
        index=defender_index if (perturber or "mask") == "synonym" else None,
        seed=config.seed,
    )


def execute(config: RunConfig) -> int:
    """Dispatch a validated config; artifacts land under config.out."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps(config.to_json(), indent=2, sort_keys=True), encoding="utf-8"
    )
    produced = ["resolved_config.json"]
    handler = {
        "train": _run_train,
        "defend": _run_train,
        "attack": _run_attack,
        "bench": _run_bench,
        "sweep": _run_sweep_cmd,
    }[config.subcommand]
    status = handler(config, out, produced)
    (out / "manifest.json").write_text(
        json.dumps({"produced": sorted(set(produced + ["manifest.json"]))}, indent=2),
        encoding="utf-8",
    )
    return status


def _load_tables(config: RunConfig):
    attacker_table = (
        load_embeddings(config.attacker_vectors) if config.values.get("attacker_vectors") else None
    )
    defender_table = (
        load_embeddings(config.defender_vectors) if config.values.get("defender_vectors") else None
    )
    sim_source = config.values.get("sim_vectors")
    if sim_source:
        sim_table = load_embeddings(sim_source)
    else:
        sim_table = attacker_table
    return attacker_table, defender_table, sim_table


def _run_train(config: RunConfig, out: Path, produced: list) -> int:
    dataset = load_dataset(config.dataset, config.num_classes, split="train")
    attacker_table, defender_table, sim_table = _load_tables(config)
    vocab = Vocabulary.from_dataset(dataset)
    dim = defender_table.dim if defender_table is not None else 16
    model = VictimModel(
        vocab,
        dim=dim,
        hidden=config.hidden,
        num_classes=config.num_classes,
        activation=config.activation,
        seed=config.seed,
        init_table=defender_table,
    )
    method = config.defense if config.subcommand == "defend" else "none"
    defense = _defense_config(config, method)
    defender_index = None
    attacker = None
    if method in ("smooth_synonym", "ada"):
        defender_index = build_synonym_index(
            defender_table, k_max=config.k_max, min_cos=config.min_cos, source="defender"
        )
        if method == "ada":
            # the defender augments through its own index and vectors;
            # the attacker's synonym set is off limits to defenses
            attacker = Attacker(
                recipe=AttackRecipe(name=config.recipe, ordering=config.ordering),
                constraints=_constraints(config),
                index=defender_index,
                sim_table=defender_table,
            )
    if method == "none":
        stats = train(model, dataset, config.epochs, config.lr, config.seed, config.batch_size)
    else:
        stats = train_defended(model, dataset, defense, index=defender_index, attacker=attacker)
    ckpt = out / "checkpoint.bin"
    save_checkpoint(model, ckpt)
    produced.append("checkpoint.bin")
    write_defense_manifest(
        out / "defense_manifest.json",
        defense,
        checkpoint_hash(ckpt),
        extra={"epochs_run": len(stats), "final_loss": stats[-1].loss if stats else None},
    )
    produced.append("defense_manifest.json")
    print(f"checkpoint {ckpt} sha256 {checkpoint_hash(ckpt)[:16]}")
    return 0


def _run_attack(config: RunConfig, out: Path, produced: list) -> int:
    dataset = load_dataset(config.dataset, config.num_classes, split="test")
    attacker_table, defender_table, sim_table = _load_tables(config)
    model = load_checkpoint(config.checkpoint)
    eval_set = sample_eval(dataset, min(config.eval_n, len(dataset)), config.seed)
    write_eval_manifest(eval_set, out / "eval_ids.txt")
    produced.append("eval_ids.txt")
    index = build_synonym_index(attacker_table, k_max=config.k_max, min_cos=config.min_cos)
    attacker = Attacker(
        recipe=AttackRecipe(name=config.recipe, ordering=config.ordering),
        constraints=_constraints(config),
        index=index,
        sim_table=sim_table,
    )
    defender_index = None
    if config.values.get("ensemble_perturber") == "synonym" and defender_table is not None:
        defender_index = build_synonym_index(
            defender_table, k_max=config.k_max, min_cos=config.min_cos, source="defender"
        )
    ens = _ensemble_config(config, "attack", defender_index)
    predictor = EnsemblePredictor(model, ens) if ens is not None else model
    row = evaluate_under_attack(predictor, eval_set, attacker, trace_path=out / "trace.jsonl")
    produced.append("trace.jsonl")
    summary = asdict(row)
    summary["clean_pct"] = evaluate_clean(predictor, dataset)
    (out / "attack_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8"
    )
    produced.append("attack_summary.json")
    print(
        f"aua {row.aua_pct:.1f} suc {row.suc_pct:.1f} queries {row.mean_queries:.1f} "
        f"({row.n_eval} docs, {row.n_skipped} skipped)"
    )
    return 0


def _make_context(config: RunConfig) -> BenchContext:
    train_ds = load_dataset(config.dataset, config.num_classes, split="train")
    test_ds = load_dataset(config.eval_dataset, config.num_classes, split="test")
    attacker_table, defender_table, sim_table = _load_tables(config)
    attacker_index = build_synonym_index(
        attacker_table, k_max=config.k_max, min_cos=config.min_cos
    )
    defender_index = build_synonym_index(
        defender_table, k_max=config.k_max, min_cos=config.min_cos, source="defender"
    )
    return BenchContext(
        train=train_ds,
        test=test_ds,
        attacker_index=attacker_index,
        defender_index=defender_index,
        sim_table=sim_table,
        constraints=_constraints(config),
        defender_table=defender_table,
        eval_n=config.eval_n,
        hidden=config.hidden,
        activation=config.activation,
        dataset_tag=Path(config.dataset).stem,
    )


def _setups(config: RunConfig, context: BenchContext) -> list[DefenseSetup]:
    setups = []
    for method in str(config.defense).split(","):
        method = method.strip()
        defense = _defense_config(config, method)
        ens = _ensemble_config(config, method, context.defender_index)
        setups.append(DefenseSetup(name=method, defense=defense, ensemble=ens))
    return setups


def _run_bench(config: RunConfig, out: Path, produced: list) -> int:
    context = _make_context(config)
    setups = _setups(config, context)
    recipes = [
        AttackRecipe(name=r.strip(), ordering=config.ordering)
        for r in str(config.recipe).split(",")
    ]
    rows = run_benchmark(context, setups, recipes, _seeds(config), out_dir=out)
    produced += ["report.csv", "report.json"]
    produced += [
        f"trace_{s.name}_{r.name}_s{seed}.jsonl"
        for s in setups
        for r in recipes
        for seed in _seeds(config)
    ]
    failed = [r for r in rows if r.status != "ok"]
    for row in rows:
        print(
            f"{row.defense:>14} vs {row.attacker:<16} seed {row.seed}: "
            f"clean {row.clean_pct:6.1f} aua {row.aua_pct:6.1f} suc {row.suc_pct:6.1f} "
            f"[{row.status}]"
        )
    if failed and config.strict:
        return 1
    return 0


def _run_sweep_cmd(config: RunConfig, out: Path, produced: list) -> int:
    context = _make_context(config)
    setups = _setups(config, context)
    if len(setups) != 1:
        raise UsageError("defense: sweep needs exactly one defense")
    recipe = AttackRecipe(name=config.recipe, ordering=config.ordering)
    grid_raw = [g for g in str(config.grid).split(",") if g != ""]
    spec = SweepSpec(param=config.param, grid=grid_raw, seeds=_seeds(config))
    points = run_sweep(context, setups[0], recipe, spec, out_dir=out)
    produced += [f"sweep_{spec.param}.csv", f"sweep_{spec.param}_summary.json"]
    errors = [p for p in points if "error" in p.metrics]
    for p in points:
        shown = p.metrics.get("aua_pct", p.metrics.get("error"))
        print(f"{spec.param}={p.value} seed={p.seed}: {shown}")
    if errors and config.strict:
        return 1
    return 0


def main(argv=None) -> int:
    try:
        config = parse_and_validate(sys.argv[1:] if argv is None else argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    try:
        return execute(config)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # surface module failures with the subcommand name
        print(f"error [{config.subcommand}]: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
