"""Operator command line: catalog generation, training, evaluation,
oracle runs, and single-design inspection.

All knobs live in a flat RunConfig.  Values resolve in order: built-in
defaults, then a `key = value` config file (--config), then explicit
command-line flags.  --print-config echoes the fully resolved
configuration before the command runs.  Exit codes: 0 success,
1 validation error, 2 runtime/divergence error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields, replace

import numpy as np

from .agents import greedy_agent, oracle_shortest, random_agent
from .catalog import (
    BAND_HALF_WIDTH,
    TOOTH_BAND_PU,
    TargetBands,
    builtin_catalog,
    generate_variants,
    load_catalog,
    machine_by_id,
    save_catalog,
    with_split,
)
from .env import DesignEnv, RewardConfig, flags
from .errors import (
    CatalogVersionError,
    CheckpointFormatError,
    CheckpointVersionError,
    ContractViolationError,
    GenerationExhaustedError,
    MalformedCatalogError,
    TrainingDivergedError,
)
from .ppo import (
    EpisodeRow,
    EvalReport,
    Hyperparams,
    MachineEval,
    derive_seed,
    evaluate,
    format_eval_table,
    load_checkpoint,
    save_checkpoint,
    train,
    write_episode_csv,
)
from .surrogate import DesignPoint, check_bounds, evaluate as evaluate_design


@dataclass(frozen=True)
class RunConfig:
    # training hyperparameters (see ppo.Hyperparams)
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    epochs: int = 4
    minibatch_size: int = 64
    horizon: int = 1024
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    total_steps: int = 400_000
    env_count: int = 8
    seed: int = 0
    # reward shaping (see env.RewardConfig)
    right_direction_reward: float = 1.0
    wrong_direction_reward: float = -1.0
    revisit_penalty: float = -2.0
    win_reward: float = 100.0
    max_steps: int = 300
    # catalog generation
    catalog_seed: int = 0
    catalog_path: str = "catalog.txt"
    machines: str = "1,2,3"
    train_per_machine: int = 25
    holdout_per_machine: int = 5
    # artifact paths
    checkpoint_path: str = "checkpoint.txt"
    metrics_path: str = "metrics.txt"
    episodes_csv: str = "episodes.csv"
    # evaluation
    split: str = "holdout"
    agent: str = "ppo"
    eval_mode: str = "stochastic"
    eval_seed: int = 1
    episodes_per_variant: int = 20


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_config_value(key: str, text: str):
    kind = _FIELD_TYPES.get(key)
    if kind is None:
        raise ContractViolationError(f"unknown config key {key!r}")
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        return text
    except ValueError as exc:
        raise ContractViolationError(f"bad value for {key!r}: {text!r}") from exc


def load_config_file(path: str) -> dict[str, object]:
    """Flat `key = value` text; # comments and blank lines ignored;
    unknown keys rejected."""
    values: dict[str, object] = {}
    with open(path) as fh:
        for number, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ContractViolationError(
                    f"{path}:{number}: expected key = value")
            key, _, text = line.partition("=")
            key = key.strip()
            if key in values:
                raise ContractViolationError(
                    f"{path}:{number}: duplicate key {key!r}")
            values[key] = _parse_config_value(key, text.strip())
    return values


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, set[str]]:
    """Defaults, then config file, then explicit flags; returns the
    resolved config plus the set of keys set explicitly by flags."""
    merged: dict[str, object] = {}
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    overridden: set[str] = set()
    for name in _FIELD_TYPES:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
            overridden.add(name)
    return RunConfig(**merged), overridden


def print_config(config: RunConfig) -> None:
    for f in fields(RunConfig):
        value = getattr(config, f.name)
        print(f"{f.name} = {value!r}" if isinstance(value, float)
              else f"{f.name} = {value}")


def _hyperparams(config: RunConfig) -> Hyperparams:
    return Hyperparams(
        discount=config.discount, gae_lambda=config.gae_lambda,
        clip_ratio=config.clip_ratio, learning_rate=config.learning_rate,
        epochs=config.epochs, minibatch_size=config.minibatch_size,
        horizon=config.horizon, value_coef=config.value_coef,
        entropy_coef=config.entropy_coef, total_steps=config.total_steps,
        env_count=config.env_count, seed=config.seed)


def _reward_config(config: RunConfig) -> RewardConfig:
    return RewardConfig(
        right_direction_reward=config.right_direction_reward,
        wrong_direction_reward=config.wrong_direction_reward,
        revisit_penalty=config.revisit_penalty,
        win_reward=config.win_reward,
        max_steps=config.max_steps)


def _machine_ids(config: RunConfig) -> list[int]:
    known = {m.id for m in builtin_catalog()}
    try:
        ids = [int(tok) for tok in config.machines.split(",") if tok.strip()]
    except ValueError as exc:
        raise ContractViolationError(
            f"bad machines list {config.machines!r}") from exc
    if not ids or any(i not in known for i in ids):
        raise ContractViolationError(
            f"machines must be a subset of {sorted(known)}")
    return ids


def _load_variants(config: RunConfig, split: str):
    variants = load_catalog(config.catalog_path)
    if split != "all":
        variants = [v for v in variants if v.split == split]
    if not variants:
        raise ContractViolationError(
            f"no variants with split {split!r} in {config.catalog_path}")
    return variants


def cmd_catalog(config: RunConfig) -> int:
    per_machine = config.train_per_machine + config.holdout_per_machine
    variants = []
    for machine_id in _machine_ids(config):
        base = machine_by_id(machine_id)
        batch = generate_variants(base, per_machine, config.catalog_seed)
        batch = [v if i < config.train_per_machine else with_split(v, "holdout")
                 for i, v in enumerate(batch)]
        variants.extend(batch)
        print(f"machine {machine_id}: {config.train_per_machine} train + "
              f"{config.holdout_per_machine} holdout")
    save_catalog(variants, config.catalog_path)
    print(f"wrote {len(variants)} variants to {config.catalog_path}")
    return 0


def cmd_train(config: RunConfig, resume: bool, overridden: set[str]) -> int:
    variants = _load_variants(config, "train")
    hyper = _hyperparams(config)
    checkpoint = None
    if resume:
        checkpoint = load_checkpoint(config.checkpoint_path)
        if "total_steps" in overridden:
            checkpoint.hyper = replace(checkpoint.hyper,
                                       total_steps=config.total_steps)
        print(f"resuming from update {checkpoint.update_index} "
              f"({checkpoint.env_steps} env steps)")
    ckpt, report = train(
        variants, hyper, reward_config=_reward_config(config),
        checkpoint=checkpoint, metrics_path=config.metrics_path,
        progress=lambda row: print(row.as_line()))
    save_checkpoint(ckpt, config.checkpoint_path)
    print(f"checkpoint written to {config.checkpoint_path} "
          f"after {ckpt.update_index} updates ({ckpt.env_steps} env steps)")
    return 0


def _summarize(rows: list[EpisodeRow], mode: str, episodes: int) -> EvalReport:
    per_machine: dict[int, MachineEval] = {}
    for machine_id in sorted({r.machine_id for r in rows}):
        machine_rows = [r for r in rows if r.machine_id == machine_id]
        wins = [r.steps for r in machine_rows if r.win]
        per_machine[machine_id] = MachineEval(
            machine_id=machine_id,
            episodes=len(machine_rows),
            wins=len(wins),
            win_rate=len(wins) / len(machine_rows),
            mean_winning_steps=float(np.mean(wins)) if wins else float("nan"),
            mean_steps_all=float(np.mean([r.steps for r in machine_rows])),
        )
    return EvalReport(mode=mode, episodes_per_variant=episodes,
                      per_machine=per_machine, rows=rows)


def _baseline_eval(config: RunConfig, variants) -> EvalReport:
    rows: list[EpisodeRow] = []
    counter = 0
    reward_config = _reward_config(config)
    for variant in variants:
        env = DesignEnv(variant, machine_by_id(variant.base_id), reward_config)
        for ep in range(config.episodes_per_variant):
            if config.agent == "random":
                rng = np.random.default_rng(
                    derive_seed(config.eval_seed, variant.variant_seed, ep))
                record = random_agent(env, rng)
            else:
                record = greedy_agent(env)
            rows.append(EpisodeRow(variant.base_id, variant.variant_seed,
                                   counter, record.steps, record.win))
            counter += 1
    return _summarize(rows, config.agent, config.episodes_per_variant)


def _oracle_eval(config: RunConfig, variants) -> EvalReport:
    rows = [EpisodeRow(v.base_id, v.variant_seed, i,
                       r.shortest_steps if r.shortest_steps is not None else -1,
                       r.shortest_steps is not None)
            for i, (v, r) in enumerate(
                (v, oracle_shortest(v)) for v in variants)]
    return _summarize(rows, "oracle", 1)


def cmd_eval(config: RunConfig) -> int:
    variants = _load_variants(config, config.split)
    if config.agent == "ppo":
        ckpt = load_checkpoint(config.checkpoint_path)
        report = evaluate(ckpt.actor, variants,
                          episodes_per_variant=config.episodes_per_variant,
                          mode=config.eval_mode, seed=config.eval_seed,
                          reward_config=_reward_config(config))
    elif config.agent in ("random", "greedy"):
        report = _baseline_eval(config, variants)
    elif config.agent == "oracle":
        report = _oracle_eval(config, variants)
    else:
        raise ContractViolationError(f"unknown agent {config.agent!r}")
    print(format_eval_table(report, label=config.agent))
    write_episode_csv(config.episodes_csv, report.rows)
    print(f"per-episode steps written to {config.episodes_csv}")
    return 0


def cmd_oracle(config: RunConfig) -> int:
    variants = _load_variants(config, config.split)
    infeasible = 0
    for variant in variants:
        result = oracle_shortest(variant)
        if result.shortest_steps is None:
            infeasible += 1
            steps_text = "-"
        else:
            steps_text = str(result.shortest_steps)
        witness = ",".join(str(int(a)) for a in result.witness)
        print(f"machine={variant.base_id} variant_seed={variant.variant_seed} "
              f"shortest_steps={steps_text} witness={witness or '-'}")
    if infeasible:
        print(f"error: {infeasible} certified variants have no feasible "
              "path (catalog inconsistency)", file=sys.stderr)
        return 2
    return 0


def _inspect_bands(config_text: str | None, base) -> TargetBands:
    if config_text is None:
        h_lo, h_hi = TOOTH_BAND_PU
        return TargetBands(
            b_gap=(1.0 - BAND_HALF_WIDTH[0], 1.0 + BAND_HALF_WIDTH[0]),
            t_break=(1.0 - BAND_HALF_WIDTH[1], 1.0 + BAND_HALF_WIDTH[1]),
            i_start=(1.0 - BAND_HALF_WIDTH[2], 1.0 + BAND_HALF_WIDTH[2]),
            d_temp=(1.0 - BAND_HALF_WIDTH[3], 1.0 + BAND_HALF_WIDTH[3]),
            tooth_tip=(h_lo * base.base_design.tooth_tip,
                       h_hi * base.base_design.tooth_tip))
    parts = [tok for tok in config_text.split(",") if tok.strip()]
    if len(parts) != 10:
        raise ContractViolationError(
            "--bands needs 10 comma-separated numbers "
            "(lo,hi for b_gap, t_break, i_start, d_temp, tooth_tip)")
    try:
        vals = [float(tok) for tok in parts]
    except ValueError as exc:
        raise ContractViolationError(f"bad --bands value: {exc}") from exc
    return TargetBands(b_gap=(vals[0], vals[1]), t_break=(vals[2], vals[3]),
                       i_start=(vals[4], vals[5]), d_temp=(vals[6], vals[7]),
                       tooth_tip=(vals[8], vals[9]))


def cmd_inspect(args: argparse.Namespace) -> int:
    base = machine_by_id(args.machine)
    design = DesignPoint(
        length=args.length if args.length is not None else base.base_design.length,
        turns=args.turns if args.turns is not None else base.base_design.turns,
        tooth_tip=(args.tooth_tip if args.tooth_tip is not None
                   else base.base_design.tooth_tip))
    check_bounds(design, base)
    bands = _inspect_bands(args.bands, base)
    perf = evaluate_design(design, base)
    flag_values = flags(perf, bands)
    print(f"machine {base.id}: rated_power_kw={base.rated_power:.0f} "
          f"line_voltage_v={base.line_voltage:.0f}")
    print(f"design: length={design.length!r} turns={design.turns} "
          f"tooth_tip={design.tooth_tip!r}")
    names = ("b_gap", "t_break", "i_start", "d_temp", "tooth_tip")
    for name, value, flag, band in zip(names, perf.as_tuple(), flag_values,
                                       bands.as_tuple()):
        print(f"{name} = {value!r} band=({band[0]!r}, {band[1]!r}) flag={flag}")
    print(f"feasible = {'yes' if all(f == 0 for f in flag_values) else 'no'}")
    return 0


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage errors via exit code 1."""

    def error(self, message):
        raise ContractViolationError(message)


def _add_config_flags(parser: argparse.ArgumentParser, names: list[str]) -> None:
    for name in names:
        kind = _FIELD_TYPES[name]
        typ = {"int": int, "float": float}.get(kind, str)
        parser.add_argument(f"--{name.replace('_', '-')}", type=typ,
                            default=None, dest=name)


_HYPER_KEYS = ["discount", "gae_lambda", "clip_ratio", "learning_rate",
               "epochs", "minibatch_size", "horizon", "value_coef",
               "entropy_coef", "total_steps", "env_count", "seed"]
_REWARD_KEYS = ["right_direction_reward", "wrong_direction_reward",
                "revisit_penalty", "win_reward", "max_steps"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motorgame",
                     description="Induction-machine design game: catalog, "
                                 "PPO training, evaluation, oracle, inspect.")
    parser.add_argument("--config", default=None,
                        help="key = value config file (flags override it)")
    parser.add_argument("--print-config", action="store_true",
                        help="echo the fully resolved configuration")
    sub = parser.add_subparsers(dest="command", required=True)

    p_cat = sub.add_parser("catalog", help="generate and certify variants")
    _add_config_flags(p_cat, ["catalog_seed", "catalog_path", "machines",
                              "train_per_machine", "holdout_per_machine"])

    p_train = sub.add_parser("train", help="train the PPO policy")
    _add_config_flags(p_train, _HYPER_KEYS + _REWARD_KEYS
                      + ["catalog_path", "checkpoint_path", "metrics_path"])
    p_train.add_argument("--resume", action="store_true",
                         help="continue from an existing checkpoint")

    p_eval = sub.add_parser("eval", help="evaluate a policy or baseline")
    _add_config_flags(p_eval, _REWARD_KEYS
                      + ["catalog_path", "checkpoint_path", "episodes_csv",
                         "split", "agent", "eval_mode", "eval_seed",
                         "episodes_per_variant"])

    p_oracle = sub.add_parser("oracle", help="BFS shortest paths per variant")
    _add_config_flags(p_oracle, ["catalog_path", "split"])

    p_inspect = sub.add_parser("inspect", help="evaluate one design point")
    p_inspect.add_argument("machine", type=int)
    p_inspect.add_argument("--length", type=float, default=None)
    p_inspect.add_argument("--turns", type=int, default=None)
    p_inspect.add_argument("--tooth-tip", type=float, default=None, dest="tooth_tip")
    p_inspect.add_argument("--bands", default=None,
                           help="10 comma-separated numbers: lo,hi per quantity")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        config, overridden = resolve_config(args)
        if args.print_config:
            print_config(config)
        if args.command == "catalog":
            return cmd_catalog(config)
        if args.command == "train":
            return cmd_train(config, args.resume, overridden)
        if args.command == "eval":
            return cmd_eval(config)
        if args.command == "oracle":
            return cmd_oracle(config)
        return cmd_inspect(args)
    except (ContractViolationError, MalformedCatalogError, CatalogVersionError,
            CheckpointVersionError, CheckpointFormatError,
            GenerationExhaustedError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TrainingDivergedError as exc:
        where = (f" at update {exc.update_index}"
                 if exc.update_index is not None else "")
        print(f"error: training diverged{where}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
