"""
Operator commands: corpus generation and splitting, training, standard and
interactive evaluation, transcript dumps, run comparison and the path-count
sweep.

Settings resolve as command-line flag, then ``--config`` JSON file, then the
RunConfig default. ``PEDP_SEED`` supplies the seed when neither names one.
"""

import argparse
import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from pedp_policy.actions import VocabError
from pedp_policy.baselines import BASELINE_KINDS, DECODE_MODES, GREEDY, MULTIDENSE, SEQ, BaselineConfig, build_baseline
from pedp_policy.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from pedp_policy.corpus import CorpusError, TurnSample, load_corpus, read_sidecar, sidecar_path, split_by_cardinality, \
    split_by_dialog, write_corpus
from pedp_policy.digests import json_digest, short_id
from pedp_policy.evaluation import (MetricError, compare_runs, interactive_metrics, load_report, render_comparison,
                                    standard_metrics, summarize_runs)
from pedp_policy.expert import ScriptedExpert
from pedp_policy.generator import GenerationError, generate_corpus, write_manifest
from pedp_policy.losses import LossWeights, LossWeightsError
from pedp_policy.model import SAMPLE, THRESHOLD, PedpConfig, PedpModel, plan_horizon
from pedp_policy.sampling import GumbelConfig, SamplingError, make_generator
from pedp_policy.schema import DomainSchema, SchemaError, load_schema
from pedp_policy.simulator import GoalSamplingError, ModelPolicy, PolicyError, run_episode, sample_goal
from pedp_policy.state_layout import StateLayoutError
from pedp_policy.training import OptimizerSettings, TrainingDivergedError, fit, predict_corpus
from pedp_policy.transcripts import TranscriptBuilder

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3

SEED_ENV = "PEDP_SEED"
EFFECTIVE_CONFIG = "effective_config.json"
PEDP = "pedp"
DATA_ERRORS = (CorpusError, VocabError, CheckpointError, SchemaError, StateLayoutError, MetricError,
               GoalSamplingError, PolicyError, GenerationError)


class UsageError(ValueError):
    """Raised for invalid flags, settings or missing input files."""
    pass


@dataclass
class RunConfig:
    schema: Optional[str] = None
    corpus: Optional[str] = None
    test_corpus: Optional[str] = None
    checkpoint: List[str] = field(default_factory=list)
    out: str = "runs"
    seed: List[int] = field(default_factory=list)

    hidden_dim: int = 64
    action_embed_dim: int = 32
    decoder_hidden: int = 32
    k_paths: int = 3
    n_max: Optional[int] = None
    tau_d: float = 1.0
    tau_s: float = 1.0
    tau_out: float = 1.0

    w_dap: float = 1.0
    w_sfp: float = 1.0
    w_sr: float = 1.0
    w_map: float = 1.0
    learning_rate: float = 1e-3
    batch_size: int = 32
    grad_clip: float = 5.0
    epochs: int = 30
    val_fraction: float = 0.1

    no_planning: bool = False
    no_ensemble: bool = False
    no_sample: bool = False
    paper_literal_gs: bool = False
    baseline: Optional[str] = None
    decode: str = GREEDY
    beam_width: int = 4

    n_dialogs: int = 200
    single_action: bool = False
    split: str = "dialog"
    max_train_cardinality: int = 2
    episodes: int = 100
    max_turns: int = 20
    n_goals: int = 100
    expert: bool = False
    k_values: List[int] = field(default_factory=lambda: [1, 2, 3, 5])
    report_a: List[str] = field(default_factory=list)
    report_b: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=lambda: ["a", "b"])

    def __post_init__(self):
        if not self.seed:
            raise UsageError("At least one seed is required")
        if self.baseline is not None and self.baseline not in BASELINE_KINDS:
            raise UsageError(f'Unknown baseline "{self.baseline}"')
        if self.decode not in DECODE_MODES:
            raise UsageError(f'Unknown decode mode "{self.decode}"')
        if self.split not in ("dialog", "cardinality"):
            raise UsageError(f'Unknown split "{self.split}"')
        for name in ("epochs", "k_paths", "episodes", "max_turns", "n_goals", "beam_width"):
            if getattr(self, name) < 1:
                raise UsageError(f"--{name.replace('_', '-')} must be >= 1")
        if self.n_max is not None and self.n_max < 1:
            raise UsageError("--n-max must be >= 1")
        if len(self.labels) != 2:
            raise UsageError("--labels takes exactly two names")

    def to_dict(self) -> Dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        return json_digest(self.to_dict())

    @property
    def model_kind(self) -> str:
        if self.baseline is not None:
            return self.baseline
        return MULTIDENSE if self.no_planning else PEDP

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_dap, self.w_sfp, self.w_sr, self.w_map)

    def optimizer(self) -> OptimizerSettings:
        return OptimizerSettings(self.learning_rate, self.batch_size, self.grad_clip)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with RunConfig fields")
    common.add_argument("--schema", help="toy world schema JSON (default: the packaged one)")
    common.add_argument("--corpus", help="JSON-lines corpus")
    common.add_argument("--test-corpus", help="held-out corpus for sweep-k")
    common.add_argument("--checkpoint", action="append", help="model checkpoint (repeatable)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", action="append", type=int, help=f"seed (repeatable, falls back to ${SEED_ENV})")
    common.add_argument("--epochs", type=int)
    common.add_argument("--k-paths", type=int, help="planned paths per prediction")
    common.add_argument("--n-max", type=int, help="planning horizon cap")
    common.add_argument("--no-planning", action="store_true", default=None, help="decode [h0:h0] (DiaMultiDense)")
    common.add_argument("--no-ensemble", action="store_true", default=None, help="plan a single path")
    common.add_argument("--no-sample", action="store_true", default=None, help="threshold instead of sampling")
    common.add_argument("--paper-literal-gs", action="store_true", default=None,
                        help="apply Gumbel-Sigmoid to probabilities instead of their logits")
    common.add_argument("--baseline", choices=BASELINE_KINDS)
    common.add_argument("--decode", choices=DECODE_MODES, help="DiaSeq decoding")
    common.add_argument("--beam-width", type=int)
    common.add_argument("--episodes", type=int, help="simulated dialogs per seed")
    common.add_argument("--max-turns", type=int)
    common.add_argument("--n-dialogs", type=int)
    common.add_argument("--single-action", action="store_true", default=None)
    common.add_argument("--split", choices=("dialog", "cardinality"))
    common.add_argument("--max-train-cardinality", type=int)
    common.add_argument("--n-goals", type=int)
    common.add_argument("--expert", action="store_true", default=None, help="use the scripted expert as an agent")
    common.add_argument("--k-values", type=int, nargs="+")
    common.add_argument("--report-a", nargs="+")
    common.add_argument("--report-b", nargs="+")
    common.add_argument("--labels", nargs=2)
    common.add_argument("--learning-rate", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--verbose", action="store_true", default=None)

    parser = _Parser(description="Planning-enhanced multi-action dialog policy")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name, help_text in (
        ("gen-data", "generate a synthetic corpus with the scripted expert"),
        ("split-corpus", "split a corpus by dialog or by held-out cardinality"),
        ("train", "train one model per seed"),
        ("eval-standard", "corpus precision/recall/F1"),
        ("eval-interactive", "simulated dialogs against the agenda user"),
        ("dump-dialogs", "paired transcripts of two agents on the same goals"),
        ("compare-runs", "compare two sets of saved reports"),
        ("sweep-k", "train and evaluate PEDP for several path counts"),
    ):
        commands.add_parser(name, parents=[common], help=help_text)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, overridden by the --config file, overridden by explicit flags."""
    values: Dict = {}
    if args.config:
        try:
            with Path(args.config).open("r", encoding="utf-8") as f:
                values.update(json.load(f))
        except (OSError, json.JSONDecodeError) as err:
            raise UsageError(f"Unable to read config {args.config}: {err}") from err
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise UsageError(f"Unknown config fields {sorted(unknown)}")
    for name in known:
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    if not values.get("seed"):
        env_seed = os.getenv(SEED_ENV)
        try:
            values["seed"] = [int(env_seed)] if env_seed else [0]
        except ValueError as err:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env_seed!r}") from err
    return RunConfig(**values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_effective_config(cfg: RunConfig) -> Path:
    path = _out_dir(cfg) / EFFECTIVE_CONFIG
    with path.open("w", encoding="utf-8") as f:
        json.dump({"config": cfg.to_dict(), "run_digest": cfg.digest}, f, indent=2, sort_keys=True)
    return path


def _write_json(path: Path, payload: Dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    logging.info(f"Wrote {path}")
    return path


def _require(path: Optional[str], flag: str) -> Path:
    if not path:
        raise UsageError(f"{flag} is required")
    if not Path(path).exists():
        raise UsageError(f"{flag} {path} does not exist")
    return Path(path)


def _schema(cfg: RunConfig) -> DomainSchema:
    return load_schema(_require(cfg.schema, "--schema") if cfg.schema else None)


def _load(cfg: RunConfig, flag: str = "--corpus", path: Optional[str] = None) -> List[TurnSample]:
    return load_corpus(_require(path if path is not None else cfg.corpus, flag))


def build_policy(cfg: RunConfig, state_dim: int, num_actions: int, max_cardinality: int,
                 kind: Optional[str] = None, k_paths: Optional[int] = None) -> nn.Module:
    kind = kind or cfg.model_kind
    horizon = cfg.n_max or plan_horizon(max_cardinality)
    if kind == PEDP:
        return PedpModel(PedpConfig(
            state_dim=state_dim, num_actions=num_actions, hidden_dim=cfg.hidden_dim,
            num_paths=k_paths or cfg.k_paths, max_plan_steps=horizon, action_embed_dim=cfg.action_embed_dim,
            decoder_hidden=cfg.decoder_hidden, gumbel=GumbelConfig(cfg.tau_d, cfg.tau_s, cfg.tau_out),
        ))
    return build_baseline(BaselineConfig(
        kind=kind, state_dim=state_dim, num_actions=num_actions, hidden_dim=cfg.hidden_dim,
        decoder_hidden=cfg.decoder_hidden, decode_mode=cfg.decode, beam_width=cfg.beam_width,
        max_length=horizon, tau_out=cfg.tau_out,
    ))


def prediction_options(model: nn.Module, cfg: RunConfig, threshold: Optional[bool] = None) -> Dict:
    """predict_batch keyword options implied by the ablation flags."""
    if model.kind == SEQ:
        return {"mode": cfg.decode}
    no_sample = cfg.no_sample if threshold is None else threshold
    options = {"mode": THRESHOLD if no_sample else SAMPLE, "literal_gumbel_sigmoid": cfg.paper_literal_gs}
    if model.kind == PEDP:
        options["ensemble"] = not cfg.no_ensemble
    return options


def cmd_gen_data(cfg: RunConfig) -> int:
    if cfg.n_dialogs < 1:
        raise UsageError("--n-dialogs must be >= 1")
    schema = _schema(cfg)
    out = _out_dir(cfg)
    seed = cfg.seed[0]
    name = "corpus_single.jsonl" if cfg.single_action else "corpus.jsonl"
    generated = generate_corpus(schema, cfg.n_dialogs, not cfg.single_action, seed, out / name, cfg.max_turns)
    write_manifest(out / "generation_manifest.json", generated, schema, seed, not cfg.single_action, cfg.digest)
    write_effective_config(cfg)
    return EXIT_OK


def cmd_split_corpus(cfg: RunConfig) -> int:
    path = _require(cfg.corpus, "--corpus")
    samples = load_corpus(path)
    schema = read_sidecar(sidecar_path(path))
    if cfg.split == "dialog":
        train, test = split_by_dialog(samples, cfg.val_fraction)
    else:
        train, test = split_by_cardinality(samples, cfg.max_train_cardinality)
    out = _out_dir(cfg)
    write_corpus(train, out / "train.jsonl", schema)
    write_corpus(test, out / "test.jsonl", schema)
    logging.info(f"Split {len(samples)} turns into {len(train)} train / {len(test)} test ({cfg.split})")
    write_effective_config(cfg)
    return EXIT_OK


def train_one(cfg: RunConfig, samples: Sequence[TurnSample], seed: int, kind: Optional[str] = None,
              k_paths: Optional[int] = None, tag: str = "") -> Tuple[nn.Module, Path]:
    layout_width = samples[0].state.bits.shape[0]
    num_actions = samples[0].macro.size
    max_cardinality = max(len(s.macro) for s in samples)
    torch.manual_seed(seed)
    model = build_policy(cfg, layout_width, num_actions, max_cardinality, kind, k_paths)
    train, val = split_by_dialog(samples, cfg.val_fraction)
    if not train:
        train, val = list(samples), []
    out = _out_dir(cfg)
    logging.info(f"Training {model.kind} (seed {seed}) on {len(train)} turns, validating on {len(val) or len(train)}")
    result = fit(model, train, cfg.loss_weights(), cfg.optimizer(), cfg.epochs, seed, val_samples=val,
                 log_path=out / f"train_log{tag}_seed{seed}.jsonl", run_digest=cfg.digest)
    vocab_digest = read_sidecar(sidecar_path(Path(cfg.corpus))).vocab.digest
    checkpoint = save_checkpoint(model, out / f"checkpoint{tag}_seed{seed}.zip", vocab_digest, cfg.digest,
                                 extra={"seed": seed, "best_epoch": result.best_epoch,
                                        "best_val_f1": result.best_val_f1})
    return model, checkpoint


def cmd_train(cfg: RunConfig) -> int:
    samples = _load(cfg)
    if not samples:
        raise CorpusError(f"Corpus {cfg.corpus} has no turns to train on")
    write_effective_config(cfg)
    for seed in cfg.seed:
        train_one(cfg, samples, seed)
    return EXIT_OK


def _standard_report(model: nn.Module, cfg: RunConfig, samples: Sequence[TurnSample], seed: int) -> Dict:
    options = prediction_options(model, cfg)
    predictions = predict_corpus(model, samples, make_generator(seed), **options)
    report = standard_metrics(predictions, [s.macro for s in samples])
    report.run_digest = cfg.digest
    payload = report.to_dict()
    payload["mode"] = options["mode"]
    if model.kind != SEQ and options["mode"] == SAMPLE:
        ablation = predict_corpus(model, samples, make_generator(seed), **prediction_options(model, cfg, True))
        payload["threshold_ablation"] = standard_metrics(ablation, [s.macro for s in samples]).metrics()
    return payload


def _checkpoints(cfg: RunConfig) -> List[Path]:
    if not cfg.checkpoint:
        raise UsageError("--checkpoint is required")
    return [_require(path, "--checkpoint") for path in cfg.checkpoint]


def cmd_eval_standard(cfg: RunConfig) -> int:
    path = _require(cfg.corpus, "--corpus")
    samples = load_corpus(path)
    if not samples:
        raise CorpusError(f"Corpus {path} has no turns to evaluate")
    vocab_digest = read_sidecar(sidecar_path(path)).vocab.digest
    out = _out_dir(cfg)
    reports = []
    for i, checkpoint in enumerate(_checkpoints(cfg)):
        model, _ = load_checkpoint(checkpoint, vocab_digest)
        seed = cfg.seed[i % len(cfg.seed)]
        payload = _standard_report(model, cfg, samples, seed)
        payload["checkpoint"] = checkpoint.name
        _write_json(out / f"standard_report_{checkpoint.stem}.json", payload)
        logging.info(f"{checkpoint.name}: P {payload['precision']:.4f} R {payload['recall']:.4f} F1 {payload['f1']:.4f}")
        reports.append(payload)
    _write_json(out / "standard_summary.json", {"summary": summarize_runs(reports), "run_digest": cfg.digest})
    write_effective_config(cfg)
    return EXIT_OK


def _agent(cfg: RunConfig, schema: DomainSchema, checkpoint: Optional[Path], seed: int):
    if checkpoint is None:
        return ScriptedExpert(schema), "expert"
    model, _ = load_checkpoint(checkpoint, schema.vocab.digest)
    return ModelPolicy(model, make_generator(seed), **prediction_options(model, cfg)), checkpoint.stem


def cmd_eval_interactive(cfg: RunConfig) -> int:
    schema = _schema(cfg)
    checkpoints: List[Optional[Path]] = [None] if cfg.expert else _checkpoints(cfg)
    out = _out_dir(cfg)
    reports = []
    for i, seed in enumerate(cfg.seed):
        checkpoint = checkpoints[i % len(checkpoints)]
        policy, label = _agent(cfg, schema, checkpoint, seed)
        rng = np.random.default_rng(seed)
        episodes = [run_episode(policy, sample_goal(schema, rng), schema, cfg.max_turns, rng)
                    for _ in range(cfg.episodes)]
        report = interactive_metrics(episodes)
        report.run_digest = cfg.digest
        payload = report.to_dict()
        payload.update({"agent": label, "seed": seed})
        _write_json(out / f"interactive_report_{label}_seed{seed}.json", payload)
        logging.info(f"{label} seed {seed}: success {report.success_rate:.3f}, inform recall "
                     f"{report.inform_recall:.3f}, match {report.match_rate:.3f}, turns {report.avg_turns:.2f}")
        reports.append(report)
    _write_json(out / "interactive_summary.json", {"summary": summarize_runs(reports), "run_digest": cfg.digest})
    write_effective_config(cfg)
    return EXIT_OK


def cmd_dump_dialogs(cfg: RunConfig) -> int:
    schema = _schema(cfg)
    checkpoints: List[Optional[Path]] = [Path(c) for c in cfg.checkpoint]
    if cfg.expert:
        checkpoints.append(None)
    if len(checkpoints) != 2:
        raise UsageError("dump-dialogs needs exactly two agents (two --checkpoint, or one plus --expert)")
    for checkpoint in checkpoints:
        if checkpoint is not None:
            _require(str(checkpoint), "--checkpoint")
    seed = cfg.seed[0]
    goal_rng = np.random.default_rng(seed)
    goals = [sample_goal(schema, goal_rng) for _ in range(cfg.n_goals)]
    agents = [_agent(cfg, schema, checkpoint, seed) for checkpoint in checkpoints]
    pairs = []
    for i, goal in enumerate(goals):
        logs = [run_episode(policy, goal, schema, cfg.max_turns, np.random.default_rng([seed, i]))
                for policy, _ in agents]
        pairs.append((logs[0], logs[1]))
    builder = TranscriptBuilder((agents[0][1], agents[1][1]), cfg.digest)
    builder.write_pairs(pairs, _out_dir(cfg) / "transcripts")
    write_effective_config(cfg)
    return EXIT_OK


def cmd_compare_runs(cfg: RunConfig) -> int:
    if not cfg.report_a or not cfg.report_b:
        raise UsageError("compare-runs needs --report-a and --report-b")
    reports_a = [load_report(_require(p, "--report-a")) for p in cfg.report_a]
    reports_b = [load_report(_require(p, "--report-b")) for p in cfg.report_b]
    comparison = compare_runs(reports_a, reports_b, *cfg.labels)
    comparison["run_digest"] = cfg.digest
    out = _out_dir(cfg)
    _write_json(out / "comparison.json", comparison)
    table = render_comparison(comparison, cfg.digest)
    with (out / "comparison.txt").open("w", encoding="utf-8") as f:
        f.write(table)
    print(table)
    write_effective_config(cfg)
    return EXIT_OK


def cmd_sweep_k(cfg: RunConfig) -> int:
    samples = _load(cfg)
    if not samples:
        raise CorpusError(f"Corpus {cfg.corpus} has no turns to train on")
    test = _load(cfg, "--test-corpus", cfg.test_corpus) if cfg.test_corpus else split_by_dialog(samples)[1] or samples
    write_effective_config(cfg)
    by_k: Dict[int, List[Dict]] = {}
    for k in cfg.k_values:
        by_k[k] = []
        for seed in cfg.seed:
            model, _ = train_one(cfg, samples, seed, PEDP, k, tag=f"_k{k}")
            by_k[k].append(_standard_report(model, cfg, test, seed))
    out = _out_dir(cfg)
    _write_json(out / "sweep_k.json", {"summary": {str(k): summarize_runs(r) for k, r in by_k.items()},
                                       "run_digest": cfg.digest})
    base = cfg.k_values[0]
    tables = [render_comparison(compare_runs(by_k[base], by_k[k], f"K={base}", f"K={k}"), cfg.digest)
              for k in cfg.k_values[1:]]
    with (out / "sweep_k.txt").open("w", encoding="utf-8") as f:
        f.write("\n".join(tables))
    for table in tables:
        print(table)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "split-corpus": cmd_split_corpus,
    "train": cmd_train,
    "eval-standard": cmd_eval_standard,
    "eval-interactive": cmd_eval_interactive,
    "dump-dialogs": cmd_dump_dialogs,
    "compare-runs": cmd_compare_runs,
    "sweep-k": cmd_sweep_k,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command and map failures to exit codes (1 usage, 2 data, 3 divergence)."""
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"a command is required: {', '.join(COMMANDS)}")
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else logging.INFO)
        cfg = resolve_config(args)
        torch.set_num_threads(1)
        logging.info(f"{args.command} (run {short_id(cfg.digest)})")
        return COMMANDS[args.command](cfg)
    except (UsageError, FileNotFoundError) as err:
        logging.error(f"Usage error: {err}")
        return EXIT_USAGE
    except TrainingDivergedError as err:
        logging.error(f"Training diverged: {err}")
        return EXIT_DIVERGED
    except DATA_ERRORS as err:
        logging.error(f"Data error: {err}")
        return EXIT_DATA
    except (LossWeightsError, SamplingError, ValueError) as err:
        logging.error(f"Invalid settings: {err}")
        return EXIT_USAGE
