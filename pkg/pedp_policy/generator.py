"""
Synthetic corpus generation: the scripted expert talks to the agenda user and
every system turn becomes a corpus sample.

A multi-action corpus keeps one sample per system turn. A single-action
corpus splits each turn into its atomic acts, one sample per act in
vocabulary order, with the user's reply arriving after the last act.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from pedp_policy.actions import MacroAction, decompose_macro
from pedp_policy.corpus import TurnSample, write_corpus
from pedp_policy.expert import ScriptedExpert
from pedp_policy.schema import DomainSchema
from pedp_policy.simulator import DEFAULT_MAX_TURNS, EpisodeLog, run_episode, sample_goal
from pedp_policy.state_layout import DialogStateVector
from pedp_policy.state_tracker import DialogStateTracker, UserAct


class GenerationError(RuntimeError):
    """Raised when the expert fails to finish a generated dialog."""
    pass


@dataclass
class GeneratedCorpus:
    samples: List[TurnSample]
    episodes: List[EpisodeLog]
    corpus_path: Optional[Path] = None
    sidecar_path: Optional[Path] = None


def replay_fragment(tracker: DialogStateTracker, macro_texts: Sequence[str],
                    user_acts: Sequence[UserAct]) -> DialogStateVector:
    """
    Next state after executing a system turn one atomic act at a time (vocabulary
    order) followed by the user's reply. ``tracker`` itself is left untouched.
    """
    replay = tracker.copy()
    macro = MacroAction.from_texts(macro_texts, replay.schema.vocab)
    if not macro.members:
        replay.observe_system([])
    else:
        for action in decompose_macro(macro, replay.schema.vocab):
            replay.observe_system([action.text])
    if user_acts:
        replay.observe_user(user_acts)
    return replay.state()


def episode_samples(episode: EpisodeLog, dialog_id: str, schema: DomainSchema,
                    multi_action: bool = True) -> List[TurnSample]:
    """Replay an episode through a fresh tracker and cut it into corpus samples."""
    layout = schema.layout()
    tracker = DialogStateTracker(schema)
    samples: List[TurnSample] = []
    for index, turn in enumerate(episode.turns):
        reply = [UserAct(*act) for act in turn.reply]
        if index == 0:
            tracker.observe_user([UserAct(*act) for act in turn.user])
        macro = MacroAction.from_texts(turn.system, schema.vocab)
        state = DialogStateVector(turn.state, layout)
        next_state = DialogStateVector(turn.next_state, layout)

        if multi_action or len(macro) <= 1:
            samples.append(TurnSample(dialog_id, len(samples), state, macro, next_state))
        else:
            fragment = tracker.copy()
            actions = decompose_macro(macro, schema.vocab)
            for position, action in enumerate(actions):
                fragment.observe_system([action.text])
                if position == len(actions) - 1 and reply:
                    fragment.observe_user(reply)
                fragment_next = fragment.state()
                single = MacroAction(frozenset([action.index]), schema.vocab.M)
                samples.append(TurnSample(dialog_id, len(samples), state, single, fragment_next))
                state = fragment_next

        tracker.observe_system(turn.system)
        if reply:
            tracker.observe_user(reply)
    return samples


def generate_episodes(schema: DomainSchema, n_dialogs: int, seed: int,
                      max_turns: int = DEFAULT_MAX_TURNS) -> List[EpisodeLog]:
    """Expert dialogs for ``n_dialogs`` sampled goals; one numpy stream drives goals and users."""
    if n_dialogs < 1:
        raise ValueError(f"n_dialogs must be >= 1, got {n_dialogs}")
    rng = np.random.default_rng(seed)
    expert = ScriptedExpert(schema)
    episodes = []
    for i in range(n_dialogs):
        goal = sample_goal(schema, rng)
        episode = run_episode(expert, goal, schema, max_turns, rng)
        if not episode.done:
            raise GenerationError(f"Expert did not finish dialog {i} within {max_turns} turns: {goal.to_dict()}")
        episodes.append(episode)
    return episodes


def generate_corpus(schema: DomainSchema, n_dialogs: int, multi_action: bool = True, seed: int = 0,
                    out: Optional[Path] = None, max_turns: int = DEFAULT_MAX_TURNS) -> GeneratedCorpus:
    """
    Run the expert against the simulator and collect its turns.

    :param out: corpus path; the corpus and its schema sidecar are written when given
    """
    episodes = generate_episodes(schema, n_dialogs, seed, max_turns)
    samples = []
    for i, episode in enumerate(episodes):
        samples.extend(episode_samples(episode, f"toy-{seed}-{i:05d}", schema, multi_action))
    result = GeneratedCorpus(samples, episodes)
    if out is not None:
        result.corpus_path = Path(out)
        result.sidecar_path = write_corpus(samples, result.corpus_path, schema.corpus_schema())
    logging.info(f"Generated {len(samples)} turns from {n_dialogs} dialogs "
                 f"({'multi' if multi_action else 'single'}-action)")
    return result


def cardinality_histogram(samples: Sequence[TurnSample]) -> Dict[int, int]:
    histogram: Dict[int, int] = {}
    for sample in samples:
        histogram[len(sample.macro)] = histogram.get(len(sample.macro), 0) + 1
    return dict(sorted(histogram.items()))


def write_manifest(path: Path, generated: GeneratedCorpus, schema: DomainSchema, seed: int,
                   multi_action: bool, run_digest: Optional[str] = None) -> None:
    manifest = {
        "corpus": generated.corpus_path.name if generated.corpus_path else None,
        "n_dialogs": len(generated.episodes),
        "n_turns": len(generated.samples),
        "multi_action": multi_action,
        "seed": seed,
        "schema_digest": schema.digest,
        "vocab_digest": schema.vocab.digest,
        "cardinality_histogram": {str(k): v for k, v in cardinality_histogram(generated.samples).items()},
        "run_digest": run_digest,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logging.info(f"Wrote generation manifest {path}")
