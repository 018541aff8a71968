"""Render paired dialog transcripts for side-by-side inspection of two agents."""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from jinja2 import Environment, PackageLoader

from pedp_policy.evaluation import episode_scores
from pedp_policy.simulator import EpisodeLog

TRANSCRIPT_TEMPLATE = "transcript.txt"


class TranscriptBuilder:
    """
    Writes one text transcript and one JSON copy per goal, both agents' dialogs
    for that goal in the same file.

    :param labels: display names of the two agents
    :param run_digest: provenance digest stamped into every file
    """

    def __init__(self, labels: Tuple[str, str] = ("a", "b"), run_digest: Optional[str] = None):
        self.labels = labels
        self.run_digest = run_digest
        self.env = Environment(loader=PackageLoader("pedp_policy", "templates"), keep_trailing_newline=True)

    def render_pair(self, log_a: EpisodeLog, log_b: EpisodeLog, goal_id: str = "0") -> str:
        if log_a.goal != log_b.goal:
            raise ValueError("Paired transcripts must share one goal")
        agents = [
            {"label": label, "log": log, "scores": episode_scores(log.provided, log.requested, log.match, log.n_turns)}
            for label, log in zip(self.labels, (log_a, log_b))
        ]
        template = self.env.get_template(TRANSCRIPT_TEMPLATE)
        return template.render(goal_id=goal_id, goal=log_a.goal.to_dict(), agents=agents, run_digest=self.run_digest)

    def write_pairs(self, pairs: Sequence[Tuple[EpisodeLog, EpisodeLog]], out_dir: Path) -> List[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for i, (log_a, log_b) in enumerate(pairs):
            goal_id = f"{i:04d}"
            text_path = out_dir / f"dialog_{goal_id}.txt"
            with text_path.open("w", encoding="utf-8") as f:
                f.write(self.render_pair(log_a, log_b, goal_id))
            with (out_dir / f"dialog_{goal_id}.json").open("w", encoding="utf-8") as f:
                json.dump({self.labels[0]: log_a.to_dict(), self.labels[1]: log_b.to_dict(),
                           "run_digest": self.run_digest}, f, indent=2)
            written.append(text_path)
        logging.info(f"Wrote {len(written)} paired transcripts to {out_dir}")
        return written


def render_pair(log_a: EpisodeLog, log_b: EpisodeLog, labels: Tuple[str, str] = ("a", "b")) -> str:
    return TranscriptBuilder(labels).render_pair(log_a, log_b)
