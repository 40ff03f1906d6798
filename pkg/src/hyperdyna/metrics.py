"""Comma-separated metrics persistence: one row per completed episode.

The header is fixed; every row parses back to a MetricsRow.  Floats are
written with repr (shortest round-trip form), so a run's metrics bytes are a
pure function of config and master seed.  The wall_clock_s column carries
deterministic simulated seconds since task start; real wall time lives in
StageReport and the run manifest, which are not byte-compared.
"""

from __future__ import annotations

from dataclasses import dataclass

from .dyna import EpisodeSummary
from .errors import MetricsError

HEADER = ("variant,task_id,episode,step,episodic_return,"
          "hypernet_mse_dynamics,hypernet_mse_reward,hypernet_regularization,wall_clock_s")


@dataclass(frozen=True)
class MetricsRow:
    variant: str
    task_id: int
    episode: int
    step: int
    episodic_return: float
    hypernet_mse_dynamics: float
    hypernet_mse_reward: float
    hypernet_regularization: float
    wall_clock_s: float

    @classmethod
    def from_summary(cls, s: EpisodeSummary) -> "MetricsRow":
        return cls(s.variant, s.task_id, s.episode, s.step, s.episodic_return,
                   s.hypernet_mse_dynamics, s.hypernet_mse_reward,
                   s.hypernet_regularization, s.sim_seconds)

    def to_line(self) -> str:
        return ",".join([
            self.variant, str(self.task_id), str(self.episode), str(self.step),
            repr(self.episodic_return), repr(self.hypernet_mse_dynamics),
            repr(self.hypernet_mse_reward), repr(self.hypernet_regularization),
            repr(self.wall_clock_s),
        ])


def parse_line(line: str) -> MetricsRow:
    parts = line.split(",")
    if len(parts) != 9:
        raise MetricsError(f"expected 9 fields, got {len(parts)}")
    try:
        return MetricsRow(parts[0], int(parts[1]), int(parts[2]), int(parts[3]),
                          float(parts[4]), float(parts[5]), float(parts[6]),
                          float(parts[7]), float(parts[8]))
    except ValueError as exc:
        raise MetricsError(str(exc)) from exc


def format_metrics(rows: list[MetricsRow]) -> str:
    return "\n".join([HEADER] + [r.to_line() for r in rows]) + "\n"


def parse_metrics(text: str, source: str = "<metrics>") -> list[MetricsRow]:
    lines = text.splitlines()
    if not lines or lines[0] != HEADER:
        raise MetricsError(f"{source}:1: missing or wrong header")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rows.append(parse_line(line))
        except MetricsError as exc:
            raise MetricsError(f"{source}:{lineno}: {exc}") from exc
    if not rows:
        raise MetricsError(f"{source}: no metrics rows")
    return rows


def load_metrics(path) -> list[MetricsRow]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_metrics(fh.read(), source=str(path))


class MetricsWriter:
    """Append-only sink; collects rows and can flush the canonical file form."""

    def __init__(self):
        self.rows: list[MetricsRow] = []

    def __call__(self, summary: EpisodeSummary) -> None:
        self.rows.append(MetricsRow.from_summary(summary))

    def text(self) -> str:
        return format_metrics(self.rows)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.text())
