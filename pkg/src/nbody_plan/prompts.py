"""Prompt tiers and the zone-occupancy CSV attachment.

Tiers are cumulative: each one renders its predecessors' sections and adds
its own. Templates live in ``templates/<tier>.txt`` and use
``string.Template`` placeholders (``$n_agents``, ``$fps``, ``$agent_list``,
``$zone_table``, ``$zone_description``). A different template directory
can be passed to swap the wording without touching code.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from string import Template
from typing import Optional

from .annotations import seconds_to_frames
from .core import as_fps

__all__ = [
    "TIERS",
    "DECODING",
    "PromptTier",
    "render_prompt",
    "prompt_metadata",
    "spatial_csv",
    "load_zone_csv",
    "format_seconds",
]

TIERS = ("base", "goals", "goals_constraints", "spatial")
# deterministic decoding used with the prompts
DECODING = {"temperature": 0.0, "top_p": 0.2}


@dataclass(frozen=True)
class PromptTier:
    tier: str
    n_agents: int = 2
    fps: Fraction = Fraction(1)
    zones: Optional[object] = None  # ZoneOccupancy

    def __post_init__(self):
        if self.tier not in TIERS:
            raise ValueError(f"unknown tier {self.tier!r}; expected one of {TIERS}")
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        object.__setattr__(self, "fps", as_fps(self.fps))
        if self.tier == "spatial" and self.zones is None:
            raise ValueError("the spatial tier needs a zone occupancy")


def format_seconds(value: Fraction) -> str:
    """Shortest decimal text for a time in seconds (integers print without a point)."""
    value = Fraction(value)
    if value.denominator == 1:
        return str(value.numerator)
    return f"{float(value):.6f}".rstrip("0").rstrip(".")


def spatial_csv(zones, fps=1, comments: bool = True) -> str:
    """``start_s,end_s,zone`` rows, one per occupancy triplet, sorted by start."""
    fps = as_fps(fps)
    buf = io.StringIO()
    if comments and getattr(zones, "geometry", None) is not None:
        for line in zones.geometry.describe():
            buf.write(f"# {line}\n")
        buf.write(f"# fps={fps}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["start_s", "end_s", "zone"])
    for s, e, z in sorted(zones.triplets):
        writer.writerow([format_seconds(s / fps), format_seconds(e / fps), z])
    return buf.getvalue()


def load_zone_csv(text: str, fps=1) -> list[tuple[int, int, int]]:
    """Parse a zone CSV back into frame triplets (half-up rounding at ``fps``)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header != ["start_s", "end_s", "zone"]:
        raise ValueError(f"expected header start_s,end_s,zone, got {header}")
    out = []
    for row in reader:
        s, e, z = row
        out.append((seconds_to_frames(Fraction(s), fps), seconds_to_frames(Fraction(e), fps), int(z)))
    return out


def _template(name: str, template_dir) -> Template:
    if template_dir is None:
        text = resources.files("nbody_plan").joinpath(f"templates/{name}.txt").read_text(encoding="utf-8")
    else:
        text = (Path(template_dir) / f"{name}.txt").read_text(encoding="utf-8")
    return Template(text)


def render_prompt(tier: PromptTier, template_dir=None) -> str:
    values = {
        "n_agents": tier.n_agents,
        "fps": format_seconds(tier.fps),
        "agent_list": ", ".join(f"P{k}" for k in range(1, tier.n_agents + 1)),
    }
    if tier.zones is not None:
        values["zone_table"] = spatial_csv(tier.zones, tier.fps, comments=False)
        geometry = getattr(tier.zones, "geometry", None)
        values["zone_description"] = "\n".join(geometry.describe()) if geometry is not None else ""
    sections = []
    for name in TIERS[:TIERS.index(tier.tier) + 1]:
        sections.append(_template(name, template_dir).substitute(values).rstrip("\n"))
    return "\n\n".join(sections) + "\n"


def prompt_metadata(tier: PromptTier) -> dict:
    return {
        "tier": tier.tier,
        "sections": list(TIERS[:TIERS.index(tier.tier) + 1]),
        "n_agents": tier.n_agents,
        "fps": str(tier.fps),
        "decoding": dict(DECODING),
    }


def metadata_json(tier: PromptTier) -> str:
    return json.dumps(prompt_metadata(tier), indent=2) + "\n"
