"""Per-block program states recorded by the instrumented interpreter."""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from typing import Callable

from ..cpg import CodePropertyGraph
from .syntax import Block

SAMPLE_SIZE = 8


@dataclass(frozen=True)
class ValueSummary:
    count: int
    samples: tuple[tuple[int, str, str, int], ...]  # (id, kind, code, line)


def summarize(g: CodePropertyGraph, ids: frozenset[int], limit: int = SAMPLE_SIZE) -> ValueSummary:
    samples = []
    for nid in sorted(ids)[:limit]:
        n = g.nodes[nid]
        samples.append((nid, n.kind.value, n.code, n.line))
    return ValueSummary(len(ids), tuple(samples))


@dataclass
class PState:
    """``states[j-1]`` maps every in-scope name after block ``j`` to its
    node set; ``current[j-1]`` names the chain block ``j`` belongs to."""

    blocks: list[Block] = field(default_factory=list)
    states: list[dict[str, frozenset[int]]] = field(default_factory=list)
    current: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)

    def append(self, block: Block, state: dict[str, frozenset[int]]) -> None:
        self.blocks.append(block)
        self.states.append(dict(state))
        self.current.append(block.owner)

    def value(self, j: int) -> frozenset[int]:
        """Current-chain value after block ``j`` (1-based)."""
        return self.states[j - 1][self.current[j - 1]]

    def restrict(self, keep: Callable[[int], bool]) -> "PState":
        out = PState()
        for block, state in zip(self.blocks, self.states):
            out.append(block, {k: frozenset(n for n in v if keep(n)) for k, v in state.items()})
        return out

    def empty_stages(self) -> list[int]:
        """Blocks whose chain value became empty while its input was not."""
        found = []
        for j in range(1, len(self) + 1):
            block = self.blocks[j - 1]
            if self.value(j):
                continue
            if block.position == 0 or (j >= 2 and self.current[j - 2] == block.owner and self.value(j - 1)):
                found.append(j)
        return found

    def to_text(self, g: CodePropertyGraph) -> str:
        lines = []
        for j, (block, state) in enumerate(zip(self.blocks, self.states), start=1):
            lines.append(f"S {j}  // {block.owner}: {block.text}")
            for name in sorted(state):
                s = summarize(g, state[name])
                samples = " ".join(
                    f"#{nid}:{kind}:L{line}:{json.dumps(code)}" for nid, kind, code, line in s.samples
                )
                lines.append(f"V {name} {s.count}" + (f" {samples}" if samples else ""))
        return "\n".join(lines) + ("\n" if lines else "")

    def digest(self) -> str:
        h = hashlib.sha256()
        for state in self.states:
            for name in sorted(state):
                h.update(f"{name}:{sorted(state[name])};".encode())
            h.update(b"|")
        return h.hexdigest()[:16]


_V_RE = re.compile(r"^V (\S+) (\d+)(.*)$")
_SAMPLE_RE = re.compile(r'#(\d+):(\w+):L(\d+):("(?:[^"\\]|\\.)*")')


def parse_pstate_text(text: str) -> list[dict[str, ValueSummary]]:
    """Read the summaries back from :meth:`PState.to_text` output."""
    states: list[dict[str, ValueSummary]] = []
    for line in text.splitlines():
        if line.startswith("S "):
            states.append({})
        elif line.startswith("V "):
            m = _V_RE.match(line)
            if m is None or not states:
                raise ValueError(f"bad state line {line!r}")
            samples = tuple(
                (int(a), b, json.loads(d), int(c)) for a, b, c, d in _SAMPLE_RE.findall(m.group(3))
            )
            states[-1][m.group(1)] = ValueSummary(int(m.group(2)), samples)
    return states
