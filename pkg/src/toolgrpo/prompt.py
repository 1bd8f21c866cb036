"""Text protocol for plugging an external language-model agent in as the selector."""

from __future__ import annotations

import re

from .core import Query, ToolLibrary, ToolSelection

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL | re.IGNORECASE)


class ProtocolError(ValueError):
    """Agent output did not follow the answer-tag protocol."""

    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


def _join_categories(categories: list[str]) -> str:
    if len(categories) <= 2:
        return " and ".join(categories)
    return ", ".join(categories[:-1]) + ", and " + categories[-1]


def render_prompt(library: ToolLibrary, query: Query, task: str = "chart", medium: str = "chart") -> str:
    M = library.M
    categories = list(dict.fromkeys(t.category for t in library.tools))
    noun = "tool" if M == 1 else "tools"
    kinds = "type" if len(categories) == 1 else "types"
    tool_lines = "\n".join(f"{t.index}: {t.category} ({t.name})" for t in library.tools)
    return (
        f"You are an expert agent tasked with selecting tools to solve {task} reasoning tasks. "
        f"You have access to {M} {noun} indexed from 0 to {M - 1}, each belonging to one of "
        f"{len(categories)} functional {kinds}: {_join_categories(categories)}.\n"
        f"Function:\n{tool_lines}\n"
        f"Given a {medium} and a query {query.text}, select the index number(s) of tools that are "
        f"most helpful. Output only selected indices as a comma-separated list within <answer> tags."
    )


def format_answer(selection: ToolSelection) -> str:
    return f"<answer>{selection.serialize()}</answer>"


def parse_answer(text: str, num_tools: int) -> ToolSelection:
    """Extract the first answer span, keeping valid in-range integer indices.

    Malformed entries are dropped instead of rejecting the whole answer.
    """
    match = _ANSWER_RE.search(text)
    if match is None:
        raise ProtocolError("agent output has no <answer>...</answer> span", text)
    kept: set[int] = set()
    for token in match.group(1).split(","):
        token = token.strip()
        if not re.fullmatch(r"[+-]?\d+", token):
            continue
        idx = int(token)
        if 0 <= idx < num_tools:
            kept.add(idx)
    return ToolSelection(tuple(sorted(kept)))
