"""Structured prompt envelope shared by agents and the scripted mock.

Prompts carry an intent line and named fields so that the deterministic
mock backend can parse exactly what a live model would read as plain
instructions.
"""

from __future__ import annotations

from typing import Mapping

INTENT_PREFIX = "### intent: "
FIELD_PREFIX = "### field: "
END_MARKER = "### respond"


def build_prompt(intent: str, fields: Mapping[str, str], respond_with: str = "") -> str:
    lines = [f"{INTENT_PREFIX}{intent}"]
    for name, value in fields.items():
        lines.append(f"{FIELD_PREFIX}{name}")
        lines.append(str(value))
    lines.append(END_MARKER)
    if respond_with:
        lines.append(f"Respond with only JSON: {respond_with}")
    return "\n".join(lines)


def parse_intent(prompt: str) -> str:
    first = prompt.split("\n", 1)[0]
    if first.startswith(INTENT_PREFIX):
        return first[len(INTENT_PREFIX):].strip()
    return ""


def parse_fields(prompt: str) -> dict[str, str]:
    fields: dict[str, str] = {}
    name: str | None = None
    buffer: list[str] = []
    for line in prompt.split("\n"):
        if line.startswith(INTENT_PREFIX):
            continue
        if line.startswith(FIELD_PREFIX) or line.startswith(END_MARKER):
            if name is not None:
                fields[name] = "\n".join(buffer).strip()
            buffer = []
            name = line[len(FIELD_PREFIX):].strip() if line.startswith(FIELD_PREFIX) else None
            if line.startswith(END_MARKER):
                break
            continue
        buffer.append(line)
    if name is not None:
        fields[name] = "\n".join(buffer).strip()
    return fields
