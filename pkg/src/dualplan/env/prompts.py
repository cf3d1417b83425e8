"""Role-play prompt templates and their rendering into chat messages.

Each task directory holds three plain-text files (assistant, user, critic).
A file is a sequence of ``### <role>`` blocks; bracketed names such as
``[situation]`` are substituted from the case background.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from dualplan.dialogue import DialogueState, Speaker, TaskSpec
from dualplan.errors import ConfigError

Message = dict  # {"role": ..., "content": ...}

# How each task names the two parties when a conversation is shown to the critic.
PARTY_NAMES = {
    "esconv": ("Therapist", "Patient"),
    "cima": ("Teacher", "Student"),
    "cb": ("Buyer", "Seller"),
}

# background key -> template placeholder
PLACEHOLDERS = {
    "situation": "situation",
    "exercise": "exercise",
    "emotion_type": "emotion type",
    "problem_type": "problem type",
    "item_name": "item name",
    "item_description": "item description",
    "buyer_target": "buyer target price",
    "listed_price": "seller target price",
}
_PRICE_KEYS = {"buyer_target", "listed_price"}
_BLOCK = re.compile(r"^### (system|user|assistant)\s*$", re.MULTILINE)


def parse_template(text: str) -> list[tuple[str, str]]:
    parts = _BLOCK.split(text)
    if parts[0].strip():
        raise ConfigError("prompt template must start with a '### <role>' header")
    return [(role, body.strip("\n")) for role, body in zip(parts[1::2], parts[2::2])]


@dataclass(frozen=True)
class PromptPack:
    task: str
    assistant: tuple[tuple[str, str], ...]
    user: tuple[tuple[str, str], ...]
    critic: tuple[tuple[str, str], ...]

    @classmethod
    def load(cls, task: str, directory: str | Path | None = None) -> PromptPack:
        key = _task_key(task)
        if directory is None:
            base = resources.files("dualplan.data.prompts").joinpath(key)
        else:
            base = Path(directory)
        blocks = {}
        for role in ("assistant", "user", "critic"):
            f = base.joinpath(f"{role}.txt")
            if not f.is_file():
                raise ConfigError(f"missing prompt file {role}.txt for task {task!r}")
            blocks[role] = tuple(parse_template(f.read_text(encoding="utf-8")))
        return cls(key, blocks["assistant"], blocks["user"], blocks["critic"])

    def parties(self) -> tuple[str, str]:
        return PARTY_NAMES.get(self.task, ("System", "User"))

    def system_messages(self, state: DialogueState, instruction: str) -> list[Message]:
        """Messages asking the assistant model for the next system utterance."""
        head = _render(self.assistant, state.background, action=instruction)
        return head + _history(state, system_role="assistant")

    def user_messages(self, state: DialogueState) -> list[Message]:
        """Messages asking the user model for its reply to the latest system utterance."""
        head = _render(self.user, state.background)
        return head + _history(state, system_role="user")

    def critic_messages(self, state: DialogueState) -> list[Message]:
        sys_name, usr_name = self.parties()
        lines = []
        for u in state.history:
            name = sys_name if u.speaker is Speaker.SYSTEM else usr_name
            lines.append(f"{name}: {u.text}")
        return _render(self.critic, state.background, conversation="\n".join(lines))


def _task_key(task: str | TaskSpec) -> str:
    name = task.name if isinstance(task, TaskSpec) else str(task)
    name = name.lower()
    return "cb" if name in ("craigslistbargain", "craigslist") else name


def fill_placeholders(text: str, background: Mapping, **extra: str) -> str:
    for key, placeholder in PLACEHOLDERS.items():
        if key in background:
            value = background[key]
            if key in _PRICE_KEYS:
                from dualplan.env.base import _fmt_price

                value = _fmt_price(value)
            text = text.replace(f"[{placeholder}]", str(value))
    for placeholder, value in extra.items():
        text = text.replace(f"[{placeholder}]", value)
    return text


def _render(blocks, background: Mapping, **extra: str) -> list[Message]:
    return [{"role": role, "content": fill_placeholders(body, background, **extra)} for role, body in blocks]


def _history(state: DialogueState, system_role: str) -> list[Message]:
    """Replay the dialogue with roles seen from one side of the conversation."""
    other = "user" if system_role == "assistant" else "assistant"
    return [
        {"role": system_role if u.speaker is Speaker.SYSTEM else other, "content": u.text}
        for u in state.history
    ]
