"""Terminal user: a person types the user turns while another backend plays the other roles."""

from __future__ import annotations

from collections.abc import Callable

from dualplan.dialogue import DialogueState, Strategy
from dualplan.errors import DualPlanError

QUIT_WORDS = {"quit", "exit", ":q"}


class SessionEnded(DualPlanError):
    """The person closed the input stream or typed a quit word."""


class HumanUserBackend:
    def __init__(self, inner, read: Callable[[str], str] = input, write: Callable[[str], None] = print):
        self.inner = inner
        self.read = read
        self.write = write
        self.last_system: tuple[str, Strategy] | None = None

    def system_respond(self, state: DialogueState, strategy: Strategy) -> str:
        text = self.inner.system_respond(state, strategy)
        self.last_system = (text, strategy)
        self.write(f"[{strategy.name}] system: {text}")
        return text

    def user_respond(self, state: DialogueState) -> str:
        try:
            text = self.read("you: ").strip()
        except EOFError:
            raise SessionEnded("input closed") from None
        if text.lower() in QUIT_WORDS:
            raise SessionEnded("user quit")
        return text or "..."

    def critic_judge(self, state: DialogueState, sample: int = 0) -> str:
        return self.inner.critic_judge(state, sample)
