"""Dialogue environments: the three-role step, scripted and LLM backends, cost accounting."""

from dualplan.env.bargain import compute_sl, extract_deal, parse_deal_answer
from dualplan.env.base import CallCounter, DialogueEnv, Evaluation, RoleBackend, initial_state
from dualplan.env.scripted import ScriptedBackend, ScriptedSimSpec, load_scripted_spec, make_cases

__all__ = [
    "CallCounter",
    "DialogueEnv",
    "Evaluation",
    "RoleBackend",
    "ScriptedBackend",
    "ScriptedSimSpec",
    "compute_sl",
    "extract_deal",
    "initial_state",
    "load_scripted_spec",
    "make_cases",
    "parse_deal_answer",
]
