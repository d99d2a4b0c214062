"""Node-by-node generation: decoding state, beam search and scoring."""

from .search import Completion, beam_search, greedy, score_tree
from .state import Context, GenerationCaps, InvalidGold

__all__ = ["Completion", "Context", "GenerationCaps", "InvalidGold", "beam_search", "greedy", "score_tree"]
