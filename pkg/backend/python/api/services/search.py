"""
Adversarial Go Lab - Tree Search
PUCT Monte Carlo tree search and adversarial MCTS that models the victim
as playing its policy argmax
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Protocol, Tuple

import numpy as np
import structlog
import torch
from pydantic import BaseModel, ConfigDict, Field

from api.services import nnet
from api.services.features import encode
from api.services.rules import (
    BoardState,
    Move,
    apply_move,
    legal_moves,
    score_tromp_taylor,
)
from utils.errors import GameOver

logger = structlog.get_logger(__name__)

CPUCT_BASE = 361.0


class SearchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    visits: int = Field(default=64, ge=1)
    cpuct_init: float = 1.0
    cpuct_log: float = 0.45
    fpu_reduction: float = 0.2
    use_lcb: bool = True
    lcb_z: float = 1.96
    temperature: float = Field(default=0.10, ge=0.0)
    temperature_early: float = Field(default=0.50, ge=0.0)
    early_move_horizon: int = Field(default=0, ge=0)
    root_noise: bool = False
    dirichlet_alpha: float = Field(default=0.3, gt=0.0)
    noise_fraction: float = Field(default=0.25, ge=0.0, le=1.0)
    deterministic_seed: int = 0

    @classmethod
    def victim_defaults(cls, **overrides) -> "SearchConfig":
        values = dict(cpuct_init=1.0, cpuct_log=0.45, temperature=0.10, temperature_early=0.50, root_noise=False)
        values.update(overrides)
        return cls(**values)

    @classmethod
    def adversary_defaults(cls, **overrides) -> "SearchConfig":
        values = dict(cpuct_init=1.05, cpuct_log=0.28)
        values.update(overrides)
        return cls(**values)

    def cpuct(self, parent_visits: int) -> float:
        return self.cpuct_init + self.cpuct_log * math.log((parent_visits + CPUCT_BASE) / CPUCT_BASE)


# Evaluators -----------------------------------------------------------------

class Evaluator(Protocol):
    query_count: int

    def evaluate(self, state: BoardState) -> Tuple[np.ndarray, float]:
        """Raw policy over area + 1 indices and value for the side to move"""
        ...


class NetworkEvaluator:
    """Runs a frozen network snapshot on single positions"""

    def __init__(self, params: nnet.NetworkParameters):
        self.params = params
        self.query_count = 0

    def evaluate(self, state: BoardState) -> Tuple[np.ndarray, float]:
        self.query_count += 1
        planes, globals_ = encode(state)
        with torch.no_grad():
            output = nnet.forward(self.params, planes.planes, globals_.values)
            policy = output.policy()[0].double().numpy()
            value = float(output.value[0])
        return policy, value


class UniformEvaluator:
    """Uniform policy; value from an optional function of the state"""

    def __init__(self, value_fn: Optional[Callable[[BoardState], float]] = None):
        self.value_fn = value_fn
        self.query_count = 0

    def evaluate(self, state: BoardState) -> Tuple[np.ndarray, float]:
        self.query_count += 1
        policy = np.full(state.area + 1, 1.0 / (state.area + 1))
        value = float(self.value_fn(state)) if self.value_fn else 0.0
        return policy, value


def as_evaluator(net) -> Evaluator:
    if isinstance(net, nnet.NetworkParameters):
        return NetworkEvaluator(net)
    return net


# Tree -----------------------------------------------------------------------

class SearchNode:
    """Statistics are from the perspective of the player to move at this node"""

    __slots__ = ("state", "prior", "visit_count", "total_value", "square_sum",
                 "children", "legal", "priors", "is_victim_node", "terminal_value")

    def __init__(self, state: BoardState, prior: float, is_victim_node: bool = False):
        self.state = state
        self.prior = prior
        self.visit_count = 0
        self.total_value = 0.0
        self.square_sum = 0.0
        self.children: Dict[int, "SearchNode"] = {}
        self.legal: Optional[np.ndarray] = None
        self.priors: Optional[np.ndarray] = None
        self.is_victim_node = is_victim_node
        self.terminal_value: Optional[float] = None

    @property
    def expanded(self) -> bool:
        return self.legal is not None

    @property
    def q(self) -> float:
        return self.total_value / self.visit_count if self.visit_count else 0.0

    def child_visits(self) -> int:
        return sum(c.visit_count for c in self.children.values())


def masked_priors(policy: np.ndarray, legal: np.ndarray) -> np.ndarray:
    """Restrict a policy to legal indices and renormalise (uniform if it has no mass there)"""
    p = np.clip(np.asarray(policy, dtype=np.float64)[legal], 0.0, None)
    total = p.sum()
    if not np.isfinite(total) or total <= 0.0:
        return np.full(len(legal), 1.0 / len(legal))
    return p / total


@dataclass
class SearchResult:
    size: int
    visit_distribution: np.ndarray  # (area + 1,)
    visit_counts: np.ndarray
    q_values: np.ndarray  # parent perspective; 0 where unvisited
    lcb_values: np.ndarray  # -inf where fewer than two visits
    legal_mask: np.ndarray
    root_value: float
    root_visits: int
    chosen_move: Optional[Move] = None
    stats: Dict[str, int] = field(default_factory=dict)

    def move_counts(self) -> Dict[Move, int]:
        return {Move.from_index(int(i), self.size): int(self.visit_counts[i])
                for i in np.flatnonzero(self.legal_mask)}


class _Search:
    def __init__(self, config: SearchConfig, evaluator: Evaluator,
                 victim: Optional[Evaluator] = None, victim_color: Optional[int] = None,
                 forbid_pass: bool = False, rng: Optional[np.random.Generator] = None):
        self.config = config
        self.evaluator = evaluator
        self.victim = victim
        self.victim_color = victim_color
        self.forbid_pass = forbid_pass
        self.rng = rng
        self.expansions = 0
        self.victim_expansions = 0

    def _is_victim(self, state: BoardState) -> bool:
        return self.victim is not None and state.to_move == self.victim_color

    def expand(self, node: SearchNode, is_root: bool = False) -> float:
        state = node.state
        moves = legal_moves(state)
        legal = np.array([m.index(state.size) for m in moves], dtype=np.int64)
        if is_root and self.forbid_pass and len(legal) > 1:
            legal = legal[:-1]
        if node.is_victim_node:
            policy, value = self.victim.evaluate(state)
            self.victim_expansions += 1
        else:
            policy, value = self.evaluator.evaluate(state)
        self.expansions += 1
        priors = masked_priors(policy, legal)
        if is_root and self.config.root_noise and self.rng is not None and len(legal) > 1:
            noise = self.rng.dirichlet(np.full(len(legal), self.config.dirichlet_alpha))
            priors = (1.0 - self.config.noise_fraction) * priors + self.config.noise_fraction * noise
        node.legal = legal
        node.priors = priors
        return float(np.clip(value, -1.0, 1.0))

    def select(self, node: SearchNode) -> int:
        """Position in node.legal of the child to descend into"""
        if node.is_victim_node:
            return int(np.argmax(node.priors))
        n_parent = node.visit_count
        fpu = node.q - self.config.fpu_reduction
        scores = np.empty(len(node.legal))
        explore = self.config.cpuct(n_parent) * math.sqrt(n_parent)
        for pos, idx in enumerate(node.legal):
            child = node.children.get(int(idx))
            if child is None or child.visit_count == 0:
                q, n = fpu, 0
            else:
                q, n = -child.q, child.visit_count
            scores[pos] = q + explore * node.priors[pos] / (1 + n)
        return int(np.argmax(scores))

    def child(self, node: SearchNode, pos: int) -> SearchNode:
        idx = int(node.legal[pos])
        existing = node.children.get(idx)
        if existing is not None:
            return existing
        state = apply_move(node.state, Move.from_index(idx, node.state.size))
        created = SearchNode(state, float(node.priors[pos]), self._is_victim(state))
        node.children[idx] = created
        return created

    def simulate(self, root: SearchNode):
        path = [root]
        node = root
        while node.expanded and node.terminal_value is None:
            node = self.child(node, self.select(node))
            path.append(node)
        if node.terminal_value is not None:
            value = node.terminal_value
        elif node.state.is_over:
            node.terminal_value = score_tromp_taylor(node.state).outcome_for(node.state.to_move)
            value = node.terminal_value
        else:
            value = self.expand(node, is_root=node is root)
        for visited in reversed(path):
            visited.visit_count += 1
            visited.total_value += value
            visited.square_sum += value * value
            value = -value

    def result(self, root: SearchNode) -> SearchResult:
        size = root.state.size
        area = size * size
        counts = np.zeros(area + 1, dtype=np.int64)
        q_values = np.zeros(area + 1)
        lcb = np.full(area + 1, -np.inf)
        mask = np.zeros(area + 1, dtype=bool)
        mask[root.legal] = True
        for idx, child in root.children.items():
            n = child.visit_count
            counts[idx] = n
            if n:
                q = -child.q
                q_values[idx] = q
                if n >= 2:
                    variance = max(child.square_sum / n - child.q ** 2, 0.0)
                    lcb[idx] = q - self.config.lcb_z * math.sqrt(variance / n)
        distribution = np.zeros(area + 1)
        total = counts.sum()
        if total > 0:
            distribution = counts / total
        else:
            distribution[root.legal[int(np.argmax(root.priors))]] = 1.0
        return SearchResult(
            size=size, visit_distribution=distribution, visit_counts=counts, q_values=q_values,
            lcb_values=lcb, legal_mask=mask, root_value=root.q, root_visits=root.visit_count,
            stats={"expansions": self.expansions, "victim_expansions": self.victim_expansions},
        )


def _search_rng(config: SearchConfig, state: BoardState) -> np.random.Generator:
    return np.random.default_rng([config.deterministic_seed, state.move_count, state.hash & 0xFFFFFFFF])


def _run(state: BoardState, search: _Search, config: SearchConfig, root_is_victim: bool = False) -> Tuple[SearchResult, SearchNode]:
    if state.is_over:
        raise GameOver("cannot search a finished game")
    root = SearchNode(state, 1.0, root_is_victim)
    for _ in range(config.visits):
        search.simulate(root)
    result = search.result(root)
    result.chosen_move = select_move(result, config, state.move_count, search.rng)
    return result, root


def run_mcts(state: BoardState, net, config: SearchConfig, forbid_pass: bool = False) -> SearchResult:
    """Plain PUCT search with exactly config.visits simulations"""
    rng = _search_rng(config, state)
    search = _Search(config, as_evaluator(net), forbid_pass=forbid_pass, rng=rng)
    result, _ = _run(state, search, config)
    return result


def run_amcts(state: BoardState, adversary_net, victim_net, config: SearchConfig,
              forbid_pass: bool = False) -> SearchResult:
    """Search for the side to move, expanding victim-to-move nodes with the victim network
    and following only the victim's policy argmax there"""
    rng = _search_rng(config, state)
    victim = as_evaluator(victim_net)
    search = _Search(config, as_evaluator(adversary_net), victim=victim,
                     victim_color=3 - state.to_move, forbid_pass=forbid_pass, rng=rng)
    result, _ = _run(state, search, config)
    return result


def run_mcts_tree(state: BoardState, net, config: SearchConfig) -> SearchNode:
    """Search and return the root node, for inspecting tree statistics"""
    search = _Search(config, as_evaluator(net), rng=_search_rng(config, state))
    _, root = _run(state, search, config)
    return root


def run_amcts_tree(state: BoardState, adversary_net, victim_net, config: SearchConfig) -> Tuple[SearchNode, Dict[str, int]]:
    search = _Search(config, as_evaluator(adversary_net), victim=as_evaluator(victim_net),
                     victim_color=3 - state.to_move, rng=_search_rng(config, state))
    _, root = _run(state, search, config)
    return root, {"expansions": search.expansions, "victim_expansions": search.victim_expansions}


# Move selection -------------------------------------------------------------

def select_move(result: SearchResult, config: SearchConfig, move_number: int,
                rng: Optional[np.random.Generator] = None) -> Move:
    """LCB pick when enough visits, else temperature sampling; ties go to the lowest index"""
    counts = result.visit_counts
    max_visits = int(counts.max()) if counts.size else 0
    if max_visits == 0:
        return Move.from_index(int(np.argmax(result.visit_distribution)), result.size)

    if config.use_lcb and max_visits >= 2:
        eligible = counts >= max(2.0, max_visits / 8.0)
        scores = np.where(eligible, result.lcb_values, -np.inf)
        return Move.from_index(int(np.argmax(scores)), result.size)

    temperature = config.temperature_early if move_number < config.early_move_horizon else config.temperature
    distribution = result.visit_distribution
    if temperature == 0.0:
        return Move.from_index(int(np.argmax(distribution)), result.size)
    support = np.flatnonzero(distribution > 0)
    logits = np.log(distribution[support]) / temperature
    weights = np.exp(logits - logits.max())
    weights /= weights.sum()
    rng = rng if rng is not None else np.random.default_rng([config.deterministic_seed, move_number])
    return Move.from_index(int(support[rng.choice(len(support), p=weights)]), result.size)
