"""Deterministic 5x5 crafting gridworld, its object-centric map, and scripted
object-perturbing policies.

Layouts, items and recipes come from INI files (see ``abworld/envs``). The
dynamics are deterministic; only the item layout depends on the reset seed.
"""
from __future__ import annotations

import configparser
import random
from collections import deque
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .core import (
    ABSENT,
    CRAFT_ATTRIBUTES,
    IN_INVENTORY,
    IN_WORLD,
    AbstractState,
    Behaviour,
    Item,
    Vocabulary,
    apply_delta,
)

ENV_DIR = Path(__file__).parent / "envs"
ENV_NAMES = ("craft2", "craft3", "craft4", "craft_adversarial")

WALL = "#"
DOOR = "D"
BENCH = "B"
FREE = "."

MOVES = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
# Interaction targets are searched underfoot first, then clockwise from north.
REACH = ((0, 0), (-1, 0), (0, 1), (1, 0), (0, -1))

ITEM_KINDS = ("pickup", "source", "resource", "crafted", "door")


class ConfigError(ValueError):
    pass


class Action(NamedTuple):
    kind: str
    item: str | None = None

    def __str__(self):
        return self.kind if self.item is None else f"{self.kind}({self.item})"


NORTH, EAST, SOUTH, WEST = (Action(k) for k in "NESW")
TOGGLE = Action("TOGGLE")
GRAB = Action("GRAB")
MINE = Action("MINE")
NOOP = Action("NOOP")


def craft(item: str) -> Action:
    return Action("CRAFT", item)


@dataclass(frozen=True)
class ItemSpec:
    name: str
    kind: str
    product: str | None = None
    tools: tuple[str, ...] = ()
    infinite: bool = False
    disabled_after_craft: bool = False
    stack: int = 1


@dataclass(frozen=True)
class CraftRule:
    output: str
    required_tools: tuple[str, ...] = ()
    consumed_inputs: tuple[str, ...] = ()
    station_required: bool = False


@dataclass(frozen=True)
class EnvConfig:
    name: str
    size: int
    episode_limit: int
    grid: tuple[str, ...]
    spawn: dict
    items: dict
    crafts: dict
    goal: tuple[tuple[str, str], ...]
    attributes: tuple[str, ...] = CRAFT_ATTRIBUTES
    # scripted single-item route to the goal, used by the expert data generator
    solution: tuple[tuple[str, str], ...] = ()

    @property
    def tracked(self) -> tuple[str, ...]:
        """Tracked identities in vocabulary order; stacks add ``name_xK`` slots."""
        names = []
        for spec in self.items.values():
            names.append(spec.name)
            names.extend(f"{spec.name}_x{k}" for k in range(2, spec.stack + 1))
        return tuple(names)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.tracked, self.attributes)


def _split(value: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in value.split(",") if v.strip())


def load_config(source: str | Path) -> EnvConfig:
    """Load an environment by bundled name or INI path."""
    path = Path(source)
    if not path.exists():
        path = ENV_DIR / f"{source}.ini"
    if not path.exists():
        raise ConfigError(f"no environment config {source!r}")
    parser = configparser.ConfigParser(comment_prefixes=(";",), inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(_strip_comments(path.read_text()))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(parser)


def _strip_comments(text: str) -> str:
    # '#' is a wall glyph inside maps, so only whole-line comments are removed.
    return "\n".join("" if line.lstrip().startswith("#") and not line.startswith(" ") else line
                     for line in text.splitlines())


def parse_config(parser: configparser.ConfigParser) -> EnvConfig:
    if "env" not in parser:
        raise ConfigError("missing [env] section")
    env = parser["env"]
    try:
        size = int(env.get("size", "5"))
        grid = tuple(row.strip() for row in env["map"].strip().splitlines())
        limit = int(env["episode_limit"])
        goal = tuple(tuple(g.split(":")) for g in _split(env["goal"]))
        solution = tuple(tuple(g.split(":")) for g in _split(env.get("solution", "")))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad [env] section: {exc}") from exc
    if len(grid) != size or any(len(row) != size for row in grid):
        raise ConfigError(f"map must be {size}x{size}")

    items = {}
    crafts = {}
    for section in parser.sections():
        if section.startswith("item."):
            name = section[5:]
            sec = parser[section]
            kind = sec.get("kind", "")
            if kind not in ITEM_KINDS:
                raise ConfigError(f"item {name}: unknown kind {kind!r}")
            items[name] = ItemSpec(
                name=name,
                kind=kind,
                product=sec.get("product"),
                tools=_split(sec.get("tools", "")),
                infinite=sec.getboolean("infinite", False),
                disabled_after_craft=sec.getboolean("disabled_after_craft", False),
                stack=sec.getint("stack", 1),
            )
        elif section.startswith("craft."):
            out = section[6:]
            sec = parser[section]
            crafts[out] = CraftRule(
                output=out,
                required_tools=_split(sec.get("tools", "")),
                consumed_inputs=_split(sec.get("consumes", "")),
                station_required=sec.getboolean("station", False),
            )
    spawn = dict(parser["spawn"]) if "spawn" in parser else {}
    attributes = _split(env.get("attributes", ",".join(CRAFT_ATTRIBUTES)))
    cfg = EnvConfig(env.get("name", "custom"), size, limit, grid, spawn, items, crafts, goal, attributes,
                    solution)
    _validate(cfg)
    return cfg


def _validate(cfg: EnvConfig) -> None:
    if set(cfg.attributes) != set(CRAFT_ATTRIBUTES):
        raise ConfigError("crafting environments use IN_WORLD, IN_INVENTORY, ABSENT")
    names = set(cfg.items)
    for spec in cfg.items.values():
        refs = set(spec.tools) | ({spec.product} if spec.product else set())
        if refs - names:
            raise ConfigError(f"item {spec.name} references unknown {sorted(refs - names)}")
        if spec.kind == "source" and not spec.product:
            raise ConfigError(f"source {spec.name} needs a product")
    for rule in cfg.crafts.values():
        refs = {rule.output, *rule.required_tools, *rule.consumed_inputs}
        if refs - names:
            raise ConfigError(f"recipe {rule.output} references unknown {sorted(refs - names)}")
    doors = [s for s in cfg.items.values() if s.kind == "door"]
    n_door_cells = sum(row.count(DOOR) for row in cfg.grid)
    if len(doors) > 1 or n_door_cells != len(doors):
        raise ConfigError("door cells in the map must match exactly one door item")
    for row in cfg.grid:
        for ch in row:
            if not (ch in (WALL, DOOR, BENCH, FREE) or ch.islower()):
                raise ConfigError(f"unknown map glyph {ch!r}")
    for name in cfg.spawn:
        if name != "agent" and name not in names:
            raise ConfigError(f"spawn for unknown item {name}")
    for ident, attr in cfg.goal + cfg.solution:
        if ident not in cfg.tracked or attr not in cfg.attributes:
            raise ConfigError(f"bad goal term {ident}:{attr}")
    _check_acyclic(cfg)


def _check_acyclic(cfg: EnvConfig) -> None:
    deps = {out: set(r.consumed_inputs) | set(r.required_tools) for out, r in cfg.crafts.items()}
    state = {}

    def visit(node, trail):
        if state.get(node) == 1:
            raise ConfigError(f"cyclic recipes through {' -> '.join(trail + [node])}")
        if state.get(node) == 2:
            return
        state[node] = 1
        for dep in deps.get(node, ()):
            visit(dep, trail + [node])
        state[node] = 2

    for out in deps:
        visit(out, [])


@dataclass(frozen=True)
class LowLevelState:
    agent_pos: tuple[int, int]
    placed: tuple[tuple[str, tuple[int, int]], ...]   # items on the grid, sorted by name
    inventory: tuple[tuple[str, int], ...]             # (name, count), sorted, counts >= 1
    crafting_started: bool = False
    steps: int = 0
    rng_seed: int = 0

    def position(self, name: str) -> tuple[int, int] | None:
        for n, pos in self.placed:
            if n == name:
                return pos
        return None

    def count(self, name: str) -> int:
        for n, c in self.inventory:
            if n == name:
                return c
        return 0

    def item_at(self, cell) -> str | None:
        for n, pos in self.placed:
            if pos == cell:
                return n
        return None


class CraftEnv:
    """Base MDP plus the ground-truth abstraction and behaviour scripts."""

    def __init__(self, config: EnvConfig | str):
        self.config = load_config(config) if isinstance(config, (str, Path)) else config
        cfg = self.config
        self.size = cfg.size
        self.vocab = cfg.vocabulary()
        self.items = cfg.items
        self.crafts = cfg.crafts
        self.walls = frozenset((r, c) for r, row in enumerate(cfg.grid) for c, ch in enumerate(row) if ch == WALL)
        self.benches = frozenset((r, c) for r, row in enumerate(cfg.grid) for c, ch in enumerate(row) if ch == BENCH)
        self.door_cell = next(((r, c) for r, row in enumerate(cfg.grid) for c, ch in enumerate(row) if ch == DOOR), None)
        self.goal = tuple(self.vocab.item(i, a) for i, a in cfg.goal)
        self._stack_slots = [(spec.name, k) for spec in cfg.items.values() for k in range(1, spec.stack + 1)]
        self._policy_cache: dict = {}

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def episode_limit(self) -> int:
        return self.config.episode_limit

    # -- base MDP ---------------------------------------------------------
    def reset(self, seed: int) -> LowLevelState:
        rng = random.Random(seed)
        cfg = self.config
        occupied = set()
        placed = {}
        if self.door_cell is not None:
            door = next(s.name for s in cfg.items.values() if s.kind == "door")
            placed[door] = self.door_cell
            occupied.add(self.door_cell)
        agent = None
        for name, region in cfg.spawn.items():
            cells = [c for c in self._region(region) if c not in occupied]
            if not cells:
                raise ConfigError(f"no free cell left for {name} in region {region!r}")
            cell = rng.choice(cells)
            if name == "agent":
                agent = cell
            else:
                placed[name] = cell
            occupied.add(cell)
        if agent is None:
            raise ConfigError("spawn section must place the agent")
        return LowLevelState(agent, tuple(sorted(placed.items())), (), False, 0, seed)

    def _region(self, tag: str) -> list[tuple[int, int]]:
        cells = []
        for r, row in enumerate(self.config.grid):
            for c, ch in enumerate(row):
                if ch in (WALL, DOOR, BENCH):
                    continue
                if tag == FREE or ch == tag:
                    cells.append((r, c))
        return cells

    def passable(self, state: LowLevelState, cell) -> bool:
        r, c = cell
        if not (0 <= r < self.size and 0 <= c < self.size) or cell in self.walls or cell in self.benches:
            return False
        occupant = state.item_at(cell)
        return occupant is None or self.items[occupant].kind != "door"

    def step(self, state: LowLevelState, action: Action) -> LowLevelState:
        """Deterministic successor. Invalid actions leave everything but the clock unchanged."""
        nxt = None
        if action.kind in MOVES:
            dr, dc = MOVES[action.kind]
            cell = (state.agent_pos[0] + dr, state.agent_pos[1] + dc)
            if self.passable(state, cell):
                nxt = replace(state, agent_pos=cell)
        elif action.kind in ("GRAB", "MINE", "TOGGLE"):
            target = self._target(state, action.kind, state.agent_pos)
            if target is not None:
                nxt = self._interact(state, action.kind, target)
        elif action.kind == "CRAFT":
            if self._at_station_ok(state, action.item, state.agent_pos):
                nxt = self._interact(state, "CRAFT", action.item)
        if nxt is None:
            nxt = state
        return replace(nxt, steps=state.steps + 1)

    def _target(self, state: LowLevelState, kind: str, pos) -> str | None:
        offsets = REACH[1:] if kind == "TOGGLE" else REACH
        for dr, dc in offsets:
            name = state.item_at((pos[0] + dr, pos[1] + dc))
            if name is not None and self._interact(state, kind, name) is not None:
                return name
        return None

    def _at_station_ok(self, state, output, pos) -> bool:
        rule = self.crafts.get(output)
        if rule is None:
            return False
        if not rule.station_required:
            return True
        return any((pos[0] + dr, pos[1] + dc) in self.benches for dr, dc in REACH[1:])

    def _interact(self, state: LowLevelState, kind: str, name: str) -> LowLevelState | None:
        """Effect of an interaction on ``name`` ignoring where the agent stands.

        Returns ``None`` when the interaction is not allowed.
        """
        inv = dict(state.inventory)
        placed = dict(state.placed)
        started = state.crafting_started
        if kind == "GRAB":
            spec = self.items.get(name)
            if name not in placed or spec.kind != "pickup":
                return None
            del placed[name]
            inv[name] = inv.get(name, 0) + 1
        elif kind == "MINE":
            spec = self.items.get(name)
            if name not in placed or spec.kind != "source":
                return None
            if any(inv.get(t, 0) < 1 for t in spec.tools):
                return None
            if spec.disabled_after_craft and started:
                return None
            product = self.items[spec.product]
            if inv.get(product.name, 0) >= product.stack:
                return None
            inv[product.name] = inv.get(product.name, 0) + 1
            if not spec.infinite:
                del placed[name]
        elif kind == "TOGGLE":
            spec = self.items.get(name)
            if name not in placed or spec.kind != "door":
                return None
            if any(inv.get(t, 0) < 1 for t in spec.tools):
                return None
            del placed[name]
        elif kind == "CRAFT":
            rule = self.crafts.get(name)
            if rule is None:
                return None
            if any(inv.get(t, 0) < 1 for t in rule.required_tools):
                return None
            if any(inv.get(c, 0) < 1 for c in rule.consumed_inputs):
                return None
            if inv.get(name, 0) >= self.items[name].stack:
                return None
            for c in rule.consumed_inputs:
                inv[c] -= 1
            inv[name] = inv.get(name, 0) + 1
            started = True
        else:
            return None
        return replace(
            state,
            placed=tuple(sorted(placed.items())),
            inventory=tuple(sorted((k, v) for k, v in inv.items() if v > 0)),
            crafting_started=started,
        )

    # -- object-centric map ----------------------------------------------
    def abstract(self, state: LowLevelState) -> AbstractState:
        """Ground-truth mapping M from low-level state to item-attribute set."""
        on_grid = {n for n, _ in state.placed}
        inv = dict(state.inventory)
        items = []
        ident = 1
        for name, k in self._stack_slots:
            if k == 1 and name in on_grid:
                attr = IN_WORLD
            elif inv.get(name, 0) >= k:
                attr = IN_INVENTORY
            else:
                attr = ABSENT
            items.append(Item(ident, attr))
            ident += 1
        return AbstractState(items)

    map_M = abstract

    def grid(self, state: LowLevelState) -> np.ndarray:
        """``G x G`` array of cell glyphs for inspection."""
        out = np.array([[FREE if ch.islower() else ch for ch in row] for row in self.config.grid],
                       dtype=object)
        for name, (r, c) in state.placed:
            out[r, c] = name
        out[state.agent_pos] = "@"
        return out

    def render(self, state: LowLevelState) -> str:
        g = self.grid(state)
        width = max(len(str(x)) for x in g.ravel())
        lines = [" ".join(str(x).ljust(width) for x in row) for row in g]
        inv = ", ".join(f"{n}x{c}" for n, c in state.inventory) or "-"
        return "\n".join(lines + [f"inventory: {inv}"])

    # -- behaviour policies ------------------------------------------------
    def interactions(self, state: LowLevelState):
        """All (action, target) interactions currently permitted somewhere."""
        out = []
        for name, _ in state.placed:
            kind = self.items[name].kind
            if kind == "pickup":
                out.append(("GRAB", name))
            elif kind == "source":
                out.append(("MINE", name))
            elif kind == "door":
                out.append(("TOGGLE", name))
        out.extend(("CRAFT", out_name) for out_name in self.crafts)
        return [(k, n) for k, n in out if self._interact(state, k, n) is not None]

    def behaviour_policy(self, state: LowLevelState, behaviour: Behaviour) -> Action:
        """Next primitive action of the scripted policy for ``behaviour``.

        Finds an interaction whose effect realises the proposed change, walks a
        BFS shortest path to a cell from which that interaction applies, then
        performs it. Impossible changes yield NOOP so the k-step timeout fires.
        """
        key = (state.agent_pos, state.placed, state.inventory, state.crafting_started, behaviour)
        hit = self._policy_cache.get(key)
        if hit is not None:
            return hit
        action = self._plan_action(state, behaviour)
        if len(self._policy_cache) > 200_000:
            self._policy_cache.clear()
        self._policy_cache[key] = action
        return action

    def _plan_action(self, state: LowLevelState, behaviour: Behaviour) -> Action:
        current = self.abstract(state)
        if behaviour.satisfied_by(current):
            return NOOP
        try:
            expected = apply_delta(current, behaviour)
        except ValueError:
            return NOOP
        exact, loose = [], []
        for kind, name in self.interactions(state):
            after = self.abstract(self._interact(state, kind, name))
            if after == expected:
                exact.append((kind, name))
            elif behaviour.satisfied_by(after):
                loose.append((kind, name))
        for group in (exact, loose):
            best = None
            for kind, name in group:
                path = self._path_to_operate(state, kind, name)
                if path is not None and (best is None or len(path) < len(best[2])):
                    best = (kind, name, path)
            if best is not None:
                kind, name, path = best
                if path:
                    return Action(path[0])
                return craft(name) if kind == "CRAFT" else Action(kind)
        return NOOP

    def _can_operate(self, state, kind, name, pos) -> bool:
        if kind == "CRAFT":
            return self._at_station_ok(state, name, pos)
        return self._target(state, kind, pos) == name

    def _path_to_operate(self, state, kind, name) -> list[str] | None:
        """Moves (as action names) to the nearest cell where the interaction applies."""
        start = state.agent_pos
        parents = {start: None}
        queue = deque([start])
        while queue:
            cell = queue.popleft()
            if self._can_operate(state, kind, name, cell):
                moves = []
                while parents[cell] is not None:
                    cell, move = parents[cell]
                    moves.append(move)
                return moves[::-1]
            for move, (dr, dc) in MOVES.items():
                nxt = (cell[0] + dr, cell[1] + dc)
                if nxt not in parents and self.passable(state, nxt):
                    parents[nxt] = (cell, move)
                    queue.append(nxt)
        return None


def make_env(name: str | Path) -> CraftEnv:
    return CraftEnv(load_config(name))
