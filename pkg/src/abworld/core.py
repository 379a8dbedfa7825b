"""Item-attribute value types and the deterministic set-update operator.

Abstract states are ordered tuples of ``(identity, attribute)`` integer pairs.
Identity ``0`` is reserved for empty padding slots. Names live in a
:class:`Vocabulary`; everything downstream works on integer ids.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

EMPTY = 0

# Default attribute ids for the crafting environments.
IN_WORLD = 0
IN_INVENTORY = 1
ABSENT = 2
CRAFT_ATTRIBUTES = ("IN_WORLD", "IN_INVENTORY", "ABSENT")


class PreconditionError(ValueError):
    """Raised when an operation is called outside its domain."""


class VocabularyError(KeyError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    """Identity and attribute names for one environment.

    ``identities[0]`` is always the EMPTY identity. Both one-hot blocks are
    padded to the same ``width`` so identity and attribute carry equal weight
    in an item vector of size ``2 * width``.
    """

    identities: tuple[str, ...]
    attributes: tuple[str, ...] = CRAFT_ATTRIBUTES
    _ident_index: dict = field(init=False, repr=False, compare=False)
    _attr_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.identities or self.identities[0] != "EMPTY":
            object.__setattr__(self, "identities", ("EMPTY",) + tuple(self.identities))
        if len(set(self.identities)) != len(self.identities):
            raise ValueError("duplicate identity names")
        object.__setattr__(self, "_ident_index", {n: i for i, n in enumerate(self.identities)})
        object.__setattr__(self, "_attr_index", {n: i for i, n in enumerate(self.attributes)})

    @property
    def n_identities(self) -> int:
        # excludes EMPTY
        return len(self.identities) - 1

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def width(self) -> int:
        return max(self.n_identities, self.n_attributes)

    @property
    def item_dim(self) -> int:
        return 2 * self.width

    def identity_id(self, name: str) -> int:
        try:
            return self._ident_index[name]
        except KeyError:
            raise VocabularyError(f"unknown identity {name!r}") from None

    def attribute_id(self, name: str) -> int:
        try:
            return self._attr_index[name]
        except KeyError:
            raise VocabularyError(f"unknown attribute {name!r}") from None

    def identity_embedding(self, ident: int) -> np.ndarray:
        """One-hot identity vector; EMPTY maps to all zeros."""
        if not 0 <= ident < len(self.identities):
            raise VocabularyError(f"identity id {ident} out of range")
        vec = np.zeros(self.width)
        if ident != EMPTY:
            vec[ident - 1] = 1.0
        return vec

    def attribute_embedding(self, attr: int) -> np.ndarray:
        if not 0 <= attr < self.n_attributes:
            raise VocabularyError(f"attribute id {attr} out of range")
        vec = np.zeros(self.width)
        vec[attr] = 1.0
        return vec

    def item(self, identity: str, attribute: str) -> "Item":
        return Item(self.identity_id(identity), self.attribute_id(attribute))

    def behaviour(self, *changes: tuple[str, str]) -> "Behaviour":
        return Behaviour.of(*(self.item(i, a) for i, a in changes))

    def describe(self, item: "Item") -> str:
        return f"{self.identities[item.identity]}:{self.attributes[item.attribute]}"


class Item(NamedTuple):
    identity: int
    attribute: int


class AbstractState:
    """Immutable ordered set of items, at most one slot per identity."""

    __slots__ = ("items", "_index", "_hash")

    def __init__(self, items: Iterable[Sequence[int]]):
        items = tuple(Item(int(i), int(a)) for i, a in items)
        index = {}
        for slot, it in enumerate(items):
            if it.identity == EMPTY:
                continue
            if it.identity in index:
                raise ValueError(f"identity {it.identity} appears twice")
            index[it.identity] = slot
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_hash", hash(items))

    def __setattr__(self, name, value):
        raise AttributeError("AbstractState is immutable")

    def __eq__(self, other):
        if not isinstance(other, AbstractState):
            return NotImplemented
        return self.items == other.items

    def __hash__(self):
        return self._hash

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __contains__(self, item) -> bool:
        slot = self._index.get(item[0])
        return slot is not None and self.items[slot].attribute == item[1]

    def __repr__(self):
        return f"AbstractState({list(map(tuple, self.items))})"

    def __reduce__(self):
        return (AbstractState, (self.items,))

    @property
    def canonical_hash(self) -> int:
        """64-bit digest of the (identity, attribute) pairs in slot order."""
        payload = b"".join(struct.pack("<II", i, a) for i, a in self.items)
        return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")

    @property
    def identities(self) -> tuple[int, ...]:
        return tuple(it.identity for it in self.items if it.identity != EMPTY)

    def attribute_of(self, identity: int) -> int | None:
        slot = self._index.get(identity)
        return None if slot is None else self.items[slot].attribute

    def slot_of(self, identity: int) -> int | None:
        return self._index.get(identity)

    def to_list(self) -> list[list[int]]:
        return [[i, a] for i, a in self.items]

    def encode(self, vocab: Vocabulary) -> np.ndarray:
        """``N x (d_iden + d_attr)`` matrix of concatenated one-hots."""
        rows = [np.concatenate([vocab.identity_embedding(i), vocab.attribute_embedding(a)])
                for i, a in self.items]
        return np.stack(rows) if rows else np.zeros((0, vocab.item_dim))

    def describe(self, vocab: Vocabulary) -> str:
        return ", ".join(vocab.describe(it) for it in self.items if it.identity != EMPTY)


class Behaviour(NamedTuple):
    """Proposed new attributes for one or more distinct items.

    Changes are kept sorted by identity so equal behaviours compare and hash
    equal regardless of construction order.
    """

    changes: tuple[Item, ...]

    @classmethod
    def of(cls, *changes: Sequence[int]) -> "Behaviour":
        items = tuple(sorted(Item(int(i), int(a)) for i, a in changes))
        if not items:
            raise ValueError("a behaviour needs at least one change")
        idents = [it.identity for it in items]
        if len(set(idents)) != len(idents):
            raise ValueError("behaviour names the same identity twice")
        if EMPTY in idents:
            raise ValueError("behaviour cannot target the EMPTY identity")
        return cls(items)

    @property
    def size(self) -> int:
        return len(self.changes)

    def satisfied_by(self, state: AbstractState) -> bool:
        return all(ch in state for ch in self.changes)

    def to_list(self) -> list[list[int]]:
        return [[i, a] for i, a in self.changes]

    def describe(self, vocab: Vocabulary) -> str:
        return " & ".join(f"{vocab.identities[i]}->{vocab.attributes[a]}" for i, a in self.changes)


@dataclass(frozen=True)
class AbstractTransition:
    state: AbstractState
    behaviour: Behaviour
    next_state: AbstractState
    success: bool
    low_level_steps: int

    def to_record(self) -> dict:
        return {
            "state": self.state.to_list(),
            "behaviour": self.behaviour.to_list(),
            "next_state": self.next_state.to_list(),
            "success": bool(self.success),
            "low_level_steps": int(self.low_level_steps),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AbstractTransition":
        return cls(
            AbstractState(rec["state"]),
            Behaviour.of(*rec["behaviour"]),
            AbstractState(rec["next_state"]),
            bool(rec["success"]),
            int(rec["low_level_steps"]),
        )


def apply_delta(state: AbstractState, behaviour: Behaviour) -> AbstractState:
    """Replace the named items' attributes; every other slot is untouched."""
    items = list(state.items)
    for ident, attr in behaviour.changes:
        slot = state.slot_of(ident)
        if slot is None:
            raise PreconditionError(f"identity {ident} not present in state")
        items[slot] = Item(ident, attr)
    return AbstractState(items)


def is_success(transition: AbstractTransition) -> bool:
    return transition.behaviour.satisfied_by(transition.next_state)


def count_behaviours(n_items: int, n_attributes: int, items_per_behaviour: int = 1) -> int:
    if n_attributes < 1 or items_per_behaviour < 1:
        raise ValueError("need m >= 1 and I >= 1")
    if items_per_behaviour > n_items:
        raise ValueError(f"I={items_per_behaviour} exceeds N={n_items}")
    return math.comb(n_items, items_per_behaviour) * n_attributes ** items_per_behaviour


def changed_items(state: AbstractState, next_state: AbstractState) -> list[tuple[int, int, int]]:
    """``(identity, old_attribute, new_attribute)`` for every slot that changed."""
    out = []
    for ident, attr in next_state.items:
        if ident == EMPTY:
            continue
        old = state.attribute_of(ident)
        if old is not None and old != attr:
            out.append((ident, old, attr))
    return out
