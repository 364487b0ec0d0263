"""Provide the RecipeBook used by the scripted decomposition policy.

A recipe maps a head template such as "store {x} in {c}" to an ordered list
of step templates. Slots are filled from the matched text; a slot naming a
category ("tools") expands once per visible member of that category when
the recipe is per_binding. Recipes also declare the effect literals their
completion brings about, which the congruence check relies on.
"""
import json
import logging
import random
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import voluptuous as vol
from voluptuous.humanize import humanize_error

from .const import DEFAULT_RECIPES
from .terminate import check_mappability, display_name, ground, normalize
from .world import Observation, action_effects, effect_holds

_LOGGER = logging.getLogger(__name__)

MAX_EXPANSION_DEPTH = 8

CONF_CATEGORIES = "categories"
CONF_RECIPES = "recipes"
CONF_HEAD = "head"
CONF_STEPS = "steps"
CONF_SETUP = "setup"
CONF_PER_BINDING = "per_binding"
CONF_TERMINAL = "terminal"
CONF_EFFECTS = "effects"
CONF_REVEAL = "reveal"
CONF_SLOT = "slot"

RECIPE_SCHEMA = vol.Schema(
    {
        vol.Required(CONF_HEAD): vol.All(str, vol.Length(min=1)),
        vol.Optional(CONF_STEPS, default=[]): [str],
        vol.Optional(CONF_SETUP, default=[]): [str],
        vol.Optional(CONF_PER_BINDING, default=False): bool,
        vol.Optional(CONF_TERMINAL, default=False): bool,
        vol.Optional(CONF_EFFECTS, default=[]): [str],
        vol.Optional(CONF_REVEAL): {
            vol.Required(CONF_SLOT): str,
            vol.Required(CONF_STEPS): [str],
        },
    }
)

RECIPE_FILE_SCHEMA = vol.Schema(
    {
        vol.Optional(CONF_CATEGORIES, default={}): {str: [str]},
        vol.Required(CONF_RECIPES): [RECIPE_SCHEMA],
    }
)

_SLOT = re.compile(r"\{(\w+)\}")
_EFFECT_PATTERNS = (
    ("in", re.compile(r"^(?P<a>.+) in (?P<b>.+)$")),
    ("on", re.compile(r"^(?P<a>.+) on (?P<b>.+)$")),
    ("open", re.compile(r"^(?P<a>.+) open$")),
    ("closed", re.compile(r"^(?P<a>.+) closed$")),
    ("holding", re.compile(r"^holding (?P<a>.+)$")),
    ("at", re.compile(r"^at (?P<a>.+)$")),
)


class RecipeFileError(ValueError):
    """Raised when a recipe file is malformed."""


def _head_pattern(head: str):
    parts = _SLOT.split(head)
    pattern = []
    for index, part in enumerate(parts):
        if index % 2:
            pattern.append(f"(?P<{part}>.+?)")
        else:
            pattern.append(re.escape(part))
    return re.compile("".join(pattern))


@dataclass(frozen=True)
class Recipe:
    """One decomposition recipe."""

    head: str
    steps: tuple = ()
    setup: tuple = ()
    per_binding: bool = False
    terminal: bool = False
    effects: tuple = ()
    reveal_slot: Optional[str] = None
    reveal_steps: tuple = ()

    @cached_property
    def pattern(self):
        """Compiled head pattern with lazy slots."""
        return _head_pattern(self.head)

    def match(self, text: str) -> Optional[dict]:
        """Return slot values if text matches the head."""
        match = self.pattern.fullmatch(text)
        return None if match is None else match.groupdict()

    @classmethod
    def from_dict(cls, data: dict) -> "Recipe":
        """Build a recipe from its validated file form."""
        reveal = data.get(CONF_REVEAL) or {}
        return cls(
            head=data[CONF_HEAD],
            steps=tuple(data[CONF_STEPS]),
            setup=tuple(data[CONF_SETUP]),
            per_binding=data[CONF_PER_BINDING],
            terminal=data[CONF_TERMINAL],
            effects=tuple(data[CONF_EFFECTS]),
            reveal_slot=reveal.get(CONF_SLOT),
            reveal_steps=tuple(reveal.get(CONF_STEPS, ())),
        )


class RecipeBook:
    """An ordered recipe table; the first matching head wins."""

    def __init__(self, recipes, categories=None, seed: Optional[int] = None):
        """Construct RecipeBook.

        :param recipes: Recipes, most specific first
        :type recipes: list[Recipe]
        :param categories: Category name to member classes
        :type categories: dict
        :param seed: Permutes per-binding order when set
        :type seed: int
        """
        self.recipes = tuple(recipes)
        self.categories = dict(categories or {})
        self.seed = seed

    @classmethod
    def from_dict(cls, data: dict, source: str = "<recipes>") -> "RecipeBook":
        """Build a RecipeBook from its JSON form.

        :raises RecipeFileError: if the data does not validate
        """
        try:
            data = RECIPE_FILE_SCHEMA(data)
        except vol.Invalid as error:
            raise RecipeFileError(
                f"{source}: {humanize_error(data, error)}"
            ) from error
        return cls(
            [Recipe.from_dict(recipe) for recipe in data[CONF_RECIPES]],
            data[CONF_CATEGORIES],
        )

    @classmethod
    def from_file(cls, path: str = DEFAULT_RECIPES) -> "RecipeBook":
        """Load a recipe file."""
        _LOGGER.debug("Loading recipes from %s", path)
        with open(path, encoding="utf-8") as file_handle:
            return cls.from_dict(json.load(file_handle), path)

    def with_seed(self, seed: Optional[int]) -> "RecipeBook":
        """Return a copy permuting per-binding order with seed."""
        return RecipeBook(self.recipes, self.categories, seed)

    def match(self, text: str) -> Optional[tuple]:
        """Return (recipe, slots) for the first recipe matching text."""
        text = normalize(text)
        for recipe in self.recipes:
            slots = recipe.match(text)
            if slots is not None:
                return recipe, slots
        return None

    def _bindings(
        self, recipe: Recipe, slots: dict, observation: Observation
    ) -> list:
        if not recipe.per_binding:
            return [slots]
        for slot, value in slots.items():
            members = self.categories.get(value)
            if members is None:
                continue
            objects = sorted(
                (
                    obj
                    for obj in observation.objects
                    if obj.cls in members
                ),
                key=lambda obj: (members.index(obj.cls), obj.id),
            )
            names = [display_name(obj.id, observation) for obj in objects]
            if self.seed is not None:
                rng = random.Random(
                    f"{self.seed}:{recipe.head}:{','.join(names)}"
                )
                rng.shuffle(names)
            return [dict(slots, **{slot: name}) for name in names]
        return [slots]

    def expand(self, text: str, observation: Observation) -> Optional[list]:
        """Return the step texts of text's recipe.

        :returns: None when no recipe matches, [] for terminal recipes
        """
        matched = self.match(text)
        if matched is None:
            return None
        recipe, slots = matched
        if recipe.terminal:
            return []
        steps = [template.format_map(slots) for template in recipe.setup]
        if recipe.reveal_slot is not None and not ground(
            slots[recipe.reveal_slot], observation
        ):
            steps += [
                template.format_map(slots) for template in recipe.reveal_steps
            ]
        for binding in self._bindings(recipe, slots, observation):
            steps += [template.format_map(binding) for template in recipe.steps]
        return steps

    def _ground_effect(self, literal: str, observation: Observation):
        for name, pattern in _EFFECT_PATTERNS:
            match = pattern.match(literal)
            if match is None:
                continue
            args = []
            for value in match.groups():
                ids = ground(value, observation)
                args.append(ids[0] if len(ids) == 1 else value)
            if name == "at":
                anchor = observation.anchor(args[0])
                args = [anchor or args[0]]
            return (name,) + tuple(args)
        return None

    def declared_effects(
        self, text: str, observation: Observation
    ) -> frozenset:
        """Return the effect literals declared by text's recipe."""
        matched = self.match(text)
        if matched is None:
            return frozenset()
        recipe, slots = matched
        effects = set()
        for binding in self._bindings(recipe, slots, observation):
            for template in recipe.effects:
                effect = self._ground_effect(
                    normalize(template.format_map(binding)), observation
                )
                if effect is not None:
                    effects.add(effect)
        return frozenset(effects)

    def effects(self, text: str, observation: Observation) -> frozenset:
        """Return the effects of a subgoal text.

        A mappable text has the effects of its action; anything else has
        the effects its recipe declares.
        """
        action = check_mappability(text, observation)
        if action is not None:
            return action_effects(observation, action)
        return self.declared_effects(text, observation)

    def is_satisfied(self, text: str, observation: Observation) -> bool:
        """Return True if every effect of text already holds."""
        effects = self.effects(text, observation)
        return bool(effects) and all(
            effect_holds(observation, effect) for effect in effects
        )

    def scope(
        self, text: str, observation: Observation, _depth: int = 0
    ) -> frozenset:
        """Return every effect text or its sub-steps may bring about."""
        result = set(self.effects(text, observation))
        if _depth >= MAX_EXPANSION_DEPTH:
            return frozenset(result)
        for step in self.expand(text, observation) or ():
            if normalize(step) != normalize(text):
                result |= self.scope(step, observation, _depth + 1)
        return frozenset(result)

    def flatten(
        self, text: str, observation: Observation, _depth: int = 0
    ) -> Optional[list]:
        """Expand text recursively down to primitive phrases."""
        steps = self.expand(text, observation)
        if steps is None:
            return None
        flat = []
        for step in steps:
            children = self.expand(step, observation)
            if (
                _depth >= MAX_EXPANSION_DEPTH
                or not children
                or check_mappability(step, observation) is not None
            ):
                flat.append(step)
            elif not self.is_satisfied(step, observation):
                flat.extend(self.flatten(step, observation, _depth + 1))
        return flat
