"""Support for the recipe driven decomposition policy."""
from typing import Optional, Union

from ..const import DEFAULT_RECIPES
from ..decompose import (
    ContextMode,
    DecomposerOutput,
    DecompositionContext,
    NoRecipeMatch,
)
from ..decompositionpolicy import DecompositionPolicy
from ..recipes import RecipeBook
from ..terminate import normalize
from ..world import Observation, WorldState, effect_holds, observe


def _progress(steps: list, prior_steps) -> int:
    """Return how many of steps the prior texts account for.

    Prior texts are matched greedily, in order; unmatched texts are
    skipped.
    """
    pointer = 0
    normalized = [normalize(step) for step in steps]
    for text in prior_steps:
        text = normalize(text)
        for index in range(pointer, len(normalized)):
            if normalized[index] == text:
                pointer = index + 1
                break
    return pointer


class PolicySCRIPTED(DecompositionPolicy):
    """Provide a deterministic policy backed by a RecipeBook.

    The policy keeps no per-episode state: its position in a recipe is
    derived from the context's prior steps each time.
    """

    name = "scripted"

    def __init__(
        self,
        recipes: Union[RecipeBook, str, None] = None,
        seed: Optional[int] = None,
    ):
        """Construct PolicySCRIPTED.

        :param recipes: A RecipeBook or the path of a recipe file
        :type recipes: RecipeBook or str
        :param seed: Permutes per-binding order when set
        :type seed: int
        """
        if not isinstance(recipes, RecipeBook):
            recipes = RecipeBook.from_file(recipes or DEFAULT_RECIPES)
        self.recipes = recipes if seed is None else recipes.with_seed(seed)

    def next_subgoal(self, ctx: DecompositionContext) -> DecomposerOutput:
        """Propose the first pending step of the focus recipe.

        Steps whose effects already hold in the observation are skipped.
        :raises NoRecipeMatch: if no recipe head matches the focus text
        """
        observation = ctx.observation
        if ctx.mode is ContextMode.FLAT_BASELINE:
            steps = self.recipes.flatten(ctx.focus_text, observation)
        else:
            steps = self.recipes.expand(ctx.focus_text, observation)
        if steps is None:
            raise NoRecipeMatch(ctx.focus_text)
        for step in steps[_progress(steps, ctx.prior_steps) :]:
            if not self.recipes.is_satisfied(step, observation):
                return DecomposerOutput.subgoal(step)
        return DecomposerOutput.end()

    def is_congruent(
        self,
        text: str,
        parent_text: str,
        left_text: Optional[str],
        state: WorldState,
        observation: Optional[Observation],
    ) -> bool:
        """Check that text's effects are among the parent's unmet effects.

        Parents without a recipe, and subgoals without known effects, are
        congruent.
        """
        if observation is None:
            observation = observe(state)
        if self.recipes.match(parent_text) is None:
            return True
        effects = self.recipes.effects(text, observation)
        if not effects:
            return True
        remaining = {
            effect
            for effect in self.recipes.scope(parent_text, observation)
            if not effect_holds(state, effect)
        }
        return effects <= remaining
