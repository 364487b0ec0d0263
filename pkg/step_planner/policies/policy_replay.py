"""Support for replaying a fixed action plan."""
from ..decompose import DecomposerOutput, DecompositionContext
from ..decompositionpolicy import DecompositionPolicy
from ..terminate import render_action


class PolicyREPLAY(DecompositionPolicy):
    """Provide a policy proposing the actions of a plan in order.

    The position in the plan is the number of prior steps, so the policy
    fits the flat loop and a tree that executes everything at the root.
    """

    name = "replay"

    def __init__(self, plan=()):
        """Construct PolicyREPLAY.

        :param plan: The actions to propose
        :type plan: list[PrimitiveAction]
        """
        self.plan = tuple(plan)

    def next_subgoal(self, ctx: DecompositionContext) -> DecomposerOutput:
        """Render the next planned action, or end after the last one."""
        index = len(ctx.prior_steps)
        if index >= len(self.plan):
            return DecomposerOutput.end()
        return DecomposerOutput.subgoal(
            render_action(self.plan[index], ctx.observation)
        )
