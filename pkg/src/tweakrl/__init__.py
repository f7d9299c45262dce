"""Desk-scale human-in-the-loop dual-actor RL fine-tuning system.

Subpackages: numerics (MLP autodiff core), domain (value types), env
(kinematic simulator), talk_tweak (intervention annotation), actors/critics
(policy stack and Q-functions), replay (buffers), trainer (two-phase
orchestration), netlearn (learner/actor wire protocol), cli (entry point).
"""

__version__ = "0.1.0"
