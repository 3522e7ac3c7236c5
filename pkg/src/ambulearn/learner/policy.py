"""Online policy: features, predicted scores, then the matching layer."""
from __future__ import annotations

from ..matching import build_decision_graph, solve_matching
from .features import FeatureContext, edge_features
from .models import ModelParams


class LearnedPolicy:
    name = "learned"

    def __init__(self, params: ModelParams, ctx: FeatureContext, name: str | None = None):
        self.params = params
        self.ctx = ctx
        if name:
            self.name = name

    def decide(self, sim, state):
        g = build_decision_graph(sim, state)
        theta = self.params.predict_theta(edge_features(sim, state, g, self.ctx))
        return g.decision(solve_matching(g, theta))

    def __call__(self, sim, state, actions):
        if len(actions) == 1:
            return 0
        return actions.index(self.decide(sim, state))
