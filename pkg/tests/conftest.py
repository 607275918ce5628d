import random

import pytest

from delayalg.exprs import Context, DelayedVar, eval_num


@pytest.fixture
def ctx2():
    return Context(["x1", "x2"], {"e1": True, "e2": True, "e3": True, "e": True})


@pytest.fixture
def ctx3():
    return Context(["x1", "x2", "x3"], {"e1": True, "e2": True})


@pytest.fixture
def ctx4():
    return Context(["x1", "x2", "x3", "x4"], {"c": True})


class SignalWorld:
    """Smooth sample trajectories for operator-on-signal checks.

    Variables get random low-degree polynomial trajectories, so delayed
    values are exact and operator identities can be tested numerically.
    """

    def __init__(self, ctx: Context, seed: int):
        rng = random.Random(seed)
        self.ctx = ctx
        self.coeffs = {
            b: [rng.uniform(0.2, 1.4) for _ in range(4)]
            for b in range(1, ctx.n + 1)
        }
        self.const_vals = {name: rng.uniform(0.5, 1.8) for name in ctx.constants}
        self.signal_coeffs = [rng.uniform(-1.0, 1.0) for _ in range(4)]

    def traj(self, base: int, t: float) -> float:
        c = self.coeffs[base]
        return c[0] + c[1] * t * 0.1 + c[2] * (t * 0.1) ** 2 + c[3] * (t * 0.1) ** 3

    def signal(self, t: float) -> float:
        c = self.signal_coeffs
        return c[0] + c[1] * t * 0.1 + c[2] * (t * 0.1) ** 2 + c[3] * (t * 0.1) ** 3

    def assignment(self, t: float, max_delay: int = 8):
        out = dict(self.const_vals)
        for b in range(1, self.ctx.n + 1):
            for j in range(-2, max_delay + 1):
                out[DelayedVar(b, j)] = self.traj(b, t - j)
        return out

    def apply(self, p, t: float) -> float:
        """Apply the operator to the scalar test signal at time t."""
        total = 0.0
        env = self.assignment(t)
        for d, c in p.coeffs.items():
            total += eval_num(c, env) * self.signal(t - d)
        return total


@pytest.fixture
def world2(ctx2):
    return SignalWorld(ctx2, seed=11)
