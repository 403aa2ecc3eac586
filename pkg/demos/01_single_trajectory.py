"""Simulate one jump-diffusion trajectory and look at its adaptive mesh.

The scalar test system has the superlinear drift x - 3x^3, multiplicative
noise 0.2*(1 - x^2) and multiplicative jumps (1 + z)x at Poisson event
times.  The stepper shortens steps where |Y| is large and lands exactly
on every jump time.
"""

import numpy as np

from jumpadapt import (
    MapPair,
    StepParams,
    WienerSource,
    get_problem,
    sample_jump_schedule,
    simulate_path,
)
from jumpadapt import rng as streams

SEED, PATH = 2024, 0

problem = get_problem("1d-mult", sigma=0.2, intensity=5.0)
params = StepParams(h_max=2.0**-4, rho=2.0**7, kappa=1.0)

schedule = sample_jump_schedule(
    problem.intensity, problem.horizon, problem.mark_sampler,
    streams.jump_stream(SEED, PATH),
)
noise = WienerSource.on_demand(problem.drivers, streams.wiener_stream(SEED, PATH))

record = simulate_path(problem, params, noise, schedule, MapPair.default())

print(f"jump times: {np.round(schedule.times, 4)}")
print(f"marks     : {np.round(schedule.marks[:, 0], 4)}")
print()
print(f"{'t':>10} {'h':>10} {'|Y|':>10}  flags")
state = problem.initial_state
for node in record.nodes:
    flags = []
    if node.jump_applied:
        flags.append("jump")
    if node.used_backstop:
        flags.append("backstop")
    print(f"{node.t_next:10.6f} {node.h_used:10.6f} "
          f"{np.linalg.norm(node.state_after_jump):10.6f}  {' '.join(flags)}")

print()
print(f"endpoint Y(T) = {record.endpoint[0]:+.6f}")
print(f"{record.n_steps} steps, {record.n_jumps} jumps applied, "
      f"{record.n_backstop} backstop uses")
print(f"step sizes sum to {sum(n.h_used for n in record.nodes):.15f} (T = 1)")
