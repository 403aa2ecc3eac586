"""How often does the hybrid scheme fall back to its backstop map?

The backstop runs on steps that collapsed to h_min, either because the
state norm exceeded rho**kappa or because a jump (or the horizon) was
closer than h_min.  Raising rho shrinks both contributions; the last
column shows the closed-form jump-proximity term 1 - exp(-lambda h_max/rho)
for comparison.
"""

from jumpadapt import ExperimentConfig, backstop_experiment

cfg = ExperimentConfig(
    problem="1d-mult",
    h_max_list=(2.0**-5,),
    h_ref=2.0**-9,
    n_paths=400,
    schemes=("ja-amm",),
    master_seed=11,
    mode="backstop",
    rho_list=(2.0**3, 2.0**5, 2.0**7),
).validate()

rows = backstop_experiment(cfg)

print(f"{'rho':>6} {'h_min':>12} {'freq':>10} {'norm':>10} {'truncation':>11} {'jump bound':>11}")
for r in rows:
    print(f"{r.rho:6.0f} {r.h_min:12.3e} {r.freq:10.5f} {r.freq_norm:10.5f} "
          f"{r.freq_jump_trunc:11.5f} {r.jump_term_bound:11.5f}")

print()
print("frequency is non-increasing in rho; with these stable dynamics the")
print("norm trigger is rare and truncation by nearby jumps dominates.")
