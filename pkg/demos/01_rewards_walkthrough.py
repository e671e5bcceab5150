"""Rewards on the eight-block example program.

Runs the recorded inputs through the target, turns edge counts into
transition probabilities and prints the expected number of uncovered
blocks each block leads to.  B4 tops the list: it is uncovered itself
and one of its three successors, B8, is uncovered too.
"""

from heatfuzz.markov import figure3_coverage, select_critical_blocks, solve_rewards, estimate_dtmc
from heatfuzz.target import build_cfg

program, coverage = figure3_coverage()
cfg = build_cfg(program)
dtmc = estimate_dtmc(coverage, cfg)

print("edge counts and probabilities")
for (src, dst), p in sorted(dtmc.prob.items()):
    print(f"  {src} -> {dst}: taken {dtmc.edge_taken[(src, dst)]:4d}  p = {p:.4f}")

covered = coverage.covered
rewards = solve_rewards(dtmc, covered)
print("\nrewards (converged in %d iterations)" % rewards.iterations)
for b in dtmc.states:
    tag = "" if b in covered else "  (uncovered)"
    print(f"  {b}: {rewards[b]:.4f}{tag}")

sel = select_critical_blocks(rewards, covered, cfg, dtmc, k_percent=100, k_prime=0.5)
print("\ntarget uncovered blocks:", ", ".join(sel.target_uncovered))
print("critical blocks:", ", ".join(sel.critical) or "-")
for b in sel.critical:
    print(f"  {b} reached with probability {sel.reach[b]:.4f}")
