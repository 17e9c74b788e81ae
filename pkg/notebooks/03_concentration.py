"""
Concentration diagnostics
=========================

Empirical tails of the psi sum, the Y partial sums and the drift energy,
each with the smallest constants that let a bound of the stated shape
dominate them, followed by the martingale inequality falsifier.
"""

# %%
from mdev.harness import ExperimentSpec, LM21_GENERATORS, concentration_check, lm21_falsifier, prepare

spec = ExperimentSpec(model="ou", observable="x2", eta=(0.1,), n_reps=10_000)
setup = prepare(spec)

# %%
for kind in ("psi_sum", "y_sum", "drift_sum"):
    out = concentration_check(kind, spec, setup=setup)
    print(kind, out.constants, "violation" if out.violation else "dominated")

# %% [markdown]
# Sums of n = 1000 i.i.d. differences against the exponential martingale
# bound with alpha = 1. The piecewise column is the bound before its final
# relaxation.

# %%
for gen in LM21_GENERATORS:
    out = lm21_falsifier(gen, alpha=1.0, n=1000, n_reps=10_000)
    print(gen, {k: round(v, 4) if isinstance(v, float) else v for k, v in out.constants.items()})
    for r in out.rows[:4]:
        print(f"   x={r.y:7.2f}  P={r.empirical_tail:.4f}  bound={r.bound:.4f}  piecewise={r.extra:.4f}")
