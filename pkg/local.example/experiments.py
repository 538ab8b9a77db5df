"""Example custom validity experiment.

Copy this file to ``local/experiments.py`` and uncomment the code below.
``@validity_trial`` registers a trial kind that ``pacbayes.py verify`` can
run by name.  A trial receives the shared ``TrialContext`` (world, space,
clipped loss table, exact true losses) and one drawn sample.
"""

# import numpy as np
#
# from pacbayes_toolkit.bounds import pac_bayes_bound
# from pacbayes_toolkit.posteriors import point_mass
# from pacbayes_toolkit.validity import TrialContext, TrialOutcome, validity_trial
#
#
# @validity_trial("erm_point_mass")
# def erm_point_mass(ctx: TrialContext, sample) -> TrialOutcome:
#     """PAC-Bayes at the point mass on the empirical risk minimiser."""
#     p = ctx.params
#     lam = p.require_lambda()
#     l_hat, _ = ctx.empirical(sample)
#     h = int(np.argmin(l_hat))
#     q = point_mass(ctx.space, h)
#     report = pac_bayes_bound(float(l_hat[h]), float(ctx.prior_nats[h]), p.n, p.delta, ctx.loss.l_max, lam)
#     return TrialOutcome(report.value, float(q @ ctx.true), lambda_=lam, subject=h)
