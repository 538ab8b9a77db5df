"""Example custom bound calculator.

Copy this file to ``local/bounds.py`` and uncomment the code below.  The
``@bound_calculator`` decorator registers the function under its kind name,
so ``pacbayes.py bound --config ...`` with ``"kind": "hoeffding_union"``
dispatches to it.
"""

# import math
#
# from pacbayes_toolkit.bounds import BoundKind, BoundReport, bound_calculator
#
#
# @bound_calculator("hoeffding_union")
# def hoeffding_union(l_hat: float, prior_nats: float, n: int, delta: float, l_max: float) -> BoundReport:
#     """L̂(h) + l_max·√((ln(1/P(h)) + ln(1/δ)) / (2N))."""
#     complexity = prior_nats + math.log(1.0 / delta)
#     return BoundReport(
#         kind=BoundKind.OCCAM,  # closest built-in kind for CSV output
#         value=l_hat + l_max * math.sqrt(complexity / (2.0 * n)),
#         empirical_term=l_hat,
#         complexity_nats=complexity,
#         lambda_=None,
#         delta=delta,
#         n=n,
#         l_max=l_max,
#     )
#
#
# # Turn off a built-in kind for this installation:
# # from pacbayes_toolkit.bounds import disable_bound
# # disable_bound("pac_bayes_grid")
