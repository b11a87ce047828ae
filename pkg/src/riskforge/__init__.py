"""Tooling for training and evaluating tool-calling web agents.

Modules:

- ``actions``, ``model``, ``parser``: action schema, interchange records and response validation.
- ``rewards``: format, stepwise accuracy, process weight and level weight.
- ``grpo``: group-relative policy optimization on a small tabular policy.
- ``webenv``: deterministic simulated website, judge and shortest-path oracle.
- ``pipeline``: trajectory curation and difficulty grading.
- ``evaluate``: offline and online metrics and reports.
- ``cli``: the ``riskforge`` command.
"""

__version__ = "0.1.0"
