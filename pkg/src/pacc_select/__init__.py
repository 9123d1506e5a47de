"""Hybrid rule-based audit case selection at desk scale.

Combines an expert-rule DSL with embedded predictive models into a 0-999
fraudulence score, ranks taxpayers for audit under several selection
strategies, and evaluates selection quality on synthetic corpora with
delayed audit feedback.
"""

__version__ = "0.1.0"
