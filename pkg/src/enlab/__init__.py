"""Pathwise verification toolkit for structure conditions under progressive
filtration enlargement by a random time.

Layers:

* ``paths`` / ``segments`` / ``measures``: piecewise-analytic jump paths and
  path measures with exact supports;
* ``models``: the weighted jump-time and last-passage random-time models with
  their closed-form survival data and the tabulated ruin probability;
* ``tree``: a finite probability-tree oracle verifying every enlargement
  identity exactly;
* ``calculus`` / ``sc``: drifts, brackets and structure-condition verdicts;
* ``experiments`` / ``cli``: reproducible experiment runs with CSV, JSON and
  figure output.
"""

__version__ = "0.1.0"
