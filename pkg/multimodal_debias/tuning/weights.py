'''
Debias weight tuning on cached validation predictions. Every objective
evaluation is a vectorized rescoring of the stored vectors, so searches cost
no backend calls.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *

from ..common import *
from ..core import asScores
from ..metrics import evalScore
from ..mediation import WeightSet
from ..categorize import DebiasCategory
from .. import io
from .. import records
from .search import SearchSpace, bayesOptimize

# searched weights per category, as (dimension names, uses alpha, uses beta)
CATEGORY_DIMS = {
  1: (['alpha_1'], True, False),
  2: (['beta_2'], False, True),
  3: (['alpha_3', 'beta_3'], True, True),
}


def _stack(vectors):
  return array([asScores(v) for v in vectors], dtype=float)


def _scenarioArrays(scenarios, truths):
  scenarios, truths = list(scenarios), [int(t) for t in truths]
  if not scenarios:
    raise DataError('weight tuning needs a nonempty validation set')
  if len(scenarios) != len(truths):
    raise ShapeError(f'{len(scenarios)} scenario outputs but {len(truths)} labels')
  return (_stack([s.p0 for s in scenarios]), _stack([s.pt for s in scenarios]),
          _stack([s.pi for s in scenarios]), array(truths))


def _score(scores, truths, K, metric):
  return evalScore(truths, argmax(scores, axis=1), K, metric)


def tuneMid(scenarios, truths, metric=None, budget=50, seed=0, bounds=(0., 1.), search=None):
  '''
  Search (alpha, beta) maximizing the validation metric of the linear
  correction.

  Arguments:
  ==========
  scenarios : list of ScenarioOutputs
  truths : list of int

  metric : str or None
    evalScore average, None picks binary F1 for K=2 and macro-F1 otherwise.

  search : dict or None
    Extra keyword arguments of bayesOptimize (initialPoints, candidates,
    noise).

  Returns (WeightSet, SearchTrace).
  '''
  P0, PT, PI, y = _scenarioArrays(scenarios, truths)
  K = P0.shape[1]
  space = SearchSpace([('alpha', *bounds), ('beta', *bounds)], budget)
  trace = bayesOptimize(lambda x: _score(P0 - x[0]*PI - x[1]*PT, y, K, metric),
                        space, seed, **(search or {}))
  a, b = trace.bestPoint
  io.info(f'tuned MID weights alpha={a:.4f}, beta={b:.4f}: validation score '
          f'{trace.bestValue:.4f} (uncorrected {_score(P0, y, K, metric):.4f})')
  return WeightSet(a, b, bounds=bounds), trace


def tuneTfcd(scenarios, truths, metric=None, budget=50, seed=0, bounds=(0., 1.), search=None):
  '''
  One-dimensional search of beta for the text-only correction.
  '''
  P0, PT, _, y = _scenarioArrays(scenarios, truths)
  K = P0.shape[1]
  space = SearchSpace([('beta', *bounds)], budget)
  trace = bayesOptimize(lambda x: _score(P0 - x[0]*PT, y, K, metric),
                        space, seed, **(search or {}))
  b = float(trace.bestPoint[0])
  io.info(f'tuned text-only weight beta={b:.4f}: validation score {trace.bestValue:.4f}')
  return WeightSet(0., b, bounds=bounds), trace


def _routedCategories(categories, n):
  c = array([int(DebiasCategory.parse(x)) for x in categories])
  if len(c) != n:
    raise ShapeError(f'{len(c)} categories for {n} samples')
  # excluded samples take the plain general path
  return where(c < 0, 0, c)


def _tunePerCategory(base, imageTerm, textTerm, sign, truths, categories, metric, budget,
                     seed, bounds, search, label, weights=None):
  '''
  Independent searches for categories 1, 2 and 3. Each search sees only the
  validation samples routed to its category and scores the metric on that
  slice, so the weights of one category never depend on another's samples.
  '''
  n, K = base.shape
  y = array([int(t) for t in truths])
  if len(y) != n:
    raise ShapeError(f'{n} validation outputs but {len(y)} labels')
  c = _routedCategories(categories, n)
  weights = weights or WeightSet(bounds=bounds)
  traces = {}

  for cat, (names, usesAlpha, usesBeta) in CATEGORY_DIMS.items():
    sel = c == cat
    if not sel.any():
      io.warn(f'{label}: no validation samples routed to category '
              f'{DebiasCategory(cat).name}, its weights stay 0')
      weights = weights.withCategory(cat, 0., 0.)
      continue
    B0, I0, T0, y0 = base[sel], imageTerm[sel], textTerm[sel], y[sel]

    def objective(x, B0=B0, I0=I0, T0=T0, y0=y0, usesAlpha=usesAlpha, usesBeta=usesBeta):
      x = list(x)
      a = x.pop(0) if usesAlpha else 0.
      b = x.pop(0) if usesBeta else 0.
      return _score(B0 + sign*(a*I0 + b*T0), y0, K, metric)

    space = SearchSpace([(name, *bounds) for name in names], budget)
    trace = bayesOptimize(objective, space, seed+cat, **(search or {}))
    x = list(trace.bestPoint)
    alpha = x.pop(0) if usesAlpha else 0.
    beta = x.pop(0) if usesBeta else 0.
    weights = weights.withCategory(cat, alpha, beta)
    traces[cat] = trace
    io.verb(f'{label}: category {DebiasCategory(cat).name} ({int(sel.sum())} samples) '
            f'alpha={alpha:.4f}, beta={beta:.4f}, slice score {trace.bestValue:.4f} '
            f'(untuned {_score(B0, y0, K, metric):.4f})')

  io.info(f'{label}: tuned per-category weights {weights.perCategory}')
  return weights, traces


def tuneMrid(scenarios, truths, categories, metric=None, budget=50, seed=0, bounds=(0., 1.),
             search=None, weights=None):
  '''
  Per-category weights of the router-gated correction. categories are the
  routes of the validation samples (router predictions or oracle labels).

  Returns (WeightSet, dict category -> SearchTrace).
  '''
  P0, PT, PI, _ = _scenarioArrays(scenarios, truths)
  return _tunePerCategory(P0, PI, PT, -1, truths, categories, metric, budget, seed, bounds,
                          search, 'MRID', weights)


def tuneMoe(pGe, pIde, pTde, truths, categories, metric=None, budget=50, seed=0,
            bounds=(0., 1.), search=None, weights=None):
  '''
  Per-category weights of the expert combination, from the three experts'
  validation predictions.

  Returns (WeightSet, dict category -> SearchTrace).
  '''
  G, I, T = _stack(pGe), _stack(pIde), _stack(pTde)
  if not len(G):
    raise DataError('weight tuning needs a nonempty validation set')
  if not G.shape == I.shape == T.shape:
    raise ShapeError(f'expert outputs differ in shape: {G.shape}, {I.shape}, {T.shape}')
  return _tunePerCategory(G, I, T, +1, truths, categories, metric, budget, seed, bounds,
                          search, 'MME-JD', weights)


def evaluateSurface(scenarios, truths, metric=None, resolution=21, bounds=(0., 1.), path=None):
  '''
  Validation metric of the linear correction on a regular (alpha, beta)
  lattice, returned as (alphas, betas, scores[alpha, beta]) and optionally
  written as CSV with columns alpha, beta, score.
  '''
  P0, PT, PI, y = _scenarioArrays(scenarios, truths)
  K = P0.shape[1]
  if int(resolution) < 2:
    raise ConfigError(f'surface resolution must be at least 2, got {resolution}')
  alphas = linspace(bounds[0], bounds[1], int(resolution))
  betas = linspace(bounds[0], bounds[1], int(resolution))
  surface = zeros((len(alphas), len(betas)))
  lines = ['alpha,beta,score']
  for i, a in enumerate(alphas):
    for j, b in enumerate(betas):
      surface[i, j] = _score(P0 - a*PI - b*PT, y, K, metric)
      lines.append(f'{a:.6f},{b:.6f},{surface[i,j]:.6f}')
  if path is not None:
    records.writeText(path, '\n'.join(lines)+'\n')
    io.verb(f'wrote weight surface of {len(alphas)}x{len(betas)} points to {path}')
  return alphas, betas, surface
