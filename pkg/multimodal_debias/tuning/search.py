'''
Box-constrained maximization of black-box objectives: an exhaustive lattice
search and a Gaussian-process Bayesian optimization with expected improvement.
Objectives receive a float array with one entry per dimension.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import itertools
from scipy.stats import qmc

from ..common import *
from .. import io
from .. import records
from .gaussian_process import GaussianProcess, expectedImprovement


class SearchSpace:
  '''
  Arguments:
  ==========
  dims : list of (name, lower, upper)

  budget : int
    Maximum number of objective evaluations.
  '''
  def __init__(self, dims, budget=50):
    self.dims = []
    for name, lo, hi in dims:
      lo, hi = float(lo), float(hi)
      if not lo < hi:
        raise ConfigError(f'search dimension "{name}" needs lower < upper, got [{lo}, {hi}]')
      self.dims.append((str(name), lo, hi))
    if not self.dims:
      raise ConfigError('a search space needs at least one dimension')
    self.budget = int(budget)
    if self.budget < 1:
      raise ConfigError(f'search budget must be at least 1, got {budget}')

  @property
  def names(self):
    return [d[0] for d in self.dims]

  @property
  def lower(self):
    return array([d[1] for d in self.dims])

  @property
  def upper(self):
    return array([d[2] for d in self.dims])

  def __len__(self):
    return len(self.dims)

  def fromUnit(self, u):
    return self.lower + asarray(u, dtype=float)*(self.upper-self.lower)

  def toUnit(self, x):
    return (asarray(x, dtype=float)-self.lower)/(self.upper-self.lower)

  def toDict(self):
    return dict(dims=[list(d) for d in self.dims], budget=self.budget)


class SearchTrace:
  '''
  Evaluated points in order with their objective values; failed evaluations
  carry value None. The best point is the first one reaching the maximum.
  '''
  def __init__(self, space, method, seed=None):
    self.space = space
    self.method = method
    self.seed = seed
    self.points = []
    self.values = []
    self.errors = []

  def record(self, x, value, error=None):
    self.points.append([float(v) for v in x])
    self.values.append(None if value is None else float(value))
    self.errors.append(None if error is None else str(error))

  def __len__(self):
    return len(self.points)

  @property
  def failed(self):
    return len([v for v in self.values if v is None])

  def _bestIndex(self):
    best = None
    for n, v in enumerate(self.values):
      if v is not None and (best is None or v > self.values[best]):
        best = n
    return best

  @property
  def bestPoint(self):
    n = self._bestIndex()
    return None if n is None else array(self.points[n])

  @property
  def bestValue(self):
    n = self._bestIndex()
    return None if n is None else self.values[n]

  def best(self):
    '''best point as a name -> value dict'''
    x = self.bestPoint
    return None if x is None else dict(zip(self.space.names, [float(v) for v in x]))

  def toDict(self, configFingerprint=None):
    return dict(method=self.method, seed=self.seed, space=self.space.toDict(),
                points=self.points, values=self.values, errors=self.errors,
                best_point=self.best(), best_value=self.bestValue,
                fingerprint=configFingerprint or '')

  def save(self, path, configFingerprint=None):
    records.writeJson(path, dict(schema='search-trace', version=records.SCHEMA_VERSION,
                                 **self.toDict(configFingerprint)))


def _evaluate(objective, x, trace):
  try:
    value = float(objective(x))
    if not isfinite(value):
      raise NumericError(f'objective returned {value}')
  except Exception as e:
    io.warn(f'objective failed at {[float(v) for v in x]}: {e}', logOnly=True)
    trace.record(x, None, e)
    return None
  trace.record(x, value)
  if len(trace) % 10 == 0:
    io.verb(f'{trace.method}: {len(trace)}/{trace.space.budget} evaluations, '
            f'best {trace.bestValue} at {trace.best()}')
  return value


def _finish(trace):
  if trace.bestValue is None:
    raise SearchError(f'all {len(trace)} objective evaluations failed'
                      + (f', last error: {trace.errors[-1]}' if trace.errors else ''))
  return trace


def gridSearch(objective, space, resolution=21):
  '''
  Evaluate the full lattice, the first dimension varying slowest. Refuses
  lattices larger than the budget.
  '''
  res = [int(resolution)]*len(space) if isscalar(resolution) else [int(r) for r in resolution]
  if len(res) != len(space):
    raise ConfigError(f'{len(res)} resolutions given for {len(space)} dimensions')
  if [r for r in res if r < 2]:
    raise ConfigError(f'grid resolution must be at least 2 per dimension, got {res}')
  size = int(prod(res))
  if size > space.budget:
    raise SearchError(f'grid of {size} points exceeds the budget of {space.budget} '
                      f'evaluations, a budget of {size} is required')
  axes = [linspace(lo, hi, r) for (_, lo, hi), r in zip(space.dims, res)]
  trace = SearchTrace(space, 'grid')
  for x in itertools.product(*axes):
    _evaluate(objective, array(x), trace)
  return _finish(trace)


def initialDesign(space, n, rng):
  '''
  n space-filling points in the unit cube: the all-lower corner followed by
  a Latin hypercube sample.
  '''
  n = int(n)
  if n < 1:
    return zeros((0, len(space)))
  rest = zeros((0, len(space)))
  if n > 1:
    rest = qmc.LatinHypercube(d=len(space), seed=int(rng.integers(2**32))).random(n-1)
  return vstack([zeros((1, len(space))), rest])


def bayesOptimize(objective, space, seed=0, initialPoints=8, candidates=1024,
                  noise=1e-6, xi=0.01, localFraction=0.25, localScale=0.05):
  '''
  Maximize the objective within the budget of the search space.

  Arguments:
  ==========
  objective : callable
    Maps a point (array in the space's coordinates) to a float. Raising
    marks the point as failed, it is skipped by the surrogate.

  initialPoints : int
    Size of the space-filling initial design.

  candidates : int
    Random candidates per acquisition step, of which a localFraction share
    is drawn as Gaussian perturbations (std localScale in unit coordinates)
    around the current best point.

  noise : float
    Observation noise of the GP surrogate.

  Returns the SearchTrace, its best point is the best observed point.
  '''
  rng = random.default_rng(seed)
  trace = SearchTrace(space, 'bayes', seed)
  d = len(space)
  unitPoints, unitValues = [], []

  def evaluate(u):
    u = clip(u, 0, 1)
    value = _evaluate(objective, space.fromUnit(u), trace)
    if value is not None:
      unitPoints.append(u)
      unitValues.append(value)

  for u in initialDesign(space, min([int(initialPoints), space.budget]), rng):
    evaluate(u)

  nLocal = int(round(candidates*localFraction))
  while len(trace) < space.budget:
    if len(unitValues) < 2:
      evaluate(rng.random(d))
      continue
    X, y = array(unitPoints), array(unitValues)
    gp = GaussianProcess(noise=noise).fit(X, y)
    best = X[int(argmax(y))]
    C = vstack([rng.random((int(candidates)-nLocal, d)),
                clip(best + localScale*rng.standard_normal((nLocal, d)), 0, 1)])
    mu, sigma = gp.predict(C, standardized=True)
    ei = expectedImprovement(mu, sigma, gp.standardize(y.max()), xi)
    evaluate(C[int(argmax(ei))])

  trace = _finish(trace)
  io.verb(f'bayesian search finished after {len(trace)} evaluations '
          f'({trace.failed} failed), best {trace.bestValue:.6g} at {trace.best()}')
  return trace
