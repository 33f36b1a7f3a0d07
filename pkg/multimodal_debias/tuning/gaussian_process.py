'''
Gaussian-process surrogate with a squared-exponential kernel and the
expected-improvement acquisition used by the weight search.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import scipy.linalg
import scipy.stats
from scipy.spatial.distance import pdist, cdist

from ..common import *


def medianLengthScale(X):
  '''
  Median pairwise distance of the observed points, 1 if undefined.
  '''
  X = atleast_2d(X)
  if X.shape[0] < 2:
    return 1.
  d = pdist(X)
  d = d[d > 0]
  return float(median(d)) if len(d) else 1.


class GaussianProcess:
  '''
  Zero-mean GP on standardized targets. The length scale follows the median
  heuristic unless given, observation noise is added to the kernel diagonal
  and raised tenfold until the Cholesky factorization succeeds.
  '''
  def __init__(self, lengthScale=None, noise=1e-6):
    self.lengthScale = lengthScale
    self.noise = float(noise)
    self._fitted = False

  def kernel(self, A, B):
    d = cdist(atleast_2d(A), atleast_2d(B), 'sqeuclidean')
    return exp(-.5*d/self._ell**2)

  def fit(self, X, y):
    X = atleast_2d(array(X, dtype=float))
    y = array(y, dtype=float).reshape(-1)
    if X.shape[0] != len(y) or len(y) == 0:
      raise ShapeError(f'{X.shape[0]} points but {len(y)} targets')
    self._X = X
    self._mean = y.mean()
    std = y.std()
    self._std = std if std > 0 else 1.
    z = (y-self._mean)/self._std
    self._ell = self.lengthScale or medianLengthScale(X)
    K = self.kernel(X, X)
    noise = self.noise
    while True:
      try:
        self._chol = scipy.linalg.cho_factor(K + noise*eye(len(y)), lower=True)
        break
      except scipy.linalg.LinAlgError:
        noise *= 10
        if noise > 1:
          raise NumericError('GP kernel matrix is not positive definite')
    self._alpha = scipy.linalg.cho_solve(self._chol, z)
    self._fitted = True
    return self

  def standardize(self, y):
    return (asarray(y, dtype=float)-self._mean)/self._std

  def predict(self, Xs, standardized=False):
    '''
    Posterior mean and standard deviation, in the units of the targets or
    of the standardized targets.
    '''
    if not self._fitted:
      raise RuntimeError('GP is not fitted yet')
    Ks = self.kernel(Xs, self._X)
    mu = Ks @ self._alpha
    v = scipy.linalg.cho_solve(self._chol, Ks.T)
    sd = sqrt(clip(1 - (Ks*v.T).sum(axis=1), 1e-12, None))
    if standardized:
      return mu, sd
    return self._mean + self._std*mu, self._std*sd


def expectedImprovement(mu, sigma, best, xi=0.01):
  '''
  Expected improvement over best for maximization.
  '''
  mu, sigma = asarray(mu, dtype=float), asarray(sigma, dtype=float)
  imp = mu - best - xi
  with errstate(divide='ignore', invalid='ignore'):
    z = where(sigma > 0, imp/sigma, 0)
  ei = imp*scipy.stats.norm.cdf(z) + sigma*scipy.stats.norm.pdf(z)
  return where(sigma > 0, ei, maximum(imp, 0))
