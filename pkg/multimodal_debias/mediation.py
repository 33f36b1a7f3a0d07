'''
The causal arithmetic on scenario predictions: total/direct/indirect effects,
the linear inference-time correction, its router-gated and text-only variants,
the expert combination and the bias-removed loss. This module is the single
place the three-argument difference of original, text-spurious and
image-spurious predictions is defined, as p0 - alpha*p_i - beta*p_t.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
from scipy.special import logsumexp

from .common import *
from .core import ProbVector, asScores, normalize
from .categorize import DebiasCategory


def _asProb(p, name):
  if isinstance(p, ProbVector):
    if not p.normalized:
      raise NumericError(f'{name} must be a normalized probability vector')
    return p
  return ProbVector(p, normalized=True)


class ScenarioOutputs:
  '''
  Predictions of the same predictor on the three scenario views of one
  sample: p0 on the original input, pt on (T_spurious, masked image) and pi
  on (masked text, I_spurious).
  '''
  def __init__(self, p0, pt, pi):
    self.p0 = _asProb(p0, 'p0')
    self.pt = _asProb(pt, 'pt')
    self.pi = _asProb(pi, 'pi')
    if not len(self.p0) == len(self.pt) == len(self.pi):
      raise ShapeError(f'scenario outputs differ in length: {len(self.p0)}, '
                       f'{len(self.pt)}, {len(self.pi)}')
    spaces = [p.classSpace for p in (self.p0, self.pt, self.pi) if p.classSpace is not None]
    if spaces and [s for s in spaces if s != spaces[0]]:
      raise ShapeError('scenario outputs belong to different class spaces')

  @property
  def K(self):
    return len(self.p0)

  def toRecord(self):
    return dict(p0=self.p0.tolist(), pt=self.pt.tolist(), pi=self.pi.tolist())

  @classmethod
  def fromRecord(cls, rec):
    return cls(rec['p0'], rec['pt'], rec['pi'])


class WeightSet:
  '''
  Debias coefficients. Global alpha (image) and beta (text) for the linear
  correction, plus per-category pairs (alpha_c, beta_c) for c in 1..3 used
  by the router-gated correction and the expert combination. Category 1 only
  uses its alpha, category 2 only its beta.
  '''
  def __init__(self, alpha=0., beta=0., perCategory=None, bounds=(0., 1.)):
    lo, hi = float(bounds[0]), float(bounds[1])
    if not lo < hi:
      raise ConfigError(f'weight bounds need lower < upper, got {bounds}')
    self.bounds = (lo, hi)
    self.alpha = self._check('alpha', alpha)
    self.beta = self._check('beta', beta)
    self.perCategory = {}
    for c, ab in (perCategory or {}).items():
      c = int(c)
      if c not in (1, 2, 3):
        raise ConfigError(f'per-category weights only exist for categories 1..3, got {c}')
      a, b = ab
      self.perCategory[c] = (self._check(f'alpha_{c}', a or 0.), self._check(f'beta_{c}', b or 0.))

  def _check(self, name, v):
    v = float(v)
    if not isfinite(v):
      raise ConfigError(f'weight {name} must be finite, got {v}')
    if not self.bounds[0] <= v <= self.bounds[1]:
      raise ConfigError(f'weight {name}={v} outside bounds {list(self.bounds)}')
    return v

  def categoryWeights(self, c):
    c = int(c)
    if c not in self.perCategory:
      raise ConfigError(f'no weights configured for debias category {c}')
    return self.perCategory[c]

  def withCategory(self, c, alpha=0., beta=0.):
    per = dict(self.perCategory)
    per[int(c)] = (alpha, beta)
    return WeightSet(self.alpha, self.beta, per, self.bounds)

  def toDict(self):
    return dict(alpha=self.alpha, beta=self.beta, bounds=list(self.bounds),
                per_category={str(c): list(ab) for c, ab in sorted(self.perCategory.items())})

  @classmethod
  def fromDict(cls, d):
    return cls(d.get('alpha', 0.), d.get('beta', 0.),
               {int(c): tuple(ab) for c, ab in (d.get('per_category') or {}).items()},
               d.get('bounds', (0., 1.)))

  def __repr__(self):
    return f'WeightSet(alpha={self.alpha}, beta={self.beta}, perCategory={self.perCategory})'


class EffectTriple:
  def __init__(self, te, nde, tie):
    self.te, self.nde, self.tie = (array(v, dtype=float) for v in (te, nde, tie))
    if not (self.te.shape == self.nde.shape == self.tie.shape):
      raise ShapeError('effect vectors differ in shape')
    if not allclose(self.te, self.nde+self.tie, rtol=0, atol=1e-9):
      raise NumericError('total effect must equal direct plus indirect effect')


def _sameShape(*ps):
  xs = [asScores(p) for p in ps]
  if [x for x in xs if x.shape != xs[0].shape]:
    raise ShapeError(f'shape mismatch: {[x.shape for x in xs]}')
  return xs


def diffEffect(ya, yb):
  '''
  Elementwise difference ya - yb, the difference measure of all effects.
  '''
  a, b = _sameShape(ya, yb)
  return a-b


def effectTriple(yXMx, yXstarMxstar, yXMxstar):
  '''
  Total, natural direct and total indirect effect from the three potential
  outcomes Y(x, M(x)), Y(x*, M(x*)) and Y(x, M(x*)). The indirect effect is
  the total effect minus the direct effect.
  '''
  _sameShape(yXMx, yXstarMxstar, yXMxstar)
  te = diffEffect(yXMx, yXstarMxstar)
  nde = diffEffect(yXMxstar, yXstarMxstar)
  return EffectTriple(te, nde, te-nde)


def midCorrect(s, w):
  '''
  Linear correction p0 - alpha*p_i - beta*p_t, returned unnormalized.
  '''
  p0, pt, pi = _sameShape(s.p0, s.pt, s.pi)
  return ProbVector(p0 - w.alpha*pi - w.beta*pt, normalized=False,
                    classSpace=s.p0.classSpace)


def tfcdCorrect(s, w):
  '''
  Text-only correction p0 - beta*p_t, needs no image counterfactual.
  '''
  p0, pt = _sameShape(s.p0, s.pt)
  return ProbVector(p0 - w.beta*pt, normalized=False, classSpace=s.p0.classSpace)


def _category(c):
  c = DebiasCategory.parse(c)
  if not c.isRoutable():
    raise DomainError('excluded samples have no debias strategy')
  return c


def mridCorrect(s, c, w):
  '''
  Router-gated correction: only the modality corrections category c selects
  are applied, with that category's weights.
  '''
  c = _category(c)
  if c == DebiasCategory.NO_DEBIAS:
    return s.p0
  a, b = w.categoryWeights(c)
  p0, pt, pi = _sameShape(s.p0, s.pt, s.pi)
  if c == DebiasCategory.IMAGE_DEBIAS:
    out = p0 - a*pi
  elif c == DebiasCategory.TEXT_DEBIAS:
    out = p0 - b*pt
  else:
    out = p0 - a*pi - b*pt
  return ProbVector(out, normalized=False, classSpace=s.p0.classSpace)


def moeCombine(pGe, pIde, pTde, c, w):
  '''
  Combine the selected experts. The debiased experts contribute with a plus
  sign: pGE, pGE + a1*pIDE, pGE + b2*pTDE or pGE + a3*pIDE + b3*pTDE.
  '''
  c = _category(c)
  if pGe is None:
    raise RoutingError('the general expert output is always required')
  if c == DebiasCategory.NO_DEBIAS:
    return pGe
  if c.needsImage() and pIde is None:
    raise RoutingError(f'category {c.name} needs the image-debias expert output')
  if c.needsText() and pTde is None:
    raise RoutingError(f'category {c.name} needs the text-debias expert output')
  a, b = w.categoryWeights(c)
  out = asScores(pGe).copy()
  if c.needsImage():
    out = out + a*_sameShape(pGe, pIde)[1]
  if c.needsText():
    out = out + b*_sameShape(pGe, pTde)[1]
  return ProbVector(out, normalized=False,
                    classSpace=pGe.classSpace if isinstance(pGe, ProbVector) else None)


def biasRemovedLoss(s, w, y):
  '''
  Cross-entropy of the softmax-normalized corrected prediction at class y.
  '''
  x = asScores(midCorrect(s, w))
  y = int(y)
  if not 0 <= y < len(x):
    raise DomainError(f'class index {y} outside [0, {len(x)})')
  if not isfinite(x).all():
    raise NumericError(f'corrected scores are not finite: {x}')
  loss = float(logsumexp(x) - x[y])
  if not isfinite(loss):
    raise NumericError('bias-removed loss is not finite')
  return loss


def correctedProbabilities(p):
  '''
  Probability view of a corrected vector, for reporting only; decisions are
  taken on the raw corrected scores.
  '''
  return normalize(p)
