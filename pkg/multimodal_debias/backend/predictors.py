'''
The predictor interface every scenario probe goes through, the closed-form
planted-bias model of synthetic datasets and the cached, accounted predict
call.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import os
from atomicwrites import atomic_write

from ..common import *
from ..core import ProbVector, ClassSpace, normalize, ORIGINAL, SPURIOUS
from .cache import cacheKey

SYNTHETIC_SCHEME = 'synthetic://'


class Predictor:
  '''
  Maps a sample view to a normalized probability vector over the class
  space. Implementations must be deterministic for a fixed id and view.
  '''
  id = 'predictor'
  promptVersion = ''

  def __init__(self, classSpace):
    self.classSpace = classSpace

  @property
  def K(self):
    return self.classSpace.K

  def predictView(self, view):
    raise NotImplementedError()


class SyntheticFeatureStore:
  '''
  Planted features of a synthetic corpus, one row per sample.

  Arguments:
  ==========
  ids : list of str

  textSemantic, imageSemantic : (n, semanticDims) float arrays
    The first K dimensions carry the class signal, further ones are noise.

  textSpurious, imageSpurious : (n, spuriousDims) int arrays
    Planted shortcut variables, each taking a class index.
  '''
  def __init__(self, ids, K, textSemantic, imageSemantic, textSpurious, imageSpurious):
    self.ids = [str(i) for i in ids]
    self.index = {sampleId: n for n, sampleId in enumerate(self.ids)}
    if len(self.index) != len(self.ids):
      raise DataError('synthetic feature store has duplicated sample ids')
    self.K = int(K)
    self.textSemantic = array(textSemantic, dtype=float)
    self.imageSemantic = array(imageSemantic, dtype=float)
    self.textSpurious = array(textSpurious, dtype=int64)
    self.imageSpurious = array(imageSpurious, dtype=int64)
    n = len(self.ids)
    for name in ('textSemantic', 'imageSemantic', 'textSpurious', 'imageSpurious'):
      a = getattr(self, name)
      if a.ndim != 2 or a.shape[0] != n:
        raise ShapeError(f'{name} must have one row per sample, got shape {a.shape}')
    if self.textSemantic.shape[1] < self.K or self.imageSemantic.shape[1] < self.K:
      raise ShapeError('semantic features need at least K dimensions')
    if ((self.textSpurious < 0) | (self.textSpurious >= self.K)).any() \
          or ((self.imageSpurious < 0) | (self.imageSpurious >= self.K)).any():
      raise DomainError('spurious variables must be class indices')

  @property
  def semanticDims(self):
    return self.textSemantic.shape[1]

  @property
  def spuriousDims(self):
    return self.textSpurious.shape[1]

  @property
  def viewDims(self):
    return 2*(self.semanticDims + self.spuriousDims*self.K)

  def row(self, sampleId):
    try:
      return self.index[str(sampleId)]
    except KeyError:
      raise DataError(f'sample "{sampleId}" is not part of the synthetic corpus')

  def _oneHot(self, z):
    out = zeros((len(z), self.K))
    out[arange(len(z)), z] = 1
    return out.reshape(-1)

  def modality(self, sampleId, modality, variant):
    '''
    (semantic, spurious one-hot) features a view presents for one modality;
    the spurious variant zeroes the semantic part, masked zeroes both.
    '''
    n = self.row(sampleId)
    sem = (self.textSemantic if modality == 'text' else self.imageSemantic)[n]
    spu = self._oneHot((self.textSpurious if modality == 'text' else self.imageSpurious)[n])
    if variant == ORIGINAL:
      return sem.copy(), spu
    if variant == SPURIOUS:
      return zeros_like(sem), spu
    return zeros_like(sem), zeros_like(spu)

  def viewVector(self, view):
    ts, tu = self.modality(view.base.id, 'text', view.textVariant)
    is_, iu = self.modality(view.base.id, 'image', view.imageVariant)
    return concatenate([ts, tu, is_, iu])

  def save(self, path):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with atomic_write(str(path), mode='wb', overwrite=True) as f:
      savez(f, ids=array(self.ids), K=self.K, text_semantic=self.textSemantic,
            image_semantic=self.imageSemantic, text_spurious=self.textSpurious,
            image_spurious=self.imageSpurious)

  @classmethod
  def load(cls, path):
    if not os.path.exists(path):
      raise DataError(f'synthetic feature file {path} does not exist')
    with load(path, allow_pickle=False) as d:
      return cls([str(i) for i in d['ids']], int(d['K']), d['text_semantic'],
                 d['image_semantic'], d['text_spurious'], d['image_spurious'])


class SyntheticModel(Predictor):
  '''
  Closed-form logistic model of a synthetic corpus. The class logits are
  log(prior) + semanticWeight * (presented semantic signal) + biasStrength *
  spuriousWeight * (presented spurious one-hots). With biasStrength 0 every
  spurious-only view predicts exactly the class priors.
  '''
  def __init__(self, store, classSpace=None, semanticWeight=1.0, spuriousWeight=1.0,
               biasStrength=1.0, priors=None, id='synthetic'):
    super().__init__(classSpace or ClassSpace([str(k) for k in range(store.K)]))
    if self.K != store.K:
      raise ShapeError(f'class space has {self.K} classes, feature store {store.K}')
    self.store = store
    self.semanticWeight = float(semanticWeight)
    self.spuriousWeight = float(spuriousWeight)
    self.biasStrength = float(biasStrength)
    priors = ones(self.K)/self.K if priors is None else array(priors, dtype=float)
    if priors.shape != (self.K,) or (priors <= 0).any() or abs(priors.sum()-1) > 1e-9:
      raise ConfigError(f'class priors must be {self.K} positive numbers summing to one')
    self.priors = priors
    self.id = id

  def logits(self, view):
    K = self.K
    out = log(self.priors).copy()
    for modality, variant in (('text', view.textVariant), ('image', view.imageVariant)):
      sem, spu = self.store.modality(view.base.id, modality, variant)
      out += self.semanticWeight*sem[:K]
      out += self.biasStrength*self.spuriousWeight*spu.reshape(-1, K).sum(axis=0)
    return out

  def predictView(self, view):
    return normalize(ProbVector(self.logits(view), classSpace=self.classSpace))

  def toDict(self):
    return dict(semantic_weight=self.semanticWeight, spurious_weight=self.spuriousWeight,
                bias_strength=self.biasStrength, priors=[float(p) for p in self.priors])


def predict(predictor, view, cache=None, ledger=None, ledgerKey=None):
  '''
  Predict through the cache. The ledger is only charged on a cache miss,
  under ledgerKey (default: the predictor id).
  '''
  key = cacheKey(predictor.id, predictor.promptVersion, view) if cache is not None else None
  if key is not None:
    hit = cache.get(key)
    if hit is not None:
      return ProbVector(hit, normalized=True, classSpace=predictor.classSpace)
  p = predictor.predictView(view)
  if not isinstance(p, ProbVector) or not p.normalized:
    p = normalize(ProbVector(p))
  if len(p) != predictor.K:
    raise ShapeError(f'predictor {predictor.id} returned {len(p)} scores, expected {predictor.K}')
  if ledger is not None:
    ledger.increment(ledgerKey or predictor.id)
  if key is not None:
    cache.put(key, p.tolist(), meta=dict(predictor=predictor.id, sample_id=view.base.id,
                                         text_variant=view.textVariant,
                                         image_variant=view.imageVariant))
  return ProbVector(p.scores, normalized=True, classSpace=predictor.classSpace)
