'''
Desk-scale experts: linear softmax classifiers on view features, trained by
full-batch gradient descent on the records of an emitted training set.
Original records carry the truth label, counterfactual records the reversed
label, which penalizes accuracy on spurious-only evidence.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import re
import zlib
from scipy.special import softmax, log_softmax

from ..common import *
from ..core import ProbVector, ClassSpace, ORIGINAL
from .. import io
from .. import records
from .predictors import Predictor, SYNTHETIC_SCHEME

ROLES = ('GE', 'IDE', 'TDE', 'MCTD')

_TOKEN = re.compile(r'\[mask\]|#?\w+', re.IGNORECASE)


class HashingFeaturizer:
  '''
  Generic view features for real corpora: hashed bag of text tokens and a
  4x4 RGB thumbnail of the presented image, both zero when the modality is
  masked.
  '''
  schemaId = 'hashing-v1'

  def __init__(self, textDims=64, thumbnail=4):
    self.textDims = int(textDims)
    self.thumbnail = int(thumbnail)

  @property
  def dims(self):
    return self.textDims + 3*self.thumbnail**2

  def _text(self, text):
    out = zeros(self.textDims)
    for tok in _TOKEN.findall((text or '').lower()):
      out[zlib.crc32(tok.encode('utf8')) % self.textDims] += 1
    n = out.sum()
    return out/n if n else out

  def _image(self, path):
    if not path or path.startswith(SYNTHETIC_SCHEME):
      return zeros(3*self.thumbnail**2)
    import PIL.Image
    try:
      with PIL.Image.open(path) as img:
        small = img.convert('RGB').resize((self.thumbnail, self.thumbnail),
                                          PIL.Image.BILINEAR)
        return array(small, dtype=float).reshape(-1)/255
    except OSError as e:
      raise DataError(f'cannot read image {path}: {e}')

  def __call__(self, view):
    return concatenate([self._text(view.text), self._image(view.imagePath)])

  def toDict(self):
    return dict(kind='hashing', text_dims=self.textDims, thumbnail=self.thumbnail)


class StoreFeaturizer:
  '''
  Planted feature vector of a synthetic corpus view.
  '''
  schemaId = 'synthetic-store-v1'

  def __init__(self, store):
    self.store = store

  @property
  def dims(self):
    return self.store.viewDims

  def __call__(self, view):
    return self.store.viewVector(view)

  def toDict(self):
    return dict(kind='synthetic-store')


class ToyExpert(Predictor):
  def __init__(self, role, classSpace, featurizer, weights=None, metadata=None):
    super().__init__(classSpace)
    if role not in ROLES:
      raise ConfigError(f'unknown expert role "{role}", expected one of {ROLES}')
    self.role = role
    self.featurizer = featurizer
    self.weights = zeros((self.K, featurizer.dims+1)) if weights is None else array(weights, dtype=float)
    if self.weights.shape != (self.K, featurizer.dims+1):
      raise ShapeError(f'expert weights have shape {self.weights.shape}, '
                       f'expected {(self.K, featurizer.dims+1)}')
    self.metadata = dict(metadata or {})

  @property
  def id(self):
    # tied to the weights
    return f'toy-{self.role.lower()}-{records.fingerprint(self.weights.tolist(), 8)}'

  def _design(self, X):
    return hstack([X, ones((X.shape[0], 1))])

  def predictView(self, view):
    x = self._design(self.featurizer(view)[None, :])
    return ProbVector(softmax(x @ self.weights.T, axis=1)[0], normalized=True,
                      classSpace=self.classSpace)

  def toDict(self):
    return dict(role=self.role, labels=list(self.classSpace.labels),
                featurizer=self.featurizer.toDict(), weights=self.weights.tolist(),
                metadata=self.metadata)


def trainToyExpert(role, trainingRecords, classSpace, featurizer, epochs=300,
                   learningRate=0.5, l2=1e-4):
  '''
  Fit a ToyExpert by full-batch gradient descent on mean cross-entropy.

  Arguments:
  ==========
  role : str
    'GE', 'IDE', 'TDE' or 'MCTD'.

  trainingRecords : list of (SampleView, target class index)
    Original views with truth labels plus counterfactual views with
    reversed labels.

  epochs : int
    Zero epochs leave the zero initialization, a uniform predictor.
  '''
  trainingRecords = list(trainingRecords)
  if not trainingRecords:
    raise DataError(f'no training records for expert {role}')
  if role in ('IDE', 'TDE', 'MCTD'):
    counterfactual = [v for v, _ in trainingRecords
                        if v.textVariant != ORIGINAL or v.imageVariant != ORIGINAL]
    if not counterfactual:
      io.warn(f'expert {role} has no counterfactual records, it is trained like GE')

  expert = ToyExpert(role, classSpace, featurizer)
  X = expert._design(array([featurizer(v) for v, _ in trainingRecords]))
  y = array([int(t) for _, t in trainingRecords])
  if (y < 0).any() or (y >= classSpace.K).any():
    raise DomainError(f'training targets must be class indices below {classSpace.K}')
  Y = zeros((len(y), classSpace.K))
  Y[arange(len(y)), y] = 1

  W = expert.weights
  losses = []
  for epoch in range(int(epochs)):
    logits = X @ W.T
    P = softmax(logits, axis=1)
    losses.append(float(-(Y*log_softmax(logits, axis=1)).sum()/len(y)))
    grad = (P-Y).T @ X/len(y) + l2*W
    W = W - learningRate*grad
  expert.weights = W
  expert.metadata = dict(epochs=int(epochs), learning_rate=learningRate, l2=l2,
                         records=len(y), final_loss=losses[-1] if losses else None)
  io.verb(f'trained expert {role} on {len(y)} records'
          + (f', final loss {losses[-1]:.4f}' if losses else ''))
  return expert


def saveExpert(path, expert):
  records.writeJson(path, dict(schema='toy-expert', version=records.SCHEMA_VERSION,
                               **expert.toDict()))


def loadExpert(path, store=None):
  d = records.readJson(path)
  if d.get('schema') != 'toy-expert':
    raise SchemaError(f'{path} is not an expert file')
  kind = d['featurizer'].get('kind')
  if kind == 'synthetic-store':
    if store is None:
      raise ConfigError(f'expert {path} needs the synthetic feature store of its corpus')
    featurizer = StoreFeaturizer(store)
  else:
    featurizer = HashingFeaturizer(d['featurizer']['text_dims'], d['featurizer']['thumbnail'])
  return ToyExpert(d['role'], ClassSpace(d['labels']), featurizer, d['weights'], d.get('metadata'))
