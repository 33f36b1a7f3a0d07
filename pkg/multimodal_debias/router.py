'''
The expert-strategy router: features of the original and counterfactual
views, a multinomial logistic classifier over the four debias categories,
its training with checkpoint selection by F-0.5 on the debiasing classes and
its evaluation.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
from scipy.special import softmax, log_softmax
import os

from .common import *
from .core import asScores, argTop
from .categorize import DebiasCategory, ROUTABLE
from .metrics import (ConfusionMatrix, classificationReport, predictionReport, fBeta,
                      perClassFBeta, routerDiagnostics)
from . import io
from . import records

N_ROUTES = len(ROUTABLE)
ROUTE_LABELS = [c.name for c in ROUTABLE]
SCHEMA = 'router-model'


def defaultSchemaId(K):
  return f'default-K{int(K)}-v1'


class RouterFeatures:
  '''
  Fixed-length feature vector, schemaId names the featurizer that made it.
  '''
  def __init__(self, vector, schemaId):
    self.vector = array(vector, dtype=float).reshape(-1)
    if not isfinite(self.vector).all():
      raise NumericError(f'router features must be finite, got {self.vector}')
    self.vector.setflags(write=False)
    self.schemaId = str(schemaId)

  @property
  def D(self):
    return len(self.vector)

  def __eq__(self, other):
    return (isinstance(other, RouterFeatures) and self.schemaId == other.schemaId
              and array_equal(self.vector, other.vector))

  def __repr__(self):
    return f'RouterFeatures({self.schemaId}, D={self.D})'


def featurize(sample, scenarios, spuriousText=None, maskToken='[MASK]', maskCoverage=None):
  '''
  Default schema: [p0, pt, pi, p0-pt, p0-pi, log(1+tokens of the original
  text), masked share of the counterfactual text tokens, mean alpha-mask
  coverage of the counterfactual image], D = 5K+3.
  '''
  if scenarios is None:
    raise DataError(f'sample "{sample.id}" has no scenario outputs to route on')
  p0, pt, pi = (asScores(p) for p in (scenarios.p0, scenarios.pt, scenarios.pi))
  tokens = sample.text.split()
  maskedShare = 0.
  spuriousTokens = (spuriousText or '').split()
  if spuriousTokens:
    maskedShare = len([t for t in spuriousTokens if maskToken in t])/len(spuriousTokens)
  coverage = 0. if maskCoverage is None else float(maskCoverage)
  return RouterFeatures(concatenate([p0, pt, pi, p0-pt, p0-pi,
                                     [log1p(len(tokens)), maskedShare, coverage]]),
                        defaultSchemaId(len(p0)))


def loadEmbeddingFeatures(path):
  '''
  Externally computed feature vectors, an npz archive with "ids" and a
  (n, D) "vectors" array. Returns sample id -> RouterFeatures.
  '''
  if not os.path.exists(path):
    raise DataError(f'embedding file {path} does not exist')
  with load(path, allow_pickle=False) as d:
    ids, vectors = [str(i) for i in d['ids']], array(d['vectors'], dtype=float)
  if vectors.ndim != 2 or vectors.shape[0] != len(ids):
    raise ShapeError(f'{path}: expected one vector per id, got shape {vectors.shape}')
  schemaId = f'embedding-D{vectors.shape[1]}-{records.fingerprint(os.path.basename(path), 8)}'
  return {i: RouterFeatures(v, schemaId) for i, v in zip(ids, vectors)}


class RouterModel:
  '''
  Softmax classifier over standardized features, weights has one row per
  category and a trailing bias column.
  '''
  def __init__(self, schemaId, weights, mean=None, scale=None, metadata=None):
    self.schemaId = str(schemaId)
    self.weights = array(weights, dtype=float)
    if self.weights.ndim != 2 or self.weights.shape[0] != N_ROUTES:
      raise ShapeError(f'router weights must have {N_ROUTES} rows, got shape {self.weights.shape}')
    D = self.weights.shape[1]-1
    self.mean = zeros(D) if mean is None else array(mean, dtype=float)
    self.scale = ones(D) if scale is None else array(scale, dtype=float)
    if self.mean.shape != (D,) or self.scale.shape != (D,) or (self.scale <= 0).any():
      raise ShapeError(f'standardization does not match {D} router features')
    self.metadata = dict(metadata or {})

  @property
  def D(self):
    return self.weights.shape[1]-1

  def design(self, X):
    X = (atleast_2d(X)-self.mean)/self.scale
    return hstack([X, ones((X.shape[0], 1))])

  def scores(self, features):
    if features.schemaId != self.schemaId:
      raise SchemaError(f'router expects feature schema "{self.schemaId}", '
                        f'got "{features.schemaId}"')
    if features.D != self.D:
      raise SchemaError(f'router expects {self.D} features, got {features.D}')
    return (self.design(features.vector) @ self.weights.T)[0]

  def toDict(self):
    return dict(schema_id=self.schemaId, weights=self.weights.tolist(),
                mean=self.mean.tolist(), scale=self.scale.tolist(), metadata=self.metadata)


def route(model, features):
  '''
  The expert strategy c*: argmax of the class scores, lowest index on ties.
  '''
  return DebiasCategory(argTop(model.scores(features)))


def _matrix(features):
  features = list(features)
  if not features:
    raise DataError('router features are empty')
  schemas = set(f.schemaId for f in features)
  if len(schemas) > 1:
    raise SchemaError(f'router features mix schemas {sorted(schemas)}')
  return array([f.vector for f in features]), features[0].schemaId


def _labels(labels):
  y = []
  for c in labels:
    c = DebiasCategory.parse(c)
    if not c.isRoutable():
      raise DomainError('excluded samples are not router training labels')
    y.append(int(c))
  return array(y, dtype=int64)


def _selectionScore(model, X, y):
  pred = argmax(model.design(X) @ model.weights.T, axis=1)
  return float(mean(perClassFBeta(y, pred, N_ROUTES, 0.5, classes=(1, 2, 3))))


def trainRouter(features, labels, epochs=500, learningRate=0.5, l2=1e-4, classWeighted=False,
                validation=None, checkpointEvery=10):
  '''
  Full-batch gradient descent on softmax cross-entropy from zero weights.

  Arguments:
  ==========
  features, labels : list of RouterFeatures, list of categories 0..3

  classWeighted : bool
    Weight each example inversely to its class frequency.

  validation : (features, labels) or None
    Checkpoints are scored by the mean F-0.5 over categories 1-3 on this
    set, on the training set if None. The first best checkpoint is kept.

  checkpointEvery : int
    Epochs between checkpoints, the final epoch is always a checkpoint.
  '''
  if int(epochs) < 1:
    raise ConfigError(f'router training needs at least one epoch, got {epochs}')
  X, schemaId = _matrix(features)
  y = _labels(labels)
  if len(y) != X.shape[0]:
    raise ShapeError(f'{X.shape[0]} feature vectors but {len(y)} labels')
  n, D = X.shape
  mu = X.mean(axis=0)
  sd = X.std(axis=0)
  sd = where(sd > 0, sd, 1.)
  meta = dict(epochs=int(epochs), learning_rate=float(learningRate), l2=float(l2),
              class_weighted=True if classWeighted else False, examples=int(n),
              class_counts=[int((y == k).sum()) for k in range(N_ROUTES)])

  present = unique(y)
  if len(present) == 1:
    io.warn(f'router training set only contains category {DebiasCategory(int(present[0])).name}, '
            'the router always predicts it')
    W = zeros((N_ROUTES, D+1))
    W[int(present[0]), -1] = 1.
    meta.update(degenerate=True, selection_score=None, loss_history=[])
    return RouterModel(schemaId, W, mu, sd, meta)

  model = RouterModel(schemaId, zeros((N_ROUTES, D+1)), mu, sd)
  Xd = model.design(X)
  Y = zeros((n, N_ROUTES))
  Y[arange(n), y] = 1
  if classWeighted:
    counts = Y.sum(axis=0)
    w = where(counts > 0, n/(len(present)*maximum(counts, 1)), 0.)[y]
  else:
    w = ones(n)
  w = w/w.sum()

  if validation is not None:
    Xv, schemaV = _matrix(validation[0])
    if schemaV != schemaId:
      raise SchemaError(f'validation features use schema "{schemaV}", training "{schemaId}"')
    yv = _labels(validation[1])
  else:
    Xv, yv = X, y

  W = model.weights
  losses, best, bestScore, bestEpoch = [], W.copy(), None, 0
  for epoch in range(1, int(epochs)+1):
    logits = Xd @ W.T
    losses.append(float(-(w*(Y*log_softmax(logits, axis=1)).sum(axis=1)).sum()))
    G = (w[:, None]*(softmax(logits, axis=1)-Y)).T @ Xd + l2*W
    W = W - learningRate*G
    if epoch % int(checkpointEvery) == 0 or epoch == int(epochs):
      model.weights = W
      score = _selectionScore(model, Xv, yv)
      io.verb(f'router checkpoint epoch {epoch}: loss {losses[-1]:.5f}, '
              f'mean F-0.5 (debias classes) {score:.4f}', logOnly=True)
      if bestScore is None or score > bestScore:
        best, bestScore, bestEpoch = W.copy(), score, epoch

  model.weights = best
  meta.update(degenerate=False, selection_score=bestScore, selected_epoch=bestEpoch,
              selection_set='validation' if validation is not None else 'train',
              loss_history=losses)
  model.metadata = meta
  io.info(f'trained router on {n} samples: selected epoch {bestEpoch}, '
          f'mean F-0.5 on debias classes {bestScore:.4f}')
  return model


def routerReport(cm):
  '''
  classificationReport of a router confusion matrix with per-class F-0.5
  and the conservativeness diagnostics.
  '''
  if not isinstance(cm, ConfusionMatrix):
    cm = ConfusionMatrix(cm, labels=ROUTE_LABELS)
  rep = classificationReport(cm)
  f05 = [fBeta(c['precision'], c['recall'], 0.5) for c in rep['perClass']]
  return _withDiagnostics(rep, f05, cm)


def _withDiagnostics(rep, f05, cm):
  for c, f in zip(rep['perClass'], f05):
    c['f05'] = float(f)
  rep['diagnostics'] = routerDiagnostics(cm)
  rep['confusion'] = cm.tolist()
  return rep


def evaluateRouter(model, features, categories):
  '''
  Route every sample and compare with the true categories.
  '''
  features = list(features)
  if not features:
    raise EmptyEvaluationError('router evaluation set is empty')
  y = _labels(categories)
  if len(y) != len(features):
    raise ShapeError(f'{len(features)} feature vectors but {len(y)} categories')
  pred = [int(route(model, f)) for f in features]
  return _withDiagnostics(predictionReport(y, pred, N_ROUTES, labels=ROUTE_LABELS),
                          perClassFBeta(y, pred, N_ROUTES, 0.5),
                          ConfusionMatrix.fromPredictions(y, pred, N_ROUTES, labels=ROUTE_LABELS))


def saveRouter(path, model):
  records.writeJson(path, dict(schema=SCHEMA, version=records.SCHEMA_VERSION, **model.toDict()))


def loadRouter(path):
  d = records.readJson(path)
  if d.get('schema') != SCHEMA:
    raise SchemaError(f'{path} is not a router model file')
  if d.get('version', 0) > records.SCHEMA_VERSION:
    raise SchemaError(f'{path}: router model version {d["version"]} is newer than supported')
  return RouterModel(d['schema_id'], d['weights'], d.get('mean'), d.get('scale'), d.get('metadata'))
