'''
Pipeline stages on in-memory objects: probing the scenario views, turning
probes into categories, router features and trained experts, and running
each debias method on a split. File handling lives in the command line
layer, these functions only compute.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from ..common import *
from ..core import ProbVector, originalView, argTop
from ..mediation import ScenarioOutputs, midCorrect, tfcdCorrect, mridCorrect, moeCombine
from ..categorize import DebiasCategory, categorizeDataset
from ..metrics import ConfusionMatrix, predictionReport, evalScore, perCategoryError
from ..router import featurize, route
from ..backend.predictors import predict
from ..backend.experts import trainToyExpert, StoreFeaturizer, HashingFeaturizer
from .. import io
from .workers import mapSamples

METHODS = ('base', 'tfcd', 'mid', 'mrid', 'mctd-eval', 'mme-jd')
EXPERT_ROLES = ('GE', 'IDE', 'TDE', 'MCTD')
_BACKEND_FAILURES = (BackendError, ProtocolError)


class ProbeResult:
  '''
  Original, text-spurious and image-spurious predictions per sample. A
  sample whose counterfactual is missing only has the predictions of the
  views it has.
  '''
  def __init__(self):
    self.originals = {}
    self.textSpurious = {}
    self.imageSpurious = {}
    self.problems = []

  @property
  def scenarios(self):
    '''sample id -> ScenarioOutputs of the completely probed samples'''
    return {i: ScenarioOutputs(p0, self.textSpurious[i], self.imageSpurious[i])
              for i, p0 in self.originals.items()
                if i in self.textSpurious and i in self.imageSpurious}

  def scenario(self, sampleId):
    if sampleId in self.originals and sampleId in self.textSpurious \
          and sampleId in self.imageSpurious:
      return ScenarioOutputs(self.originals[sampleId], self.textSpurious[sampleId],
                             self.imageSpurious[sampleId])
    return None

  def toRecords(self, splits=None):
    recs = []
    for i, p0 in self.originals.items():
      rec = dict(sample_id=i, p0=p0.tolist(),
                 pt=self.textSpurious[i].tolist() if i in self.textSpurious else None,
                 pi=self.imageSpurious[i].tolist() if i in self.imageSpurious else None)
      if splits is not None:
        rec['split'] = splits.get(i)
      recs.append(rec)
    return recs

  @classmethod
  def fromRecords(cls, recs, classSpace=None):
    result = cls()
    for rec in recs:
      i = rec['sample_id']
      result.originals[i] = ProbVector(rec['p0'], normalized=True, classSpace=classSpace)
      if rec.get('pt') is not None:
        result.textSpurious[i] = ProbVector(rec['pt'], normalized=True, classSpace=classSpace)
      if rec.get('pi') is not None:
        result.imageSpurious[i] = ProbVector(rec['pi'], normalized=True, classSpace=classSpace)
    return result

  def merge(self, other):
    self.originals.update(other.originals)
    self.textSpurious.update(other.textSpurious)
    self.imageSpurious.update(other.imageSpurious)
    self.problems += other.problems
    return self


def _raiseBackendFailure(results):
  for r in results:
    if isinstance(r, _BACKEND_FAILURES):
      raise r


def probeScenarios(predictor, samples, assets, cache=None, ledger=None, ledgerKey='probe',
                   workers=1):
  '''
  Predict the original view and both spurious-only views of every sample.
  Missing counterfactuals flag the sample and skip that view; a backend
  failure aborts after the finished predictions reached the cache.
  '''
  samples = list(samples)

  def probe(s):
    p0 = predict(predictor, originalView(s), cache, ledger, ledgerKey)
    tv, iv = assets.textView(s), assets.imageView(s)
    pt = None if tv is None else predict(predictor, tv, cache, ledger, ledgerKey)
    pi = None if iv is None else predict(predictor, iv, cache, ledger, ledgerKey)
    return p0, pt, pi

  results = mapSamples(probe, samples, workers, label='probe')
  _raiseBackendFailure(results)
  probe = ProbeResult()
  for s, r in zip(samples, results):
    if isinstance(r, Exception):
      if not isinstance(r, DebiasError):
        raise r
      probe.problems.append(DataError(f'sample "{s.id}" could not be probed: {r}'))
      io.warn(str(probe.problems[-1]), logOnly=True)
      continue
    p0, pt, pi = r
    probe.originals[s.id] = p0
    if pt is not None:
      probe.textSpurious[s.id] = pt
    if pi is not None:
      probe.imageSpurious[s.id] = pi
    missing = [name for name, p in (('text', pt), ('image', pi)) if p is None]
    if missing:
      probe.problems.append(DataError(f'sample "{s.id}" has no counterfactual '
                                      f'{" and ".join(missing)}'))
      io.warn(str(probe.problems[-1]), logOnly=True)
  if ledger is not None:
    io.info(f'probed {len(samples)} samples, backend calls: {ledger.summary()}')
  return probe


def categorizeSamples(probe, samples, epsilon=0.1):
  '''
  Categorization records of the labeled samples, see categorizeDataset.
  '''
  samples = [s for s in samples if s.label is not None]
  scenarios = {s.id: probe.scenario(s.id) for s in samples}
  return categorizeDataset(scenarios, {s.id: s.label for s in samples}, epsilon)


def categoryMap(categorization):
  return {r.sampleId: r.category for r in categorization}


def oracleRoute(categories, sampleId):
  '''
  Route by the categorization, samples without a routable category take
  the general path.
  '''
  c = DebiasCategory.parse(categories.get(sampleId, DebiasCategory.NO_DEBIAS))
  return c if c.isRoutable() else DebiasCategory.NO_DEBIAS


def routerFeatures(samples, probe, assets, maskToken='[MASK]', embeddings=None):
  '''
  sample id -> RouterFeatures of every completely probed sample, taken from
  the embedding map where one is given.
  '''
  result = {}
  for s in samples:
    if embeddings is not None:
      if s.id in embeddings:
        result[s.id] = embeddings[s.id]
      continue
    sc = probe.scenario(s.id)
    if sc is not None:
      result[s.id] = featurize(s, sc, assets.spuriousTexts.get(s.id), maskToken)
  return result


def expertFeaturizer(store=None):
  return HashingFeaturizer() if store is None else StoreFeaturizer(store)


def trainExperts(trainingSets, manifest, featurizer, epochs=300, learningRate=0.5,
                 roles=EXPERT_ROLES):
  '''
  Train one toy expert per role from its emitted training set.
  '''
  experts = {}
  for role in roles:
    if role not in trainingSets:
      raise DataError(f'no training set for expert {role}, run "multimodal-debias emit" first')
    experts[role] = trainToyExpert(role, trainingSets[role].views(manifest), manifest.classSpace,
                                   featurizer, epochs, learningRate)
  return experts


class MethodResult:
  '''
  Decisions of one method on a list of samples, in sample order.
  '''
  def __init__(self, method, samples):
    self.method = method
    self.ids = [s.id for s in samples]
    self.truths = [s.label for s in samples]
    self.scores = []
    self.predictions = []
    self.routes = []
    self.uncorrected = 0
    self.problems = []

  def __len__(self):
    return len(self.ids)


def _needs(method, predictor, weights, router, experts, oracle):
  if method not in METHODS:
    raise ConfigError(f'unknown method "{method}", expected one of {METHODS}')
  if method in ('base', 'tfcd', 'mid', 'mrid') and predictor is None:
    raise ConfigError(f'method {method} needs a backend predictor')
  if method in ('tfcd', 'mid', 'mrid', 'mme-jd') and weights is None:
    raise DataError(f'method {method} needs debias weights, run "multimodal-debias tune" first')
  if method in ('mrid', 'mme-jd') and not oracle and router is None:
    raise DataError(f'method {method} needs a router, run "multimodal-debias train-router" '
                    'first or use --oracle-router')
  if method == 'mctd-eval' and 'MCTD' not in (experts or {}):
    raise DataError('method mctd-eval needs the MCTD expert, '
                    'run "multimodal-debias train-experts" first')
  if method == 'mme-jd':
    missing = [r for r in ('GE', 'IDE', 'TDE') if r not in (experts or {})]
    if missing:
      raise DataError(f'method mme-jd needs the experts {missing}, '
                      'run "multimodal-debias train-experts" first')
    if not oracle and predictor is None:
      raise ConfigError('method mme-jd with a trained router needs a backend predictor')


def runMethod(method, samples, predictor=None, assets=None, weights=None, router=None,
              experts=None, oracleCategories=None, cache=None, ledger=None, workers=1,
              maskToken='[MASK]', embeddings=None):
  '''
  Run one debias method on the samples. Backend calls are booked under the
  method name, the router's scenario probes of mme-jd under "mme-jd:router".

  Arguments:
  ==========
  method : str
    base, tfcd, mid, mrid, mctd-eval or mme-jd.

  oracleCategories : dict or None
    sample id -> category. If given, mrid and mme-jd route by it instead of
    the router.

  Samples missing a counterfactual the method needs keep their original
  prediction (base predictor or general expert) and are counted as
  uncorrected.
  '''
  samples = list(samples)
  oracle = oracleCategories is not None
  _needs(method, predictor, weights, router, experts, oracle)

  def viewPredict(p, view, key=method):
    return predict(p, view, cache, ledger, key)

  def probeAll(s, key):
    p0 = viewPredict(predictor, originalView(s), key)
    tv, iv = assets.textView(s), assets.imageView(s)
    pt = None if tv is None else viewPredict(predictor, tv, key)
    pi = None if iv is None else viewPredict(predictor, iv, key)
    return p0, pt, pi

  def routeOf(s, sc):
    if oracle:
      return oracleRoute(oracleCategories, s.id)
    if embeddings is not None and s.id in embeddings:
      return route(router, embeddings[s.id])
    if sc is None:
      return DebiasCategory.NO_DEBIAS
    return route(router, featurize(s, sc, assets.spuriousTexts.get(s.id), maskToken))

  def run(s):
    # returns (scores, route or None, corrected)
    if method == 'base':
      return viewPredict(predictor, originalView(s)), None, True
    if method == 'mctd-eval':
      return viewPredict(experts['MCTD'], originalView(s)), None, True
    if method == 'tfcd':
      p0 = viewPredict(predictor, originalView(s))
      tv = assets.textView(s)
      if tv is None:
        return p0, None, False
      return tfcdCorrect(ScenarioOutputs(p0, viewPredict(predictor, tv), p0), weights), None, True
    if method in ('mid', 'mrid'):
      p0, pt, pi = probeAll(s, method)
      if pt is None or pi is None:
        return p0, (DebiasCategory.NO_DEBIAS if method == 'mrid' else None), False
      sc = ScenarioOutputs(p0, pt, pi)
      if method == 'mid':
        return midCorrect(sc, weights), None, True
      c = routeOf(s, sc)
      return mridCorrect(sc, c, weights), c, True

    # mme-jd
    corrected = True
    if oracle:
      c = oracleRoute(oracleCategories, s.id)
    elif embeddings is not None and s.id in embeddings:
      c = route(router, embeddings[s.id])
    else:
      p0, pt, pi = probeAll(s, 'mme-jd:router')
      corrected = pt is not None and pi is not None
      c = routeOf(s, ScenarioOutputs(p0, pt, pi) if corrected else None)
    view = originalView(s)
    pGe = viewPredict(experts['GE'], view)
    pIde = viewPredict(experts['IDE'], view) if c.needsImage() else None
    pTde = viewPredict(experts['TDE'], view) if c.needsText() else None
    return moeCombine(pGe, pIde, pTde, c, weights), c, corrected

  outputs = mapSamples(run, samples, workers, label=method)
  _raiseBackendFailure(outputs)
  result = MethodResult(method, samples)
  for s, out in zip(samples, outputs):
    if isinstance(out, Exception):
      raise out
    scores, c, corrected = out
    result.scores.append(scores)
    result.predictions.append(argTop(scores))
    result.routes.append(None if c is None else int(c))
    if not corrected:
      result.uncorrected += 1
      result.problems.append(f'sample "{s.id}" lacks a counterfactual, kept uncorrected')
  if result.uncorrected:
    io.warn(f'{method}: {result.uncorrected} sample(s) without counterfactuals kept their '
            'original prediction')
  return result


def evaluateMethod(result, classSpace, categories=None, metric=None):
  '''
  Metrics of a MethodResult on its labeled samples: classification report,
  the tuning metric, per-category error rates and the route distribution.
  '''
  pairs = [(i, t, p) for i, t, p in zip(result.ids, result.truths, result.predictions)
             if t is not None]
  if not pairs:
    raise EmptyEvaluationError(f'no labeled samples to evaluate {result.method} on')
  truths = [t for _, t, _ in pairs]
  preds = [p for _, _, p in pairs]
  cm = ConfusionMatrix.fromPredictions(truths, preds, classSpace.K, labels=classSpace.labels)
  evaluation = dict(method=result.method, samples=len(pairs),
                    report=predictionReport(truths, preds, classSpace.K, classSpace.labels),
                    confusion=cm.tolist(),
                    score=evalScore(truths, preds, classSpace.K, metric),
                    uncorrected=result.uncorrected)
  if categories:
    routable = [(t, p, DebiasCategory.parse(categories[i])) for i, t, p in pairs
                  if i in categories and DebiasCategory.parse(categories[i]).isRoutable()]
    if routable:
      errors = perCategoryError([p for _, p, _ in routable], [t for t, _, _ in routable],
                                [int(c) for _, _, c in routable])
      evaluation['perCategoryError'] = {DebiasCategory(c).name: e for c, e in errors.items()}
  routes = [r for r in result.routes if r is not None]
  if routes:
    evaluation['routes'] = {c.name: len([r for r in routes if r == int(c)])
                              for c in DebiasCategory if c.isRoutable()}
  return evaluation
