#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


from numpy import *
import unittest
import tempfile
import threading
import json
import os
import httpx

from multimodal_debias.common import *
from multimodal_debias.core import ClassSpace, Sample, originalView, textSpuriousView, \
                                   imageSpuriousView, SampleView, MASKED
from multimodal_debias.metrics import CallLedger
from multimodal_debias.datasets import SyntheticSpec, generateSynthetic, loadSyntheticBackend, ingest
from multimodal_debias.backend import *


def tinyStore(K=2):
  return SyntheticFeatureStore(['a', 'b'], K, [[2., 0.], [0., 1.]], [[0., 1.], [1., 0.]],
                               [[1], [0]], [[0], [0]])


def completion(candidates):
  top = [dict(token=t, logprob=lp, bytes=None) for t, lp in candidates]
  return dict(id='cmpl-1', object='chat.completion', created=0, model='m',
              choices=[dict(index=0, finish_reason='length',
                            message=dict(role='assistant', content=candidates[0][0]),
                            logprobs=dict(content=[dict(token=candidates[0][0],
                                                        logprob=candidates[0][1],
                                                        bytes=None, top_logprobs=top)]))])


class TestPredictionCache(unittest.TestCase):
  def test_persistAndReload(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'cache', 'predictions.jsonl')
      cache = PredictionCache(path, 'fp')
      cache.put('k1', [.2, .8])
      cache.put('k1', [.5, .5])
      cache.put('k2', float32([.4, .6]))
      self.assertEqual(cache.get('k1'), [.2, .8])
      again = PredictionCache(path)
      self.assertEqual(len(again), 2)
      self.assertIn('k2', again)
      self.assertIsNone(again.get('k3'))

  def test_truncatedLineIsDropped(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'predictions.jsonl')
      PredictionCache(path).put('k1', [.2, .8])
      with open(path, 'a') as f:
        f.write('{"key": "k2", "sco')
      with self.assertWarns(UserWarning):
        cache = PredictionCache(path)
      self.assertEqual(len(cache), 1)

  def test_recordWithoutKeyIsDropped(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'predictions.jsonl')
      PredictionCache(path).put('k1', [.2, .8])
      with open(path, 'a') as f:
        f.write('{"scores": [0.5, 0.5]}\n{"key": "k3"}\n[1, 2]\n')
      with self.assertWarns(UserWarning):
        cache = PredictionCache(path)
      self.assertEqual(len(cache), 1)
      self.assertEqual(cache.get('k1'), [.2, .8])

  def test_wrongSchema(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'other.jsonl')
      with open(path, 'w') as f:
        f.write('{"schema": "manifest", "version": 1}\n')
      with self.assertRaises(SchemaError):
        PredictionCache(path)

  def test_concurrentPuts(self):
    cache = PredictionCache()
    def work(offset):
      for k in range(200):
        cache.put(f'k{(offset+k) % 300}', [.5, .5])
    threads = [threading.Thread(target=work, args=(o,)) for o in range(0, 400, 50)]
    [t.start() for t in threads]
    [t.join() for t in threads]
    self.assertEqual(len(cache), 300)

  def test_cacheKeyDependsOnView(self):
    s = Sample('a', 'hello', 'x.png')
    keys = {cacheKey('m', 'v1', originalView(s)), cacheKey('m', 'v1', textSpuriousView(s, 'h')),
            cacheKey('m', 'v2', originalView(s)), cacheKey('n', 'v1', originalView(s))}
    self.assertEqual(len(keys), 4)
    self.assertEqual(cacheKey('m', 'v1', originalView(s)), cacheKey('m', 'v1', originalView(s)))


class TestSyntheticModel(unittest.TestCase):
  def test_logits(self):
    model = SyntheticModel(tinyStore())
    view = originalView(Sample('a', 'x'))
    self.assertTrue(allclose(model.logits(view), log(.5) + array([3., 2.])))
    p = model.predictView(view)
    self.assertTrue(p.normalized)
    self.assertGreater(p[0], p[1])

  def test_unbiasedSpuriousViewsGivePriors(self):
    model = SyntheticModel(tinyStore(), biasStrength=0., priors=[.3, .7])
    s = Sample('b', 'x', 'synthetic://b')
    for view in (textSpuriousView(s, 'x'), imageSpuriousView(s, 'synthetic://b#spurious'),
                 SampleView(s, MASKED, MASKED)):
      self.assertTrue(allclose(model.predictView(view).scores, [.3, .7]))

  def test_storeValidation(self):
    with self.assertRaises(DomainError):
      SyntheticFeatureStore(['a'], 2, [[0., 0.]], [[0., 0.]], [[2]], [[0]])
    with self.assertRaises(ShapeError):
      SyntheticFeatureStore(['a'], 3, [[0., 0.]], [[0., 0.]], [[0]], [[0]])
    with self.assertRaises(DataError):
      tinyStore().row('zzz')
    with self.assertRaises(ConfigError):
      SyntheticModel(tinyStore(), priors=[.5, .6])

  def test_predictChargesLedgerOnMiss(self):
    model = SyntheticModel(tinyStore())
    cache, ledger = PredictionCache(), CallLedger()
    view = originalView(Sample('a', 'x'))
    first = predict(model, view, cache, ledger, 'probe')
    second = predict(model, view, cache, ledger, 'probe')
    self.assertEqual(first, second)
    self.assertEqual(ledger.count('probe'), 1)
    predict(model, view, None, ledger)
    self.assertEqual(ledger.count('synthetic'), 1)


class TestSyntheticCorpus(unittest.TestCase):
  def test_spec(self):
    with self.assertRaises(SpecError):
      SyntheticSpec(K=1)
    with self.assertRaises(SpecError):
      SyntheticSpec(rhoTrain=1.5)
    with self.assertRaises(SpecError):
      SyntheticSpec(K=3, semanticDims=2)
    spec = SyntheticSpec(K=4)
    self.assertAlmostEqual(spec.agreement(0), .25)
    self.assertAlmostEqual(spec.agreement(1), 1.)
    self.assertAlmostEqual(spec.agreement(-1), 0.)
    self.assertEqual(SyntheticSpec.fromDict(spec.toDict()).toDict(), spec.toDict())

  def test_plantedCorrelation(self):
    data = generateSynthetic(SyntheticSpec(nTrain=4000, nValid=0, nTest=4000,
                                           rhoTrain=.8, rhoTest=-.8, seed=5))
    store, manifest = data.store, data.manifest
    for split, expected in (('train', .9), ('test', .1)):
      samples = manifest.split(split)
      rows = [store.row(s.id) for s in samples]
      agree = mean(store.textSpurious[rows, 0] == array([s.label for s in samples]))
      self.assertAlmostEqual(agree, expected, delta=.03)
    s = manifest.samples[0]
    self.assertNotIn(s.text.split()[0], data.assets.spuriousTexts[s.id])
    self.assertTrue(data.assets.spuriousImages[s.id].endswith('#spurious'))

  def test_folderRoundTrip(self):
    spec = SyntheticSpec(nTrain=20, nValid=5, nTest=5, seed=2)
    with tempfile.TemporaryDirectory() as d:
      data = generateSynthetic(spec, d)
      manifest = ingest(os.path.join(d, 'manifest.jsonl'))
      store, model = loadSyntheticBackend(manifest)
    self.assertEqual(len(manifest), 30)
    view = originalView(manifest.samples[7])
    self.assertTrue(allclose(model.predictView(view).scores,
                             data.model.predictView(view).scores))


class TestToyExperts(unittest.TestCase):
  def setUp(self):
    self.data = generateSynthetic(SyntheticSpec(nTrain=300, nValid=0, nTest=0,
                                                rhoTrain=0., semanticSignal=2., seed=1))
    self.featurizer = StoreFeaturizer(self.data.store)
    self.records = [(originalView(s), s.label) for s in self.data.manifest.samples]

  def test_trainingFitsOriginals(self):
    expert = trainToyExpert('GE', self.records, self.data.manifest.classSpace, self.featurizer)
    pred = [int(argmax(expert.predictView(v).scores)) for v, _ in self.records]
    self.assertGreater(mean(array(pred) == array([y for _, y in self.records])), .75)
    self.assertEqual(expert.metadata['records'], 300)

  def test_idFollowsWeights(self):
    classSpace = self.data.manifest.classSpace
    untrained = trainToyExpert('GE', self.records, classSpace, self.featurizer, epochs=0)
    trained = trainToyExpert('GE', self.records, classSpace, self.featurizer, epochs=5)
    self.assertTrue(allclose(untrained.predictView(self.records[0][0]).scores, [.5, .5]))
    self.assertNotEqual(untrained.id, trained.id)
    self.assertTrue(trained.id.startswith('toy-ge-'))

  def test_debiasExpertWithoutCounterfactuals(self):
    with self.assertWarns(UserWarning):
      trainToyExpert('IDE', self.records[:10], self.data.manifest.classSpace, self.featurizer,
                     epochs=1)
    with self.assertRaises(DataError):
      trainToyExpert('GE', [], self.data.manifest.classSpace, self.featurizer)
    with self.assertRaises(ConfigError):
      ToyExpert('Judge', self.data.manifest.classSpace, self.featurizer)

  def test_saveLoad(self):
    expert = trainToyExpert('GE', self.records, self.data.manifest.classSpace, self.featurizer,
                            epochs=20)
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'expert-GE.json')
      saveExpert(path, expert)
      with self.assertRaises(ConfigError):
        loadExpert(path)
      loaded = loadExpert(path, self.data.store)
    self.assertEqual(loaded.id, expert.id)
    view = self.records[3][0]
    self.assertTrue(allclose(loaded.predictView(view).scores, expert.predictView(view).scores))

  def test_hashingFeaturizer(self):
    f = HashingFeaturizer(textDims=16, thumbnail=2)
    s = Sample('a', 'Nice #day [MASK] nice')
    x = f(originalView(s))
    self.assertEqual(len(x), f.dims)
    self.assertEqual(f.dims, 16+12)
    self.assertAlmostEqual(x[:16].sum(), 1.)
    self.assertEqual(f(SampleView(s, MASKED, MASKED)).sum(), 0.)


class TestRemoteBackend(unittest.TestCase):
  def setUp(self):
    self.classSpace = ClassSpace(['No', 'Yes'])
    self.config = EndpointConfig('http://mock.local/v1', 'served-model', retries=3,
                                 retryWaitMin=0, retryWaitMax=0)
    self.view = originalView(Sample('a', 'what a great monday'))
    self.requests = []

  def predictor(self, handler):
    def record(request):
      self.requests.append(request)
      return handler(request)
    return RemotePredictor(self.classSpace, self.config, ['No', 'Yes'],
                           transport=httpx.MockTransport(record))

  def test_verbalizerProbabilities(self):
    p = verbalizerProbabilities({'Yes': log(.6), ' no': log(.2), 'maybe': log(.1)}, ['No', 'Yes'])
    self.assertTrue(allclose(p, [.25, .75]))
    p = verbalizerProbabilities({'yes': 0.}, ['No', 'Yes'])
    self.assertTrue(allclose(p, [1e-6/(1+1e-6), 1/(1+1e-6)]))
    with self.assertRaises(ProtocolError) as cm:
      verbalizerProbabilities({'maybe': 0.}, ['No', 'Yes'], payload={'raw': 1})
    self.assertEqual(cm.exception.payload, {'raw': 1})

  def test_predictReadsFirstTokenScores(self):
    body = completion([('Yes', log(.6)), ('No', log(.2))])
    pred = self.predictor(lambda r: httpx.Response(200, json=body))
    p = pred.predictView(self.view)
    self.assertTrue(allclose(p.scores, [.25, .75]))
    sent = json.loads(self.requests[0].content)
    self.assertEqual(sent['max_tokens'], 1)
    self.assertEqual(sent['temperature'], 0)
    self.assertTrue(sent['logprobs'])
    self.assertIn('what a great monday', sent['messages'][0]['content'][0]['text'])
    self.assertTrue(pred.id.startswith('remote:served-model@'))

  def test_retriesServerErrors(self):
    answers = [httpx.Response(500, json={'error': {'message': 'busy'}}),
               httpx.Response(200, json=completion([('No', 0.)]))]
    pred = self.predictor(lambda r: answers.pop(0))
    p = pred.predictView(self.view)
    self.assertEqual(len(self.requests), 2)
    self.assertGreater(p[0], p[1])

  def test_givesUpAfterRetries(self):
    pred = self.predictor(lambda r: httpx.Response(503, json={'error': {'message': 'down'}}))
    with self.assertRaises(BackendError):
      pred.predictView(self.view)
    self.assertEqual(len(self.requests), 3)

  def test_clientErrorsAreNotRetried(self):
    pred = self.predictor(lambda r: httpx.Response(400, json={'error': {'message': 'bad'}}))
    with self.assertRaises(BackendError):
      pred.predictView(self.view)
    self.assertEqual(len(self.requests), 1)

  def test_missingLogScores(self):
    body = completion([('Yes', 0.)])
    body['choices'][0]['logprobs'] = None
    pred = self.predictor(lambda r: httpx.Response(200, json=body))
    with self.assertRaises(ProtocolError):
      pred.predictView(self.view)

  def test_config(self):
    with self.assertRaises(ConfigError):
      EndpointConfig('', 'm')
    with self.assertRaises(ConfigError):
      RemotePredictor(self.classSpace, self.config, ['Yes'])


if __name__ == '__main__':
  unittest.main()
