#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


import unittest

from multimodal_debias.core import originalView
from multimodal_debias.categorize import DebiasCategory
from multimodal_debias.mediation import WeightSet
from multimodal_debias.router import trainRouter, route
from multimodal_debias.tuning import tuneMid, tuneMoe
from multimodal_debias.backend import predict, StoreFeaturizer
from multimodal_debias.datasets import SyntheticSpec, generateSynthetic, emitTrainingSets
from multimodal_debias.pipeline import *

ZERO = WeightSet(0., 0., {1: (0., 0.), 2: (0., 0.), 3: (0., 0.)})
METRIC = 'macro'
# allowed shortfall of an ordering, in F1 points
TOLERANCE = 0.5


class TestSyntheticDebiasing(unittest.TestCase):
  '''
  Shortcuts agree with the label in 90% of the training samples and
  disagree in 90% of the validation and test samples.
  '''
  @classmethod
  def setUpClass(cls):
    data = generateSynthetic(SyntheticSpec(nTrain=2000, nValid=500, nTest=500, rhoTrain=.8,
                                           rhoTest=-.8, seed=0))
    cls.data = data
    cls.manifest = data.manifest
    cls.valid = cls.manifest.split('valid')
    cls.test = cls.manifest.split('test')
    cls.probe = probeScenarios(data.model, cls.manifest.samples, data.assets)
    recs, _, _ = categorizeSamples(cls.probe, cls.manifest.samples, .1)
    cls.categories = categoryMap(recs)

  def score(self, result):
    return 100*evaluateMethod(result, self.manifest.classSpace, metric=METRIC)['score']

  def run_(self, method, **kwargs):
    return runMethod(method, self.test, self.data.model, self.data.assets, **kwargs)

  def test_midBeatsBiasedBaseline(self):
    scenarios = [self.probe.scenario(s.id) for s in self.valid]
    weights, trace = tuneMid(scenarios, [s.label for s in self.valid], METRIC, budget=50)
    base = self.score(self.run_('base'))
    mid = self.score(self.run_('mid', weights=weights))
    self.assertGreaterEqual(mid - base, 5., msg=f'base {base:.2f}, mid {mid:.2f}, {weights}')

  def test_expertOrdering(self):
    sets, _ = emitTrainingSets(self.manifest, self.categories, self.data.assets,
                               scenarios=self.probe.scenarios)
    experts = trainExperts(sets, self.manifest, StoreFeaturizer(self.data.store))

    def routable(split):
      return [s for s in self.manifest.split(split)
                if DebiasCategory.parse(self.categories[s.id]).isRoutable()]
    train, valid = routable('train'), routable('valid')
    trainFeatures = routerFeatures(train, self.probe, self.data.assets)
    validFeatures = routerFeatures(valid, self.probe, self.data.assets)
    router = trainRouter([trainFeatures[s.id] for s in train],
                         [self.categories[s.id] for s in train],
                         validation=([validFeatures[s.id] for s in valid],
                                     [self.categories[s.id] for s in valid]))

    views = [originalView(s) for s in self.valid]
    outputs = {r: [predict(experts[r], v) for v in views] for r in ('GE', 'IDE', 'TDE')}
    truths = [s.label for s in self.valid]
    allValid = routerFeatures(self.valid, self.probe, self.data.assets)
    trainedRoutes = [route(router, allValid[s.id]) for s in self.valid]
    oracleRoutes = [oracleRoute(self.categories, s.id) for s in self.valid]
    wTrained, _ = tuneMoe(outputs['GE'], outputs['IDE'], outputs['TDE'], truths, trainedRoutes,
                          METRIC, budget=30)
    wOracle, _ = tuneMoe(outputs['GE'], outputs['IDE'], outputs['TDE'], truths, oracleRoutes,
                         METRIC, budget=30)

    geOnly = self.score(self.run_('mme-jd', weights=ZERO, experts=experts,
                                  oracleCategories=self.categories))
    trained = self.score(self.run_('mme-jd', weights=wTrained, experts=experts, router=router))
    oracle = self.score(self.run_('mme-jd', weights=wOracle, experts=experts,
                                  oracleCategories=self.categories))
    msg = f'GE only {geOnly:.2f}, trained router {trained:.2f}, oracle router {oracle:.2f}'
    self.assertGreaterEqual(trained - geOnly, -TOLERANCE, msg=msg)
    self.assertGreaterEqual(oracle - trained, -TOLERANCE, msg=msg)


if __name__ == '__main__':
  unittest.main()
