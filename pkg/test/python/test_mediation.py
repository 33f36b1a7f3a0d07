#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


from numpy import *
import unittest
import math

from multimodal_debias.common import *
from multimodal_debias.core import ProbVector, normalize, argTop
from multimodal_debias.categorize import DebiasCategory, ROUTABLE
from multimodal_debias.mediation import *


def randomScenarios(n=50, K=3, seed=0):
  rng = random.default_rng(seed)
  draw = lambda: normalize(ProbVector(rng.standard_normal(K)))
  return [ScenarioOutputs(draw(), draw(), draw()) for _ in range(n)]


class TestIdentityChain(unittest.TestCase):
  def setUp(self):
    self.scenarios = randomScenarios()
    self.zero = WeightSet(0., 0., {1: (0., 0.), 2: (0., 0.), 3: (0., 0.)})

  def test_midWithZeroWeights(self):
    for s in self.scenarios:
      self.assertTrue(array_equal(midCorrect(s, self.zero).scores, s.p0.scores))

  def test_mridWithZeroWeights(self):
    for s in self.scenarios:
      for c in ROUTABLE:
        self.assertTrue(array_equal(mridCorrect(s, c, self.zero).scores, s.p0.scores))

  def test_moeWithZeroWeights(self):
    for s in self.scenarios:
      for c in ROUTABLE:
        out = moeCombine(s.p0, s.pt, s.pi, c, self.zero)
        self.assertTrue(array_equal(out.scores, s.p0.scores))


class TestCorrections(unittest.TestCase):
  def setUp(self):
    self.s = ScenarioOutputs([.6, .4], [.9, .1], [.7, .3])
    self.w = WeightSet(.5, 1., {1: (.2, 0.), 2: (0., .4), 3: (.1, .3)})

  def test_midCorrect(self):
    out = midCorrect(self.s, self.w)
    self.assertFalse(out.normalized)
    self.assertTrue(allclose(out.scores, [.6-.35-.9, .4-.15-.1]))
    self.assertEqual(argTop(out), 1)

  def test_tfcdCorrect(self):
    self.assertTrue(allclose(tfcdCorrect(self.s, self.w).scores, [-.3, .3]))

  def test_mridUsesCategoryWeights(self):
    s, w = self.s, self.w
    self.assertIs(mridCorrect(s, DebiasCategory.NO_DEBIAS, w), s.p0)
    self.assertTrue(allclose(mridCorrect(s, 1, w).scores, [.6-.2*.7, .4-.2*.3]))
    self.assertTrue(allclose(mridCorrect(s, 2, w).scores, [.6-.4*.9, .4-.4*.1]))
    self.assertTrue(allclose(mridCorrect(s, 3, w).scores, [.6-.07-.27, .4-.03-.03]))

  def test_mridRejectsExclude(self):
    with self.assertRaises(DomainError):
      mridCorrect(self.s, DebiasCategory.EXCLUDE, self.w)

  def test_moeCombine(self):
    ge, ide, tde = ProbVector([.5, .5]), ProbVector([.2, .8]), ProbVector([.6, .4])
    w = self.w
    self.assertIs(moeCombine(ge, None, None, 0, w), ge)
    self.assertTrue(allclose(moeCombine(ge, ide, None, 1, w).scores, [.54, .66]))
    self.assertTrue(allclose(moeCombine(ge, None, tde, 2, w).scores, [.74, .66]))
    self.assertTrue(allclose(moeCombine(ge, ide, tde, 3, w).scores, [.5+.02+.18, .5+.08+.12]))

  def test_moeMissingExpert(self):
    ge = ProbVector([.5, .5])
    with self.assertRaises(RoutingError):
      moeCombine(ge, None, None, DebiasCategory.BOTH_DEBIAS, self.w)
    with self.assertRaises(RoutingError):
      moeCombine(None, ge, ge, DebiasCategory.NO_DEBIAS, self.w)

  def test_shapeMismatch(self):
    with self.assertRaises(ShapeError):
      ScenarioOutputs([.5, .5], [.2, .3, .5], [.5, .5])


class TestWeightSet(unittest.TestCase):
  def test_bounds(self):
    with self.assertRaises(ConfigError):
      WeightSet(1.5, 0.)
    with self.assertRaises(ConfigError):
      WeightSet(0., 0., bounds=(1., 0.))
    with self.assertRaises(ConfigError):
      WeightSet(0., float('nan'))
    with self.assertRaises(ConfigError):
      WeightSet(perCategory={4: (0., 0.)})

  def test_missingCategory(self):
    with self.assertRaises(ConfigError):
      WeightSet().categoryWeights(2)

  def test_dictForm(self):
    w = WeightSet(.25, .5, {3: (.1, .2)})
    self.assertEqual(WeightSet.fromDict(w.toDict()).toDict(), w.toDict())


class TestEffects(unittest.TestCase):
  def test_triple(self):
    t = effectTriple([.9, .1], [.5, .5], [.7, .3])
    self.assertTrue(allclose(t.te, [.4, -.4]))
    self.assertTrue(allclose(t.nde, [.2, -.2]))
    self.assertTrue(allclose(t.tie, [.2, -.2]))

  def test_decompositionOnRandomOutcomes(self):
    rng = random.default_rng(7)
    for _ in range(10000):
      K = int(rng.integers(2, 6))
      yXMx, yXstarMxstar, yXMxstar = rng.dirichlet(ones(K), size=3)
      t = effectTriple(yXMx, yXstarMxstar, yXMxstar)
      self.assertTrue(allclose(t.te, t.nde+t.tie, rtol=0, atol=1e-9))
      self.assertTrue(allclose(t.nde, yXMxstar-yXstarMxstar, rtol=0, atol=1e-12))
      self.assertTrue(allclose(t.tie, yXMx-yXMxstar, rtol=0, atol=1e-12))

  def test_equalOutcomesHaveNoEffect(self):
    t = effectTriple([.3, .7], [.3, .7], [.3, .7])
    for v in (t.te, t.nde, t.tie):
      self.assertTrue((v == 0).all())

  def test_inconsistentTriple(self):
    with self.assertRaises(NumericError):
      EffectTriple([1., 0.], [.5, 0.], [.4, 0.])

  def test_diffEffectShapes(self):
    with self.assertRaises(ShapeError):
      diffEffect([1, 2], [1, 2, 3])


class TestBiasRemovedLoss(unittest.TestCase):
  def test_matchesLogSoftmax(self):
    s = ScenarioOutputs([.6, .4], [.9, .1], [.7, .3])
    w = WeightSet(.5, 1.)
    x = [.6-.35-.9, .4-.15-.1]
    expected = math.log(math.exp(x[0])+math.exp(x[1])) - x[1]
    self.assertAlmostEqual(biasRemovedLoss(s, w, 1), expected)

  def test_classOutOfRange(self):
    s = ScenarioOutputs([.6, .4], [.9, .1], [.7, .3])
    with self.assertRaises(DomainError):
      biasRemovedLoss(s, WeightSet(), 2)


if __name__ == '__main__':
  unittest.main()
