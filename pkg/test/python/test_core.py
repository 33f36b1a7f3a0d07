#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


from numpy import *
import unittest
import math

from multimodal_debias.common import *
from multimodal_debias.core import *


class TestNormalize(unittest.TestCase):
  def test_uniform(self):
    p = normalize([0., 0.])
    self.assertTrue(p.normalized)
    self.assertTrue(allclose(p.scores, [.5, .5], rtol=0, atol=1e-15))

  def test_oddsOfThree(self):
    p = normalize([math.log(3), 0.])
    self.assertTrue(allclose(p.scores, [.75, .25], rtol=0, atol=1e-12))

  def test_idempotent(self):
    rng = random.default_rng(0)
    for _ in range(200):
      once = normalize(ProbVector(5*rng.standard_normal(int(rng.integers(2, 8)))))
      twice = normalize(once)
      self.assertTrue(allclose(once.scores, twice.scores, rtol=0, atol=1e-12))
      self.assertAlmostEqual(float(twice.scores.sum()), 1., delta=1e-9)

  def test_keepsClassSpace(self):
    space = ClassSpace(['No', 'Yes'])
    p = normalize(ProbVector([1., 2.], classSpace=space))
    self.assertEqual(p.classSpace, space)

  def test_largeScoresStayFinite(self):
    p = normalize([1000., 999., -1000.])
    self.assertTrue(isfinite(p.scores).all())
    self.assertEqual(argTop(p), 0)

  def test_nonFiniteEntries(self):
    for bad in ([1., nan], [inf, 0.], [-inf, 0., 1.]):
      with self.assertRaises(NumericError, msg=str(bad)):
        normalize(bad)

  def test_emptyVector(self):
    with self.assertRaises(ShapeError):
      normalize([])


class TestArgTop(unittest.TestCase):
  def test_examples(self):
    self.assertEqual(argTop([.2, .8]), 1)
    self.assertEqual(argTop([-.1, -.3, 0.]), 2)

  def test_tiesBreakToLowestIndex(self):
    self.assertEqual(argTop([.5, .5]), 0)
    self.assertEqual(argTop([.1, .45, .45]), 1)

  def test_invariantUnderNormalize(self):
    self.assertEqual(argTop([2., 1.]), argTop(normalize([2., 1.])))
    rng = random.default_rng(1)
    for _ in range(1000):
      p = 3*rng.standard_normal(int(rng.integers(1, 9)))
      self.assertEqual(argTop(normalize(p)), argTop(p), msg=str(p))

  def test_emptyVector(self):
    with self.assertRaises(ShapeError):
      argTop([])


if __name__ == '__main__':
  unittest.main()
