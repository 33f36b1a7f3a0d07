#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


from numpy import *
import unittest
import tempfile
import json
import os

from multimodal_debias.common import *
from multimodal_debias.core import Sample
from multimodal_debias.counterfactuals.image import *


def randomImage(H=8, W=8, seed=0):
  return random.default_rng(seed).integers(0, 256, size=(H, W, 3)).astype(uint8)


def hotspotRecord(sampleId='s', patchH=4, patchW=4, i=2, j=3, layers=4, heads=2, tokens=3):
  values = full((layers, heads, tokens, patchH*patchW), .01)
  values[..., patchIndex(i, j, patchW)-1] = 1.
  return AttentionRecord(sampleId, patchH, patchW, values)


class TestPatchIndex(unittest.TestCase):
  def test_bijective(self):
    for P in range(1, 65):
      idx = {patchIndex(i, j, P) for i in range(1, P+1) for j in range(1, P+1)}
      self.assertEqual(idx, set(range(1, P*P+1)))

  def test_outOfRange(self):
    with self.assertRaises(IndexError):
      patchIndex(1, 5, 4)
    with self.assertRaises(IndexError):
      patchIndex(0, 1, 4)
    with self.assertRaises(IndexError):
      patchIndex(1, 1, 0)


class TestAttentionRecord(unittest.TestCase):
  def test_validation(self):
    with self.assertRaises(ShapeError):
      AttentionRecord('s', 2, 2, zeros((1, 1, 1, 5)))
    with self.assertRaises(ShapeError):
      AttentionRecord('s', 2, 2, zeros((3, 2)))
    with self.assertRaises(DomainError):
      AttentionRecord('s', 2, 2, -ones((2, 2)))
    with self.assertRaises(NumericError):
      AttentionRecord('s', 2, 2, full((2, 2), nan))

  def test_poolingKeepsPatchOrder(self):
    rec = hotspotRecord()
    for mode in (MEAN_LAYERS, MEAN_ALL):
      grid = poolAttention(rec, mode=mode)
      self.assertEqual(grid.shape, (4, 4))
      self.assertEqual(unravel_index(argmax(grid), grid.shape), (1, 2))

  def test_poolingValues(self):
    values = random.default_rng(3).random((5, 2, 3, 4))
    rec = AttentionRecord('s', 2, 2, values)
    grid = poolAttention(rec, layerWindow=(1, 4))
    self.assertTrue(allclose(grid.ravel(), values[1:4].sum(axis=(1, 2)).mean(axis=0)))
    # default window covers the last three layers
    self.assertTrue(allclose(poolAttention(rec),
                             values[2:5].sum(axis=(1, 2)).mean(axis=0).reshape(2, 2)))
    with self.assertRaises(ConfigError):
      poolAttention(rec, layerWindow=(3, 3))
    with self.assertRaises(ConfigError):
      poolAttention(rec, layerWindow=(0, 6))


class TestMaskStages(unittest.TestCase):
  def test_normalize(self):
    self.assertTrue(array_equal(normalizeMask(full((3, 3), 4.)), zeros((3, 3))))
    g = normalizeMask([[1., 3.], [2., 5.]])
    self.assertEqual(g.min(), 0.)
    self.assertEqual(g.max(), 1.)

  def test_enhance(self):
    self.assertTrue(allclose(enhanceMask([[.2, .8]], 1.5), [[.3, 1.]]))
    with self.assertRaises(ConfigError):
      enhanceMask([[.2]], 0)

  def test_kernel(self):
    k = gaussianKernel(5, 2.)
    self.assertAlmostEqual(k.sum(), 1.)
    self.assertTrue(allclose(k, k.T))
    with self.assertRaises(ConfigError):
      gaussianKernel(4)

  def test_smoothKeepsConstantAndShape(self):
    self.assertTrue(allclose(smoothMask(full((4, 5), .5)), .5))
    with self.assertRaises(ConfigError):
      smoothMask(zeros((2, 2)), kernelSize=3)

  def test_smoothImpulse(self):
    grid = zeros((5, 5))
    grid[2, 2] = 1.
    out = smoothMask(grid, kernelSize=3, sigma=1.)
    k = gaussianKernel(3, 1.)
    self.assertAlmostEqual(out[2, 2], k[1, 1], delta=1e-12)
    # hand evaluated: exp(0) / (1 + 2 exp(-1/2))^2
    self.assertAlmostEqual(out[2, 2], 1/(1+2*exp(-.5))**2, delta=1e-12)
    self.assertTrue(allclose(out[1:4, 1:4], k, rtol=0, atol=1e-12))

  def test_smoothConservesInteriorMass(self):
    rng = random.default_rng(3)
    for size, sigma in ((3, 1.), (5, .8), (5, 2.)):
      grid = zeros((12, 10))
      r = size//2
      grid[r:12-r, r:10-r] = rng.random((12-2*r, 10-2*r))
      out = smoothMask(grid, kernelSize=size, sigma=sigma)
      self.assertAlmostEqual(out.sum(), grid.sum(), delta=1e-9, msg=f'{size}, {sigma}')

  def test_resizeAlignsCorners(self):
    out = resizeMask([[0., 1.], [0., 1.]], 3, 3)
    self.assertTrue(allclose(out, [[0, .5, 1]]*3))


class TestBlend(unittest.TestCase):
  def setUp(self):
    self.image = randomImage()

  def test_zeroMaskKeepsImage(self):
    out = blend(self.image, AlphaMask(zeros((8, 8))))
    self.assertTrue(array_equal(out, self.image))

  def test_fullMaskGivesFill(self):
    out = blend(self.image, AlphaMask(ones((8, 8))), fill=(10, 20, 30))
    self.assertTrue((out == array([10, 20, 30], dtype=uint8)).all())

  def test_roundsHalfUp(self):
    out = blend(array([[1]], dtype=uint8), [[.5]], fill=0)
    self.assertEqual(int(out[0, 0]), 1)

  def test_raisingMaskNeverMovesAwayFromFill(self):
    rng = random.default_rng(5)
    fill = array([10, 200, 128])
    for _ in range(50):
      low = rng.random((8, 8))
      high = clip(low + rng.random((8, 8))*(rng.random((8, 8)) < .5), 0, 1)
      before = abs(blend(self.image, low, fill=tuple(fill)).astype(int) - fill)
      after = abs(blend(self.image, high, fill=tuple(fill)).astype(int) - fill)
      self.assertTrue((after <= before).all())

  def test_sizeMismatch(self):
    with self.assertRaises(ShapeError):
      blend(self.image, zeros((4, 4)))

  def test_alphaMaskDomain(self):
    with self.assertRaises(DomainError):
      AlphaMask([[1.5]])


class TestCounterfactualPipeline(unittest.TestCase):
  def setUp(self):
    self.image = randomImage(16, 16)

  def test_uniformAttentionKeepsImage(self):
    rec = AttentionRecord('s', 4, 4, ones((2, 2, 2, 16)))
    out = generateCounterfactualImage(self.image, rec)
    self.assertTrue(array_equal(out, self.image))

  def test_hotspotIsOccluded(self):
    rec = hotspotRecord()
    mask = buildAlphaMask(rec, 16, 16)
    self.assertTrue(((mask.grid >= 0) & (mask.grid <= 1)).all())
    out = generateCounterfactualImage(self.image, rec, MaskParams(fill=128))
    self.assertEqual(out.dtype, uint8)
    self.assertEqual(out.shape, self.image.shape)
    # patch row 2, column 3 covers pixels 4..7 x 8..11
    self.assertGreater(mask.grid[4:8, 8:12].mean(), mask.grid[12:, :4].mean())
    self.assertFalse(array_equal(out, self.image))

  def test_deterministic(self):
    rec = hotspotRecord()
    a = generateCounterfactualImage(self.image, rec)
    b = generateCounterfactualImage(self.image, rec)
    self.assertTrue(array_equal(a, b))
    self.assertEqual(buildAlphaMask(rec, 16, 16).provenance,
                     buildAlphaMask(rec, 16, 16).provenance)

  def test_stageErrors(self):
    rec = hotspotRecord()
    with self.assertRaises(StageError) as cm:
      generateCounterfactualImage(self.image, rec, MaskParams(kernelSize=5))
    self.assertEqual(cm.exception.stage, 'smooth')
    with self.assertRaises(StageError) as cm:
      generateCounterfactualImage(self.image, rec, MaskParams(layerWindow=(2, 9)))
    self.assertEqual(cm.exception.stage, 'pool')
    with self.assertRaises(ConfigError):
      MaskParams(poolMode='max')


class TestFiles(unittest.TestCase):
  def test_attentionRoundTrip(self):
    rec = hotspotRecord()
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'att', 's.npz')
      saveAttentionRecord(path, rec)
      loaded = loadAttentionRecord(path)
    self.assertEqual(loaded.sampleId, 's')
    self.assertTrue(array_equal(loaded.values, rec.values))
    self.assertEqual(loaded.fingerprint(), rec.fingerprint())

  def test_fingerprintMismatch(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 's.json')
      with open(path, 'w') as f:
        json.dump(dict(sample_id='s', patch_h=1, patch_w=2, values=[[.1, .2]],
                       fingerprint='0000'), f)
      with self.assertRaises(SchemaError):
        loadAttentionRecord(path)
      with self.assertRaises(DataError):
        loadAttentionRecord(os.path.join(d, 'missing.npz'))

  def test_counterfactualForSample(self):
    with tempfile.TemporaryDirectory() as d:
      imagePath = os.path.join(d, 'img', 'a.png')
      saveImage(imagePath, randomImage(16, 16))
      saveAttentionRecord(os.path.join(d, 'att', 'a.npz'), hotspotRecord('a'))
      target = counterfactualForSample(Sample('a', 'x', imagePath), os.path.join(d, 'att'))
      self.assertEqual(target, os.path.join(d, 'img', 'a.spurious.png'))
      self.assertEqual(loadImage(target).shape, (16, 16, 3))
      self.assertIsNone(counterfactualForSample(Sample('b', 'x', imagePath.replace('a.png', 'b.png')),
                                                os.path.join(d, 'att')))
      self.assertIsNone(counterfactualForSample(Sample('c', 'text only'), d))


if __name__ == '__main__':
  unittest.main()
