#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


import unittest
import tempfile
import random
import string
import os

from multimodal_debias.common import *
from multimodal_debias.core import Sample
from multimodal_debias.counterfactuals.text import *


class TestApplyMask(unittest.TestCase):
  def test_sarcasmExample(self):
    self.assertEqual(applyMask('nothing says equality like discrimination',
                               ['equality', 'discrimination']),
                     'nothing says [MASK] like [MASK]')

  def test_longestPhraseFirst(self):
    self.assertEqual(applyMask('that is too much', ['much', 'too much']), 'that is [MASK]')
    self.assertEqual(applyMask('much too much', ['too much', 'much']), '[MASK] [MASK]')

  def test_wholeWordsCaseInsensitive(self):
    self.assertEqual(applyMask('Great, greater, GREAT!', ['great']), '[MASK], greater, [MASK]!')

  def test_emptyPhraseList(self):
    self.assertEqual(applyMask('unchanged text', []), 'unchanged text')
    with self.assertRaises(ConfigError):
      applyMask('x', ['x'], maskToken='')

  def test_annotationObject(self):
    ann = SemanticAnnotation('s1', ['love'])
    self.assertEqual(applyMask('I love mondays', ann, maskToken='<m>'), 'I <m> mondays')

  def test_fuzzIdempotentAndTokenPreserving(self):
    rng = random.Random(7)
    for _ in range(1000):
      vocab = [''.join(rng.choice(string.ascii_lowercase+string.digits)
                       for _ in range(rng.randint(1, 5))) for _ in range(8)]
      words = [rng.choice(vocab) for _ in range(rng.randint(1, 12))]
      words = [w.upper() if rng.random() < .2 else w for w in words]
      phrases = rng.sample(vocab, rng.randint(0, 4))
      text = ' '.join(words)
      once = applyMask(text, phrases)
      self.assertEqual(applyMask(once, phrases), once)
      lowered = {p.lower() for p in phrases}
      expected = ' '.join('[MASK]' if w.lower() in lowered else w for w in words)
      self.assertEqual(once, expected, msg=f'{text!r} {phrases!r}')


class TestExtractorResponse(unittest.TestCase):
  def test_parseLists(self):
    ann = parseExtractorResponse('Main Content Words: [equality, "discrimination"]\n'
                                 'Context Words: [nothing, says, like]', 's1')
    self.assertEqual(ann.sampleId, 's1')
    self.assertEqual(ann.semanticPhrases, ('equality', 'discrimination'))
    self.assertEqual(ann.contextPhrases, ('nothing', 'says', 'like'))

  def test_elementsHeadingAndEmptyList(self):
    ann = parseExtractorResponse('**Main Content Elements:** []')
    self.assertEqual(ann.semanticPhrases, ())
    self.assertEqual(ann.contextPhrases, ())

  def test_duplicatesDropped(self):
    ann = parseExtractorResponse('Main Content Words: [Love, love, hate]')
    self.assertEqual(ann.semanticPhrases, ('Love', 'hate'))

  def test_missingHeading(self):
    with self.assertRaises(ParseError):
      parseExtractorResponse('I cannot help with that.', 's2')

  def test_loadResponsesFlagsFailures(self):
    with tempfile.TemporaryDirectory() as d:
      with open(os.path.join(d, 'a.txt'), 'w') as f:
        f.write('Main Content Words: [sun]')
      with open(os.path.join(d, 'b.txt'), 'w') as f:
        f.write('no list here')
      with self.assertWarns(UserWarning):
        anns, failures = loadExtractorResponses(d, ['a', 'b', 'c'])
    self.assertEqual(list(anns), ['a'])
    self.assertEqual(list(failures), ['b'])


class TestPrompts(unittest.TestCase):
  def test_shippedPrompts(self):
    for name in ('TextAnalysis', 'ImageAnalysis'):
      asset = loadPromptAsset(name)
      rendered = renderPrompt(asset, 'hello %s world')
      self.assertIn("''hello %s world''", rendered)

  def test_slotCount(self):
    with self.assertRaises(TemplateError):
      PromptAsset('two', '%s and %s')
    with self.assertRaises(TemplateError):
      PromptAsset('none', 'no slot, only %%s')
    self.assertEqual(renderPrompt('100%% sure: %s', 'x'), '100%% sure: x')

  def test_unknownPrompt(self):
    with self.assertRaises(ConfigError):
      loadPromptAsset('Poetry')


class TestMaskDataset(unittest.TestCase):
  def setUp(self):
    self.samples = [Sample('a', 'what a lovely day'),
                    Sample('b', 'rain again'),
                    Sample('c', 'no annotation here'),
                    Sample('d', 'empty list')]
    self.annotations = {'a': SemanticAnnotation('a', ['lovely', 'sunshine']),
                        'b': SemanticAnnotation('b', ['snow']),
                        'd': SemanticAnnotation('d', [])}

  def test_maskAndReport(self):
    spurious, report = maskDataset(self.samples, self.annotations)
    self.assertEqual(spurious, {'a': 'what a [MASK] day'})
    self.assertEqual(report['unusable'], ['b', 'd'])
    self.assertEqual(report['unannotated'], ['c'])
    self.assertEqual(report['phrases'], 3)
    self.assertEqual(report['missedPhrases'], 2)
    self.assertAlmostEqual(report['missRate'], 2/3)

  def test_annotationsRoundTrip(self):
    with tempfile.TemporaryDirectory() as d:
      path = os.path.join(d, 'annotations.jsonl')
      saveAnnotations(path, self.annotations.values())
      loaded = loadAnnotations(path)
      self.assertEqual(loaded, self.annotations)
      saveAnnotations(path, [self.annotations['a'], self.annotations['a']])
      with self.assertRaises(DataError):
        loadAnnotations(path)


if __name__ == '__main__':
  unittest.main()
