'''
Corpus statistics of feature-label co-occurrence. Text features are
lower-cased word tokens and hashtags, image features the manifest's image
tags; each counts at most once per sample.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import re

from ..common import *
from ..metrics import LiftTable, lift
from .. import io

DEFAULT_TOKEN_PATTERN = r'#?\w+'


def sampleFeatures(sample, tokenPattern=DEFAULT_TOKEN_PATTERN, useTags=True):
  features = set(t.lower() for t in re.findall(tokenPattern, sample.text))
  if useTags:
    features |= set(f'img:{t.lower()}' for t in sample.tags)
  return features


def liftTable(samples, classSpace, minSupport=5, tokenPattern=DEFAULT_TOKEN_PATTERN,
              useTags=True):
  '''
  Lift of every feature for every label, features below minSupport
  occurrences are left out.
  '''
  samples = [s for s in samples if s.label is not None]
  if not samples:
    raise DataError('lift analysis needs a nonempty labeled corpus')
  total = len(samples)
  labelCounts = [0]*classSpace.K
  featureCounts, joint = {}, {}
  for s in samples:
    labelCounts[s.label] += 1
    for f in sampleFeatures(s, tokenPattern, useTags):
      featureCounts[f] = featureCounts.get(f, 0)+1
      joint[(f, s.label)] = joint.get((f, s.label), 0)+1

  entries = []
  for f, n in featureCounts.items():
    if n < minSupport:
      continue
    for k, label in enumerate(classSpace.labels):
      if labelCounts[k] == 0:
        continue
      entries.append((f, label, lift(joint.get((f, k), 0), n, labelCounts[k], total), n))
  table = LiftTable(entries)
  io.verb(f'lift table over {total} samples: {len(featureCounts)} features, '
          f'{len(set(e[0] for e in table))} above support {minSupport}')
  return table
