'''
Dataset manifests (samples, class space, split assignment) and the
counterfactual assets of a dataset.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os

from ..common import *
from ..core import ClassSpace, Sample, textSpuriousView, imageSpuriousView
from ..backend.predictors import SYNTHETIC_SCHEME
from ..counterfactuals.image import counterfactualImagePath
from .. import io
from .. import records

SPLITS = ('train', 'valid', 'test')
MANIFEST_SCHEMA = 'manifest'
ASSETS_SCHEMA = 'counterfactuals'


class DatasetManifest:
  def __init__(self, name, classSpace, samples, splits=None, provenance=None, root=None):
    self.name = str(name)
    self.classSpace = classSpace
    self.samples = list(samples)
    self.provenance = dict(provenance or {})
    self.root = root
    self._byId = {}
    for s in self.samples:
      if s.id in self._byId:
        raise DataError(f'duplicated sample id "{s.id}"')
      if s.label is not None and s.label >= classSpace.K:
        raise DataError(f'sample "{s.id}" has label index {s.label} outside the class space')
      self._byId[s.id] = s
    splits = dict(splits or {})
    self.splits = {s.id: splits.get(s.id, 'train') for s in self.samples}
    bad = [v for v in self.splits.values() if v not in SPLITS]
    if bad:
      raise DataError(f'unknown split "{bad[0]}", expected one of {SPLITS}')

  def __len__(self):
    return len(self.samples)

  def sample(self, sampleId):
    try:
      return self._byId[sampleId]
    except KeyError:
      raise DataError(f'sample "{sampleId}" is not part of dataset "{self.name}"')

  def split(self, name):
    if name is None:
      return list(self.samples)
    if name not in SPLITS:
      raise ConfigError(f'unknown split "{name}", expected one of {SPLITS}')
    return [s for s in self.samples if self.splits[s.id] == name]

  def counts(self, split=None):
    '''
    Samples per class label, unlabeled samples are not counted.
    '''
    result = {l: 0 for l in self.classSpace.labels}
    for s in self.split(split):
      if s.label is not None:
        result[self.classSpace.labels[s.label]] += 1
    return result

  @property
  def isSynthetic(self):
    return 'synthetic' in self.provenance

  def resolve(self, path):
    if path is None or path.startswith(SYNTHETIC_SCHEME) or os.path.isabs(path) or not self.root:
      return path
    return os.path.join(self.root, path)


def ingest(path):
  '''
  Read and validate a manifest file. Unknown labels and duplicated ids are
  data errors naming the line, missing image files only drop the image.
  '''
  header, recs = records.readRecords(path, schema=MANIFEST_SCHEMA, requireHeader=True)
  if 'labels' not in header:
    raise SchemaError(f'{path}: manifest header lists no class labels')
  classSpace = ClassSpace(header['labels'])
  root = os.path.dirname(os.path.abspath(path))
  samples, splits, seen = [], {}, set()
  for rec in recs:
    line = rec['_line']
    if 'id' not in rec:
      raise DataError(f'{path}:{line}: record has no "id"')
    sampleId = str(rec['id'])
    if sampleId in seen:
      raise DataError(f'{path}:{line}: duplicated sample id "{sampleId}"')
    seen.add(sampleId)
    label = rec.get('label')
    if label is not None:
      if str(label) not in classSpace.labels:
        raise DataError(f'{path}:{line}: unknown label "{label}", '
                        f'known labels are {list(classSpace.labels)}')
      label = classSpace.index(label)
    imagePath = rec.get('image_path') or None
    if imagePath and not imagePath.startswith(SYNTHETIC_SCHEME):
      full = imagePath if os.path.isabs(imagePath) else os.path.join(root, imagePath)
      if not os.path.exists(full):
        io.warn(f'{path}:{line}: image {imagePath} of sample "{sampleId}" not found, '
                'sample is treated as text-only', logOnly=True)
        imagePath = None
      else:
        imagePath = full
    try:
      samples.append(Sample(sampleId, rec.get('text') or '', imagePath, label,
                            rec.get('tags') or ()))
    except DataError as e:
      raise DataError(f'{path}:{line}: {e}')
    splits[sampleId] = rec.get('split', 'train')

  manifest = DatasetManifest(header.get('name', os.path.basename(path)), classSpace,
                             samples, splits, header.get('provenance'), root)
  for split in SPLITS:
    counts = manifest.counts(split)
    if sum(counts.values()):
      io.info(f'dataset "{manifest.name}" {split}: '
              + ', '.join(f'{l} {n}' for l, n in counts.items()))
  return manifest


def saveManifest(path, manifest, configFingerprint=None):
  root = os.path.dirname(os.path.abspath(path))
  def relative(p):
    if p is None or p.startswith(SYNTHETIC_SCHEME):
      return p
    p = os.path.abspath(p)
    return os.path.relpath(p, root) if p.startswith(root+os.sep) else p
  recs = []
  for s in manifest.samples:
    rec = s.toRecord()
    rec['image_path'] = relative(s.imagePath)
    rec['label'] = None if s.label is None else manifest.classSpace.labels[s.label]
    rec['split'] = manifest.splits[s.id]
    recs.append(rec)
  records.writeRecords(path, recs, MANIFEST_SCHEMA, configFingerprint,
                       name=manifest.name, labels=list(manifest.classSpace.labels),
                       provenance=manifest.provenance)


class CounterfactualAssets:
  '''
  Spurious-only text and image of each sample, where available.
  '''
  def __init__(self, spuriousTexts=None, spuriousImages=None):
    self.spuriousTexts = dict(spuriousTexts or {})
    self.spuriousImages = dict(spuriousImages or {})

  def textView(self, sample):
    '''(T_spurious, masked image) or None without a counterfactual text'''
    t = self.spuriousTexts.get(sample.id)
    return None if t is None else textSpuriousView(sample, t)

  def imageView(self, sample):
    '''(masked text, I_spurious) or None without a counterfactual image'''
    p = self.spuriousImages.get(sample.id)
    return None if p is None else imageSpuriousView(sample, p)

  def toRecords(self):
    ids = sorted(set(self.spuriousTexts) | set(self.spuriousImages))
    return [dict(sample_id=i, spurious_text=self.spuriousTexts.get(i),
                 spurious_image_path=self.spuriousImages.get(i)) for i in ids]

  def fingerprint(self):
    return records.fingerprint(self.toRecords())


def saveAssets(path, assets, configFingerprint=None):
  records.writeRecords(path, assets.toRecords(), ASSETS_SCHEMA, configFingerprint)


def loadAssets(path):
  _, recs = records.readRecords(path, schema=ASSETS_SCHEMA)
  texts, images = {}, {}
  for rec in recs:
    if rec.get('spurious_text') is not None:
      texts[rec['sample_id']] = rec['spurious_text']
    if rec.get('spurious_image_path') is not None:
      images[rec['sample_id']] = rec['spurious_image_path']
  return CounterfactualAssets(texts, images)


def spuriousImagePath(sample):
  '''
  Counterfactual image of a sample if one exists: the virtual counterpart
  for synthetic samples, the file next to the original otherwise.
  '''
  if not sample.hasImage():
    return None
  if sample.imagePath.startswith(SYNTHETIC_SCHEME):
    return sample.imagePath + '#spurious'
  path = counterfactualImagePath(sample.imagePath)
  return path if os.path.exists(path) else None


def collectAssets(manifest, spuriousTexts):
  '''
  Combine masked texts with the counterfactual images found on disk.
  '''
  images = {}
  for s in manifest.samples:
    p = spuriousImagePath(s)
    if p is not None:
      images[s.id] = p
  return CounterfactualAssets(spuriousTexts, images)
