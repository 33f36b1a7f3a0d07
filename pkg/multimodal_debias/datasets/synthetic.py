'''
Synthetic corpora with planted shortcuts. Every sample carries semantic
features (the label's actual evidence) and spurious shortcut variables per
modality whose agreement with the label is controlled per split, so the
shortcut can be made to flip between training and test data.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import os

from ..common import *
from ..core import ClassSpace, Sample
from ..backend.predictors import SyntheticFeatureStore, SyntheticModel, SYNTHETIC_SCHEME
from ..counterfactuals.text import SemanticAnnotation, MANUAL, saveAnnotations, applyMask
from .. import io
from .manifest import DatasetManifest, CounterfactualAssets, saveManifest, saveAssets, \
                      spuriousImagePath

FEATURES_FILE = 'features.npz'
MANIFEST_FILE = 'manifest.jsonl'
ANNOTATIONS_FILE = 'annotations.jsonl'
ASSETS_FILE = 'counterfactuals.jsonl'


class SyntheticSpec:
  '''
  Arguments:
  ==========
  K : int
    Number of classes.

  nTrain, nValid, nTest : int
    Samples per split.

  semanticDims : int
    Semantic feature dimensions per modality, at least K.

  spuriousDims : int
    Shortcut variables per modality.

  rhoTrain, rhoValid, rhoTest : float in [-1, 1]
    Shortcut-label correlation per split. For K=2 a shortcut agrees with
    the label with probability (1+rho)/2. rhoValid defaults to rhoTest.

  semanticSignal, semanticNoise : float
    Class mean offset and noise level of the semantic features.

  biasStrength : float
    How strongly the emitted oracle model relies on the shortcuts.
  '''
  def __init__(self, K=2, nTrain=2000, nValid=500, nTest=500, semanticDims=2,
               spuriousDims=1, rhoTrain=0.8, rhoTest=-0.8, rhoValid=None,
               semanticSignal=1.0, semanticNoise=1.0, biasStrength=1.0, priors=None,
               labels=None, seed=0):
    self.K = int(K)
    self.nTrain, self.nValid, self.nTest = int(nTrain), int(nValid), int(nTest)
    self.semanticDims = int(semanticDims)
    self.spuriousDims = int(spuriousDims)
    self.rhoTrain = float(rhoTrain)
    self.rhoTest = float(rhoTest)
    self.rhoValid = self.rhoTest if rhoValid is None else float(rhoValid)
    self.semanticSignal = float(semanticSignal)
    self.semanticNoise = float(semanticNoise)
    self.biasStrength = float(biasStrength)
    self.priors = None if priors is None else [float(p) for p in priors]
    self.labels = [str(k) for k in range(self.K)] if labels is None else [str(l) for l in labels]
    self.seed = int(seed)
    self.validate()

  def validate(self):
    if self.K < 2:
      raise SpecError(f'a synthetic task needs at least two classes, got K={self.K}')
    if len(self.labels) != self.K:
      raise SpecError(f'{len(self.labels)} labels given for K={self.K}')
    if self.nTrain < 1 or self.nValid < 0 or self.nTest < 0:
      raise SpecError('split sizes must be nonnegative and the training split nonempty')
    if self.semanticDims < self.K:
      raise SpecError(f'semanticDims must be at least K={self.K}, got {self.semanticDims}')
    if self.spuriousDims < 1:
      raise SpecError('at least one shortcut variable per modality is needed')
    for name in ('rhoTrain', 'rhoValid', 'rhoTest'):
      rho = getattr(self, name)
      if not -1 <= rho <= 1:
        raise SpecError(f'{name}={rho} is not a correlation in [-1, 1]')
    if self.semanticNoise < 0 or self.biasStrength < 0:
      raise SpecError('noise level and bias strength must be nonnegative')
    if self.priors is not None:
      p = array(self.priors)
      if p.shape != (self.K,) or (p <= 0).any() or abs(p.sum()-1) > 1e-9:
        raise SpecError(f'priors must be {self.K} positive numbers summing to one')

  def agreement(self, rho):
    '''
    Probability that a shortcut variable equals the label.
    '''
    chance = 1/self.K
    return chance + rho*(1-chance) if rho >= 0 else chance*(1+rho)

  def toDict(self):
    return dict(K=self.K, n_train=self.nTrain, n_valid=self.nValid, n_test=self.nTest,
                semantic_dims=self.semanticDims, spurious_dims=self.spuriousDims,
                rho_train=self.rhoTrain, rho_valid=self.rhoValid, rho_test=self.rhoTest,
                semantic_signal=self.semanticSignal, semantic_noise=self.semanticNoise,
                bias_strength=self.biasStrength, priors=self.priors, labels=self.labels,
                seed=self.seed)

  @classmethod
  def fromDict(cls, d):
    return cls(K=d['K'], nTrain=d['n_train'], nValid=d['n_valid'], nTest=d['n_test'],
               semanticDims=d['semantic_dims'], spuriousDims=d['spurious_dims'],
               rhoTrain=d['rho_train'], rhoTest=d['rho_test'], rhoValid=d.get('rho_valid'),
               semanticSignal=d['semantic_signal'], semanticNoise=d['semantic_noise'],
               biasStrength=d['bias_strength'], priors=d.get('priors'),
               labels=d.get('labels'), seed=d.get('seed', 0))


class SyntheticDataset:
  def __init__(self, spec, manifest, store, model, annotations, assets):
    self.spec = spec
    self.manifest = manifest
    self.store = store
    self.model = model
    self.annotations = annotations
    self.assets = assets


def _drawShortcuts(rng, y, K, dims, agreement):
  n = len(y)
  agree = rng.random((n, dims)) < agreement
  # a disagreeing shortcut is uniform over the other classes
  offset = rng.integers(1, K, size=(n, dims)) if K > 2 else ones((n, dims), dtype=int64)
  return where(agree, y[:, None], (y[:, None]+offset) % K).astype(int64)


def _semanticWord(sem, K):
  return f'sem{int(argmax(sem[:K]))}'


def generateSynthetic(spec, folder=None):
  '''
  Draw a corpus, its exact counterfactuals and the matching oracle model.
  With a folder, manifest, features, annotations and counterfactual assets
  are written there.
  '''
  rng = random.default_rng(spec.seed)
  K = spec.K
  priors = ones(K)/K if spec.priors is None else array(spec.priors)
  ids, splits, ys = [], {}, []
  blocks = dict(ts=[], is_=[], tu=[], iu=[])
  for split, n, rho in (('train', spec.nTrain, spec.rhoTrain),
                        ('valid', spec.nValid, spec.rhoValid),
                        ('test',  spec.nTest,  spec.rhoTest)):
    if n == 0:
      continue
    y = rng.choice(K, size=n, p=priors)
    signal = zeros((n, spec.semanticDims))
    signal[arange(n), y] = spec.semanticSignal
    blocks['ts'].append(signal + spec.semanticNoise*rng.standard_normal((n, spec.semanticDims)))
    blocks['is_'].append(signal + spec.semanticNoise*rng.standard_normal((n, spec.semanticDims)))
    q = spec.agreement(rho)
    blocks['tu'].append(_drawShortcuts(rng, y, K, spec.spuriousDims, q))
    blocks['iu'].append(_drawShortcuts(rng, y, K, spec.spuriousDims, q))
    for i in range(n):
      sampleId = f'{split}-{i:05d}'
      ids.append(sampleId)
      splits[sampleId] = split
    ys.append(y)

  y = concatenate(ys)
  ts, is_, tu, iu = (concatenate(blocks[k]) for k in ('ts', 'is_', 'tu', 'iu'))
  store = SyntheticFeatureStore(ids, K, ts, is_, tu, iu)
  classSpace = ClassSpace(spec.labels)

  samples, annotations = [], {}
  for n, sampleId in enumerate(ids):
    word = _semanticWord(ts[n], K)
    text = ' '.join([word] + [f'ctx{j}_{int(z)}' for j, z in enumerate(tu[n])])
    tags = [f'scene{int(argmax(is_[n][:K]))}'] + [f'obj{j}_{int(z)}' for j, z in enumerate(iu[n])]
    samples.append(Sample(sampleId, text, SYNTHETIC_SCHEME+sampleId, int(y[n]), tags))
    annotations[sampleId] = SemanticAnnotation(sampleId, [word], [], source=MANUAL)

  model = SyntheticModel(store, classSpace, biasStrength=spec.biasStrength, priors=priors)
  provenance = dict(synthetic=dict(features=FEATURES_FILE, model=model.toDict(),
                                   spec=spec.toDict()))
  manifest = DatasetManifest(f'synthetic-{spec.seed}', classSpace, samples, splits,
                             provenance, root=folder)
  assets = CounterfactualAssets(
      {s.id: applyMask(s.text, annotations[s.id]) for s in samples},
      {s.id: spuriousImagePath(s) for s in samples})

  if folder is not None:
    saveManifest(os.path.join(folder, MANIFEST_FILE), manifest)
    store.save(os.path.join(folder, FEATURES_FILE))
    saveAnnotations(os.path.join(folder, ANNOTATIONS_FILE), list(annotations.values()))
    saveAssets(os.path.join(folder, ASSETS_FILE), assets)
    io.info(f'wrote synthetic dataset with {len(samples)} samples to {folder}')
  return SyntheticDataset(spec, manifest, store, model, annotations, assets)


def loadSyntheticBackend(manifest):
  '''
  Feature store and oracle model of a synthetic manifest read from disk.
  '''
  if not manifest.isSynthetic:
    raise ConfigError(f'dataset "{manifest.name}" is not synthetic, '
                      'use the remote backend for it')
  info = manifest.provenance['synthetic']
  store = SyntheticFeatureStore.load(manifest.resolve(info['features']))
  m = info['model']
  model = SyntheticModel(store, manifest.classSpace, m['semantic_weight'],
                         m['spurious_weight'], m['bias_strength'], m['priors'])
  return store, model
