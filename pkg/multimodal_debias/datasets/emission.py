'''
Training sets built from the categorization: the general expert sees the
originals, the debias experts additionally see spurious-only views of the
samples whose category asks for them, paired with a reversed label; the
router learns the categories themselves.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import zlib

from ..common import *
from ..core import SampleView, originalView, SPURIOUS
from ..categorize import DebiasCategory
from .. import io
from .. import records

ROLES = ('GE', 'IDE', 'TDE', 'MCTD', 'Router')
LEAST_LIKELY = 'least_likely'
SEEDED_UNIFORM = 'seeded_uniform'
SCHEMA = 'emitted-training-set'


def reversedLabel(y, K, p0=None, policy=LEAST_LIKELY, seed=0, sampleId=''):
  '''
  An intentionally wrong target for a spurious-only view. Binary tasks flip
  the label. With more classes, least_likely picks the non-truth class the
  original prediction finds least likely (lowest index on ties) and
  seeded_uniform draws uniformly among the non-truth classes, reproducibly
  per sample.
  '''
  y, K = int(y), int(K)
  if K < 2:
    raise UnsupportedError('a reversed label needs at least two classes')
  if not 0 <= y < K:
    raise DomainError(f'label {y} outside [0, {K})')
  if K == 2:
    return 1-y
  others = [k for k in range(K) if k != y]
  if policy == LEAST_LIKELY and p0 is not None:
    p = asarray(p0.scores if hasattr(p0, 'scores') else p0, dtype=float)
    if p.shape != (K,):
      raise ShapeError(f'expected {K} original probabilities, got shape {p.shape}')
    return others[int(argmin(p[others]))]
  if policy not in (LEAST_LIKELY, SEEDED_UNIFORM):
    raise ConfigError(f'unknown reversed-label policy "{policy}"')
  rng = random.default_rng([int(seed), zlib.crc32(str(sampleId).encode('utf8'))])
  return others[int(rng.integers(len(others)))]


class EmittedTrainingSet:
  '''
  (view descriptor, target) records of one role.
  '''
  def __init__(self, role, records_, sourceFingerprint=''):
    if role not in ROLES:
      raise ConfigError(f'unknown training set role "{role}", expected one of {ROLES}')
    self.role = role
    self.records = list(records_)
    self.sourceFingerprint = sourceFingerprint

  def __len__(self):
    return len(self.records)

  def views(self, manifest):
    '''
    Rebuild (SampleView, target) pairs against the manifest.
    '''
    result = []
    for rec in self.records:
      base = manifest.sample(rec['sample_id'])
      v = rec['view']
      result.append((SampleView(base, v['text_variant'], v['image_variant'],
                                spuriousText=v['text'] if v['text_variant'] == SPURIOUS else None,
                                spuriousImagePath=v['image_path'] if v['image_variant'] == SPURIOUS else None),
                     int(rec['target'])))
    return result

  def counterfactualCount(self):
    return len([r for r in self.records if r['counterfactual']])


def _record(role, view, target, counterfactual):
  return dict(sample_id=view.base.id, view=view.descriptor(), target=int(target),
              role=role, counterfactual=counterfactual)


def emitTrainingSets(manifest, categories, assets, split='train', policy=LEAST_LIKELY,
                     scenarios=None, seed=0):
  '''
  Build the GE, IDE, TDE, MCTD and Router sets of a split.

  Arguments:
  ==========
  categories : dict
    sample id -> DebiasCategory (or CategorizationRecord). Samples without a
    category count as excluded.

  assets : CounterfactualAssets

  scenarios : dict or None
    sample id -> ScenarioOutputs, lets least_likely use the original
    prediction for K > 2.

  Returns (dict role -> EmittedTrainingSet, list of problems). A category
  whose counterfactual asset is missing skips that record and reports it.
  '''
  K = manifest.classSpace.K
  out = {r: [] for r in ROLES}
  problems = []
  for s in manifest.split(split):
    if s.label is None:
      continue
    c = categories.get(s.id, DebiasCategory.EXCLUDE)
    c = DebiasCategory.parse(getattr(c, 'category', c))
    view = originalView(s)
    for role in ('GE', 'IDE', 'TDE', 'MCTD'):
      out[role].append(_record(role, view, s.label, False))
    if not c.isRoutable():
      continue
    out['Router'].append(_record('Router', view, int(c), False))

    p0 = scenarios[s.id].p0 if scenarios and s.id in scenarios else None
    yHat = None
    if c.needsImage() or c.needsText():
      yHat = reversedLabel(s.label, K, p0, policy, seed, s.id)
    if c.needsImage():
      v = assets.imageView(s)
      if v is None:
        problems.append(DataError(f'sample "{s.id}" ({c.name}) has no counterfactual image'))
      else:
        for role in ('IDE', 'MCTD'):
          out[role].append(_record(role, v, yHat, True))
    if c.needsText():
      v = assets.textView(s)
      if v is None:
        problems.append(DataError(f'sample "{s.id}" ({c.name}) has no counterfactual text'))
      else:
        for role in ('TDE', 'MCTD'):
          out[role].append(_record(role, v, yHat, True))

  for p in problems:
    io.warn(str(p), logOnly=True)
  fp = records.fingerprint(dict(categories={k: int(DebiasCategory.parse(getattr(v, 'category', v)))
                                            for k, v in sorted(categories.items())},
                                assets=assets.fingerprint(), policy=policy, split=split))
  sets = {role: EmittedTrainingSet(role, recs, fp) for role, recs in out.items()}
  io.info('emitted training sets: ' + ', '.join(f'{r} {len(s)}' for r, s in sets.items()))
  return sets, problems


def saveTrainingSet(path, ts, configFingerprint=None):
  records.writeRecords(path, ts.records, SCHEMA, configFingerprint,
                       role=ts.role, source=ts.sourceFingerprint)


def loadTrainingSet(path):
  header, recs = records.readRecords(path, schema=SCHEMA, requireHeader=True)
  for r in recs:
    r.pop('_line', None)
  return EmittedTrainingSet(header.get('role'), recs, header.get('source', ''))
