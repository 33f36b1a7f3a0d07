'''
Tolerance criteria that compare the truth-class probability of the original
view with the two spurious-only views. The outcome selects which counterfactuals
enter training and supervises the router.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import enum

from .common import *
from . import io
from . import records

SCHEMA = 'categorization'


class DebiasCategory(enum.IntEnum):
  '''
  Expert strategy of a sample: GE only (0), GE+IDE (1), GE+TDE (2),
  GE+IDE+TDE (3). EXCLUDE marks samples no criterion fires for.
  '''
  NO_DEBIAS    = 0
  IMAGE_DEBIAS = 1
  TEXT_DEBIAS  = 2
  BOTH_DEBIAS  = 3
  EXCLUDE      = -1

  @classmethod
  def parse(cls, value):
    if isinstance(value, cls):
      return value
    if isinstance(value, str):
      try:
        return cls[value.strip().upper()]
      except KeyError:
        pass
      try:
        value = int(value)
      except ValueError:
        raise DomainError(f'unknown debias category "{value}"')
    try:
      return cls(int(value))
    except ValueError:
      raise DomainError(f'unknown debias category {value!r}')

  def isRoutable(self):
    return self != DebiasCategory.EXCLUDE

  def needsImage(self):
    return self in (DebiasCategory.IMAGE_DEBIAS, DebiasCategory.BOTH_DEBIAS)

  def needsText(self):
    return self in (DebiasCategory.TEXT_DEBIAS, DebiasCategory.BOTH_DEBIAS)


ROUTABLE = (DebiasCategory.NO_DEBIAS, DebiasCategory.IMAGE_DEBIAS,
            DebiasCategory.TEXT_DEBIAS, DebiasCategory.BOTH_DEBIAS)


def _checkProb(name, x):
  try:
    x = float(x)
  except (TypeError, ValueError):
    raise DomainError(f'{name} must be a probability, got {x!r}')
  if not 0 <= x <= 1:
    raise DomainError(f'{name} must lie in [0,1], got {x}')
  return x


def categorize(p0y, pty, piy, epsilon=0.1):
  '''
  Apply criteria a to e with margin epsilon, all comparisons strict:

  a. both contexts aid:     pt > p0+e and pi > p0+e           -> NO_DEBIAS
  b. image context harms:   pi+e < p0 < pt-e                  -> IMAGE_DEBIAS
  c. text context harms:    pt+e < p0 < pi-e                  -> TEXT_DEBIAS
  d. both contexts harm:    pt+e < p0 and pi+e < p0           -> BOTH_DEBIAS
  e. anything else                                            -> EXCLUDE
  '''
  p0y = _checkProb('p0(y)', p0y)
  pty = _checkProb('pt(y)', pty)
  piy = _checkProb('pi(y)', piy)
  if not (isinstance(epsilon, (int, float)) and epsilon >= 0):
    raise DomainError(f'epsilon must be nonnegative, got {epsilon!r}')
  e = float(epsilon)

  if pty > p0y+e and piy > p0y+e:
    return DebiasCategory.NO_DEBIAS
  if piy+e < p0y < pty-e:
    return DebiasCategory.IMAGE_DEBIAS
  if pty+e < p0y < piy-e:
    return DebiasCategory.TEXT_DEBIAS
  if pty+e < p0y and piy+e < p0y:
    return DebiasCategory.BOTH_DEBIAS
  return DebiasCategory.EXCLUDE


class CategorizationRecord:
  def __init__(self, sampleId, p0y, pty, piy, epsilon, category=None):
    self.sampleId = str(sampleId)
    self.p0y, self.pty, self.piy = float(p0y), float(pty), float(piy)
    self.epsilon = float(epsilon)
    expected = categorize(self.p0y, self.pty, self.piy, self.epsilon)
    if category is not None and DebiasCategory.parse(category) != expected:
      raise DataError(f'sample "{self.sampleId}": stored category {category} contradicts '
                      f'criteria outcome {expected.name}')
    self.category = expected

  def toRecord(self):
    return dict(sample_id=self.sampleId, p0_y=self.p0y, pt_y=self.pty, pi_y=self.piy,
                epsilon=self.epsilon, category=self.category.name)

  @classmethod
  def fromRecord(cls, rec):
    try:
      return cls(rec['sample_id'], rec['p0_y'], rec['pt_y'], rec['pi_y'],
                 rec['epsilon'], rec.get('category'))
    except KeyError as e:
      raise DataError(f'categorization record misses field {e}')

  def __repr__(self):
    return f'CategorizationRecord({self.sampleId!r}, {self.category.name})'


def categorizeDataset(scenarios, labels, epsilon=0.1):
  '''
  Categorize every sample. Samples without complete scenario outputs or
  truth label are reported and skipped, the run continues.

  Arguments:
  ==========
  scenarios : dict
    sample id -> ScenarioOutputs (or None if probing failed)

  labels : dict
    sample id -> truth class index

  Returns (records, summary, problems), summary maps category names to
  percentages of the categorized samples.
  '''
  records, problems = [], []
  for sampleId, s in scenarios.items():
    y = labels.get(sampleId)
    if s is None or y is None:
      problems.append(DataError(f'sample "{sampleId}" misses '
                                f'{"scenario outputs" if s is None else "a truth label"}'))
      io.warn(str(problems[-1]), logOnly=True)
      continue
    y = int(y)
    records.append(CategorizationRecord(sampleId, s.p0[y], s.pt[y], s.pi[y], epsilon))

  summary = distribution([r.category for r in records])
  if records:
    io.info('categorization of {} samples (epsilon={}): {}'.format(
              len(records), epsilon,
              ', '.join(f'{k} {v:.1f}%' for k, v in summary.items())))
  return records, summary, problems


def distribution(categories):
  '''
  Percentage of each category (all five listed, in category order).
  '''
  categories = list(categories)
  n = len(categories)
  return {c.name: (100*sum(1 for x in categories if x == c)/n if n else 0.)
            for c in list(ROUTABLE)+[DebiasCategory.EXCLUDE]}


def saveCategorization(path, records_, configFingerprint=None):
  records.writeRecords(path, [r.toRecord() for r in records_], SCHEMA, configFingerprint)


def loadCategorization(path):
  '''
  Read categorization records, every stored category is re-checked against
  the criteria.
  '''
  _, recs = records.readRecords(path, schema=SCHEMA)
  result = []
  for rec in recs:
    try:
      result.append(CategorizationRecord.fromRecord(rec))
    except DataError as e:
      raise DataError(f'{path}:{rec["_line"]}: {e}')
  return result
