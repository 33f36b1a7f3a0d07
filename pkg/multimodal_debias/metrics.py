'''
Evaluation arithmetic: confusion matrices, precision/recall/F1 reports,
F-beta, lift scores, per-category error rates and forward-pass accounting.
Metrics of label sequences come from sklearn, reports of a given matrix are
computed from its counts.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
from sklearn.metrics import (confusion_matrix, precision_recall_fscore_support, f1_score,
                             fbeta_score, accuracy_score)
import threading
import decimal

from .common import *


def roundPercent(x, digits=2):
  '''
  Express a fraction as percent rounded half-up, the way result tables print it.
  '''
  q = decimal.Decimal(1).scaleb(-digits)
  return float(decimal.Decimal(repr(float(x)*100)).quantize(q, rounding=decimal.ROUND_HALF_UP))


def labelArrays(truths, predictions, K):
  '''
  Class index arrays of equal length with every entry in 0..K-1.
  '''
  truths = asarray(list(truths), dtype=int64).reshape(-1)
  predictions = asarray(list(predictions), dtype=int64).reshape(-1)
  if len(truths) != len(predictions):
    raise ShapeError(f'{len(truths)} truths but {len(predictions)} predictions')
  both = concatenate([truths, predictions])
  outside = unique(both[(both < 0) | (both >= K)])
  if len(outside):
    raise DomainError(f'class indices must lie in 0..{K-1}, got {outside.tolist()}')
  return truths, predictions


class ConfusionMatrix:
  '''
  K x K counts, rows are true classes and columns are predicted classes.
  '''
  def __init__(self, counts, labels=None):
    counts = array(counts)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
      raise ShapeError(f'confusion matrix must be square, got shape {counts.shape}')
    if (counts < 0).any() or (counts != around(counts)).any():
      raise DomainError('confusion matrix entries must be nonnegative integers')
    self.counts = counts.astype(int64)
    self.counts.setflags(write=False)
    self.labels = list(labels) if labels is not None else [str(i) for i in range(counts.shape[0])]

  @classmethod
  def fromPredictions(cls, truths, predictions, K, labels=None):
    truths, predictions = labelArrays(truths, predictions, K)
    if not len(truths):
      return cls(zeros((K, K), dtype=int64), labels=labels)
    return cls(confusion_matrix(truths, predictions, labels=list(range(K))), labels=labels)

  @property
  def K(self):
    return self.counts.shape[0]

  def total(self):
    return int(self.counts.sum())

  def rowSums(self):
    return self.counts.sum(axis=1)

  def colSums(self):
    return self.counts.sum(axis=0)

  def tolist(self):
    return [[int(c) for c in row] for row in self.counts]


def _safeDiv(a, b):
  return float(a)/float(b) if b else 0.


def f1(precision, recall):
  return _safeDiv(2*precision*recall, precision+recall)


def _assembleReport(labels, precision, recall, f1s, support, predicted, correct):
  support, f1s = asarray(support), asarray(f1s, dtype=float)
  total = int(support.sum())
  perClass = [dict(label=l, precision=float(p), recall=float(r), f1=float(f),
                   support=int(s), predicted=int(q))
                for l, p, r, f, s, q in zip(labels, precision, recall, f1s, support, predicted)]
  return dict(perClass=perClass,
              accuracy=_safeDiv(correct, total),
              macroF1=float(f1s.mean()),
              weightedF1=float((f1s*support).sum()/total),
              predictedShare=[_safeDiv(q, total) for q in predicted],
              total=total)


def classificationReport(cm):
  '''
  Per-class precision/recall/F1 plus accuracy, macro-F1 and weighted-F1 of
  a given confusion matrix. Zero denominators yield 0, never NaN.
  '''
  if not isinstance(cm, ConfusionMatrix):
    cm = ConfusionMatrix(cm)
  if cm.total() == 0:
    raise EmptyEvaluationError('cannot report on an empty confusion matrix')
  rows, cols, diag = cm.rowSums(), cm.colSums(), diagonal(cm.counts)
  precision = [_safeDiv(d, c) for d, c in zip(diag, cols)]
  recall = [_safeDiv(d, r) for d, r in zip(diag, rows)]
  return _assembleReport(cm.labels, precision, recall,
                         [f1(p, r) for p, r in zip(precision, recall)],
                         rows, cols, diag.sum())


def predictionReport(truths, predictions, K, labels=None):
  '''
  classificationReport of label sequences.
  '''
  truths, predictions = labelArrays(truths, predictions, K)
  if not len(truths):
    raise EmptyEvaluationError('cannot report on an empty evaluation set')
  classes = list(range(K))
  precision, recall, f1s, support = precision_recall_fscore_support(
      truths, predictions, labels=classes, average=None, zero_division=0)
  return _assembleReport(list(labels) if labels is not None else [str(k) for k in classes],
                         precision, recall, f1s, support, bincount(predictions, minlength=K),
                         accuracy_score(truths, predictions, normalize=False))


def fBeta(precision, recall, beta):
  '''
  F-beta score, (1+b^2) P R / (b^2 P + R), 0 when the denominator vanishes.
  '''
  if not (0 <= precision <= 1 and 0 <= recall <= 1):
    raise DomainError(f'precision and recall must lie in [0,1], got {precision}, {recall}')
  if not beta > 0:
    raise DomainError(f'beta must be positive, got {beta}')
  b2 = beta**2
  return _safeDiv((1+b2)*precision*recall, b2*precision+recall)


def perClassFBeta(truths, predictions, K, beta, classes=None):
  '''
  F-beta of each class in classes (all K by default) from label sequences.
  '''
  if not beta > 0:
    raise DomainError(f'beta must be positive, got {beta}')
  truths, predictions = labelArrays(truths, predictions, K)
  classes = list(range(K)) if classes is None else [int(c) for c in classes]
  return fbeta_score(truths, predictions, beta=beta, labels=classes, average=None,
                     zero_division=0)


EVAL_AVERAGES = ('binary', 'macro', 'weighted', 'accuracy')


def evalScore(truths, predictions, K, average=None):
  '''
  The scalar Eval the weight searches maximize. Default is binary F1 of the
  positive class 1 for K=2 and macro-F1 otherwise.

  Arguments:
  ==========
  average : str or None
    One of 'binary', 'macro', 'weighted', 'accuracy' or None for the default.
  '''
  if average is None:
    average = 'binary' if K == 2 else 'macro'
  if average not in EVAL_AVERAGES:
    raise ConfigError(f'unknown average "{average}"')
  if average == 'binary' and K != 2:
    raise ConfigError(f'binary F1 needs K=2, got K={K}')
  truths, predictions = labelArrays(truths, predictions, K)
  if not len(truths):
    raise EmptyEvaluationError('cannot score an empty evaluation set')
  if average == 'accuracy':
    return float(accuracy_score(truths, predictions))
  if average == 'binary':
    return float(f1_score(truths, predictions, labels=[1], average=None, zero_division=0)[0])
  return float(f1_score(truths, predictions, labels=list(range(K)), average=average,
                        zero_division=0))


def lift(jointCount, featureCount, labelCount, total):
  '''
  Lift of a feature for a label, P(label|feature)/P(label). 1 means independent.
  '''
  if total <= 0:
    raise UnsupportedError('lift needs a nonempty corpus')
  if featureCount == 0 or labelCount == 0:
    raise UnsupportedError(f'lift undefined for feature count {featureCount} and label count {labelCount}')
  if not (0 <= jointCount and jointCount <= featureCount and jointCount <= labelCount
            and featureCount <= total and labelCount <= total):
    raise DataError(f'inconsistent counts: joint {jointCount}, feature {featureCount}, '
                    f'label {labelCount}, total {total}')
  return (jointCount/featureCount) / (labelCount/total)


class LiftTable:
  '''
  (feature, label, lift, support) entries, kept sorted by descending lift.
  '''
  def __init__(self, entries=()):
    self.entries = sorted([(str(f), str(l), float(v), int(s)) for f, l, v, s in entries],
                          key=lambda e: (-e[2], -e[3], e[0], e[1]))

  def __len__(self):
    return len(self.entries)

  def __iter__(self):
    return iter(self.entries)

  def features(self):
    return [e[0] for e in self.entries]

  def forLabel(self, label):
    return LiftTable([e for e in self.entries if e[1] == str(label)])

  def toCsv(self):
    lines = ['feature,label,lift,support']
    for f, l, v, s in self.entries:
      lines.append(f'{_csvField(f)},{_csvField(l)},{v:.6f},{s}')
    return '\n'.join(lines)+'\n'


def _csvField(s):
  if [c for c in ',"\n' if c in s]:
    return '"'+s.replace('"', '""')+'"'
  return s


def perCategoryError(predictions, truths, categories):
  '''
  Fraction of misclassified samples per debias category. Categories without
  samples are absent from the result.
  '''
  predictions, truths, categories = list(predictions), list(truths), list(categories)
  if not len(predictions) == len(truths) == len(categories):
    raise ShapeError(f'length mismatch: {len(predictions)} predictions, '
                     f'{len(truths)} truths, {len(categories)} categories')
  wrong, seen = {}, {}
  for p, t, c in zip(predictions, truths, categories):
    c = int(c)
    if c not in (0, 1, 2, 3):
      raise DomainError(f'category must be in 0..3, got {c}')
    seen[c] = seen.get(c, 0)+1
    wrong[c] = wrong.get(c, 0)+(int(p) != int(t))
  return {c: wrong[c]/seen[c] for c in sorted(seen)}


def routerDiagnostics(cm):
  '''
  Conservativeness of a router: share of predictions landing in class 0,
  share of errors on debias-needing rows that were predicted 0, and whether
  the largest off-zero entry of each debias row is its diagonal.
  '''
  if not isinstance(cm, ConfusionMatrix):
    cm = ConfusionMatrix(cm)
  total = cm.total()
  if total == 0:
    raise EmptyEvaluationError('cannot diagnose an empty confusion matrix')
  c = cm.counts
  debiasRows = c[1:]
  errors = int(debiasRows.sum() - (trace(c)-c[0,0]))
  conservative = int(debiasRows[:,0].sum())
  return dict(predictedZeroShare=_safeDiv(c[:,0].sum(), total),
              predictedZero=int(c[:,0].sum()),
              conservativeErrors=conservative,
              debiasErrors=errors,
              conservativeErrorRatio=_safeDiv(conservative, errors),
              diagonalDominant=[int(argmax(c[k,1:]))+1 == k for k in range(1, cm.K)])


# expected forward passes per sample, as (min, max) multiples of n
OVERHEAD_MULTIPLES = {
  'base':       (1, 1),
  'tfcd':       (2, 2),
  'mid':        (3, 3),
  'mrid':       (3, 3),
  'mctd-eval':  (1, 1),
  'mme-jd':     (1, 3),
}


class CallLedger:
  '''
  Thread-safe counters of backend forward passes, keyed by method (or any
  other accounting bucket). Counters only ever grow.
  '''
  def __init__(self):
    self._lock = threading.Lock()
    self._counts = {}
    self._finalized = False

  def increment(self, key, n=1):
    if n < 0:
      raise DomainError('ledger counters are monotone, cannot add a negative count')
    with self._lock:
      if self._finalized:
        raise RuntimeError('ledger is finalized')
      self._counts[key] = self._counts.get(key, 0)+int(n)

  def count(self, key):
    with self._lock:
      return self._counts.get(key, 0)

  def counts(self):
    with self._lock:
      return dict(self._counts)

  def finalize(self):
    with self._lock:
      self._finalized = True
    return self

  def isFinalized(self):
    return self._finalized

  def summary(self):
    return ', '.join(f'{k}: {v}' for k, v in sorted(self.counts().items())) or 'no calls'


def overheadCheck(ledger, nSamples, method):
  '''
  True if the calls booked under the method match its forward-pass budget:
  base, mctd-eval n; tfcd 2n; mid, mrid 3n; mme-jd between n and 3n.
  '''
  if method not in OVERHEAD_MULTIPLES:
    raise ConfigError(f'unknown method "{method}", known: {sorted(OVERHEAD_MULTIPLES)}')
  lo, hi = OVERHEAD_MULTIPLES[method]
  calls = ledger.count(method)
  return lo*nSamples <= calls <= hi*nSamples
