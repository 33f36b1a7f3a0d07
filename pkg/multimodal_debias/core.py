'''
Shared domain types and the elementary length-K vector algebra every other
submodule builds on. All types are immutable after construction.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import hashlib

from .common import *

# view variants of a single modality
ORIGINAL = 'original'
SPURIOUS = 'spurious'
MASKED   = 'masked'
VARIANTS = (ORIGINAL, SPURIOUS, MASKED)


class Variant:
  '''namespace of the view variants'''
  ORIGINAL = ORIGINAL
  SPURIOUS = SPURIOUS
  MASKED   = MASKED


class ClassSpace:
  '''
  Ordered class labels of a K-class task. The order is taken as given and
  never sorted, so class indices stay stable across cached predictions.
  '''
  def __init__(self, labels):
    labels = tuple(str(l) for l in labels)
    if len(labels) < 2:
      raise ConfigError(f'a class space needs at least two labels, got {list(labels)}')
    if len(set(labels)) != len(labels):
      raise ConfigError(f'class labels must be unique, got {list(labels)}')
    self._labels = labels

  @property
  def labels(self):
    return self._labels

  @property
  def K(self):
    return len(self._labels)

  def index(self, label):
    try:
      return self._labels.index(str(label))
    except ValueError:
      raise DataError(f'unknown label "{label}", known labels are {list(self._labels)}')

  def __eq__(self, other):
    return isinstance(other, ClassSpace) and self._labels == other._labels

  def __hash__(self):
    return hash(self._labels)

  def __repr__(self):
    return f'ClassSpace({list(self._labels)})'


class ProbVector:
  '''
  Length-K score vector over classes. Normalized vectors are probabilities,
  corrected vectors are carried with normalized=False and may go negative.
  '''
  def __init__(self, scores, normalized=False, classSpace=None):
    scores = array(scores, dtype=float).reshape(-1)
    if classSpace is not None and len(scores) != classSpace.K:
      raise ShapeError(f'expected {classSpace.K} scores, got {len(scores)}')
    if normalized:
      if not isfinite(scores).all() or (scores < -1e-12).any() or (scores > 1+1e-12).any():
        raise NumericError(f'normalized vector has entries outside [0,1]: {scores}')
      if abs(scores.sum()-1) > 1e-9:
        raise NumericError(f'normalized vector does not sum to one: {scores} (sum {scores.sum()})')
    scores.setflags(write=False)
    self._scores = scores
    self._normalized = True if normalized else False
    self._classSpace = classSpace

  @property
  def scores(self):
    return self._scores

  @property
  def normalized(self):
    return self._normalized

  @property
  def classSpace(self):
    return self._classSpace

  @property
  def K(self):
    return len(self._scores)

  def __len__(self):
    return len(self._scores)

  def __getitem__(self, i):
    return self._scores[i]

  def __iter__(self):
    return iter(self._scores)

  def tolist(self):
    return [float(x) for x in self._scores]

  def __eq__(self, other):
    return (isinstance(other, ProbVector)
              and self._normalized == other._normalized
              and array_equal(self._scores, other._scores))

  def __hash__(self):
    return hash((self._scores.tobytes(), self._normalized))

  def __repr__(self):
    return f'ProbVector({self.tolist()}, normalized={self._normalized})'


def asScores(p):
  '''
  Return the raw float array behind a ProbVector or any sequence of numbers.
  '''
  if isinstance(p, ProbVector):
    return p.scores
  return array(p, dtype=float).reshape(-1)


def normalize(p):
  '''
  Softmax normalization. Vectors that are already normalized are returned
  unchanged, which makes the operation idempotent.
  '''
  if isinstance(p, ProbVector) and p.normalized:
    return p
  x = asScores(p)
  if len(x) == 0:
    raise ShapeError('cannot normalize an empty vector')
  if not isfinite(x).all():
    raise NumericError(f'cannot normalize non-finite scores {x}')
  e = exp(x-x.max())
  probs = e/e.sum()
  # absorb the last ulp so the normalized invariant holds exactly enough
  probs = probs/probs.sum()
  return ProbVector(probs, normalized=True,
                    classSpace=p.classSpace if isinstance(p, ProbVector) else None)


def argTop(p):
  '''
  Index of the maximum score, ties break to the lowest class index.
  '''
  x = asScores(p)
  if len(x) == 0:
    raise ShapeError('arg top of an empty vector is undefined')
  return int(argmax(x))


class Sample:
  '''
  One dataset item: text T, optional image path I and optional label index.
  '''
  def __init__(self, id, text='', imagePath=None, label=None, tags=()):
    self._id = str(id)
    self._text = '' if text is None else str(text)
    self._imagePath = None if imagePath in (None, '') else str(imagePath)
    self._label = None if label is None else int(label)
    self._tags = tuple(str(t) for t in tags)
    if not self._text.strip() and self._imagePath is None:
      raise DataError(f'sample "{self._id}" has neither text nor image')
    if self._label is not None and self._label < 0:
      raise DataError(f'sample "{self._id}" has negative label {self._label}')

  id        = property(lambda self: self._id)
  text      = property(lambda self: self._text)
  imagePath = property(lambda self: self._imagePath)
  label     = property(lambda self: self._label)
  tags      = property(lambda self: self._tags)

  def hasText(self):
    return self._text.strip() != ''

  def hasImage(self):
    return self._imagePath is not None

  def withoutImage(self):
    return Sample(self._id, self._text, None, self._label, self._tags)

  def toRecord(self):
    rec = dict(id=self._id, text=self._text, image_path=self._imagePath, label=self._label)
    if self._tags:
      rec['tags'] = list(self._tags)
    return rec

  def __repr__(self):
    return f'Sample({self._id!r}, label={self._label})'


class SampleView:
  '''
  A sample seen through per-modality variants. Original shows the modality
  as is, Spurious shows only its counterfactual (semantic content removed)
  and Masked removes the modality entirely.
  '''
  def __init__(self, base, textVariant=ORIGINAL, imageVariant=ORIGINAL,
               spuriousText=None, spuriousImagePath=None):
    for v in (textVariant, imageVariant):
      if v not in VARIANTS:
        raise ConfigError(f'unknown view variant "{v}", expected one of {VARIANTS}')
    if textVariant == SPURIOUS and spuriousText is None:
      raise DataError(f'sample "{base.id}" has no counterfactual text for a spurious-only view')
    if imageVariant == SPURIOUS and spuriousImagePath is None:
      raise DataError(f'sample "{base.id}" has no counterfactual image for a spurious-only view')
    self._base = base
    self._textVariant = textVariant
    self._imageVariant = imageVariant
    self._spuriousText = spuriousText
    self._spuriousImagePath = spuriousImagePath

  base              = property(lambda self: self._base)
  textVariant       = property(lambda self: self._textVariant)
  imageVariant      = property(lambda self: self._imageVariant)
  spuriousText      = property(lambda self: self._spuriousText)
  spuriousImagePath = property(lambda self: self._spuriousImagePath)

  @property
  def text(self):
    '''text presented by this view, None if masked'''
    if self._textVariant == ORIGINAL:
      return self._base.text
    if self._textVariant == SPURIOUS:
      return self._spuriousText
    return None

  @property
  def imagePath(self):
    '''image presented by this view, None if masked'''
    if self._imageVariant == ORIGINAL:
      return self._base.imagePath
    if self._imageVariant == SPURIOUS:
      return self._spuriousImagePath
    return None

  def descriptor(self):
    return dict(text_variant=self._textVariant, image_variant=self._imageVariant,
                text=self.text, image_path=self.imagePath)

  def fingerprint(self):
    h = hashlib.sha256()
    for part in (self._base.id, self._textVariant, self._imageVariant,
                 self.text or '', self.imagePath or ''):
      h.update(part.encode('utf8'))
      h.update(b'\0')
    return h.hexdigest()[:16]

  def __repr__(self):
    return f'SampleView({self._base.id!r}, text={self._textVariant}, image={self._imageVariant})'


def originalView(sample):
  return SampleView(sample)

def textSpuriousView(sample, spuriousText):
  '''(T_spurious, masked image), the view behind p_t'''
  return SampleView(sample, SPURIOUS, MASKED, spuriousText=spuriousText)

def imageSpuriousView(sample, spuriousImagePath):
  '''(masked text, I_spurious), the view behind p_i'''
  return SampleView(sample, MASKED, SPURIOUS, spuriousImagePath=spuriousImagePath)
