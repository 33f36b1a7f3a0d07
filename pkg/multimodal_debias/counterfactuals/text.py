'''
Textual counterfactuals: render the extractor prompts, parse the extractor
answers into semantic phrases and mask those phrases to obtain the
spurious-only text.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import re

from ..common import *
from .. import io
from .. import records

PROMPT_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'prompts')
PROMPT_FILES = {'ImageAnalysis': 'image_analysis.txt',
                'TextAnalysis':  'text_analysis.txt'}
DEFAULT_MASK_TOKEN = '[MASK]'

EXTRACTOR = 'extractor'
MANUAL = 'manual'

_SLOT = re.compile(r'(?<!%)%s')
_MAIN_HEADING = re.compile(r'Main\s+Content\s+(?:Words|Elements)\W*?\[(.*?)\]',
                           re.IGNORECASE | re.DOTALL)
_CONTEXT_HEADING = re.compile(r'Context\s+(?:Words|Elements)\W*?\[(.*?)\]',
                              re.IGNORECASE | re.DOTALL)
_QUOTES = '"\'`“”‘’'


class PromptAsset:
  '''
  Named prompt template with exactly one %s slot for the sample text.
  '''
  def __init__(self, name, template):
    self.name = str(name)
    self.template = str(template)
    n = len(_SLOT.findall(self.template))
    if n != 1:
      raise TemplateError(f'prompt "{self.name}" needs exactly one %s slot, found {n}')

  def __repr__(self):
    return f'PromptAsset({self.name!r})'


def loadPromptAsset(name, promptDir=None):
  if name not in PROMPT_FILES:
    raise ConfigError(f'unknown prompt "{name}", known prompts are {sorted(PROMPT_FILES)}')
  path = os.path.join(promptDir or PROMPT_DIR, PROMPT_FILES[name])
  with open(path, 'r', encoding='utf8') as f:
    return PromptAsset(name, f.read())


def renderPrompt(asset, text):
  '''
  Substitute the sample text verbatim into the slot.
  '''
  if not isinstance(asset, PromptAsset):
    asset = PromptAsset('inline', asset)
  m = _SLOT.search(asset.template)
  return asset.template[:m.start()] + str(text) + asset.template[m.end():]


class SemanticAnnotation:
  '''
  Semantic phrases of one sample (the content that carries the label) plus
  the optional context phrases the extractor reported.
  '''
  def __init__(self, sampleId, semanticPhrases=(), contextPhrases=(), source=EXTRACTOR):
    if source not in (EXTRACTOR, MANUAL):
      raise ConfigError(f'unknown annotation source "{source}"')
    self.sampleId = None if sampleId is None else str(sampleId)
    self.semanticPhrases = _cleanPhrases(semanticPhrases)
    self.contextPhrases = _cleanPhrases(contextPhrases)
    self.source = source

  def withId(self, sampleId):
    return SemanticAnnotation(sampleId, self.semanticPhrases, self.contextPhrases, self.source)

  def toRecord(self):
    return dict(sample_id=self.sampleId, semantic_phrases=list(self.semanticPhrases),
                context_phrases=list(self.contextPhrases), source=self.source)

  @classmethod
  def fromRecord(cls, rec):
    if 'sample_id' not in rec:
      raise DataError(f'annotation record misses "sample_id": {rec}')
    return cls(rec['sample_id'], rec.get('semantic_phrases') or (),
               rec.get('context_phrases') or (), rec.get('source', MANUAL))

  def __eq__(self, other):
    return (isinstance(other, SemanticAnnotation)
              and self.semanticPhrases == other.semanticPhrases
              and self.contextPhrases == other.contextPhrases)

  def __repr__(self):
    return f'SemanticAnnotation({self.sampleId!r}, {list(self.semanticPhrases)})'


def _cleanPhrases(phrases):
  if isinstance(phrases, str):
    phrases = _splitList(phrases)
  result = []
  for p in phrases:
    p = str(p).strip().strip(_QUOTES).strip()
    if p and p.lower() not in [r.lower() for r in result]:
      result.append(p)
  return tuple(result)


def _splitList(body):
  return [p for p in body.replace('\n', ',').split(',')]


def parseExtractorResponse(response, sampleId=None):
  '''
  Extract the bracketed list after "Main Content Words:" (or "Main Content
  Elements:"), plus the context list if present. Raises ParseError if the
  heading is missing; an empty list is a valid answer.
  '''
  m = _MAIN_HEADING.search(response or '')
  if m is None:
    raise ParseError(f'extractor response{" for "+repr(sampleId) if sampleId else ""} '
                     'has no "Main Content Words/Elements" list')
  ctx = _CONTEXT_HEADING.search(response[m.end():]) or _CONTEXT_HEADING.search(response)
  return SemanticAnnotation(sampleId, _splitList(m.group(1)),
                            _splitList(ctx.group(1)) if ctx else (), source=EXTRACTOR)


def _phrasePattern(phrases):
  parts = [r'\s+'.join(re.escape(w) for w in p.split()) for p in
             sorted(phrases, key=lambda p: (-len(p), p.lower()))]
  return re.compile(r'(?<!\w)(?:' + '|'.join(parts) + r')(?!\w)', re.IGNORECASE)


def applyMask(text, annotation, maskToken=DEFAULT_MASK_TOKEN):
  '''
  Replace every case-insensitive, whole-word occurrence of each semantic
  phrase by the mask token, longest phrases first, left to right. Text
  already inside a mask token is never touched again.
  '''
  if not maskToken:
    raise ConfigError('mask token must be non-empty')
  phrases = annotation.semanticPhrases if isinstance(annotation, SemanticAnnotation) \
              else _cleanPhrases(annotation)
  if not phrases:
    return text
  pattern = _phrasePattern(phrases)
  segments = text.split(maskToken)
  return maskToken.join(pattern.sub(lambda m: maskToken, seg) for seg in segments)


def missingPhrases(text, annotation):
  '''
  Semantic phrases that do not occur in the text at all.
  '''
  return [p for p in annotation.semanticPhrases
            if not _phrasePattern([p]).search(text)]


def maskDataset(samples, annotations, maskToken=DEFAULT_MASK_TOKEN):
  '''
  Build the spurious-only text of every sample that has an annotation.

  Arguments:
  ==========
  samples : iterable of Sample

  annotations : dict
    sample id -> SemanticAnnotation

  Returns (spuriousTexts, report). Samples whose annotation is empty or
  whose phrases all miss the text get no spurious text and are listed in
  report['unusable'], so they drop out of categorization downstream.
  '''
  spurious, unusable, unannotated = {}, [], []
  nPhrases = nMissed = 0
  for s in samples:
    ann = annotations.get(s.id)
    if ann is None:
      unannotated.append(s.id)
      continue
    missed = missingPhrases(s.text, ann)
    nPhrases += len(ann.semanticPhrases)
    nMissed += len(missed)
    if not ann.semanticPhrases or len(missed) == len(ann.semanticPhrases):
      unusable.append(s.id)
      io.verb(f'sample "{s.id}": no semantic phrase found in its text, excluded')
      continue
    spurious[s.id] = applyMask(s.text, ann, maskToken)

  missRate = nMissed/nPhrases if nPhrases else 0.
  io.info(f'masked {len(spurious)} texts, phrase miss rate {100*missRate:.1f}% '
          f'({nMissed}/{nPhrases}), {len(unusable)} unusable, {len(unannotated)} unannotated')
  return spurious, dict(missRate=missRate, missedPhrases=nMissed, phrases=nPhrases,
                        unusable=unusable, unannotated=unannotated)


def saveAnnotations(path, annotations, configFingerprint=None):
  records.writeRecords(path, [a.toRecord() for a in annotations],
                       'annotations', configFingerprint)


def loadAnnotations(path):
  _, recs = records.readRecords(path, schema='annotations')
  result = {}
  for rec in recs:
    ann = SemanticAnnotation.fromRecord(rec)
    if ann.sampleId in result:
      raise DataError(f'{path}:{rec["_line"]}: duplicate annotation for "{ann.sampleId}"')
    result[ann.sampleId] = ann
  return result


def loadExtractorResponses(folder, sampleIds):
  '''
  Parse one extractor answer per sample from <folder>/<id>.txt. Parse
  failures are flagged and returned separately, the samples are kept.
  '''
  annotations, failures = {}, {}
  for sampleId in sampleIds:
    path = os.path.join(folder, f'{sampleId}.txt')
    if not os.path.exists(path):
      continue
    with open(path, 'r', encoding='utf8') as f:
      try:
        annotations[sampleId] = parseExtractorResponse(f.read(), sampleId)
      except ParseError as e:
        io.warn(str(e), logOnly=True)
        failures[sampleId] = str(e)
  return annotations, failures
