__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import json
import hashlib
import threading

from ..common import *
from .. import io
from .. import records

SCHEMA = 'prediction-cache'


def cacheKey(predictorId, promptVersion, view):
  '''
  Content hash of predictor, prompt version and the view's presented content.
  '''
  h = hashlib.sha256()
  for part in (predictorId, promptVersion or '', view.fingerprint()):
    h.update(str(part).encode('utf8'))
    h.update(b'\0')
  return h.hexdigest()


class PredictionCache:
  '''
  Predictions keyed by content hash. With a path, every new entry is
  appended as one JSON line, so a crashed run keeps what it computed.
  Unreadable lines and records without key or scores are dropped on load.
  '''
  def __init__(self, path=None, configFingerprint=None):
    self.path = path
    self._lock = threading.Lock()
    self._entries = {}
    if path is not None:
      self._load(configFingerprint)

  def _load(self, configFingerprint):
    if not os.path.exists(self.path):
      os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
      with open(self.path, 'w', encoding='utf8') as f:
        f.write(json.dumps(records.makeHeader(SCHEMA, configFingerprint), sort_keys=True)+'\n')
      return
    dropped = 0
    with open(self.path, 'r', encoding='utf8') as f:
      for lineNo, line in enumerate(f, start=1):
        if not line.strip():
          continue
        try:
          rec = json.loads(line)
        except json.JSONDecodeError:
          dropped += 1
          continue
        if lineNo == 1 and 'schema' in rec:
          if rec['schema'] != SCHEMA:
            raise SchemaError(f'{self.path} is not a prediction cache')
          continue
        if (not isinstance(rec, dict) or not isinstance(rec.get('key'), str)
              or not isinstance(rec.get('scores'), list)):
          dropped += 1
          continue
        self._entries[rec['key']] = rec['scores']
    if dropped:
      io.warn(f'dropped {dropped} unreadable line(s) of prediction cache {self.path}')
    io.verb(f'loaded {len(self._entries)} cached predictions from {self.path}')

  def get(self, key):
    with self._lock:
      return self._entries.get(key)

  def put(self, key, scores, meta=None):
    scores = [float(s) for s in scores]
    with self._lock:
      if key in self._entries:
        return
      self._entries[key] = scores
      if self.path is not None:
        rec = dict(key=key, scores=scores)
        if meta:
          rec['meta'] = meta
        with open(self.path, 'a', encoding='utf8') as f:
          f.write(json.dumps(rec, sort_keys=True)+'\n')

  def __contains__(self, key):
    with self._lock:
      return key in self._entries

  def __len__(self):
    with self._lock:
      return len(self._entries)
