'''
Line-record files: one JSON document per line, the first line is a header
carrying schema name, schema version and a config fingerprint. Whole-file
writes are atomic (temp file and rename).
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import json
import hashlib
from atomicwrites import atomic_write

from .common import *

SCHEMA_VERSION = 1


def fingerprint(obj, length=12):
  '''
  Short sha256 fingerprint of any JSON-serializable object (keys sorted).
  '''
  blob = json.dumps(obj, sort_keys=True, separators=(',', ':'), default=str)
  return hashlib.sha256(blob.encode('utf8')).hexdigest()[:length]


def makeHeader(schema, configFingerprint=None, **extra):
  return dict(schema=schema, version=SCHEMA_VERSION,
              fingerprint=configFingerprint or '', **extra)


def _isHeader(rec, schema=None):
  return (isinstance(rec, dict) and 'schema' in rec and 'version' in rec
            and (schema is None or rec['schema'] == schema))


def writeRecords(path, records, schema, configFingerprint=None, **headerExtra):
  '''
  Atomically write header + records as JSON lines.
  '''
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with atomic_write(str(path), mode='w', overwrite=True, encoding='utf8') as f:
    f.write(json.dumps(makeHeader(schema, configFingerprint, **headerExtra),
                       sort_keys=True, ensure_ascii=False)+'\n')
    for rec in records:
      f.write(json.dumps(rec, sort_keys=True, ensure_ascii=False, default=_plain)+'\n')


def readRecords(path, schema=None, requireHeader=False):
  '''
  Read a JSON-lines file, returns (header or None, list of records). Blank
  lines are skipped, malformed lines raise DataError naming the line number.
  '''
  if not os.path.exists(path):
    raise DataError(f'file {path} does not exist')
  header, records = None, []
  with open(path, 'r', encoding='utf8') as f:
    for lineNo, line in enumerate(f, start=1):
      if not line.strip():
        continue
      try:
        rec = json.loads(line)
      except json.JSONDecodeError as e:
        raise DataError(f'{path}:{lineNo}: malformed record ({e})')
      if lineNo == 1 and _isHeader(rec):
        if schema is not None and rec['schema'] != schema:
          raise SchemaError(f'{path}: expected schema "{schema}", found "{rec["schema"]}"')
        if rec['version'] > SCHEMA_VERSION:
          raise SchemaError(f'{path}: schema version {rec["version"]} is newer than '
                            f'supported version {SCHEMA_VERSION}')
        header = rec
        continue
      if not isinstance(rec, dict):
        raise DataError(f'{path}:{lineNo}: expected a JSON object')
      rec['_line'] = lineNo
      records.append(rec)
  if requireHeader and header is None:
    raise SchemaError(f'{path}: missing header line')
  return header, records


def _plain(obj):
  # numpy scalars and arrays
  if hasattr(obj, 'tolist'):
    return obj.tolist()
  raise TypeError(f'{type(obj).__name__} is not JSON serializable')


def writeJson(path, obj):
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with atomic_write(str(path), mode='w', overwrite=True, encoding='utf8') as f:
    json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False, default=_plain)
    f.write('\n')


def readJson(path):
  if not os.path.exists(path):
    raise DataError(f'file {path} does not exist')
  with open(path, 'r', encoding='utf8') as f:
    try:
      return json.load(f)
    except json.JSONDecodeError as e:
      raise DataError(f'{path}: malformed JSON ({e})')


def writeText(path, text):
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with atomic_write(str(path), mode='w', overwrite=True, encoding='utf8') as f:
    f.write(text)
