#!/usr/bin/env python3
'''
Find python sources without the license header. Interactive by default,
with --check only list them and exit nonzero if any is missing.
'''

import os
import sys

HEADER = """__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'
""".strip()

FILENAME_BLACKLIST = ('setup.py',)
DIRNAME_BLACKLIST  = ('.git', 'dev', 'build', 'dist', 'examples', 'results', '__pycache__')
SRC_SUFFIXES       = ('.py',)
ROOT               = os.path.join(os.path.dirname(os.path.abspath(__file__)), '..')

def conf(msg, default=True):
  msg += ' (Y/n)' if default else ' (y/N)'
  while True:
    i = input(msg+' ').strip().lower()
    if i == '':
      return default
    if i in ('y', 'yes'):
      return True
    if i in ('n', 'no'):
      return False
    print('invalid input, expecting (y)es or (n)o\n')

def sourcesWithoutHeader():
  for r, ds, fs in os.walk(ROOT, topdown=True):
    ds[:] = sorted(d for d in ds if d not in DIRNAME_BLACKLIST)
    for f in sorted(fs):
      if f.endswith(SRC_SUFFIXES) and f not in FILENAME_BLACKLIST:
        with open(os.path.join(r, f)) as _f:
          content = _f.read()
        if HEADER.splitlines()[0] not in content:
          yield os.path.join(r, f), content

def insertHeader(path, content):
  # keep shebang and module docstring above the header
  lines = content.split('\n')
  head = []
  if lines and lines[0].startswith('#!'):
    head.append(lines.pop(0))
  with open(path, 'w') as _f:
    _f.write('\n'.join(head + ([''] if head else []) + [HEADER, '']))
    if '\n'.join(lines).strip():
      _f.write('\n'+'\n'.join(lines))

def main(check=False):
  missing = 0
  for path, content in sourcesWithoutHeader():
    rel = os.path.relpath(path, start=ROOT)
    missing += 1
    if check:
      print(f'missing header: {rel}')
    elif conf(f'found source file {rel} with missing header, insert?'):
      insertHeader(path, content)
  return 1 if check and missing else 0

if __name__ == '__main__':
  code = main(check='--check' in sys.argv[1:])
  print('done')
  sys.exit(code)
