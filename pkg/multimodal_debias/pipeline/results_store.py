'''
Numbered run folders below the output directory and the artifact layout
inside them. A run folder holds the frozen config, the log and every
artifact a stage produced.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os

from ..common import *
from .. import io

# artifact file names inside a run folder
ARTIFACTS = dict(
  cache='predictions.cache.jsonl',
  scenarios='scenarios.jsonl',
  categorization='categorization.jsonl',
  trainingSet='training-{role}.jsonl',
  expert='expert-{role}.json',
  router='router.json',
  routerReport='router-report.json',
  weights='weights-{method}.json',
  trace='trace-{method}.json',
  surface='surface-mid.csv',
  lift='lift.csv',
  report='report-{method}.json',
  reportText='report-{method}.txt',
  annotations='annotations.jsonl',
  assets='counterfactuals.jsonl',
)


def getLatestRunIndex(outDir):
  if os.path.exists(outDir):
    safeInt = lambda x: int(x) if x.isnumeric() else -1
    return max([safeInt(f[4:]) for f in os.listdir(outDir) if f.startswith('run-')]+[-1])
  return -1


def generateRunFolderName(outDir, index=None):
  if index is None:
    index = getLatestRunIndex(outDir)+1
  return f'run-{int(index):04d}'


def getLatestRunFolderPath(outDir):
  index = getLatestRunIndex(outDir)
  if index < 0:
    return None
  return os.path.join(outDir, generateRunFolderName(outDir, index))


class RunStore:
  '''
  Artifact paths of one run folder. Without an index the latest run is
  reused if reuse is set, otherwise a new run folder is created.

  Arguments:
  ==========
  outDir : str
    Output directory holding the run folders.

  index : int or None
    Run index to open.

  reuse : bool
    Open the latest run instead of starting a new one.
  '''
  def __init__(self, outDir, index=None, reuse=False):
    self.outDir = os.path.abspath(str(outDir))
    if index is None and reuse:
      index = getLatestRunIndex(self.outDir)
      if index < 0:
        index = None
    self.folder = os.path.join(self.outDir, generateRunFolderName(self.outDir, index))

    # check whether output path is writable
    try:
      os.makedirs(self.folder, exist_ok=True)
    except Exception:
      raise ConfigError(f'it seems the output path is not writable: {self.folder}')

  @property
  def name(self):
    return os.path.basename(self.folder)

  def path(self, artifact, **fields):
    if artifact not in ARTIFACTS:
      raise ConfigError(f'unknown run artifact "{artifact}"')
    return os.path.join(self.folder, ARTIFACTS[artifact].format(**fields))

  def exists(self, artifact, **fields):
    return os.path.exists(self.path(artifact, **fields))

  def require(self, artifact, producer, **fields):
    '''
    Path of an artifact an earlier stage must have produced, an actionable
    error naming that stage otherwise.
    '''
    p = self.path(artifact, **fields)
    if not os.path.exists(p):
      raise DataError(f'{os.path.basename(p)} is missing in {self.folder}, '
                      f'run "multimodal-debias {producer}" first')
    return p

  def startLogging(self):
    io.setLogDir(self.folder)
    io.verb(f'using run folder {self.folder}')
    return self
