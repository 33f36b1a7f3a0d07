'''
Evaluation reports: one JSON document and one plain-text table per method
run, and a comparison table over all reports of a run folder.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import glob

from ..common import *
from ..metrics import roundPercent
from .. import io
from .. import records

SCHEMA = 'method-report'


def formatReport(report):
  '''
  Plain-text table of one report.
  '''
  ev = report['evaluation']
  rep = ev['report']
  lines = [f'method {report["method"]} on {ev["samples"]} samples',
           f'  accuracy    {roundPercent(rep["accuracy"]):6.2f}%',
           f'  macro F1    {roundPercent(rep["macroF1"]):6.2f}%',
           f'  weighted F1 {roundPercent(rep["weightedF1"]):6.2f}%',
           f'  tuning metric {ev["score"]:.4f}',
           '',
           f'  {"class":<16}{"precision":>10}{"recall":>10}{"F1":>10}{"support":>10}']
  for c in rep['perClass']:
    lines.append(f'  {c["label"]:<16}{roundPercent(c["precision"]):>10.2f}'
                 f'{roundPercent(c["recall"]):>10.2f}{roundPercent(c["f1"]):>10.2f}'
                 f'{c["support"]:>10d}')
  if ev.get('perCategoryError'):
    lines += ['', '  error rate per debias category']
    for name, e in ev['perCategoryError'].items():
      lines.append(f'  {name:<16}{roundPercent(e):>10.2f}%')
  if ev.get('routes'):
    lines += ['', '  routes: ' + ', '.join(f'{k} {v}' for k, v in ev['routes'].items())]
  if ev.get('uncorrected'):
    lines.append(f'  {ev["uncorrected"]} sample(s) kept uncorrected')
  if report.get('weights'):
    lines += ['', f'  weights: {report["weights"]}']
  if report.get('ledger'):
    lines.append('  backend calls: ' + ', '.join(f'{k}: {v}' for k, v in sorted(report['ledger'].items())))
  return '\n'.join(lines)+'\n'


def writeReport(folder, method, evaluation, ledger=None, weights=None, trace=None,
                extra=None, configFingerprint=None):
  '''
  Write report-<method>.json and report-<method>.txt into the folder and
  return the report dict.

  Arguments:
  ==========
  evaluation : dict
    Output of evaluateMethod.

  ledger : CallLedger or None
    Its counters are frozen into the report.

  weights, trace : WeightSet, SearchTrace or None
    Attached when the method used tuned weights.
  '''
  report = dict(schema=SCHEMA, version=records.SCHEMA_VERSION,
                fingerprint=configFingerprint or '', method=method, evaluation=evaluation)
  if ledger is not None:
    report['ledger'] = ledger.counts()
  if weights is not None:
    report['weights'] = weights.toDict()
  if trace is not None:
    report['trace'] = trace.toDict()
  if extra:
    report.update(extra)
  jsonPath = os.path.join(folder, f'report-{method}.json')
  records.writeJson(jsonPath, report)
  records.writeText(os.path.join(folder, f'report-{method}.txt'), formatReport(report))
  io.info(formatReport(report))
  return report


def loadReport(path):
  d = records.readJson(path)
  if d.get('schema') != SCHEMA:
    raise SchemaError(f'{path} is not a method report')
  return d


def comparisonTable(folder):
  '''
  One line per report found in the run folder.
  '''
  paths = sorted(glob.glob(os.path.join(folder, 'report-*.json')))
  if not paths:
    raise DataError(f'no reports in {folder}, run "multimodal-debias run" first')
  lines = [f'{"method":<20}{"samples":>8}{"accuracy":>10}{"macro F1":>10}{"metric":>10}']
  for p in paths:
    r = loadReport(p)
    ev = r['evaluation']
    lines.append(f'{r["method"]:<20}{ev["samples"]:>8d}'
                 f'{roundPercent(ev["report"]["accuracy"]):>10.2f}'
                 f'{roundPercent(ev["report"]["macroF1"]):>10.2f}{ev["score"]:>10.4f}')
  return '\n'.join(lines)+'\n'
