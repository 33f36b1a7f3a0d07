#!/usr/bin/env python3

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


import unittest
import tempfile
import os

from multimodal_debias.cli import main
from multimodal_debias.pipeline import loadReport
from multimodal_debias import records


class TestCommandLine(unittest.TestCase):
  def setUp(self):
    self._tmp = tempfile.TemporaryDirectory()
    self.tmp = self._tmp.name
    self.data = os.path.join(self.tmp, 'data')
    self.out = os.path.join(self.tmp, 'results')
    self.run_ = os.path.join(self.out, 'run-0000')
    self.assertEqual(main(['synth', '--out', self.data, '--n-train', '80', '--n-valid', '40',
                           '--n-test', '40', '--seed', '1']), 0)

  def tearDown(self):
    self._tmp.cleanup()

  def cli(self, *args):
    return main(list(args) + ['--dataset', os.path.join(self.data, 'manifest.jsonl'),
                              '--out', self.out, '--workers', '1', '--quiet'])

  def test_synthWritesCorpus(self):
    for name in ('manifest.jsonl', 'features.npz', 'counterfactuals.jsonl'):
      self.assertTrue(os.path.exists(os.path.join(self.data, name)), msg=name)

  def test_zeroWeightsMatchBaseline(self):
    self.assertEqual(self.cli('probe'), 0)
    self.assertTrue(os.path.exists(os.path.join(self.run_, 'scenarios.jsonl')))
    self.assertTrue(os.path.exists(os.path.join(self.run_, 'config.json')))
    self.assertEqual(self.cli('categorize'), 0)
    self.assertEqual(self.cli('run', '--method', 'base'), 0)
    self.assertEqual(self.cli('run', '--method', 'mid', '--alpha', '0', '--beta', '0',
                              '--no-cache'), 0)
    base = loadReport(os.path.join(self.run_, 'report-base.json'))
    mid = loadReport(os.path.join(self.run_, 'report-mid.json'))
    self.assertEqual(base['evaluation']['confusion'], mid['evaluation']['confusion'])
    self.assertEqual(base['evaluation']['samples'], 40)
    self.assertTrue(mid['within_overhead'])
    # probing filled the cache, base made no backend call
    self.assertEqual(base['ledger'], {})
    self.assertEqual(mid['ledger'], {'mid': 120})
    self.assertEqual(self.cli('report'), 0)

  def test_fullChain(self):
    for args in (['probe'], ['categorize'], ['emit'], ['train-experts'], ['train-router'],
                 ['tune', '--method', 'mid', '--budget', '10', '--surface', '3'],
                 ['tune', '--method', 'mme-jd', '--budget', '10', '--oracle-router'],
                 ['run', '--method', 'mid'],
                 ['run', '--method', 'mme-jd', '--oracle-router'],
                 ['run', '--method', 'mctd-eval'],
                 ['lift'], ['report']):
      self.assertEqual(self.cli(*args), 0, msg=' '.join(args))
    for name in ('training-GE.jsonl', 'expert-MCTD.json', 'router.json', 'router-report.json',
                 'weights-mid.json', 'weights-mme-jd-oracle.json', 'surface-mid.csv', 'lift.csv',
                 'report-mme-jd-oracle.json', 'report-mctd-eval.txt'):
      self.assertTrue(os.path.exists(os.path.join(self.run_, name)), msg=name)
    report = loadReport(os.path.join(self.run_, 'report-mme-jd-oracle.json'))
    self.assertTrue(report['oracle_router'])
    self.assertTrue(report['tuning_traces'])
    self.assertLessEqual(set(report['tuning_traces']), {'1', '2', '3'})
    weights = records.readJson(os.path.join(self.run_, 'weights-mid.json'))
    self.assertEqual(weights['method'], 'mid')

  def test_missingPrerequisite(self):
    self.assertEqual(self.cli('categorize'), 1)
    self.assertEqual(self.cli('run', '--method', 'mid'), 1)
    self.assertEqual(self.cli('train-experts'), 1)

  def test_configErrors(self):
    self.assertEqual(self.cli('probe', '--epsilon', '-1'), 3)
    self.assertEqual(main(['probe', '--out', self.out]), 3)
    settings = os.path.join(self.tmp, 'settings.json')
    records.writeJson(settings, dict(colour='red'))
    self.assertEqual(self.cli('probe', '--config', settings), 3)


if __name__ == '__main__':
  unittest.main()
