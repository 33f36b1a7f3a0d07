'''
Command line surface. Every subcommand runs one pipeline stage, reads the
artifacts of earlier stages from the run folder and writes its own there:

  probe -> categorize -> emit -> train-experts / train-router -> tune -> run -> report

Exit codes: 0 success, 1 data error, 2 backend error, 3 config error.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import sys
import argparse
import functools

from .common import *
from .core import originalView
from .mediation import WeightSet, ScenarioOutputs
from .categorize import DebiasCategory, saveCategorization, loadCategorization, distribution
from .metrics import CallLedger, overheadCheck
from .router import (trainRouter, evaluateRouter, saveRouter, loadRouter, route,
                     loadEmbeddingFeatures)
from .tuning import tuneMid, tuneTfcd, tuneMrid, tuneMoe, evaluateSurface
from .counterfactuals.text import maskDataset, loadAnnotations
from .counterfactuals.image import counterfactualForSample
from .backend.cache import PredictionCache
from .backend.predictors import predict
from .backend.remote import RemotePredictor
from .backend.experts import saveExpert, loadExpert
from .datasets.manifest import (ingest, CounterfactualAssets, collectAssets, loadAssets,
                                saveAssets)
from .datasets.synthetic import SyntheticSpec, generateSynthetic, loadSyntheticBackend, ASSETS_FILE
from .datasets.emission import emitTrainingSets, saveTrainingSet, loadTrainingSet
from .datasets.lift import liftTable
from .pipeline import (RunConfig, RunStore, mapSamples, ProbeResult, probeScenarios,
                       categorizeSamples, categoryMap, oracleRoute, routerFeatures,
                       expertFeaturizer, trainExperts, runMethod, evaluateMethod, writeReport,
                       comparisonTable, METHODS, EXPERT_ROLES)
from . import io
from . import records

TUNED_METHODS = ('tfcd', 'mid', 'mrid', 'mme-jd')
ROUTED_METHODS = ('mrid', 'mme-jd')


class Session:
  '''
  Resolved configuration, run folder and lazily loaded inputs shared by the
  subcommands.
  '''
  def __init__(self, config, store):
    self.config = config
    self.store = store

  @property
  def fingerprint(self):
    return self.config.fingerprint()

  @functools.cached_property
  def manifest(self):
    if not self.config.dataset:
      raise ConfigError('no dataset given, pass --dataset or set "dataset" in the config file')
    return ingest(self.config.dataset)

  @functools.cached_property
  def syntheticBackend(self):
    return loadSyntheticBackend(self.manifest)

  @functools.cached_property
  def featureStore(self):
    return self.syntheticBackend[0] if self.manifest.isSynthetic else None

  @functools.cached_property
  def predictor(self):
    if self.config.backend == 'synthetic':
      return self.syntheticBackend[1]
    verbalizers = self.config.verbalizers or self.manifest.classSpace.labels
    return RemotePredictor(self.manifest.classSpace, self.config.endpointConfig(), verbalizers,
                           self.config.promptVersion)

  @functools.cached_property
  def cache(self):
    return PredictionCache(self.store.path('cache'), self.fingerprint)

  @functools.cached_property
  def embeddings(self):
    return loadEmbeddingFeatures(self.config.embeddings) if self.config.embeddings else None

  @functools.cached_property
  def assets(self):
    return self._assets()

  def _assets(self):
    config, manifest = self.config, self.manifest
    if config.assets:
      return loadAssets(config.assets)
    if self.store.exists('assets'):
      return loadAssets(self.store.path('assets'))
    if config.annotations:
      spurious, _ = maskDataset(manifest.samples, loadAnnotations(config.annotations),
                                config.maskToken)
      if config.attentionDir:
        params = config.maskParams()
        results = mapSamples(lambda s: counterfactualForSample(s, config.attentionDir, params),
                             manifest.samples, config.workerCount(), label='counterfactual images')
        for s, r in zip(manifest.samples, results):
          if isinstance(r, Exception):
            io.warn(f'sample "{s.id}": no counterfactual image, {r}', logOnly=True)
      assets = collectAssets(manifest, spurious)
      saveAssets(self.store.path('assets'), assets, self.fingerprint)
      return assets
    nextToManifest = os.path.join(manifest.root or '', ASSETS_FILE)
    if os.path.exists(nextToManifest):
      return loadAssets(nextToManifest)
    io.warn('no counterfactual assets found, only original views are available')
    return CounterfactualAssets()

  def probe(self):
    _, recs = records.readRecords(self.store.require('scenarios', 'probe'), schema='scenarios')
    return ProbeResult.fromRecords(recs, self.manifest.classSpace)

  def categorization(self):
    return loadCategorization(self.store.require('categorization', 'categorize'))

  def categories(self):
    return categoryMap(self.categorization())

  def router(self):
    return loadRouter(self.store.require('router', 'train-router'))

  def experts(self, roles):
    return {r: loadExpert(self.store.require('expert', 'train-experts', role=r), self.featureStore)
              for r in roles}

  def labeled(self, split):
    samples = [s for s in self.manifest.split(split) if s.label is not None]
    if not samples:
      raise DataError(f'the {split} split of dataset "{self.manifest.name}" has no labeled samples')
    return samples

  def methodKey(self, method):
    return f'{method}-oracle' if self.config.oracleRouter and method in ROUTED_METHODS else method

  def routes(self, samples, probe):
    '''
    Category of every sample: the categorization with --oracle-router, the
    trained router otherwise.
    '''
    if self.config.oracleRouter:
      categories = self.categories()
      return [oracleRoute(categories, s.id) for s in samples]
    router = self.router()
    features = routerFeatures(samples, probe, self.assets, self.config.maskToken, self.embeddings)
    return [route(router, features[s.id]) if s.id in features else DebiasCategory.NO_DEBIAS
              for s in samples]


##############################################################################
# subcommands


def cmdProbe(session, args):
  samples = session.manifest.samples
  ledger = CallLedger()
  probe = probeScenarios(session.predictor, samples, session.assets, session.cache, ledger,
                         'probe', session.config.workerCount())
  records.writeRecords(session.store.path('scenarios'), probe.toRecords(session.manifest.splits),
                       'scenarios', session.fingerprint)
  io.info(f'probe: {len(probe.scenarios)}/{len(samples)} samples with all three views, '
          f'backend calls {ledger.summary()}')
  return 0


def cmdCategorize(session, args):
  recs, summary, problems = categorizeSamples(session.probe(), session.manifest.samples,
                                              session.config.epsilon)
  saveCategorization(session.store.path('categorization'), recs, session.fingerprint)
  for split in ('train', 'valid', 'test'):
    ids = set(s.id for s in session.manifest.split(split))
    cats = [r.category for r in recs if r.sampleId in ids]
    if cats:
      io.info(f'{split}: ' + ', '.join(f'{k} {v:.1f}%' for k, v in distribution(cats).items()))
  return 0


def cmdEmit(session, args):
  scenarios = session.probe().scenarios if session.store.exists('scenarios') else None
  sets, problems = emitTrainingSets(session.manifest, session.categories(), session.assets,
                                    'train', session.config.reversedLabelPolicy, scenarios,
                                    session.config.seed)
  for role, ts in sets.items():
    saveTrainingSet(session.store.path('trainingSet', role=role), ts, session.fingerprint)
  if problems:
    io.warn(f'emit: {len(problems)} record(s) skipped for missing counterfactuals')
  return 0


def cmdTrainExperts(session, args):
  roles = args.roles or EXPERT_ROLES
  sets = {r: loadTrainingSet(session.store.require('trainingSet', 'emit', role=r)) for r in roles}
  experts = trainExperts(sets, session.manifest, expertFeaturizer(session.featureStore),
                         session.config.expertEpochs, session.config.expertLearningRate, roles)
  for role, expert in experts.items():
    saveExpert(session.store.path('expert', role=role), expert)
  return 0


def cmdTrainRouter(session, args):
  config = session.config
  probe = session.probe()
  categories = session.categories()

  def examples(split):
    samples = [s for s in session.manifest.split(split)
                 if s.id in categories and DebiasCategory.parse(categories[s.id]).isRoutable()]
    features = routerFeatures(samples, probe, session.assets, config.maskToken,
                              session.embeddings)
    kept = [s for s in samples if s.id in features]
    return [features[s.id] for s in kept], [categories[s.id] for s in kept]

  X, y = examples('train')
  Xv, yv = examples('valid')
  model = trainRouter(X, y, config.routerEpochs, config.routerLearningRate,
                      classWeighted=config.routerClassWeighted,
                      validation=(Xv, yv) if Xv else None,
                      checkpointEvery=config.routerCheckpointEvery)
  saveRouter(session.store.path('router'), model)
  report = evaluateRouter(model, Xv or X, yv or y)
  records.writeJson(session.store.path('routerReport'),
                    dict(schema='router-report', version=records.SCHEMA_VERSION,
                         fingerprint=session.fingerprint, split='valid' if Xv else 'train',
                         report=report))
  d = report['diagnostics']
  io.info(f'router accuracy {100*report["accuracy"]:.2f}% on the {"valid" if Xv else "train"} '
          f'split, predicted {DebiasCategory.NO_DEBIAS.name} share {100*d["predictedZeroShare"]:.1f}%')
  return 0


def _saveTuning(session, key, weights, traces):
  records.writeJson(session.store.path('weights', method=key),
                    dict(schema='weight-set', version=records.SCHEMA_VERSION,
                         fingerprint=session.fingerprint, method=key, weights=weights.toDict()))
  traces = traces if isinstance(traces, dict) else {'all': traces}
  records.writeJson(session.store.path('trace', method=key),
                    dict(schema='search-traces', version=records.SCHEMA_VERSION,
                         fingerprint=session.fingerprint, method=key,
                         traces={str(k): t.toDict() for k, t in traces.items()}))


def cmdTune(session, args):
  config, method = session.config, args.method
  key = session.methodKey(method)
  valid = session.labeled('valid')
  options = dict(metric=config.metric, budget=config.budget, seed=config.seed,
                 bounds=tuple(config.weightBounds), search=config.searchOptions())

  if method == 'mme-jd':
    experts = session.experts(('GE', 'IDE', 'TDE'))
    views = [originalView(s) for s in valid]
    outputs = {r: [predict(e, v) for v in views] for r, e in experts.items()}
    probe = None if config.oracleRouter else session.probe()
    weights, traces = tuneMoe(outputs['GE'], outputs['IDE'], outputs['TDE'],
                              [s.label for s in valid], session.routes(valid, probe), **options)
    _saveTuning(session, key, weights, traces)
    return 0

  probe = session.probe()
  if method == 'tfcd':
    kept = [s for s in valid if s.id in probe.originals and s.id in probe.textSpurious]
    scenarios = [ScenarioOutputs(probe.originals[s.id], probe.textSpurious[s.id],
                                 probe.originals[s.id]) for s in kept]
  else:
    kept = [s for s in valid if probe.scenario(s.id) is not None]
    scenarios = [probe.scenario(s.id) for s in kept]
  if len(kept) < len(valid):
    io.warn(f'tune {method}: {len(valid)-len(kept)} validation sample(s) lack counterfactual '
            'predictions and are left out')
  truths = [s.label for s in kept]

  if method == 'mid':
    weights, traces = tuneMid(scenarios, truths, **options)
    if args.surface:
      evaluateSurface(scenarios, truths, config.metric, args.surface, tuple(config.weightBounds),
                      session.store.path('surface'))
  elif method == 'tfcd':
    weights, traces = tuneTfcd(scenarios, truths, **options)
  else:
    weights, traces = tuneMrid(scenarios, truths, session.routes(kept, probe), **options)
  _saveTuning(session, key, weights, traces)
  return 0


def _weights(session, method):
  config = session.config
  if method not in TUNED_METHODS:
    return None
  if config.alpha is not None and config.beta is not None:
    a, b = config.alpha, config.beta
    return WeightSet(a, b, {1: (a, 0.), 2: (0., b), 3: (a, b)}, config.weightBounds)
  if config.weightsFile:
    d = records.readJson(config.weightsFile)
    return WeightSet.fromDict(d.get('weights', d))
  key = session.methodKey(method)
  d = records.readJson(session.store.require('weights', f'tune --method {method}', method=key))
  return WeightSet.fromDict(d['weights'])


def cmdRun(session, args):
  config, method = session.config, args.method
  key = session.methodKey(method)
  samples = session.labeled(args.split)
  oracle = config.oracleRouter and method in ROUTED_METHODS
  roles = {'mctd-eval': ('MCTD',), 'mme-jd': ('GE', 'IDE', 'TDE')}.get(method, ())
  weights = _weights(session, method)
  ledger = CallLedger()
  result = runMethod(
      method, samples,
      predictor=None if method == 'mctd-eval' or (method == 'mme-jd' and oracle) else session.predictor,
      assets=session.assets, weights=weights,
      router=session.router() if method in ROUTED_METHODS and not oracle else None,
      experts=session.experts(roles) if roles else None,
      oracleCategories=session.categories() if oracle else None,
      cache=None if args.no_cache else session.cache, ledger=ledger,
      workers=config.workerCount(), maskToken=config.maskToken, embeddings=session.embeddings)
  ledger.finalize()
  categories = session.categories() if session.store.exists('categorization') else None
  evaluation = evaluateMethod(result, session.manifest.classSpace, categories, config.metric)
  trace = None
  if session.store.exists('trace', method=key):
    trace = records.readJson(session.store.path('trace', method=key))['traces']
  extra = dict(split=args.split, oracle_router=True if oracle else False,
               calls_per_sample=ledger.count(method)/len(samples),
               within_overhead=True if overheadCheck(ledger, len(samples), method) else False,
               tuning_traces=trace)
  writeReport(session.store.folder, key, evaluation, ledger, weights, extra=extra,
              configFingerprint=session.fingerprint)
  return 0


def cmdLift(session, args):
  table = liftTable(session.manifest.split(args.split), session.manifest.classSpace,
                    session.config.liftMinSupport)
  records.writeText(session.store.path('lift'), table.toCsv())
  top = sorted(table, key=lambda e: -e[2])[:args.top]
  io.info('highest lift scores:\n' + '\n'.join(f'{f:<24} {l:<12} {v:8.3f} (support {n})'
                                               for f, l, v, n in top))
  return 0


def cmdReport(session, args):
  io.info(comparisonTable(session.store.folder))
  return 0


def cmdSynth(args):
  spec = SyntheticSpec(K=args.classes, nTrain=args.n_train, nValid=args.n_valid,
                       nTest=args.n_test, spuriousDims=args.spurious_dims,
                       semanticDims=args.semantic_dims or args.classes,
                       rhoTrain=args.rho_train, rhoTest=args.rho_test,
                       biasStrength=args.bias_strength, seed=args.seed)
  os.makedirs(args.out, exist_ok=True)
  generateSynthetic(spec, args.out)
  return 0


COMMANDS = {
  'probe': cmdProbe,
  'categorize': cmdCategorize,
  'emit': cmdEmit,
  'train-experts': cmdTrainExperts,
  'train-router': cmdTrainRouter,
  'tune': cmdTune,
  'run': cmdRun,
  'lift': cmdLift,
  'report': cmdReport,
}


##############################################################################
# argument parsing


def _addCommonArgs(p):
  p.add_argument('--config', default=None, help='JSON config file')
  p.add_argument('--dataset', default=None, help='dataset manifest')
  p.add_argument('--backend', choices=['synthetic', 'remote'], default=None)
  p.add_argument('--epsilon', type=float, default=None)
  p.add_argument('--budget', type=int, default=None, help='objective evaluations per search')
  p.add_argument('--seed', type=int, default=None)
  p.add_argument('--workers', default=None, help='worker threads, an integer or "num_cpus"')
  p.add_argument('--out', default=None, help='output directory holding the run folders')
  p.add_argument('--oracle-router', action='store_true', default=None,
                 help='route by the categorization instead of the trained router')
  p.add_argument('--weights-file', default=None, help='weight file to use instead of tuning')
  p.add_argument('--alpha', type=float, default=None, help='fixed image weight')
  p.add_argument('--beta', type=float, default=None, help='fixed text weight')
  p.add_argument('--quiet', action='store_true', default=None)
  p.add_argument('--run', type=int, default=None, help='index of the run folder to use')
  p.add_argument('--new-run', action='store_true', help='start a new run folder')


def buildParser():
  parser = argparse.ArgumentParser(
      prog='multimodal-debias',
      description='Causal-mediation debiasing of multimodal classifiers.')
  sub = parser.add_subparsers(dest='command', required=True)

  for name, helpText in (('probe', 'predict original and spurious-only views'),
                         ('categorize', 'assign debias categories'),
                         ('emit', 'write counterfactual training sets'),
                         ('train-router', 'train the debias-category router'),
                         ('report', 'compare the reports of a run')):
    _addCommonArgs(sub.add_parser(name, help=helpText))

  p = sub.add_parser('train-experts', help='train the toy experts')
  _addCommonArgs(p)
  p.add_argument('--roles', nargs='+', choices=EXPERT_ROLES, default=None)

  p = sub.add_parser('tune', help='search debias weights on the validation split')
  _addCommonArgs(p)
  p.add_argument('--method', choices=TUNED_METHODS, required=True)
  p.add_argument('--surface', type=int, default=None, metavar='RESOLUTION',
                 help='also write the mid weight surface on a RESOLUTION x RESOLUTION lattice')

  p = sub.add_parser('run', help='run and evaluate a method')
  _addCommonArgs(p)
  p.add_argument('--method', choices=METHODS, required=True)
  p.add_argument('--split', choices=['train', 'valid', 'test'], default='test')
  p.add_argument('--no-cache', action='store_true', help='bypass the prediction cache')

  p = sub.add_parser('lift', help='lift table of text tokens and image tags')
  _addCommonArgs(p)
  p.add_argument('--split', choices=['train', 'valid', 'test'], default=None)
  p.add_argument('--top', type=int, default=20)

  p = sub.add_parser('synth', help='write a synthetic dataset with planted shortcuts')
  p.add_argument('--out', required=True, help='dataset folder')
  p.add_argument('--classes', type=int, default=2)
  p.add_argument('--n-train', type=int, default=2000)
  p.add_argument('--n-valid', type=int, default=500)
  p.add_argument('--n-test', type=int, default=500)
  p.add_argument('--semantic-dims', type=int, default=None)
  p.add_argument('--spurious-dims', type=int, default=1)
  p.add_argument('--rho-train', type=float, default=0.8)
  p.add_argument('--rho-test', type=float, default=-0.8)
  p.add_argument('--bias-strength', type=float, default=1.0)
  p.add_argument('--seed', type=int, default=0)
  return parser


def _flags(args):
  return dict(dataset=args.dataset, backend=args.backend, epsilon=args.epsilon,
              budget=args.budget, seed=args.seed, workers=args.workers, out=args.out,
              oracleRouter=args.oracle_router, weightsFile=args.weights_file,
              alpha=args.alpha, beta=args.beta, quiet=args.quiet)


def execute(args):
  if args.command == 'synth':
    return cmdSynth(args)
  config = RunConfig.resolve(args.config, _flags(args))
  io.setVerbose(not config.quiet)
  store = RunStore(config.out, index=args.run, reuse=not args.new_run).startLogging()
  config.save(store.folder)
  config.freeze()
  io.verb(f'{args.command}: config {config.fingerprint()} in {store.name}')
  return COMMANDS[args.command](Session(config, store), args)


def main(argv=None):
  args = buildParser().parse_args(argv)
  try:
    return execute(args)
  except DebiasError as e:
    io.err(f'{args.command}: {e}')
    return exitCode(e)
  finally:
    io.setLogfile(None)


if __name__ == '__main__':
  sys.exit(main())
