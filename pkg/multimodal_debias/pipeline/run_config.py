'''
Run configuration: built-in defaults, overridden by a JSON config file,
overridden by command line flags. Values are sanitized on assignment and the
resolved configuration is frozen and written next to the run's outputs.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import copy

from ..common import *
from ..counterfactuals.image import MaskParams
from ..backend.remote import EndpointConfig, DEFAULT_API_KEY_ENV
from .. import records
from .workers import cpuCount

CONFIG_FILE = 'config.json'

# (section, [(name, default, kind, description)])
SETTINGS = [
  ('Data', [
    ('dataset', None, 'path', 'Manifest file of the dataset.'),
    ('assets', None, 'path', 'Counterfactual asset file, defaults to the one next to the manifest.'),
    ('annotations', None, 'path', 'Semantic annotation file used to build counterfactual texts.'),
    ('attentionDir', None, 'path', 'Folder of attention records for counterfactual images.'),
    ('embeddings', None, 'path', 'Optional npz file of external router feature vectors.'),
    ('out', 'results', 'path', 'Output directory holding the numbered run folders.'),
    ('promptVersion', 'v1', 'str', 'Version tag of the prompts, part of every cache key.'),
    ('maskToken', '[MASK]', 'str', 'Replacement of semantic phrases in counterfactual texts.'),
    ('liftMinSupport', 5, 'int', 'Features seen in fewer samples are left out of lift tables.'),
    ('reversedLabelPolicy', 'least_likely', 'str', 'least_likely or seeded_uniform.'),
  ]),
  ('Backend', [
    ('backend', 'synthetic', 'str', 'synthetic or remote.'),
    ('baseUrl', None, 'str', 'Base URL of the chat-completions endpoint.'),
    ('model', None, 'str', 'Model name served by the endpoint.'),
    ('apiKeyEnv', DEFAULT_API_KEY_ENV, 'str', 'Environment variable holding the API key.'),
    ('timeout', 60., 'float', 'Request timeout in seconds.'),
    ('retries', 3, 'int', 'Attempts per request.'),
    ('inFlight', 4, 'int', 'Concurrent requests at most.'),
    ('verbalizers', None, 'list', 'Answer word per class, defaults to the class labels.'),
  ]),
  ('Debias', [
    ('epsilon', 0.1, 'float', 'Tolerance margin of the categorization criteria.'),
    ('weightBounds', [0., 1.], 'bounds', 'Search interval of every debias weight.'),
    ('metric', None, 'str', 'Tuning metric, binary, macro, weighted or accuracy.'),
    ('alpha', None, 'float', 'Fixed image weight, skips tuning if set together with beta.'),
    ('beta', None, 'float', 'Fixed text weight, skips tuning if set together with alpha.'),
    ('oracleRouter', False, 'bool', 'Route by the categorization instead of the trained router.'),
    ('weightsFile', None, 'path', 'Weight file to use instead of tuning.'),
  ]),
  ('Search', [
    ('budget', 50, 'budget', 'Objective evaluations per search.'),
    ('initialPoints', 8, 'int', 'Space-filling points before the surrogate is used.'),
    ('candidates', 1024, 'int', 'Random candidates per acquisition step.'),
    ('gpNoise', 1e-6, 'float', 'Observation noise of the surrogate.'),
    ('seed', 0, 'int', 'Seed of searches, training and synthetic data.'),
  ]),
  ('Image', [
    ('layerWindow', None, 'list', 'Pooled attention layers as [start, stop], default the last three.'),
    ('poolMode', 'mean_layers', 'str', 'mean_layers or mean_all.'),
    ('enhancement', 1.5, 'float', 'Mask enhancement factor.'),
    ('kernelSize', 3, 'int', 'Gaussian smoothing kernel size.'),
    ('sigma', 1.0, 'float', 'Gaussian smoothing width.'),
    ('fill', 128, 'int', 'Occlusion gray level.'),
  ]),
  ('Router', [
    ('routerEpochs', 500, 'int', 'Gradient steps of router training.'),
    ('routerLearningRate', 0.5, 'float', 'Router step size.'),
    ('routerClassWeighted', False, 'bool', 'Weight router examples inversely to class frequency.'),
    ('routerCheckpointEvery', 10, 'int', 'Epochs between router checkpoints.'),
  ]),
  ('Experts', [
    ('expertEpochs', 300, 'int', 'Gradient steps of expert training.'),
    ('expertLearningRate', 0.5, 'float', 'Expert step size.'),
  ]),
  ('Run', [
    ('workers', 'num_cpus', 'workers', 'Worker threads per stage, an integer or "num_cpus".'),
    ('quiet', False, 'bool', 'Suppress verbose messages.'),
  ]),
]

DEFAULTS = {name: default for _, entries in SETTINGS for name, default, _, _ in entries}
KINDS = {name: kind for _, entries in SETTINGS for name, _, kind, _ in entries}


def _asBool(name, value):
  if isinstance(value, str):
    if value.strip().lower() in ('1', 'true', 'yes', 'on'):
      return True
    if value.strip().lower() in ('0', 'false', 'no', 'off'):
      return False
    raise ConfigError(f'setting {name} expects a boolean, got "{value}"')
  return True if value else False


class RunConfig:
  def __init__(self, **values):
    self._values = copy.deepcopy(DEFAULTS)
    self._frozen = False
    self.update(values)

  def update(self, values):
    for name, value in (values or {}).items():
      self.setValue(name, value)
    return self

  def setValue(self, name, value):
    '''
    Assign a setting after sanitizing it; unknown names are errors.
    '''
    if self._frozen:
      raise ConfigError(f'configuration is frozen, cannot set {name}')
    if name not in KINDS:
      raise ConfigError(f'unknown setting "{name}"')
    kind = KINDS[name]
    if value is None:
      if DEFAULTS[name] is not None:
        raise ConfigError(f'setting {name} cannot be empty')
      self._values[name] = None
      return

    try:
      if kind == 'int':
        value = int(value)
      elif kind == 'float':
        value = float(value)
      elif kind in ('str', 'path'):
        value = str(value)
      elif kind == 'bool':
        value = _asBool(name, value)
      elif kind == 'list':
        value = [v.strip() for v in value.split(',')] if isinstance(value, str) else list(value)
    except (TypeError, ValueError):
      raise ConfigError(f'setting {name} expects a value of kind {kind}, got {value!r}')

    # sanitize worker count
    if kind == 'workers' and value != 'num_cpus':
      try:
        count = int(value)
      except (TypeError, ValueError):
        value = 'num_cpus'
      else:
        # at least one worker, never more than ten per cpu
        value = count if count >= 1 else 1
        if count > 10 + 10*cpuCount():
          value = int(10*cpuCount())

    # sanitize budget, limit to positive numbers
    if kind == 'budget':
      try:
        value = int(round(float(value)))
      except (TypeError, ValueError):
        raise ConfigError(f'search budget must be a number, got {value!r}')
      if value < 1:
        value = 1

    if kind == 'bounds':
      if isinstance(value, str):
        value = value.split(',')
      try:
        lo, hi = (float(v) for v in value)
      except (TypeError, ValueError):
        raise ConfigError(f'weight bounds must be two numbers, got {value!r}')
      if not lo < hi:
        raise ConfigError(f'weight bounds need lower < upper, got [{lo}, {hi}]')
      value = [lo, hi]

    if name == 'epsilon' and not value >= 0:
      raise ConfigError(f'epsilon must be nonnegative, got {value}')
    if name == 'backend' and value not in ('synthetic', 'remote'):
      raise ConfigError(f'unknown backend "{value}", expected synthetic or remote')
    if name == 'reversedLabelPolicy' and value not in ('least_likely', 'seeded_uniform'):
      raise ConfigError(f'unknown reversed-label policy "{value}"')
    if name == 'layerWindow' and len(value) != 2:
      raise ConfigError(f'layer window must be [start, stop], got {value}')
    self._values[name] = value

  def __getattr__(self, name):
    if name.startswith('_'):
      raise AttributeError(name)
    try:
      return self._values[name]
    except KeyError:
      raise AttributeError(f'unknown setting "{name}"')

  def freeze(self):
    self._frozen = True
    return self

  @property
  def frozen(self):
    return self._frozen

  def toDict(self):
    return copy.deepcopy(self._values)

  def fingerprint(self):
    return records.fingerprint(self.toDict())

  def workerCount(self):
    return cpuCount() if self.workers == 'num_cpus' else int(self.workers)

  def maskParams(self):
    return MaskParams(self.layerWindow, self.poolMode, self.enhancement, self.kernelSize,
                      self.sigma, self.fill)

  def searchOptions(self):
    return dict(initialPoints=self.initialPoints, candidates=self.candidates,
                noise=self.gpNoise)

  def endpointConfig(self):
    return EndpointConfig(self.baseUrl, self.model, self.apiKeyEnv, self.timeout,
                          self.retries, inFlight=self.inFlight, seed=self.seed)

  def save(self, folder):
    path = os.path.join(folder, CONFIG_FILE)
    records.writeJson(path, dict(schema='run-config', version=records.SCHEMA_VERSION,
                                 fingerprint=self.fingerprint(), settings=self.toDict()))
    return path

  @classmethod
  def load(cls, path):
    '''
    Read a JSON config file, either a plain settings object or a frozen
    config.json of an earlier run.
    '''
    d = records.readJson(path)
    if not isinstance(d, dict):
      raise ConfigError(f'{path}: expected a JSON object of settings')
    if d.get('schema') == 'run-config':
      d = d.get('settings', {})
    return cls(**d)

  @classmethod
  def resolve(cls, configFile=None, flags=None):
    '''
    Defaults < config file < flags, flags that are None are not given.
    '''
    config = cls.load(configFile) if configFile else cls()
    config.update({k: v for k, v in (flags or {}).items() if v is not None})
    return config

  def __repr__(self):
    return f'RunConfig({self.fingerprint()})'
