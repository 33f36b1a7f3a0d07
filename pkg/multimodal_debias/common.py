'''
Exception hierarchy shared by all submodules. Value-like problems also derive
from ValueError, runtime-like problems from RuntimeError, so callers that only
know the builtin types still catch them.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'


class DebiasError(Exception):
  pass

class NumericError(DebiasError, ValueError):
  pass

class ShapeError(DebiasError, ValueError):
  pass

class ConfigError(DebiasError, ValueError):
  pass

class DomainError(DebiasError, ValueError):
  pass

class DataError(DebiasError, ValueError):
  pass

class SchemaError(DebiasError, ValueError):
  pass

class TemplateError(DebiasError, ValueError):
  pass

class ParseError(DebiasError, ValueError):
  pass

class SpecError(DebiasError, ValueError):
  pass

class UnsupportedError(DebiasError, ValueError):
  pass

class EmptyEvaluationError(DebiasError, ValueError):
  pass

class RoutingError(DebiasError, ValueError):
  pass

class SearchError(DebiasError, RuntimeError):
  pass

class BackendError(DebiasError, RuntimeError):
  pass

class ProtocolError(DebiasError, RuntimeError):
  '''
  Malformed answer of a remote endpoint, the raw payload is kept in .payload
  '''
  def __init__(self, msg, payload=None):
    super().__init__(msg)
    self.payload = payload

class StageError(DebiasError, RuntimeError):
  '''
  Failure inside the counterfactual image pipeline, .stage names the stage
  '''
  def __init__(self, stage, cause):
    super().__init__(f'stage "{stage}" failed: {cause}')
    self.stage = stage
    self.cause = cause


def exitCode(exc):
  '''
  Map an exception to the stable command line exit code contract.
  '''
  if isinstance(exc, (BackendError, ProtocolError)):
    return 2
  if isinstance(exc, (ConfigError, SchemaError, SpecError)):
    return 3
  return 1
