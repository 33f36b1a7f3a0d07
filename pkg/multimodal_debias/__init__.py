'''
Causal-mediation debiasing for multimodal classifiers. Counterfactual views
of each sample isolate spurious text and image context, their predictions are
used to correct, select, train and route.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'
__version__ = None

def _determinePackageVersion():
  '''
  find out installed version of the package and set global variable
  '''
  try:
    from importlib.metadata import version
    global __version__
    __version__ = version('multimodal_debias')
  except Exception:
    from . import version as _version
    __version__ = _version.__version__

# make sure __version__ is set
_determinePackageVersion()


def versionInfo():
  '''
  print summary of version numbers that may be relevant for reproducing a run
  '''
  import sys
  import os
  import numpy
  import scipy
  print(f'executable path:   {os.path.realpath(sys.executable)}')
  print(f'python version:    {sys.version_info.major}.{sys.version_info.minor}.{sys.version_info.micro}')
  print(f'numpy version:     {numpy.__version__}')
  print(f'scipy version:     {scipy.__version__}')
  print(f'package version:   {__version__}')
