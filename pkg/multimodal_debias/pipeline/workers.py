__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

import os
import concurrent.futures

from .. import io


def cpuCount():
  '''
  Logical cpus this process may run on, the thread count of "num_cpus".
  '''
  try:
    return max(1, len(os.sched_getaffinity(0)))
  except AttributeError:
    return max(1, os.cpu_count() or 1)


def mapSamples(func, items, workers=1, label=None):
  '''
  Apply func to every item on a thread pool and return the results in item
  order. A failing item yields its exception in place of a result, so one
  bad sample never aborts a stage.
  '''
  items = list(items)
  workers = max(1, min(int(workers), len(items) or 1))

  def guarded(item):
    try:
      return func(item)
    except Exception as e:
      return e

  if workers == 1:
    results = [guarded(item) for item in items]
  else:
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
      results = list(pool.map(guarded, items))

  failed = len([r for r in results if isinstance(r, Exception)])
  if label:
    io.verb(f'{label}: processed {len(items)} item(s) on {workers} worker(s)'
            + (f', {failed} failed' if failed else ''))
  return results
