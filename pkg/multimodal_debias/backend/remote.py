'''
Client for an OpenAI-compatible chat-completions endpoint. Class
probabilities are read from the log-scores of the first answer token,
restricted to one verbalizer token per class.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import os
import io as _bytesio
import base64
import logging
import threading
import httpx
import openai
import tenacity

from ..common import *
from ..core import ProbVector
from .predictors import Predictor

_LOGGER = logging.getLogger('multimodal_debias')

VERBALIZER_FLOOR = 1e-6
DEFAULT_API_KEY_ENV = 'MULTIMODAL_DEBIAS_API_KEY'

_RETRYABLE = (openai.APIConnectionError, openai.APITimeoutError,
              openai.RateLimitError, openai.InternalServerError)


class EndpointConfig:
  def __init__(self, baseUrl, model, apiKeyEnv=DEFAULT_API_KEY_ENV, timeout=60.,
               retries=3, retryWaitMin=1., retryWaitMax=30., inFlight=4, topLogprobs=20,
               instruction=None, seed=0):
    if not baseUrl or not model:
      raise ConfigError('remote backend needs a base URL and a model name')
    self.baseUrl = baseUrl
    self.model = model
    self.apiKeyEnv = apiKeyEnv
    self.timeout = float(timeout)
    self.retries = int(retries) if int(retries) >= 1 else 1
    self.retryWaitMin = float(retryWaitMin)
    self.retryWaitMax = float(retryWaitMax)
    self.inFlight = int(inFlight) if int(inFlight) >= 1 else 1
    self.topLogprobs = int(topLogprobs)
    self.instruction = instruction or ('Classify the post made of the text and image '
                                       'below. Answer with a single word.')
    self.seed = int(seed)

  def apiKey(self):
    return os.environ.get(self.apiKeyEnv) or 'EMPTY'


def _imageDataUrl(path):
  import PIL.Image
  try:
    with PIL.Image.open(path) as img:
      buf = _bytesio.BytesIO()
      img.convert('RGB').save(buf, format='PNG')
  except OSError as e:
    raise DataError(f'cannot read image {path}: {e}')
  return 'data:image/png;base64,' + base64.b64encode(buf.getvalue()).decode('ascii')


def buildMessages(config, view, verbalizers):
  '''
  Chat messages presenting whatever modalities the view keeps.
  '''
  text = view.text
  content = []
  body = config.instruction + f'\nPossible answers: {", ".join(verbalizers)}.'
  body += f'\nText: {text}' if text is not None else '\nText: (none)'
  content.append(dict(type='text', text=body))
  if view.imagePath is not None:
    content.append(dict(type='image_url', image_url=dict(url=_imageDataUrl(view.imagePath))))
  return [dict(role='user', content=content)]


def verbalizerProbabilities(candidates, verbalizers, payload=None):
  '''
  Renormalize first-token log-scores over the verbalizers. A missing
  verbalizer gets probability 1e-6 before renormalization, if none is
  present the answer is unusable.

  Arguments:
  ==========
  candidates : dict
    token -> log-score of the first answer token
  '''
  scores = {}
  for token, logprob in candidates.items():
    key = token.strip().lower()
    if key and key not in scores:
      scores[key] = float(logprob)
  found = [scores.get(v.strip().lower()) for v in verbalizers]
  if not [f for f in found if f is not None]:
    raise ProtocolError(f'none of the verbalizers {list(verbalizers)} is among the returned '
                        f'answer candidates {sorted(candidates)}', payload=payload)
  p = array([exp(f) if f is not None else VERBALIZER_FLOOR for f in found])
  return p/p.sum()


def _firstTokenCandidates(response):
  try:
    first = response.choices[0].logprobs.content[0]
  except (AttributeError, IndexError, TypeError):
    raise ProtocolError('response carries no first-token log-scores',
                        payload=_dump(response))
  candidates = {t.token: t.logprob for t in (first.top_logprobs or [])}
  candidates.setdefault(first.token, first.logprob)
  return candidates


def _dump(response):
  try:
    return response.model_dump()
  except Exception:
    return repr(response)


class RemotePredictor(Predictor):
  '''
  Predictor backed by a served model. Decoding is greedy with a fixed seed so
  repeated requests agree, the cache enforces it across runs.
  '''
  def __init__(self, classSpace, config, verbalizers, promptVersion='v1', transport=None):
    super().__init__(classSpace)
    if len(verbalizers) != self.K:
      raise ConfigError(f'need one verbalizer per class, got {len(verbalizers)} for {self.K} classes')
    self.config = config
    self.verbalizers = [str(v) for v in verbalizers]
    self.promptVersion = promptVersion
    self.id = f'remote:{config.model}@{config.baseUrl}'
    self._semaphore = threading.BoundedSemaphore(config.inFlight)
    self._client = openai.OpenAI(
        base_url=config.baseUrl, api_key=config.apiKey(), max_retries=0,
        http_client=httpx.Client(timeout=config.timeout, transport=transport,
                                 trust_env=transport is None))

  def _retrying(self):
    return tenacity.Retrying(
        stop=tenacity.stop_after_attempt(self.config.retries),
        wait=tenacity.wait_exponential(min=self.config.retryWaitMin, max=self.config.retryWaitMax),
        retry=tenacity.retry_if_exception_type(_RETRYABLE),
        before_sleep=tenacity.before_sleep_log(_LOGGER, logging.INFO),
        reraise=True)

  def _complete(self, messages):
    with self._semaphore:
      try:
        for attempt in self._retrying():
          with attempt:
            return self._client.chat.completions.create(
                model=self.config.model, messages=messages, max_tokens=1,
                temperature=0, seed=self.config.seed, logprobs=True,
                top_logprobs=self.config.topLogprobs)
      except _RETRYABLE as e:
        raise BackendError(f'endpoint {self.config.baseUrl} failed after '
                           f'{self.config.retries} attempt(s): {e}')
      except openai.APIStatusError as e:
        raise BackendError(f'endpoint {self.config.baseUrl} answered {e.status_code}: {e}')

  def predictView(self, view):
    response = self._complete(buildMessages(self.config, view, self.verbalizers))
    p = verbalizerProbabilities(_firstTokenCandidates(response), self.verbalizers,
                                payload=_dump(response))
    return ProbVector(p, normalized=True, classSpace=self.classSpace)


def remoteProbe(config, view, verbalizers, classSpace, transport=None):
  '''
  One-off probe of a single view, see RemotePredictor.
  '''
  return RemotePredictor(classSpace, config, verbalizers, transport=transport).predictView(view)
