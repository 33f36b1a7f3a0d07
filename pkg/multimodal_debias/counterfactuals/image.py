'''
Visual counterfactuals from attention maps. The attention of the model's
output tokens on the image patches is pooled into a patch grid, normalized,
enhanced, smoothed, interpolated to image resolution and used as alpha map to
blend the semantic (high attention) regions towards a neutral fill color.
What is left of the image is its spurious context.
'''

__license__ = 'LGPL-3.0-or-later'
__copyright__ = 'Copyright 2024  W. Braun (epiray GmbH)'
__authors__ = 'P. Bredol'

from numpy import *
import os
import json
import hashlib
import scipy.ndimage
import PIL.Image
from atomicwrites import atomic_write

from ..common import *
from .. import io

# pooling modes: mean over layers and sum over heads and output tokens, or
# mean over everything but the patch axis
MEAN_LAYERS = 'mean_layers'
MEAN_ALL    = 'mean_all'

COUNTERFACTUAL_SUFFIX = '.spurious.png'


class AttentionRecord:
  '''
  Attention weights of one sample on its image patches. values is either a
  pre-pooled patchH x patchW grid or an array of shape
  (layers, heads, output tokens, patchH*patchW).
  '''
  def __init__(self, sampleId, patchH, patchW, values):
    self.sampleId = str(sampleId)
    self.patchH, self.patchW = int(patchH), int(patchW)
    if self.patchH < 1 or self.patchW < 1:
      raise ShapeError(f'attention grid needs positive dimensions, got {patchH}x{patchW}')
    values = array(values, dtype=float)
    if values.ndim == 2:
      if values.shape != (self.patchH, self.patchW):
        raise ShapeError(f'pooled attention has shape {values.shape}, '
                         f'expected {(self.patchH, self.patchW)}')
    elif values.ndim == 4:
      if values.shape[-1] != self.patchH*self.patchW:
        raise ShapeError(f'attention covers {values.shape[-1]} patches, '
                         f'expected {self.patchH*self.patchW}')
    else:
      raise ShapeError('attention values must be a 2-d grid or a '
                       '(layers, heads, tokens, patches) array')
    if not isfinite(values).all():
      raise NumericError(f'attention of sample "{self.sampleId}" is not finite')
    if (values < 0).any():
      raise DomainError(f'attention of sample "{self.sampleId}" has negative weights')
    values.setflags(write=False)
    self.values = values

  @property
  def isPooled(self):
    return self.values.ndim == 2

  @property
  def layers(self):
    return 1 if self.isPooled else self.values.shape[0]

  @property
  def heads(self):
    return 1 if self.isPooled else self.values.shape[1]

  def fingerprint(self):
    h = hashlib.sha256(self.values.tobytes())
    h.update(f'{self.patchH}x{self.patchW}{self.values.shape}'.encode('utf8'))
    return h.hexdigest()[:16]


class AlphaMask:
  '''
  Full resolution alpha map in [0,1]; 1 means fully replaced by the fill.
  '''
  def __init__(self, grid, provenance=''):
    grid = array(grid, dtype=float)
    if grid.ndim != 2:
      raise ShapeError(f'alpha mask must be 2-d, got shape {grid.shape}')
    if not isfinite(grid).all() or (grid < 0).any() or (grid > 1).any():
      raise DomainError('alpha mask entries must lie in [0,1]')
    grid.setflags(write=False)
    self.grid = grid
    self.provenance = provenance

  @property
  def shape(self):
    return self.grid.shape


class MaskParams:
  '''
  Parameters of every pipeline stage.

  Arguments:
  ==========
  layerWindow : (start, stop) or range or None
    Recorded layers to pool, None selects the last three.

  poolMode : str
    'mean_layers' or 'mean_all'.

  enhancement : float
    Multiplier applied before clamping to [0,1].

  kernelSize, sigma : int, float
    Gaussian smoothing kernel.

  fill : int or (r, g, b)
    Occlusion color.
  '''
  def __init__(self, layerWindow=None, poolMode=MEAN_LAYERS, enhancement=1.5,
               kernelSize=3, sigma=1.0, fill=(128, 128, 128)):
    if isinstance(layerWindow, range):
      layerWindow = (layerWindow.start, layerWindow.stop)
    self.layerWindow = None if layerWindow is None else (int(layerWindow[0]), int(layerWindow[1]))
    if poolMode not in (MEAN_LAYERS, MEAN_ALL):
      raise ConfigError(f'unknown pooling mode "{poolMode}"')
    self.poolMode = poolMode
    self.enhancement = float(enhancement)
    self.kernelSize = int(kernelSize)
    self.sigma = float(sigma)
    self.fill = (int(fill),)*3 if isinstance(fill, (int, float)) else tuple(int(f) for f in fill)

  def toDict(self):
    return dict(layer_window=None if self.layerWindow is None else list(self.layerWindow),
                pool_mode=self.poolMode, enhancement=self.enhancement,
                kernel_size=self.kernelSize, sigma=self.sigma, fill=list(self.fill))

  def fingerprint(self):
    return hashlib.sha256(json.dumps(self.toDict(), sort_keys=True).encode('utf8')).hexdigest()[:12]


def patchIndex(i, j, P):
  '''
  1-indexed position t = j + P*(i-1) of patch (row i, column j) in the
  flattened patch sequence of a grid with P patches per row.
  '''
  if P < 1:
    raise IndexError(f'patches per row must be positive, got {P}')
  if not (1 <= i and 1 <= j <= P):
    raise IndexError(f'patch ({i}, {j}) outside a grid with {P} patches per row')
  return j + P*(i-1)


def poolAttention(rec, layerWindow=None, mode=MEAN_LAYERS):
  '''
  Reduce an attention record to a patchH x patchW grid.
  '''
  if rec.isPooled:
    return array(rec.values)
  L = rec.layers
  if isinstance(layerWindow, range):
    layerWindow = (layerWindow.start, layerWindow.stop)
  start, stop = layerWindow if layerWindow is not None else (L-3 if L > 3 else 0, L)
  if stop <= start:
    raise ConfigError(f'empty layer window [{start}, {stop})')
  if start < 0 or stop > L:
    raise ConfigError(f'layer window [{start}, {stop}) outside the {L} recorded layers')
  selected = rec.values[start:stop]
  if mode == MEAN_LAYERS:
    flat = selected.sum(axis=(1, 2)).mean(axis=0)
  elif mode == MEAN_ALL:
    flat = selected.mean(axis=(0, 1, 2))
  else:
    raise ConfigError(f'unknown pooling mode "{mode}"')
  # row-major reshape realizes t = j + patchW*(i-1)
  return flat.reshape(rec.patchH, rec.patchW)


def normalizeMask(grid):
  grid = array(grid, dtype=float)
  if not isfinite(grid).all():
    raise NumericError('cannot normalize a mask with non-finite entries')
  lo, hi = grid.min(), grid.max()
  if hi == lo:
    return zeros_like(grid)
  return (grid-lo)/(hi-lo)


def enhanceMask(grid, factor):
  if not factor > 0:
    raise ConfigError(f'enhancement factor must be positive, got {factor}')
  return clip(array(grid, dtype=float)*factor, 0, 1)


def gaussianKernel(size=3, sigma=1.0):
  '''
  Normalized 2-d Gaussian kernel of odd size.
  '''
  if size < 1 or size % 2 == 0:
    raise ConfigError(f'kernel size must be a positive odd number, got {size}')
  if not sigma > 0:
    raise ConfigError(f'kernel sigma must be positive, got {sigma}')
  x = arange(size)-(size-1)/2
  g = exp(-x**2/(2*sigma**2))
  k = outer(g, g)
  return k/k.sum()


def smoothMask(grid, kernelSize=3, sigma=1.0, kernel=None):
  '''
  Convolve with a normalized kernel using reflect padding, output keeps the
  grid shape.
  '''
  grid = array(grid, dtype=float)
  if grid.size == 0:
    raise ShapeError('cannot smooth an empty mask')
  k = gaussianKernel(kernelSize, sigma) if kernel is None else array(kernel, dtype=float)
  if k.shape[0] > grid.shape[0] or k.shape[1] > grid.shape[1]:
    raise ConfigError(f'kernel {k.shape} larger than mask {grid.shape}')
  k = k/k.sum()
  return clip(scipy.ndimage.convolve(grid, k, mode='reflect'), 0, 1)


def resizeMask(grid, H, W):
  '''
  Bilinear interpolation with aligned corners to H x W.
  '''
  grid = array(grid, dtype=float)
  H, W = int(H), int(W)
  if H < 1 or W < 1:
    raise ConfigError(f'cannot resize a mask to {H}x{W}')
  if grid.shape == (H, W):
    return grid
  h, w = grid.shape
  rows, cols = meshgrid(linspace(0, h-1, H), linspace(0, w-1, W), indexing='ij')
  out = scipy.ndimage.map_coordinates(grid, [rows, cols], order=1, mode='nearest')
  return clip(out, 0, 1)


def blend(image, mask, fill=(128, 128, 128)):
  '''
  Per pixel and channel round((1-m)*I + m*fill), rounding half up.
  '''
  image = asarray(image)
  m = mask.grid if isinstance(mask, AlphaMask) else array(mask, dtype=float)
  if image.shape[:2] != m.shape:
    raise ShapeError(f'image {image.shape[:2]} and mask {m.shape} differ in size')
  if image.ndim == 2:
    fillValue = array(fill if isinstance(fill, (int, float)) else fill[0], dtype=float)
    alpha = m
  else:
    fillValue = (array([fill]*image.shape[2], dtype=float) if isinstance(fill, (int, float))
                   else array(fill, dtype=float)[:image.shape[2]])
    alpha = m[:, :, None]
  out = floor((1-alpha)*image.astype(float) + alpha*fillValue + .5)
  return clip(out, 0, 255).astype(uint8)


def buildAlphaMask(rec, H, W, params=None):
  params = params or MaskParams()
  grid = None
  for stage, fn in _maskStages(rec, H, W, params):
    try:
      grid = fn(grid)
    except StageError:
      raise
    except Exception as e:
      raise StageError(stage, e)
  return AlphaMask(grid, provenance=f'{rec.fingerprint()}-{params.fingerprint()}')


def _maskStages(rec, H, W, params):
  return [('pool',      lambda _: poolAttention(rec, params.layerWindow, params.poolMode)),
          ('normalize', normalizeMask),
          ('enhance',   lambda g: enhanceMask(g, params.enhancement)),
          ('smooth',    lambda g: smoothMask(g, params.kernelSize, params.sigma)),
          ('resize',    lambda g: resizeMask(g, H, W))]


def generateCounterfactualImage(image, rec, params=None):
  '''
  Run pool, normalize, enhance, smooth, resize and blend in this order and
  return the spurious-only image. Failures raise StageError naming the stage.
  '''
  params = params or MaskParams()
  image = asarray(image)
  mask = buildAlphaMask(rec, image.shape[0], image.shape[1], params)
  try:
    return blend(image, mask, params.fill)
  except Exception as e:
    raise StageError('blend', e)


def loadImage(path):
  try:
    with PIL.Image.open(path) as img:
      return array(img.convert('RGB'))
  except (OSError, ValueError) as e:
    raise DataError(f'cannot read image {path}: {e}')


def saveImage(path, image):
  '''
  Counterfactuals are always written lossless.
  '''
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with atomic_write(str(path), mode='wb', overwrite=True) as f:
    PIL.Image.fromarray(asarray(image, dtype=uint8)).save(f, format='PNG')


def counterfactualImagePath(imagePath):
  stem, _ = os.path.splitext(imagePath)
  return stem + COUNTERFACTUAL_SUFFIX


def saveAttentionRecord(path, rec):
  os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
  with atomic_write(str(path), mode='wb', overwrite=True) as f:
    savez(f, sample_id=rec.sampleId, patch_h=rec.patchH, patch_w=rec.patchW,
          layers=rec.layers, heads=rec.heads, values=rec.values,
          fingerprint=rec.fingerprint())


def loadAttentionRecord(path):
  '''
  Read an attention record from .npz or .json, the fingerprint is verified.
  '''
  if not os.path.exists(path):
    raise DataError(f'attention file {path} does not exist')
  if path.endswith('.json'):
    with open(path, 'r', encoding='utf8') as f:
      d = json.load(f)
  else:
    with load(path, allow_pickle=False) as npz:
      d = {k: npz[k] for k in npz.files}
      for k in ('sample_id', 'fingerprint'):
        if k in d:
          d[k] = str(d[k])
  try:
    rec = AttentionRecord(d['sample_id'], int(d['patch_h']), int(d['patch_w']), d['values'])
  except KeyError as e:
    raise SchemaError(f'attention file {path} misses field {e}')
  if d.get('fingerprint') and d['fingerprint'] != rec.fingerprint():
    raise SchemaError(f'attention file {path} fails its fingerprint check')
  return rec


def counterfactualForSample(sample, attentionDir, params=None, overwrite=False):
  '''
  Write the spurious-only image of a sample next to its original and return
  the path; None if the sample has no image or no attention record.
  '''
  if not sample.hasImage():
    return None
  target = counterfactualImagePath(sample.imagePath)
  if os.path.exists(target) and not overwrite:
    return target
  candidates = [os.path.join(attentionDir, f'{sample.id}{ext}') for ext in ('.npz', '.json')]
  existing = [c for c in candidates if os.path.exists(c)]
  if not existing:
    io.verb(f'sample "{sample.id}" has no attention record, no counterfactual image')
    return None
  rec = loadAttentionRecord(existing[0])
  saveImage(target, generateCounterfactualImage(loadImage(sample.imagePath), rec, params))
  return target
