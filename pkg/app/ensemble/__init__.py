'''
i.i.d. matrix sampling, Gaussian-divisible mixtures and the Ornstein-Uhlenbeck matrix flow.

Every sampler is a pure function of the spec seed and integer stream keys. Streams are
Philox generators keyed by SeedSequence spawn keys, so trials and flow steps never
share random numbers.
'''
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from app.exceptions import ConfigurationError, OutOfRangeError

FIELDS = ('real', 'complex')
DISTRIBUTIONS = ('gaussian', 'rademacher', 'uniform')

# stream tags, first spawn-key component
IID = 0
GINIBRE = 1
OU = 2
BASIS = 3
PROBE = 4
TRIAL = 5

MAX_OU_STEP = 1e-2


def stream(seed, *keys):
    '''Counter-based substream for `seed` addressed by integer `keys`'''
    seq = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


@dataclass(frozen=True)
class EnsembleSpec:
    N: int
    field: str = 'complex'
    distribution: str = 'gaussian'
    seed: int = 0
    # entry-variance multiplier, only != 1 for negative controls
    scale: float = 1.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise ConfigurationError(f"N must be an integer >= 2, got {self.N!r}", payload={'field': 'N'})
        if self.field not in FIELDS:
            raise ConfigurationError(f"unknown field {self.field!r}", payload={'field': 'field'})
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigurationError(
                f"unsupported distribution {self.distribution!r}", payload={'field': 'distribution'})
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer", payload={'field': 'seed'})
        if not self.scale > 0:
            raise ConfigurationError("scale must be positive", payload={'field': 'scale'})

    @property
    def beta(self):
        return 1 if self.field == 'real' else 2

    def with_seed(self, seed):
        return replace(self, seed=int(seed))


@dataclass(frozen=True, eq=False)
class RandomMatrix:
    entries: np.ndarray
    spec: EnsembleSpec
    label: str = 'iid'
    time: float = 0.0
    steps: int = 0
    stream_keys: tuple = dc_field(default=())

    def __post_init__(self):
        self.entries.setflags(write=False)

    @property
    def N(self):
        return self.entries.shape[0]

    def toDict(self):
        return {
            'N': self.N,
            'field': self.spec.field,
            'distribution': self.spec.distribution,
            'seed': self.spec.seed,
            'label': self.label,
            'time': self.time,
            'steps': self.steps,
        }


def real_atoms(distribution, shape, rng):
    '''Real atoms with mean 0 and variance 1'''
    if distribution == 'gaussian':
        return rng.standard_normal(shape)
    if distribution == 'rademacher':
        return rng.choice(np.array([-1.0, 1.0]), size=shape)
    if distribution == 'uniform':
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=shape)
    raise ConfigurationError(f"unsupported distribution {distribution!r}", payload={'field': 'distribution'})


def atoms(spec, shape, rng):
    '''
    Atom variables chi for the spec's field. Complex atoms are (x1 + i x2)/sqrt(2) with
    independent real parts, which makes E[chi^2] = 0 exact.
    '''
    if spec.field == 'real':
        return real_atoms(spec.distribution, shape, rng).astype(complex)
    re = real_atoms(spec.distribution, shape, rng)
    im = real_atoms(spec.distribution, shape, rng)
    return (re + 1j * im) / np.sqrt(2.0)


def sample_iid(spec, rng=None, keys=()):
    '''
    N x N matrix of independent N^{-1/2} chi draws.

    Args:
        spec: EnsembleSpec
        rng: optional generator; defaults to the spec's IID stream
        keys: extra stream keys (trial index) appended to the IID tag
    '''
    if rng is None:
        rng = stream(spec.seed, IID, *keys)
    N = spec.N
    X = atoms(spec, (N, N), rng) * np.sqrt(spec.scale / N)
    return RandomMatrix(X, spec, label='iid', stream_keys=tuple(keys))


def sample_ginibre(spec, rng=None, keys=()):
    '''Gaussian matrix in the spec's field (distribution ignored)'''
    gspec = replace(spec, distribution='gaussian', scale=1.0)
    if rng is None:
        rng = stream(spec.seed, GINIBRE, *keys)
    X = atoms(gspec, (spec.N, spec.N), rng) / np.sqrt(spec.N)
    return RandomMatrix(X, gspec, label='ginibre', stream_keys=tuple(keys))


def divisible_coefficients(T):
    return np.sqrt(1.0 - np.exp(-T)), np.exp(-T / 2.0)


def sample_gaussian_divisible(spec, T, keys=()):
    '''(1 - e^{-T})^{1/2} G + e^{-T/2} Y with G Ginibre and Y = sample_iid(spec)'''
    if not 0 < T < 1:
        raise ConfigurationError(f"T must lie in (0, 1), got {T!r}", payload={'field': 'T'})
    g, y = divisible_coefficients(T)
    G = sample_ginibre(spec, keys=keys)
    Y = sample_iid(spec, keys=keys)
    X = g * G.entries + y * Y.entries
    return RandomMatrix(X, spec, label=f"gauss-divisible T={T:g}", stream_keys=tuple(keys))


def ou_increment(N, field, rng):
    '''Standard Gaussian matrix Xi driving one OU step (E|xi|^2 = 1, E[xi^2] = 0 if complex)'''
    if field == 'real':
        return rng.standard_normal((N, N)).astype(complex)
    return (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))) / np.sqrt(2.0)


def ou_step(X, dt, rng=None, increment=None, noise=True):
    '''
    One Euler-Maruyama step of dX = -X dt/2 + dB/sqrt(N):
        X' = X - (dt/2) X + sqrt(dt/N) Xi

    The default stream is keyed by the matrix's step counter, so a path is a pure
    function of (spec, seed, dt-sequence). `increment` supplies Xi directly;
    `noise=False` isolates the drift.
    '''
    if not dt > 0:
        raise ConfigurationError(f"dt must be positive, got {dt!r}", payload={'field': 'dt'})
    if dt > MAX_OU_STEP:
        raise OutOfRangeError(f"dt={dt:g} exceeds the Euler-Maruyama envelope {MAX_OU_STEP:g}", gate='dt')
    N = X.N
    drift = (1.0 - dt / 2.0) * X.entries
    if not noise:
        entries = drift
    else:
        if increment is None:
            if rng is None:
                rng = stream(X.spec.seed, OU, *X.stream_keys, X.steps)
            increment = ou_increment(N, X.spec.field, rng)
        entries = drift + np.sqrt(dt / N) * increment
    t = X.time + dt
    return RandomMatrix(entries, X.spec, label=f"ou t={t:g}", time=t, steps=X.steps + 1,
                        stream_keys=X.stream_keys)


def ou_path(X, dt, steps, noise=True):
    for _ in range(steps):
        X = ou_step(X, dt, noise=noise)
    logging.debug("ou path: %d steps of dt=%g from %s", steps, dt, X.spec)
    return X


def entry_moments(X, orders=(1, 2, 3, 4)):
    '''Empirical E|sqrt(N) X_ab|^k for each k, plus the complex mean and the mean of X^2'''
    Y = np.sqrt(X.N) * X.entries
    absY = np.abs(Y)
    out = {k: float(np.mean(absY ** k)) for k in orders}
    out['mean'] = complex(np.mean(Y))
    out['pseudo'] = complex(np.mean(Y ** 2))
    return out


def second_moment(X):
    '''N * mean |X_ab|^2, concentrates near spec.scale'''
    return float(X.N * np.mean(np.abs(X.entries) ** 2))


def map_trials(fn, items, threads=1):
    '''fn over items, in submission order, on at most `threads` worker threads'''
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(int(threads), len(items))) as pool:
        return list(pool.map(fn, items))
