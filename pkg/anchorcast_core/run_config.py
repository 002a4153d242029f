# anchorcast/anchorcast_core/run_config.py
"""
Run configuration: one flat set of typed keys shared by every command.

Files use dotenv syntax (`KEY=value`, `#` comments, keys case-insensitive);
see run_config.example.env. Values from command-line flags override the file.
"""
import os
import time
from dotenv import dotenv_values
from .exceptions import ConfigError
from .networks import ModelConfig, TEMPORAL_MODES
from .sampler import SamplerConfig, NOISE_MODES
from .training import TrainConfig

DEFAULT, FILE, FLAG = 'default', 'file', 'flag'
TRUE_WORDS = ('1', 'true', 'yes', 'on')
FALSE_WORDS = ('0', 'false', 'no', 'off')


def _to_bool(raw):
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in TRUE_WORDS:
        return True
    if text in FALSE_WORDS:
        return False
    raise ValueError(f"expected a boolean, got '{raw}'")


def _to_int_list(raw):
    if isinstance(raw, (list, tuple)):
        return tuple(int(v) for v in raw)
    parts = [p for p in str(raw).replace(' ', '').split(',') if p]
    return tuple(int(p) for p in parts)


def _to_int(raw):
    if isinstance(raw, bool):
        raise ValueError(f"expected an integer, got '{raw}'")
    if isinstance(raw, float) and not raw.is_integer():
        raise ValueError(f"expected an integer, got '{raw}'")
    return int(str(raw).strip()) if isinstance(raw, str) else int(raw)


PARSERS = {'int': _to_int, 'float': float, 'bool': _to_bool, 'str': str, 'int_list': _to_int_list}


class Field:
    def __init__(self, name, kind, default, check=None, requirement=''):
        self.name = name
        self.kind = kind
        self.default = default
        self.check = check
        self.requirement = requirement

    def parse(self, raw):
        if raw is None:
            raise ConfigError("has no value", key=self.name)
        try:
            value = PARSERS[self.kind](raw)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"expected {self.kind}: {e}", key=self.name) from e
        if self.check is not None and not self.check(value):
            raise ConfigError(f"{value!r} rejected, must be {self.requirement}", key=self.name)
        return value


positive = lambda v: v > 0
non_negative = lambda v: v >= 0
at_least_one = lambda v: v >= 1

FIELDS = [
    # common
    Field('seed', 'int', 0, non_negative, '>= 0'),
    Field('dataset', 'str', ''),
    Field('output_dir', 'str', ''),
    # model
    Field('image_size', 'int', 64, at_least_one, '>= 1'),
    Field('channels', 'int_list', (32, 64, 64), lambda v: len(v) >= 1 and all(c > 0 for c in v),
          'a non-empty list of positive widths'),
    Field('attention_levels', 'int_list', (2,)),
    Field('heads', 'int', 4, at_least_one, '>= 1'),
    Field('context_dim', 'int', 32, at_least_one, '>= 1'),
    Field('groups', 'int', 8, at_least_one, '>= 1'),
    Field('window_size', 'int', 4, at_least_one, '>= 1'),
    Field('face_enhance', 'bool', True),
    # training
    Field('learning_rate', 'float', 1e-4, positive, '> 0'),
    Field('batch_size', 'int', 1, at_least_one, '>= 1'),
    Field('total_steps', 'int', 1000, non_negative, '>= 0'),
    Field('schedule_steps', 'int', 1000, at_least_one, '>= 1'),
    Field('schedule_kind', 'str', 'linear', lambda v: v in ('linear', 'cosine'), 'linear or cosine'),
    Field('checkpoint_every', 'int', 500, at_least_one, '>= 1'),
    Field('base_steps', 'int', 0, non_negative, '>= 0'),
    Field('base_learning_rate', 'float', 1e-4, positive, '> 0'),
    # sampling
    Field('steps', 'int', 50, at_least_one, '>= 1'),
    Field('temporal_mode', 'str', 'all-frames', lambda v: v in TEMPORAL_MODES, ' or '.join(TEMPORAL_MODES)),
    Field('noise_mode', 'str', 'shared', lambda v: v in NOISE_MODES, ' or '.join(NOISE_MODES)),
    Field('n_jobs', 'int', 1, at_least_one, '>= 1'),
    # skeleton rendering
    Field('line_width', 'int', 1, at_least_one, '>= 1'),
    Field('point_radius', 'int', 1, at_least_one, '>= 1'),
    Field('focal_scale', 'float', 1.0, positive, '> 0'),
]
FIELDS_BY_NAME = {f.name: f for f in FIELDS}


class RunConfig:
    def __init__(self, values, provenance, source_path=None):
        self.values = values
        self.provenance = provenance
        self.source_path = source_path

    def __getattr__(self, name):
        values = self.__dict__.get('values', {})
        if name in values:
            return values[name]
        raise AttributeError(name)

    def model_config(self):
        v = self.values
        return ModelConfig(image_size=v['image_size'], channels=v['channels'], attention_levels=v['attention_levels'],
                           heads=v['heads'], context_dim=v['context_dim'], window_size=v['window_size'],
                           groups=v['groups'], face_enhance=v['face_enhance'])

    def train_config(self):
        v = self.values
        return TrainConfig(learning_rate=v['learning_rate'], batch_size=v['batch_size'],
                           total_steps=v['total_steps'], seed=v['seed'], schedule_steps=v['schedule_steps'],
                           schedule_kind=v['schedule_kind'], checkpoint_every=v['checkpoint_every'],
                           base_steps=v['base_steps'], base_learning_rate=v['base_learning_rate'])

    def sampler_config(self):
        v = self.values
        return SamplerConfig(steps=v['steps'], window_size=v['window_size'], seed=v['seed'],
                             temporal_mode=v['temporal_mode'], noise_mode=v['noise_mode'], n_jobs=v['n_jobs'])

    def as_dict(self):
        return {name: {'value': list(value) if isinstance(value, tuple) else value,
                       'source': self.provenance[name]}
                for name, value in self.values.items()}

    def to_env(self):
        """Serializes the resolved values back into the file format."""
        lines = []
        for name, value in self.values.items():
            if isinstance(value, tuple):
                value = ','.join(str(v) for v in value)
            elif isinstance(value, bool):
                value = 'true' if value else 'false'
            lines.append(f"{name.upper()}={value}")
        return "\n".join(lines) + "\n"

    def __repr__(self):
        overridden = {k: v for k, v in self.values.items() if self.provenance[k] != DEFAULT}
        return f"RunConfig(overrides={overridden})"


def _read_file(path):
    if not os.path.isfile(path):
        raise ConfigError("config file not found", key=path)
    raw = {}
    for key, value in dotenv_values(path).items():
        name = key.strip().lower()
        if name not in FIELDS_BY_NAME:
            raise ConfigError(f"unknown key in {path}", key=key)
        if name in raw:
            raise ConfigError(f"given twice in {path}", key=key)
        raw[name] = value
    return raw


def parse_config(path=None, flags=None):
    """Defaults, then file values, then flags (None means not given). Everything is validated here."""
    values = {f.name: f.default for f in FIELDS}
    provenance = {f.name: DEFAULT for f in FIELDS}
    if path:
        for name, raw in _read_file(path).items():
            values[name] = FIELDS_BY_NAME[name].parse(raw)
            provenance[name] = FILE
    for key, raw in (flags or {}).items():
        if raw is None:
            continue
        name = key.lower()
        if name not in FIELDS_BY_NAME:
            raise ConfigError("unknown option", key=key)
        values[name] = FIELDS_BY_NAME[name].parse(raw)
        provenance[name] = FLAG
    config = RunConfig(values, provenance, source_path=path)
    # Cross-field checks live in the typed configs; build them now so nothing fails mid-run.
    config.model_config()
    config.train_config()
    config.sampler_config()
    print(f"[{time.ctime()}] CONFIG: {config}")
    return config
