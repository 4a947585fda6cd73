"""
Configuration management module

Two layers:
  - application settings (config.yaml) loaded by ConfigManager
  - simulation configs: flat `key = value` files parsed into SimConfig
"""
import copy
import os
import re
from dataclasses import dataclass, fields
from typing import Any, Dict, List, Optional, Tuple

import yaml
from cerberus import Validator

from .errors import ConfigError
from .torus_fields import TorusGrid


class ConfigManager:
    """Manages configuration loading and validation"""

    REQUIRED_SECTIONS = ('logging', 'directories', 'parallel')

    DEFAULTS = {
        'logging': {'level': 'INFO', 'format': '%(asctime)s - %(levelname)s - %(message)s'},
        'directories': {'output_directory': './runs', 'log_directory': './logs'},
        'parallel': {'max_workers': 0, 'memory_per_run_mb': 64},
    }

    def __init__(self, config_path: str = "config.yaml"):
        self.config_path = config_path
        self.config = None

    def load_config(self, allow_missing: bool = False) -> Dict[str, Any]:
        """Load configuration from YAML file (built-in defaults if allowed and absent)"""
        if allow_missing and not os.path.exists(self.config_path):
            self.config = copy.deepcopy(self.DEFAULTS)
            self._validate_config()
            self._create_directories()
            return self.config

        if not os.path.exists(self.config_path):
            raise FileNotFoundError(f"Configuration file not found: {self.config_path}")

        try:
            with open(self.config_path, 'r') as f:
                self.config = yaml.safe_load(f) or {}

            self._validate_config()
            self._create_directories()

            return self.config

        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in configuration file: {e}")

    def _validate_config(self) -> None:
        """Validate required configuration settings"""
        for section in self.REQUIRED_SECTIONS:
            if section not in self.config:
                raise ConfigError(f"Missing required configuration section: {section}")

        for key in ('output_directory', 'log_directory'):
            if key not in self.config['directories']:
                raise ConfigError(f"Missing required directories setting: {key}")

        parallel = self.config['parallel']
        parallel.setdefault('max_workers', 0)
        parallel.setdefault('memory_per_run_mb', 64)
        if int(parallel['max_workers']) < 0:
            raise ConfigError("parallel.max_workers must be >= 0 (0 means auto)")

        self.config['logging'].setdefault('level', 'INFO')

    def _create_directories(self) -> None:
        """Create necessary directories if they don't exist"""
        directories = [
            self.config['directories']['output_directory'],
            self.config['directories']['log_directory']
        ]

        for directory in directories:
            os.makedirs(directory, exist_ok=True)

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by key"""
        return self.config.get(key, default)


# ---------------------------------------------------------------------------
# simulation config
# ---------------------------------------------------------------------------

PRESETS = ('perturbed_flock', 'flock', 'uniform')
SHELLS = ('taylor', 'exclude')

# config key -> SimConfig field
KEY_FIELDS = {
    'name': 'name',
    'dim': 'dim',
    'n': 'n',
    'alpha': 'alpha',
    't_end': 't_end',
    'cfl_advect': 'cfl_advect',
    'cfl_diffuse': 'cfl_diffuse',
    'dealias': 'dealias',
    'output_cadence': 'output_cadence',
    'checkpoint_every': 'checkpoint_every',
    'seed': 'seed',
    'gamma': 'gamma',
    'kernel.lattice_images': 'lattice_images',
    'kernel.shell': 'shell',
    'preset': 'preset',
    'init.rho_bar': 'rho_bar',
    'init.a': 'a',
    'init.eps': 'eps',
    'init.k0': 'k0',
    'init.ubar': 'ubar',
    'abort_rho_min': 'abort_rho_min',
    'dt_probe': 'dt_probe',
}
FIELD_KEYS = {v: k for k, v in KEY_FIELDS.items()}


def _to_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('true', 'yes', 'on', '1'):
        return True
    if text in ('false', 'no', 'off', '0'):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def _to_int(value) -> int:
    if isinstance(value, bool):
        raise ValueError("booleans are not integers")
    if isinstance(value, int):
        return value
    text = str(value).strip()
    if not re.fullmatch(r'[+-]?\d+', text):
        raise ValueError(f"not an integer: {value!r}")
    return int(text)


def _to_float(value) -> float:
    if isinstance(value, bool):
        raise ValueError("booleans are not numbers")
    return float(value)


def _to_vector(value) -> Tuple[float, ...]:
    if isinstance(value, (list, tuple)):
        return tuple(_to_float(v) for v in value)
    if isinstance(value, (int, float)):
        return (_to_float(value),)
    parts = [p for p in str(value).replace(' ', '').split(',') if p]
    if not parts:
        raise ValueError("empty vector")
    return tuple(float(p) for p in parts)


def _range_check(low: float, high: float, message: str,
                 low_open: bool = True, high_open: bool = True):
    def check(field_name, value, error):
        below = value <= low if low_open else value < low
        above = value >= high if high_open else value > high
        if below or above:
            error(field_name, message)
    return check


def _check_points(field_name, value, error):
    if value < 16 or value & (value - 1):
        error(field_name, "n must be a power of two >= 16")


def _positive(message: str):
    def check(field_name, value, error):
        if not value > 0:
            error(field_name, message)
    return check


def _nonnegative(message: str):
    def check(field_name, value, error):
        if value < 0:
            error(field_name, message)
    return check


INF = float('inf')

SIM_SCHEMA = {
    'name': {'type': 'string', 'coerce': str, 'regex': r'[A-Za-z0-9_.\-]+', 'default': 'run'},
    'dim': {'type': 'integer', 'coerce': _to_int, 'allowed': [1, 2], 'default': 1},
    'n': {'type': 'integer', 'coerce': _to_int, 'check_with': _check_points, 'default': 128},
    'alpha': {'type': 'float', 'coerce': _to_float, 'default': 1.0,
              'check_with': _range_check(0.0, 2.0, "alpha must lie in (0,2)")},
    't_end': {'type': 'float', 'coerce': _to_float, 'default': 10.0,
              'check_with': _nonnegative("t_end must be >= 0")},
    'cfl_advect': {'type': 'float', 'coerce': _to_float, 'default': 0.4,
                   'check_with': _range_check(0.0, 1.0, "cfl_advect must lie in (0,1]", high_open=False)},
    'cfl_diffuse': {'type': 'float', 'coerce': _to_float, 'default': 0.2,
                    'check_with': _range_check(0.0, 1.0, "cfl_diffuse must lie in (0,1]", high_open=False)},
    'dealias': {'type': 'boolean', 'coerce': _to_bool, 'default': True},
    'output_cadence': {'type': 'float', 'coerce': _to_float, 'default': 0.1,
                       'check_with': _positive("output_cadence must be > 0")},
    'checkpoint_every': {'type': 'integer', 'coerce': _to_int, 'default': 5,
                         'check_with': _positive("checkpoint_every must be > 0")},
    'seed': {'type': 'integer', 'coerce': _to_int, 'default': 12345,
             'check_with': _nonnegative("seed must be >= 0")},
    'gamma': {'type': 'float', 'coerce': _to_float, 'default': 0.25,
              'check_with': _range_check(0.0, 1.0, "gamma must lie in (0,1)")},
    'kernel.lattice_images': {'type': 'integer', 'coerce': _to_int, 'default': 20,
                              'check_with': _positive("kernel.lattice_images must be >= 1")},
    'kernel.shell': {'type': 'string', 'coerce': str, 'allowed': list(SHELLS), 'default': 'taylor'},
    'preset': {'type': 'string', 'coerce': str, 'allowed': list(PRESETS), 'default': 'perturbed_flock'},
    'init.rho_bar': {'type': 'float', 'coerce': _to_float, 'default': 1.0,
                     'check_with': _positive("init.rho_bar must be > 0")},
    'init.a': {'type': 'float', 'coerce': _to_float, 'default': 0.2,
               'check_with': _range_check(0.0, 1.0, "init.a must lie in [0,1)", low_open=False)},
    'init.eps': {'type': 'float', 'coerce': _to_float, 'default': 0.05,
                 'check_with': _nonnegative("init.eps must be >= 0")},
    'init.k0': {'type': 'integer', 'coerce': _to_int, 'default': 3,
                'check_with': _positive("init.k0 must be >= 1")},
    'init.ubar': {'type': 'list', 'coerce': _to_vector, 'default': (0.5,),
                  'minlength': 1, 'maxlength': 2, 'schema': {'type': 'float'}},
    'abort_rho_min': {'type': 'float', 'coerce': _to_float, 'default': 1e-8,
                      'check_with': _positive("abort_rho_min must be > 0")},
    'dt_probe': {'type': 'float', 'coerce': _to_float, 'default': 1e-6,
                 'check_with': _range_check(0.0, 1.0, "dt_probe must lie in (0,1)")},
}


def _validate_document(doc: Dict[str, Any], lines: Optional[Dict[str, int]] = None) -> Dict[str, Any]:
    """Coerce, default-fill and validate a key -> value mapping"""
    lines = lines or {}
    for key in doc:
        if key not in SIM_SCHEMA:
            raise ConfigError(f"unknown key '{key}'", line=lines.get(key))

    validator = Validator(SIM_SCHEMA)
    if not validator.validate(doc):
        errors = validator.errors
        key = min(errors, key=lambda k: (lines.get(k, 10 ** 9), str(k)))
        message = _first_message(errors[key])
        if not message.startswith(str(key)):
            message = f"{key}: {message}"
        raise ConfigError(message, line=lines.get(key))
    out = validator.document

    ubar = tuple(out['init.ubar'])
    if len(ubar) == 1 and out['dim'] == 2:
        ubar = ubar * 2
    if len(ubar) != out['dim']:
        raise ConfigError(f"init.ubar needs {out['dim']} component(s), got {len(ubar)}",
                          line=lines.get('init.ubar'))
    out['init.ubar'] = ubar

    if out['init.k0'] > out['n'] // 3:
        raise ConfigError("init.k0 must not exceed n/3 (dealiasing cutoff)",
                          line=lines.get('init.k0', lines.get('n')))
    return out


def _first_message(entry) -> str:
    """Cerberus nests errors for list items in dicts; unwrap to the first string"""
    while isinstance(entry, (list, dict)):
        if isinstance(entry, dict):
            entry = next(iter(entry.values()))
        else:
            entry = entry[0]
    return str(entry)


@dataclass(frozen=True)
class SimConfig:
    """Resolved simulation settings; every field maps to one config key"""

    name: str = 'run'
    dim: int = 1
    n: int = 128
    alpha: float = 1.0
    t_end: float = 10.0
    cfl_advect: float = 0.4
    cfl_diffuse: float = 0.2
    dealias: bool = True
    output_cadence: float = 0.1
    checkpoint_every: int = 5
    seed: int = 12345
    gamma: float = 0.25
    lattice_images: int = 20
    shell: str = 'taylor'
    preset: str = 'perturbed_flock'
    rho_bar: float = 1.0
    a: float = 0.2
    eps: float = 0.05
    k0: int = 3
    ubar: Tuple[float, ...] = (0.5,)
    abort_rho_min: float = 1e-8
    dt_probe: float = 1e-6

    def __post_init__(self):
        doc = _validate_document(self.to_document())
        for key, value in doc.items():
            object.__setattr__(self, KEY_FIELDS[key], value)

    @classmethod
    def from_document(cls, doc: Dict[str, Any], lines: Optional[Dict[str, int]] = None) -> "SimConfig":
        resolved = _validate_document(dict(doc), lines)
        return cls(**{KEY_FIELDS[k]: v for k, v in resolved.items()})

    def to_document(self) -> Dict[str, Any]:
        return {FIELD_KEYS[f.name]: getattr(self, f.name) for f in fields(self)}

    @property
    def grid(self) -> TorusGrid:
        return TorusGrid(self.dim, self.n)

    def override(self, key: str, value: Any) -> "SimConfig":
        """New config with one key replaced (raw or typed value)"""
        if key not in SIM_SCHEMA:
            raise ConfigError(f"unknown key '{key}'")
        doc = self.to_document()
        doc[key] = value
        if key == 'dim' and len(doc['init.ubar']) != _to_int(value):
            doc['init.ubar'] = (doc['init.ubar'][0],)
        return SimConfig.from_document(doc)


def parse_config(text: str) -> SimConfig:
    """Parse a flat `key = value` config with `#` comments"""
    doc: Dict[str, Any] = {}
    lines: Dict[str, int] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=number)
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError("missing key before '='", line=number)
        if key in doc:
            raise ConfigError(f"duplicate key '{key}' (first set on line {lines[key]})", line=number)
        if key not in SIM_SCHEMA:
            raise ConfigError(f"unknown key '{key}'", line=number)
        doc[key] = value
        lines[key] = number
    return SimConfig.from_document(doc, lines)


def load_sim_config(path: str) -> SimConfig:
    with open(path, 'r', encoding='utf-8') as f:
        return parse_config(f.read())


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ', '.join(repr(float(v)) for v in value)
    return str(value)


def serialize_config(cfg: SimConfig) -> str:
    """Every key, in schema order; floats in shortest round-trip form"""
    body = [f"{key} = {_format_value(value)}" for key, value in cfg.to_document().items()]
    return "# flocksim simulation config\n" + "\n".join(body) + "\n"


def config_keys() -> List[str]:
    return list(SIM_SCHEMA)
