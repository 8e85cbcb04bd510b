import json
import logging

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from wtforms import BooleanField, Field, FloatField, Form, IntegerField, StringField
from wtforms.validators import AnyOf, NumberRange, StopValidation, ValidationError

from app.ensemble import DISTRIBUTIONS, FIELDS
from app.exceptions import ConfigurationError
from app.models import EXPERIMENTS, ExperimentConfig

# largest N each experiment builds matrices at; None means N stays symbolic
N_CAPS = {
    'mde-scan': None,
    'char-audit': None,
    'locallaw-scan': 512,
    'flow-drift': 256,
    'flow-qv': 256,
    'deloc': 1024,
    'impbound': 1024,
    'ensemble-compare': 512,
}
MIN_NOISY_TRAJECTORIES = 100


class Required:
    '''DataRequired for documents: 0 and False are values, only a missing key fails'''
    def __init__(self, message=None):
        self.message = message

    def __call__(self, form, field):
        if field.data is None:
            raise StopValidation(self.message or "This field is required.")


class Optional:
    '''Stops the chain when the key is absent; wtforms.validators.Optional reads raw form data'''
    field_flags = {"optional": True}

    def __call__(self, form, field):
        if field.data is None and not field.process_errors:
            raise StopValidation()


class OpenInterval:
    '''lo < data < hi (data <= hi with closed_max); either end may be None'''
    def __init__(self, lo, hi, closed_max=False):
        self.lo, self.hi, self.closed_max = lo, hi, closed_max

    def __call__(self, form, field):
        v = field.data
        if v is None or v != v:
            raise ValidationError("Not a valid number.")
        above = self.lo is None or v > self.lo
        below = self.hi is None or (v <= self.hi if self.closed_max else v < self.hi)
        if not (above and below):
            right = "]" if self.closed_max else ")"
            raise ValidationError(f"Number must lie in ({self.lo}, {self.hi}{right}.")


class ListField(Field):
    '''A TOML array (or a bare scalar) of numbers'''
    def __init__(self, label=None, validators=None, cast=float, **kwargs):
        super().__init__(label, validators, **kwargs)
        self.cast = cast

    def process_data(self, value):
        if value is None:
            self.data = None
            return
        if not isinstance(value, (list, tuple)):
            value = [value]
        try:
            self.data = tuple(self.cast(v) for v in value)
        except (TypeError, ValueError):
            self.data = None
            raise ValueError("Not a valid list of numbers.")


class StrictBooleanField(BooleanField):
    '''BooleanField reads any non-empty string as true; a document must say true or false'''
    def process_data(self, value):
        if value is not None and not isinstance(value, bool):
            self.data = None
            raise ValueError("Not a valid boolean value.")
        self.data = value


class ExperimentForm(Form):
    experiment = StringField('experiment', validators=[Required(), AnyOf(EXPERIMENTS)])
    N = IntegerField('N', validators=[Required(), NumberRange(min=1)])
    field = StringField('field', default='complex', validators=[AnyOf(FIELDS)])
    distribution = StringField('distribution', default='gaussian', validators=[AnyOf(DISTRIBUTIONS)])
    seed = IntegerField('seed', default=0, validators=[NumberRange(min=0, max=2**64 - 1)])
    trials = IntegerField('trials', default=1, validators=[NumberRange(min=1)])
    z = ListField('z', validators=[Optional()])
    eta = ListField('eta', validators=[Optional()])
    eta_rule = StringField('eta_rule', default='product', validators=[AnyOf(('fixed', 'product'))])
    c = FloatField('c', default=0.5, validators=[OpenInterval(0, None)])
    C = FloatField('C', default=1.0, validators=[NumberRange(min=1)])
    xi = FloatField('xi', default=0.005, validators=[OpenInterval(0, 0.01)])
    T = FloatField('T', default=0.1, validators=[OpenInterval(0, 1, closed_max=True)])
    dt = FloatField('dt', validators=[Optional(), OpenInterval(0, 1e-2, closed_max=True)])
    steps = IntegerField('steps', default=512, validators=[NumberRange(min=8)])
    grid_points = IntegerField('grid_points', default=40, validators=[NumberRange(min=2)])
    sizes = ListField('sizes', cast=int, validators=[Optional()])
    noise = StrictBooleanField('noise', default=True)
    include_beta_term = StrictBooleanField('include_beta_term', validators=[Optional()])
    sigma_max = FloatField('sigma_max', default=1.1, validators=[NumberRange(min=0, max=10)])
    compare_distribution = StringField('compare_distribution', default='rademacher',
                                       validators=[AnyOf(DISTRIBUTIONS)])
    compare_scale = FloatField('compare_scale', default=1.0, validators=[OpenInterval(0, None)])
    compare_T = FloatField('compare_T', validators=[Optional(), OpenInterval(0, 1)])
    envelope_factor = FloatField('envelope_factor', default=10.0, validators=[NumberRange(min=1)])
    statistic_cap = FloatField('statistic_cap', default=5.0, validators=[OpenInterval(0, None)])
    ks_cap = FloatField('ks_cap', default=0.2, validators=[NumberRange(min=0, max=1)])
    a_star = FloatField('a_star', default=1e-2, validators=[OpenInterval(0, 1)])
    output = StringField('output', validators=[Optional()])

    def validate_N(self, field):
        cap = N_CAPS.get(self.experiment.data)
        sizes = self.sizes.data or ()
        if cap is not None and max((field.data or 0, *sizes)) > cap:
            raise ValidationError(f"{self.experiment.data} builds matrices up to N={cap}")
        if cap is not None and field.data is not None and field.data < 2:
            raise ValidationError("N must be at least 2")

    def validate_z(self, field):
        if field.data and max(abs(v) for v in field.data) > 10:
            raise ValidationError("|z| must not exceed 10")

    def validate_eta(self, field):
        if field.data and min(field.data) <= 0:
            raise ValidationError("eta values must be positive")

    def validate_eta_rule(self, field):
        if field.data == 'fixed' and not self.eta.data and self.experiment.data == 'locallaw-scan':
            raise ValidationError("eta_rule = 'fixed' needs an eta list")

    def validate_trials(self, field):
        noisy_flow = self.experiment.data == 'flow-drift' and self.noise.data
        if noisy_flow and field.data is not None and field.data < MIN_NOISY_TRAJECTORIES:
            raise ValidationError(f"a noisy drift check needs at least {MIN_NOISY_TRAJECTORIES} trajectories")
        if self.experiment.data == 'ensemble-compare' and field.data is not None and field.data < 2:
            raise ValidationError("an ensemble comparison needs at least 2 trials")


def read_document(path):
    '''TOML config, or JSON: either a config table or a result record echoing one'''
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise ConfigurationError(f"cannot read {path}: {e.strerror}", payload={'path': str(path)})
    if str(path).endswith('.json'):
        try:
            doc = json.loads(raw.decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ConfigurationError(f"{path}: {e}", payload={'path': str(path)})
        return doc.get('config', doc) if isinstance(doc, dict) else doc
    try:
        return tomllib.loads(raw.decode('utf-8'))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as e:
        # the decode error message carries "(at line L, column C)"
        raise ConfigurationError(f"{path}: {e}", payload={'path': str(path)})


def load_config(path, seed=None, defaults=None):
    '''
    Parse and validate an experiment config.

    Raises:
        ConfigurationError with the offending keys or per-field messages
    '''
    doc = read_document(path)
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path}: expected a table of keys", payload={'path': str(path)})
    unknown = sorted(set(doc) - set(ExperimentConfig.keys()))
    if unknown:
        raise ConfigurationError(f"unknown keys: {', '.join(unknown)}", payload={'fields': unknown})
    # app-level threshold defaults fill keys the document leaves out
    doc = {**(defaults or {}), **doc}
    if seed is not None:
        doc['seed'] = seed
    form = ExperimentForm(data=doc)
    if not form.validate():
        logging.error("invalid config %s: %s", path, form.errors)
        raise ConfigurationError(f"invalid config {path}", payload={'fields': form.errors})
    return ExperimentConfig(**{k: form.data[k] for k in ExperimentConfig.keys()})
