class LabError(Exception):
    exit_code = 1
    message = "Lab Error"

    def __init__(self, message=None, exit_code=None, payload=None):
        Exception.__init__(self, message or self.message)
        if message is not None:
            self.message = message
        if exit_code is not None:
            self.exit_code = exit_code
        self.payload = payload

    def to_dict(self):
        rv = dict(self.payload or ())
        rv['message'] = self.message
        rv['error'] = type(self).__name__
        return rv


class ConfigurationError(LabError):
    '''Invalid spec, config document or parameter combination'''
    exit_code = 2
    message = "Invalid configuration"


class ArgumentError(LabError):
    exit_code = 2
    message = "Invalid argument"


class OutOfRangeError(LabError):
    '''A parameter falls outside the range an operation is valid on.
    `gate` names the failed condition.'''
    exit_code = 2
    message = "Parameter out of range"

    def __init__(self, message=None, gate=None, payload=None):
        payload = dict(payload or ())
        if gate is not None:
            payload['gate'] = gate
        LabError.__init__(self, message, payload=payload)
        self.gate = gate


class PreconditionError(LabError):
    '''Hypotheses of an audit do not hold; `hypothesis` names the first failed one'''
    exit_code = 2
    message = "Precondition violated"

    def __init__(self, message=None, hypothesis=None, payload=None):
        payload = dict(payload or ())
        if hypothesis is not None:
            payload['hypothesis'] = hypothesis
        LabError.__init__(self, message, payload=payload)
        self.hypothesis = hypothesis


class NumericalError(LabError):
    exit_code = 3
    message = "Numerical failure"

    def __init__(self, message=None, module=None, context=None):
        payload = {'module': module}
        payload.update(context or {})
        LabError.__init__(self, message, payload=payload)
        self.module = module
        self.context = dict(context or {})
