from flask import Blueprint

experiments = Blueprint('experiments', __name__, cli_group='lab')

from . import commands  # noqa: F401,E402
