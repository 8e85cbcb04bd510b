import logging

from flask import Flask
from config import config

__version__ = '0.1.0'


def create_app(config_name):
    app = Flask(__name__)
    app.config.from_object(config[config_name])
    config[config_name].init_app(app)
    logging.basicConfig(level=app.config['LOG_LEVEL'],
                        format='%(asctime)s %(levelname)s %(module)s: %(message)s')
    logging.getLogger().setLevel(app.config['LOG_LEVEL'])
    return app


def register_blueprints(app):
    '''`flask lab ...` runs experiments and re-projects their result tables'''
    from .experiments import experiments as experiments_blueprint
    app.register_blueprint(experiments_blueprint)
