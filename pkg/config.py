import os
basedir = os.path.abspath(os.path.dirname(__file__))


class Config:
    THREADS = int(os.environ.get('RMT_LAB_THREADS', 1))
    RESULTS_DIR = os.environ.get('RMT_LAB_RESULTS', os.path.join(basedir, 'results'))
    LOG_LEVEL = os.environ.get('RMT_LAB_LOG_LEVEL', 'INFO').upper()

    # default audit thresholds; experiment configs may override each
    ENVELOPE_FACTOR = 10.0
    STATISTIC_CAP = 5.0
    KS_CAP = 0.2
    A_STAR = 1e-2

    @staticmethod
    def init_app(app):
        if app.config['THREADS'] < 1:
            app.config['THREADS'] = 1


class DevelopmentConfig(Config):
    DEBUG = True
    LOG_LEVEL = os.environ.get('RMT_LAB_LOG_LEVEL', 'DEBUG').upper()


class TestingConfig(Config):
    TESTING = True
    THREADS = 2
    LOG_LEVEL = 'WARNING'


class ProductionConfig(Config):
    DEBUG = False


config = {
    'development': DevelopmentConfig,
    'testing': TestingConfig,
    'production': ProductionConfig,
    'default': DevelopmentConfig
}
