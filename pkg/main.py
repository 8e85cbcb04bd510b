import os
from app import create_app, register_blueprints

app = create_app(os.getenv('FLASK_CONFIG') or 'default')

register_blueprints(app)
