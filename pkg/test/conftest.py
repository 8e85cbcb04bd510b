from .fixtures.app_fixtures import lab_app, cli, write_config  # noqa: [E401]
from .fixtures.matrix_fixtures import ginibre_spec, ginibre, real_spec, ginibre_resolvent, zero_matrix, flow_char  # noqa: [E401]
