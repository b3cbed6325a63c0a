"""vlemetrics: engagement metrics and weekly-interaction models from VLE logs."""

__version__ = "0.1.0"
