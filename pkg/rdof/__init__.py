try:
    from rdof._version import __version__
except ImportError:  # not built by setuptools_scm
    __version__ = "0.1.dev0"
