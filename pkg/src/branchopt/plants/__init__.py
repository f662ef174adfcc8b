from . import cartpole  # noqa: F401
