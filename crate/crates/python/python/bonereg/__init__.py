from ._bonereg import *  # noqa: F401,F403
