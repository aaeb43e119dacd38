"""POD controller design toolkit."""

import json

from . import _podlab
from ._podlab import (
    DomainError,
    TransferFunction,
    dogleg_solve,
    leadlag_tf,
    nyquist_limit,
    pade_approx,
    phase_at,
    power_limits,
    select_surrogate_order,
    validate_surrogate,
    washout,
)


def default_config():
    return json.loads(_podlab.default_config())


def build_plant(config=None):
    return json.loads(_podlab.build_plant(json.dumps(config) if config else ""))


def design(config=None):
    return json.loads(_podlab.design(json.dumps(config) if config else ""))


def ensemble(config=None, seed=None):
    return json.loads(_podlab.ensemble(json.dumps(config) if config else "", seed))
