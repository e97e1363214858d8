"""Unit conversions between the paper-facing (miles, mph, ft) and SI."""

METERS_PER_MILE = 1609.344
METERS_PER_FOOT = 0.3048
MPS_PER_MPH = METERS_PER_MILE / 3600.0


def mph_to_mps(v):
    return v * MPS_PER_MPH


def mps_to_mph(v):
    return v / MPS_PER_MPH


def miles_to_m(x):
    return x * METERS_PER_MILE


def m_to_miles(x):
    return x / METERS_PER_MILE


def ft_to_m(x):
    return x * METERS_PER_FOOT
