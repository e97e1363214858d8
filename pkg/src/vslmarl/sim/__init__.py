from .idm import DriverParams, VehicleState, car_following_accel, idm_accel
from .layout import CorridorLayout, DemandProfile, Ramp, Scenario
from .scenarios import get_scenario, load_scenario
from .world import (SimulationError, World, aggregate_readings, merge_onramp,
                    spawn_vehicles, step_simulation)

__all__ = [
    "CorridorLayout", "DemandProfile", "DriverParams", "Ramp", "Scenario", "SimulationError",
    "VehicleState", "World", "aggregate_readings", "car_following_accel", "get_scenario",
    "idm_accel", "load_scenario", "merge_onramp", "spawn_vehicles", "step_simulation",
]
