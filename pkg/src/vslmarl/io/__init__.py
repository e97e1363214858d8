from .rds import (DataValidationError, GantryAssignment, RdsRecord, RdsSeries, assign_sensors,
                  parse_rds_csv, synthetic_day, write_rds_csv)
from .replay import ReplayResult, expected_block_profile, open_loop_replay

__all__ = [
    "DataValidationError", "GantryAssignment", "RdsRecord", "RdsSeries", "ReplayResult",
    "assign_sensors", "expected_block_profile", "open_loop_replay", "parse_rds_csv",
    "synthetic_day", "write_rds_csv",
]
