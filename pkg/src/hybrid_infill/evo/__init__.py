"""Evolutionary loop pieces: anomaly filter, NSGA-II selection, hypervolume."""

from .population import Candidate, Population, load_population, save_population
from .selection import (
    Convergence,
    HvConfig,
    PopulationExtinct,
    append_ledger,
    check_convergence,
    crowding_distance,
    filter_anomalies,
    hypervolume_2d,
    nondominated_sort,
    population_hypervolume,
    rank_population,
    read_ledger,
    select_next_population,
)

__all__ = [
    "Candidate", "Convergence", "HvConfig", "Population", "PopulationExtinct", "append_ledger",
    "check_convergence", "crowding_distance", "filter_anomalies", "hypervolume_2d", "load_population",
    "nondominated_sort", "population_hypervolume", "rank_population", "read_ledger", "save_population",
    "select_next_population",
]
