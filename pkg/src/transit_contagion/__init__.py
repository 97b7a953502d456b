"""Transit assignment, passenger contact networks and epidemic spread on them."""

from .assignment import (
    AssignmentParams,
    AssignmentResult,
    CandidatePath,
    Hyperpath,
    PathUtilityComponents,
    Trajectory,
    enumerate_candidate_paths,
    logit_probabilities,
    path_utility,
    simulate_loading,
    stranded_count,
)
from .contacts import ContactNetwork, NetworkStats, build_contact_network, network_stats
from .epidemic import (
    EpiConfig,
    InfectionEstimates,
    TransmissionParams,
    edge_probability,
    endangered_count,
    global_infection_rate,
    run_epidemic,
    weight_network,
)
from .feed import DemandSet, TransitNetwork, TripRequest, parse_demand, parse_transit_feed, validate_feed
from .scenario import ScenarioReport, ScenarioSpec, pmax_for_capacity, reduce_demand, run_grid, run_scenario, scale_capacities
from .synthgen import CityParams, generate_city

__version__ = "0.1.0"
